#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "inrmar/errors.hpp"
#include "inrmar/geometry.hpp"

namespace inrmar {
namespace {

double distance_to_line(Vec2 p, const Ray& r) {
  const Vec2 d = p - r.origin;
  return std::abs(d.x * r.direction.y - d.y * r.direction.x);
}

FanBeamGeometry desk() { return make_geometry(GeometryConfig::preset("desk")); }

TEST(GeometryPreset, PaperSizes) {
  const auto c = GeometryConfig::preset("paper");
  EXPECT_EQ(c.n_views, 640u);
  EXPECT_EQ(c.n_detectors, 641u);
  EXPECT_EQ(c.image_size, 416u);
  EXPECT_DOUBLE_EQ(c.pixel_pitch * 416, 332.8);
}

TEST(GeometryPreset, DeskSizes) {
  const auto g = desk();
  EXPECT_EQ(g.n_views(), 180u);
  EXPECT_EQ(g.n_detectors(), 185u);
  EXPECT_EQ(g.image_size(), 128u);
  EXPECT_DOUBLE_EQ(g.field_width(), 332.8);
}

TEST(GeometryPreset, UnknownNameThrows) { EXPECT_THROW(GeometryConfig::preset("huge"), ConfigError); }

TEST(GeometryValidation, DetectorInsideSourceCircleThrows) {
  auto c = GeometryConfig::preset("desk");
  c.source_to_iso = 900.0;
  c.source_to_detector = 900.0;
  EXPECT_THROW(make_geometry(c), ConfigError);
  c.source_to_detector = 850.0;
  EXPECT_THROW(make_geometry(c), ConfigError);
}

TEST(GeometryValidation, NarrowFanThrows) {
  auto c = GeometryConfig::preset("desk");
  c.detector_pitch = 0.5;
  EXPECT_THROW(make_geometry(c), ConfigError);
}

TEST(GeometryValidation, DefaultsFilledIn) {
  const auto g = desk();
  EXPECT_DOUBLE_EQ(g.source_to_iso(), 832.0);
  EXPECT_DOUBLE_EQ(g.source_to_detector(), 1664.0);
  EXPECT_NEAR(g.detector_pitch(), 3.7658242306440511979, 1e-12);
}

TEST(Ray, CentralRayHitsIsocentre) {
  const auto g = desk();
  for (std::size_t v : {0u, 31u, 90u, 179u}) {
    const Ray r = g.ray_for(v, 92);
    EXPECT_LT(distance_to_line({0.0, 0.0}, r), 1e-9) << "view " << v;
  }
}

TEST(Ray, OpposedViewsMirrorTheRay) {
  const auto g = desk();
  for (std::size_t v : {0u, 7u, 44u, 89u})
    for (std::size_t d : {0u, 10u, 60u, 92u, 150u, 184u}) {
      const Ray a = g.ray_for(v, d);
      const Ray b = g.ray_for(v + 90, 184 - d);
      EXPECT_NEAR(a.length(), b.length(), 1e-9);
      EXPECT_NEAR(distance_to_line({0.0, 0.0}, a), distance_to_line({0.0, 0.0}, b), 1e-9);
      if (d == 92) {
        EXPECT_NEAR(a.direction.x, -b.direction.x, 1e-12);
        EXPECT_NEAR(a.direction.y, -b.direction.y, 1e-12);
        EXPECT_LT(distance_to_line(b.origin, a), 1e-9);
      }
    }
}

// A ray at fan angle g from view angle b is measured again, reversed, from
// view angle b + pi - 2g at fan angle -g.
TEST(Ray, ConjugateRaysCoincide) {
  const auto g = desk();
  const double dbeta = 2.0 * M_PI / static_cast<double>(g.n_views());
  for (std::size_t v : {0u, 13u, 100u})
    for (int k : {-6, -3, -1, 1, 4, 7}) {
      const double gamma = 0.5 * k * dbeta;
      const double offset = g.source_to_detector() * std::tan(gamma);
      const Ray a = g.ray_at(v, offset);
      const Ray b = g.ray_at((v + 90 + 180 - k) % 180, -offset);
      EXPECT_NEAR(a.direction.x, -b.direction.x, 1e-12);
      EXPECT_NEAR(a.direction.y, -b.direction.y, 1e-12);
      EXPECT_LT(distance_to_line(b.origin, a), 1e-9) << v << " " << k;
      EXPECT_NEAR(a.length(), b.length(), 1e-9);
    }
}

struct ChordCase {
  std::size_t view, detector;
  double t_enter, t_exit;
};

// Exact circle/line intersections computed at 40 digits.
TEST(Ray, ChordEndpointsMatchOracle) {
  const ChordCase cases[] = {
      {0, 92, 665.6, 998.4},
      {17, 3, 789.14272629121978, 842.09740248529463},
      {45, 150, 698.57365090324569, 951.27412713142808},
      {123, 60, 674.65767050472833, 984.99590096240166},
  };
  const auto g = desk();
  for (const auto& c : cases) {
    const Ray r = g.ray_for(c.view, c.detector);
    EXPECT_NEAR(r.t_enter, c.t_enter, 1e-9);
    EXPECT_NEAR(r.t_exit, c.t_exit, 1e-9);
  }
}

TEST(Ray, MissingRayHasEmptyChord) {
  const auto g = desk();
  for (auto [v, d] : {std::pair<std::size_t, std::size_t>{0, 0}, {90, 184}, {0, 1}}) {
    const Ray r = g.ray_for(v, d);
    EXPECT_EQ(r.t_enter, r.t_exit);
    EXPECT_TRUE(g.sample_points(r, 1.0).empty());
  }
  EXPECT_NEAR(g.ray_for(0, 0).t_enter, 814.53230996657778, 1e-9);
}

TEST(Ray, EndpointsLieOnTheCircle) {
  const auto g = desk();
  for (std::size_t v = 0; v < g.n_views(); v += 13)
    for (std::size_t d = 2; d < g.n_detectors() - 2; d += 7) {
      const Ray r = g.ray_for(v, d);
      EXPECT_NEAR(norm(r.at(r.t_enter)), g.fov_radius(), 1e-9);
      EXPECT_NEAR(norm(r.at(r.t_exit)), g.fov_radius(), 1e-9);
    }
}

TEST(Ray, OutOfRangeIndexThrows) {
  const auto g = desk();
  EXPECT_THROW(g.ray_for(180, 0), std::out_of_range);
  EXPECT_THROW(g.ray_for(0, 185), std::out_of_range);
}

TEST(Samples, MidpointLayout) {
  const auto g = desk();
  Ray r;
  r.origin = {0.0, 0.0};
  r.direction = {1.0, 0.0};
  r.t_enter = 0.0;
  r.t_exit = 10.0;
  const auto pts = g.sample_points(r, 1.0);
  ASSERT_EQ(pts.size(), 10u);
  for (std::size_t k = 0; k < pts.size(); ++k) {
    EXPECT_DOUBLE_EQ(pts[k].mm.x, 0.5 + static_cast<double>(k));
    EXPECT_DOUBLE_EQ(pts[k].dp, 1.0);
  }
}

TEST(Samples, DegenerateRayIsEmpty) {
  const auto g = desk();
  Ray r;
  r.t_enter = r.t_exit = 3.0;
  EXPECT_TRUE(g.sample_points(r, 0.5).empty());
}

TEST(Samples, StepMustBePositive) {
  const auto g = desk();
  EXPECT_THROW(g.sample_points(g.ray_for(0, 92), 0.0), ConfigError);
}

TEST(Samples, CoveredLengthWithinOneStep) {
  const auto g = desk();
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<std::size_t> view(0, 179), det(0, 184);
  std::uniform_real_distribution<double> step(0.1, 5.0);
  for (int i = 0; i < 500; ++i) {
    const Ray r = g.ray_for(view(rng), det(rng));
    const double dp = step(rng);
    double total = 0.0;
    for (const auto& p : g.sample_points(r, dp)) total += p.dp;
    EXPECT_LE(std::abs(total - r.length()), dp);
  }
}

TEST(Samples, NormalizedCoordinatesSpanTheRaster) {
  const auto g = desk();
  const Vec2 lo = g.normalized({-166.4, -166.4});
  const Vec2 hi = g.normalized({166.4, 166.4});
  EXPECT_DOUBLE_EQ(lo.x, 0.0);
  EXPECT_DOUBLE_EQ(lo.y, 0.0);
  EXPECT_DOUBLE_EQ(hi.x, 1.0);
  EXPECT_DOUBLE_EQ(hi.y, 1.0);
}

}  // namespace
}  // namespace inrmar
