#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>

#include "inrmar/geometry.hpp"
#include "inrmar/inr.hpp"
#include "inrmar/metrics.hpp"
#include "inrmar/projector.hpp"

namespace inrmar {
namespace {

FanBeamGeometry desk() { return make_geometry(GeometryConfig::preset("desk")); }

// Uniform disk with each pixel weighted by its covered area (16x16 subsamples).
ImageRaster disk_image(const FanBeamGeometry& g, Vec2 centre, double radius, double mu) {
  const std::size_t n = g.image_size();
  const double h = g.pixel_pitch();
  ImageRaster img(n, h);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c) {
      int inside = 0;
      for (int a = 0; a < 16; ++a)
        for (int b = 0; b < 16; ++b) {
          const double x = (static_cast<double>(c) + (b + 0.5) / 16.0 - 0.5 * n) * h;
          const double y = (static_cast<double>(r) + (a + 0.5) / 16.0 - 0.5 * n) * h;
          inside += norm(Vec2{x, y} - centre) < radius;
        }
      img(r, c) = mu * inside / 256.0;
    }
  return img;
}

double perpendicular_distance(Vec2 p, const Ray& r) {
  const Vec2 d = p - r.origin;
  return std::abs(d.x * r.direction.y - d.y * r.direction.x);
}

TEST(ForwardProject, ZeroImageGivesZeroSinogram) {
  const auto g = desk();
  const auto s = forward_project_raster(ImageRaster(128, g.pixel_pitch()), g);
  for (double v : s.values) EXPECT_EQ(v, 0.0);
}

TEST(ForwardProject, DiskChordLengths) {
  const auto g = desk();
  const Vec2 centre{20.0, -15.0};
  const double radius = 90.0, mu = 0.02;
  const auto sino = forward_project_raster(disk_image(g, centre, radius, mu), g);
  double worst = 0.0;
  std::size_t checked = 0;
  for (std::size_t v = 0; v < g.n_views(); v += 3)
    for (std::size_t d = 0; d < g.n_detectors(); ++d) {
      const double dist = perpendicular_distance(centre, g.ray_for(v, d));
      if (dist >= 0.8 * radius) continue;  // grazing chords are dominated by edge blur
      const double exact = mu * 2.0 * std::sqrt(radius * radius - dist * dist);
      worst = std::max(worst, std::abs(sino(v, d) - exact) / exact);
      ++checked;
    }
  EXPECT_GT(checked, 1000u);
  EXPECT_LT(worst, 0.01);
}

TEST(ForwardProject, Linearity) {
  const auto g = desk();
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  ImageRaster x(128, g.pixel_pitch());
  for (auto& v : x.values) v = u(rng);
  ImageRaster ax = x;
  for (auto& v : ax.values) v *= -3.7;
  const auto a = forward_project_raster(x, g), b = forward_project_raster(ax, g);
  for (std::size_t i = 0; i < a.values.size(); ++i)
    EXPECT_NEAR(b.values[i], -3.7 * a.values[i], 1e-9 * std::abs(b.values[i]) + 1e-300);
}

TEST(Backproject, AdjointDotProduct) {
  const auto g = desk();
  std::mt19937_64 rng(11);
  std::normal_distribution<double> n01;
  for (int trial = 0; trial < 3; ++trial) {
    ImageRaster x(128, g.pixel_pitch());
    for (auto& v : x.values) v = n01(rng);
    Sinogram y(g.n_views(), g.n_detectors());
    for (auto& v : y.values) v = n01(rng);
    const auto ax = forward_project_raster(x, g);
    const auto aty = backproject(y, g);
    double lhs = 0.0, rhs = 0.0, nax = 0.0, ny = 0.0;
    for (std::size_t i = 0; i < y.values.size(); ++i) {
      lhs += ax.values[i] * y.values[i];
      nax += ax.values[i] * ax.values[i];
      ny += y.values[i] * y.values[i];
    }
    for (std::size_t i = 0; i < x.values.size(); ++i) rhs += x.values[i] * aty.values[i];
    EXPECT_LT(std::abs(lhs - rhs) / (std::sqrt(nax) * std::sqrt(ny)), 1e-10);
  }
}

TEST(Backproject, ZeroSinogramGivesZeroImage) {
  const auto g = desk();
  const auto img = backproject(Sinogram(g.n_views(), g.n_detectors()), g);
  for (double v : img.values) EXPECT_EQ(v, 0.0);
}

TEST(Backproject, SingleBinStaysOnItsFootprint) {
  const auto g = desk();
  Sinogram s(g.n_views(), g.n_detectors());
  s(37, 70) = 1.0;
  const auto img = backproject(s, g);
  const auto pts = g.sample_points(g.ray_for(37, 70), g.default_step());
  const double h = g.pixel_pitch();
  std::size_t nonzero = 0;
  for (std::size_t r = 0; r < 128; ++r)
    for (std::size_t c = 0; c < 128; ++c) {
      if (img(r, c) == 0.0) continue;
      ++nonzero;
      const Vec2 centre{(c + 0.5 - 64.0) * h, (r + 0.5 - 64.0) * h};
      bool near = false;
      for (const auto& p : pts) near |= std::abs(p.mm.x - centre.x) < h && std::abs(p.mm.y - centre.y) < h;
      EXPECT_TRUE(near) << r << "," << c;
    }
  EXPECT_GT(nonzero, 100u);
}

TEST(Fbp, ZeroSinogramGivesZeroImage) {
  const auto g = desk();
  const auto img = fbp(Sinogram(g.n_views(), g.n_detectors()), g);
  for (double v : img.values) EXPECT_EQ(v, 0.0);
}

TEST(Fbp, DiskRoundTrip) {
  const auto g = desk();
  ImageRaster x(128, g.pixel_pitch());
  for (std::size_t r = 0; r < 128; ++r)
    for (std::size_t c = 0; c < 128; ++c) {
      const double px = (c + 0.5 - 64.0) * g.pixel_pitch(), py = (r + 0.5 - 64.0) * g.pixel_pitch();
      const double d = std::hypot(px - 10.0, py + 5.0);
      x(r, c) = 0.02 / (1.0 + std::exp((d - 100.0) / 4.0));
    }
  Mask2D outside = fov_mask(128);
  for (auto& b : outside.bits) b = !b;
  for (auto w : {RampWindow::ram_lak, RampWindow::hann}) {
    const auto rec = fbp(forward_project_raster(x, g), g, w);
    EXPECT_GT(psnr(rec, x, 0.0, &outside), 30.0) << to_string(w);
  }
}

TEST(Fbp, ConstantOffsetBarelyMovesTheCentre) {
  const auto g = desk();
  const double c = 0.5;
  Sinogram s(g.n_views(), g.n_detectors(), c);
  const auto img = fbp(s, g);
  EXPECT_LT(std::abs(img(64, 64)), c);
  EXPECT_LT(std::abs(img(63, 63)), c);
}

TEST(Fbp, WindowNames) {
  EXPECT_EQ(ramp_window_from_string("hann"), RampWindow::hann);
  EXPECT_EQ(to_string(ramp_window_from_string("ram_lak")), "ram_lak");
  EXPECT_THROW(ramp_window_from_string("shepp"), std::invalid_argument);
}

InrConfig dead_network_config() {
  InrConfig c;
  c.encoding = EncodingKind::hash;
  c.hash.levels = 2;
  c.hash.features_per_level = 2;
  c.hash.table_size = 1 << 10;
  c.hidden = {8};
  c.precision = Precision::f64;
  return c;
}

void make_constant(InrModel& m, double value) {
  for (auto& p : m.parameters()) p = 0.0;
  m.parameters()[m.bias_offset(m.layer_count() - 1)] = value;
}

TEST(NetworkProjection, ConstantNetworkGivesChordLength) {
  const auto g = desk();
  InrModel m(dead_network_config(), 1);
  make_constant(m, 0.03);
  std::vector<Ray> rays;
  for (std::size_t d = 5; d < 180; d += 11) rays.push_back(g.ray_for(21, d));
  const double step = 1.3;
  const auto p = forward_project_rays(m, g, rays, step);
  for (std::size_t i = 0; i < rays.size(); ++i) EXPECT_NEAR(p[i], 0.03 * rays[i].length(), 0.03 * step + 1e-12);
}

TEST(NetworkProjection, OutputBiasGradientIsPathLength) {
  const auto g = desk();
  InrModel m(dead_network_config(), 5);
  const std::vector<Ray> rays = {g.ray_for(64, 40)};
  const double step = 1.7;
  auto grads = m.make_gradients();
  project_rays_backward(m, g, rays, step, [](std::size_t, double v) { return LossTerm{v, 1.0}; }, grads);
  const std::size_t bias = m.bias_offset(m.layer_count() - 1);
  double dp_sum = 0.0;
  for (const auto& p : g.sample_points(rays[0], step)) dp_sum += p.dp;
  EXPECT_NEAR(grads.values[bias], dp_sum, 1e-12 * dp_sum);

  const double eps = 1e-5;
  const double keep = m.parameters()[bias];
  m.parameters()[bias] = keep + eps;
  const double up = forward_project_rays(m, g, rays, step)[0];
  m.parameters()[bias] = keep - eps;
  const double down = forward_project_rays(m, g, rays, step)[0];
  m.parameters()[bias] = keep;
  EXPECT_LT(std::abs((up - down) / (2 * eps) - grads.values[bias]) / dp_sum, 1e-4);
}

// A single hash level holding a linear function at its vertices, read out
// by a linear layer, is an exact interpolant of the sampled raster.
TEST(NetworkProjection, MatchesRasterProjectorForAnExactInterpolant) {
  const auto g = desk();
  InrConfig c;
  c.hash.levels = 1;
  c.hash.features_per_level = 1;
  c.hash.table_size = 1 << 12;
  c.hash.base_resolution = 16;
  c.hidden = {};
  c.precision = Precision::f64;
  InrModel m(c, 2);
  auto f = [](double u, double v) { return 0.02 + 0.004 * u - 0.006 * v; };
  for (auto& p : m.parameters()) p = 0.0;
  std::set<std::uint32_t> used;
  for (std::uint32_t y = 0; y <= 16; ++y)
    for (std::uint32_t x = 0; x <= 16; ++x) {
      const auto row = hash_vertex(x, y, c.hash.table_size);
      ASSERT_TRUE(used.insert(row).second) << "collision";
      m.parameters()[row] = f(x / 16.0, y / 16.0);
    }
  m.parameters()[m.weight_offset(0)] = 1.0;

  ImageRaster img(128, g.pixel_pitch());
  for (std::size_t r = 0; r < 128; ++r)
    for (std::size_t col = 0; col < 128; ++col) img(r, col) = f((col + 0.5) / 128.0, (r + 0.5) / 128.0);

  const auto sino = forward_project_raster(img, g);
  std::vector<Ray> rays;
  std::vector<std::size_t> bins;
  for (std::size_t v = 0; v < g.n_views(); v += 17)
    for (std::size_t d = 0; d < g.n_detectors(); d += 4) {
      const Ray r = g.ray_for(v, d);
      if (perpendicular_distance({0.0, 0.0}, r) > 0.95 * g.fov_radius()) continue;
      rays.push_back(r);
      bins.push_back(v * g.n_detectors() + d);
    }
  const auto p = forward_project_rays(m, g, rays);
  for (std::size_t i = 0; i < rays.size(); ++i) {
    const double quad = 0.03 * g.default_step();
    EXPECT_NEAR(p[i], sino.values[bins[i]], 2.0 * quad) << i;
  }
}

}  // namespace
}  // namespace inrmar
