#pragma once

#include <cmath>
#include <cstddef>
#include <string_view>
#include <vector>

namespace inrmar {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  friend Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
  friend Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
  friend Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
  friend bool operator==(Vec2, Vec2) = default;
};

inline double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
inline double norm(Vec2 a) { return std::sqrt(dot(a, a)); }

// Parameters for make_geometry. Zero-valued distances are filled in with the
// defaults documented on each field.
struct GeometryConfig {
  std::size_t n_views = 180;
  std::size_t n_detectors = 185;
  std::size_t image_size = 128;
  double pixel_pitch = 2.6;          // mm
  double source_to_iso = 0.0;        // 0: 2.5 x FOV diameter
  double source_to_detector = 0.0;   // 0: 2 x source_to_iso
  double detector_pitch = 0.0;       // 0: fan covers the FOV with a 2% margin

  // "paper": 416 px, 640 views, 641 detectors. "desk": 128 px, 180 views,
  // 185 detectors. Both cover the same 332.8 mm field of view.
  static GeometryConfig preset(std::string_view name);
};

// A source-to-detector ray. Points are origin + t * direction (t in mm);
// [t_enter, t_exit] is the chord through the circular image support.
struct Ray {
  Vec2 origin;
  Vec2 direction;
  double t_enter = 0.0;
  double t_exit = 0.0;

  double length() const { return t_exit - t_enter; }
  Vec2 at(double t) const { return origin + t * direction; }
};

struct SamplePoint {
  Vec2 mm;   // image-centred millimetres
  Vec2 uv;   // normalized grid coordinates, [0,1]^2 over the raster square
  double dp; // path length represented by this sample
};

// Full-circle fan-beam scanner with a flat, equidistant detector centred on
// the source-isocentre axis. Immutable after construction.
class FanBeamGeometry {
 public:
  explicit FanBeamGeometry(const GeometryConfig& config);

  std::size_t n_views() const { return n_views_; }
  std::size_t n_detectors() const { return n_detectors_; }
  std::size_t image_size() const { return image_size_; }
  double pixel_pitch() const { return pixel_pitch_; }
  double source_to_iso() const { return source_to_iso_; }
  double source_to_detector() const { return source_to_detector_; }
  double detector_pitch() const { return detector_pitch_; }
  double angular_span() const { return 2.0 * M_PI; }

  double fov_radius() const { return 0.5 * field_width(); }
  double field_width() const { return static_cast<double>(image_size_) * pixel_pitch_; }
  double default_step() const { return 0.5 * pixel_pitch_; }
  double view_angle(std::size_t view) const;
  // Signed detector coordinate along the detector row (mm).
  double detector_offset(std::size_t detector) const;
  std::size_t ray_count() const { return n_views_ * n_detectors_; }

  Ray ray_for(std::size_t view, std::size_t detector) const;
  // Ray from the source at `view` to an arbitrary detector coordinate (mm).
  Ray ray_at(std::size_t view, double detector_offset_mm) const;
  Vec2 normalized(Vec2 mm) const;

  // Calls fn(point_mm, dp) at t_enter + (k + 0.5) * step for
  // k < floor(length / step). Shared by every projector path so that raster,
  // adjoint and network projections see identical sample layouts.
  template <class Fn>
  void for_each_sample(const Ray& ray, double step, Fn&& fn) const {
    const double len = ray.length();
    if (!(len > 0.0)) return;
    const auto count = static_cast<std::size_t>(std::floor(len / step));
    for (std::size_t k = 0; k < count; ++k) {
      const double t = ray.t_enter + (static_cast<double>(k) + 0.5) * step;
      fn(ray.at(t), step);
    }
  }

  std::vector<SamplePoint> sample_points(const Ray& ray, double step) const;

  friend bool operator==(const FanBeamGeometry&, const FanBeamGeometry&) = default;

 private:
  std::size_t n_views_;
  std::size_t n_detectors_;
  std::size_t image_size_;
  double pixel_pitch_;
  double source_to_iso_;
  double source_to_detector_;
  double detector_pitch_;
};

FanBeamGeometry make_geometry(const GeometryConfig& config);

}  // namespace inrmar
