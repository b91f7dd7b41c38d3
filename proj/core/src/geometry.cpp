#include "inrmar/geometry.hpp"

#include <stdexcept>
#include <string>

#include "inrmar/errors.hpp"

namespace inrmar {

namespace {
constexpr double kFieldWidthMm = 332.8;
}

GeometryConfig GeometryConfig::preset(std::string_view name) {
  GeometryConfig c;
  if (name == "paper") {
    c.n_views = 640;
    c.n_detectors = 641;
    c.image_size = 416;
  } else if (name == "desk") {
    c.n_views = 180;
    c.n_detectors = 185;
    c.image_size = 128;
  } else {
    throw ConfigError("unknown geometry preset '" + std::string(name) + "'");
  }
  c.pixel_pitch = kFieldWidthMm / static_cast<double>(c.image_size);
  return c;
}

FanBeamGeometry::FanBeamGeometry(const GeometryConfig& config)
    : n_views_(config.n_views),
      n_detectors_(config.n_detectors),
      image_size_(config.image_size),
      pixel_pitch_(config.pixel_pitch),
      source_to_iso_(config.source_to_iso),
      source_to_detector_(config.source_to_detector),
      detector_pitch_(config.detector_pitch) {
  if (n_views_ < 1 || n_detectors_ < 1 || image_size_ < 1)
    throw ConfigError("geometry counts must be positive");
  if (!(pixel_pitch_ > 0.0)) throw ConfigError("pixel pitch must be positive");
  if (source_to_iso_ < 0.0 || source_to_detector_ < 0.0 || detector_pitch_ < 0.0)
    throw ConfigError("geometry lengths must be positive");

  const double radius = fov_radius();
  if (source_to_iso_ == 0.0) source_to_iso_ = 2.5 * 2.0 * radius;
  if (source_to_detector_ == 0.0) source_to_detector_ = 2.0 * source_to_iso_;
  if (source_to_detector_ <= source_to_iso_)
    throw ConfigError("source_to_detector must exceed source_to_iso");
  if (source_to_iso_ <= radius) throw ConfigError("source lies inside the field of view");

  const double needed_half_angle = std::asin(radius / source_to_iso_);
  const double half_span = 0.5 * static_cast<double>(n_detectors_ - 1);
  if (detector_pitch_ == 0.0) {
    if (n_detectors_ < 2) throw ConfigError("a single detector cannot cover the field of view");
    detector_pitch_ = 1.02 * source_to_detector_ * std::tan(needed_half_angle) / half_span;
  }
  const double fan_half_angle = std::atan(half_span * detector_pitch_ / source_to_detector_);
  if (fan_half_angle < needed_half_angle)
    throw ConfigError("detector fan does not cover the field of view");
}

double FanBeamGeometry::view_angle(std::size_t view) const {
  return 2.0 * M_PI * static_cast<double>(view) / static_cast<double>(n_views_);
}

double FanBeamGeometry::detector_offset(std::size_t detector) const {
  return (static_cast<double>(detector) - 0.5 * static_cast<double>(n_detectors_ - 1)) *
         detector_pitch_;
}

Ray FanBeamGeometry::ray_for(std::size_t view, std::size_t detector) const {
  if (view >= n_views_ || detector >= n_detectors_)
    throw std::out_of_range("ray index out of range");
  return ray_at(view, detector_offset(detector));
}

Ray FanBeamGeometry::ray_at(std::size_t view, double offset) const {
  if (view >= n_views_) throw std::out_of_range("view index out of range");
  const double theta = view_angle(view);
  const Vec2 axis{std::cos(theta), std::sin(theta)};
  const Vec2 lateral{-axis.y, axis.x};
  const Vec2 source = source_to_iso_ * axis;
  const Vec2 cell = (source_to_iso_ - source_to_detector_) * axis + offset * lateral;
  const Vec2 delta = cell - source;
  const double len = norm(delta);

  Ray ray;
  ray.origin = source;
  ray.direction = (1.0 / len) * delta;

  // |o + t d|^2 = R^2 with |d| = 1.
  const double radius = fov_radius();
  const double b = dot(ray.origin, ray.direction);
  const double c = dot(ray.origin, ray.origin) - radius * radius;
  const double disc = b * b - c;
  if (disc <= 0.0) {
    ray.t_enter = ray.t_exit = -b;
  } else {
    const double root = std::sqrt(disc);
    ray.t_enter = -b - root;
    ray.t_exit = -b + root;
  }
  return ray;
}

Vec2 FanBeamGeometry::normalized(Vec2 mm) const {
  const double width = field_width();
  return {(mm.x + 0.5 * width) / width, (mm.y + 0.5 * width) / width};
}

std::vector<SamplePoint> FanBeamGeometry::sample_points(const Ray& ray, double step) const {
  if (!(step > 0.0)) throw ConfigError("sample step must be positive");
  std::vector<SamplePoint> out;
  for_each_sample(ray, step, [&](Vec2 p, double dp) { out.push_back({p, normalized(p), dp}); });
  return out;
}

FanBeamGeometry make_geometry(const GeometryConfig& config) { return FanBeamGeometry(config); }

}  // namespace inrmar
