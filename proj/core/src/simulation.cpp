#include "inrmar/simulation.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "inrmar/errors.hpp"
#include "inrmar/parallel.hpp"
#include "inrmar/projector.hpp"
#include "inrmar/random.hpp"

namespace inrmar {

double hu_to_lac(double hu) { return kWaterLac * (1.0 + hu / 1000.0); }
double lac_to_hu(double lac) { return (lac / kWaterLac - 1.0) * 1000.0; }

ImageRaster hu_to_lac(const ImageRaster& hu) {
  ImageRaster out = hu;
  for (auto& v : out.values) v = hu_to_lac(v);
  return out;
}

ImageRaster lac_to_hu(const ImageRaster& lac) {
  ImageRaster out = lac;
  for (auto& v : out.values) v = lac_to_hu(v);
  return out;
}

namespace {

struct Ellipse {
  double cx, cy, a, b, angle;

  // Normalized radius: 1 on the boundary.
  double radius(double x, double y) const {
    const double c = std::cos(angle), s = std::sin(angle);
    const double u = (x - cx) * c + (y - cy) * s;
    const double v = -(x - cx) * s + (y - cy) * c;
    return std::sqrt((u / a) * (u / a) + (v / b) * (v / b));
  }
};

double uniform(CounterRng& rng, double lo, double hi) { return lo + (hi - lo) * rng.uniform(); }

void paint(ImageRaster& image, const Ellipse& e, double value, double ramp_mm) {
  const double half = 0.5 * static_cast<double>(image.size);
  const double scale = std::min(e.a, e.b);
  for (std::size_t r = 0; r < image.size; ++r) {
    const double y = (static_cast<double>(r) + 0.5 - half) * image.pixel_pitch;
    for (std::size_t c = 0; c < image.size; ++c) {
      const double x = (static_cast<double>(c) + 0.5 - half) * image.pixel_pitch;
      const double d = (e.radius(x, y) - 1.0) * scale;
      const double w = ramp_mm > 0.0 ? std::clamp(0.5 - d / ramp_mm, 0.0, 1.0) : (d <= 0.0 ? 1.0 : 0.0);
      if (w > 0.0) image(r, c) = (1.0 - w) * image(r, c) + w * value;
    }
  }
}

// Ellipse well inside the body: centre within 0.55 of the body radius and
// semi-axes at most 0.3 of its smaller semi-axis.
Ellipse inner_ellipse(CounterRng& rng, const Ellipse& body, double min_frac, double max_frac) {
  const double rho = 0.55 * std::sqrt(rng.uniform());
  const double phi = uniform(rng, 0.0, 2.0 * M_PI);
  const double u = rho * body.a * std::cos(phi);
  const double v = rho * body.b * std::sin(phi);
  const double c = std::cos(body.angle), s = std::sin(body.angle);
  const double small = std::min(body.a, body.b);
  return {body.cx + u * c - v * s, body.cy + u * s + v * c, small * uniform(rng, min_frac, max_frac),
          small * uniform(rng, min_frac, max_frac), uniform(rng, 0.0, M_PI)};
}

}  // namespace

Phantom generate_phantom(const PhantomSpec& spec, std::size_t size, double pixel_pitch) {
  if (size < 1 || !(pixel_pitch > 0.0)) throw ConfigError("phantom grid must be non-empty");
  if (!(spec.body_min > 0.0) || spec.body_max < spec.body_min || spec.body_max > 0.95)
    throw ConfigError("body extent must lie in (0, 0.95] of the FOV radius");
  CounterRng rng(derive_seed(spec.seed, {0x70686e}));
  const double radius = 0.5 * static_cast<double>(size) * pixel_pitch;
  const double ramp = spec.smoothing * pixel_pitch;

  // Body semi-axes leave room for the edge ramp and an offset centre.
  const double a = radius * uniform(rng, spec.body_min, spec.body_max);
  const double b = radius * uniform(rng, spec.body_min, spec.body_max);
  const double slack = std::max(0.0, 0.95 * radius - std::max(a, b) - ramp);
  const double off = slack * std::sqrt(rng.uniform());
  const double dir = uniform(rng, 0.0, 2.0 * M_PI);
  const Ellipse body{off * std::cos(dir), off * std::sin(dir), a, b, uniform(rng, 0.0, M_PI)};

  Phantom out;
  out.hu = ImageRaster(size, pixel_pitch, spec.air_hu);
  paint(out.hu, body, uniform(rng, 0.0, 60.0), ramp);
  for (std::size_t k = 0; k < spec.soft_ellipses; ++k)
    paint(out.hu, inner_ellipse(rng, body, 0.1, 0.35), uniform(rng, spec.soft_lo, spec.soft_hi), ramp);
  for (std::size_t k = 0; k < spec.air_ellipses; ++k)
    paint(out.hu, inner_ellipse(rng, body, 0.05, 0.15), spec.air_hu, ramp);
  for (std::size_t k = 0; k < spec.bone_ellipses; ++k)
    paint(out.hu, inner_ellipse(rng, body, 0.05, 0.2), uniform(rng, spec.bone_lo, spec.bone_hi), ramp);

  out.body = Mask2D(size, size);
  const double half = 0.5 * static_cast<double>(size);
  for (std::size_t r = 0; r < size; ++r)
    for (std::size_t c = 0; c < size; ++c) {
      const double x = (static_cast<double>(c) + 0.5 - half) * pixel_pitch;
      const double y = (static_cast<double>(r) + 0.5 - half) * pixel_pitch;
      out.body.set(r, c, body.radius(x, y) <= 1.0);
    }
  return out;
}

std::string to_string(MetalShape shape) {
  switch (shape) {
    case MetalShape::disk: return "disk";
    case MetalShape::rounded_rectangle: return "rounded-rectangle";
    case MetalShape::two_lobe: return "two-lobe";
  }
  return "disk";
}

MetalShape metal_shape_from_string(const std::string& name) {
  if (name == "disk") return MetalShape::disk;
  if (name == "rounded-rectangle" || name == "rounded_rectangle") return MetalShape::rounded_rectangle;
  if (name == "two-lobe" || name == "two_lobe") return MetalShape::two_lobe;
  throw ConfigError("unknown metal shape '" + name + "'");
}

std::size_t metal_size_target(const std::string& size_class, std::size_t image_size) {
  double at_416 = 0.0;
  if (size_class == "large") at_416 = 2061.0;
  else if (size_class == "medium") at_416 = 451.0;
  else if (size_class == "small") at_416 = 124.0;
  else throw ConfigError("unknown metal size class '" + size_class + "'");
  const double scale = static_cast<double>(image_size) / 416.0;
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(at_416 * scale * scale)));
}

Mask2D rasterize_metal(const MetalSpec& spec, double s, std::size_t size, double pitch) {
  Mask2D mask(size, size);
  const double half = 0.5 * static_cast<double>(size);
  const double c = std::cos(spec.angle), sn = std::sin(spec.angle);
  for (std::size_t r = 0; r < size; ++r)
    for (std::size_t col = 0; col < size; ++col) {
      const double x = (static_cast<double>(col) + 0.5 - half) * pitch - spec.x_mm;
      const double y = (static_cast<double>(r) + 0.5 - half) * pitch - spec.y_mm;
      const double u = x * c + y * sn;
      const double v = -x * sn + y * c;
      bool inside = false;
      switch (spec.shape) {
        case MetalShape::disk:
          inside = u * u + v * v <= s * s;
          break;
        case MetalShape::rounded_rectangle: {
          const double rc = 0.3 * s;
          const double qx = std::abs(u) - (1.6 * s - rc);
          const double qy = std::abs(v) - (0.6 * s - rc);
          const double ox = std::max(qx, 0.0), oy = std::max(qy, 0.0);
          inside = std::sqrt(ox * ox + oy * oy) + std::min(std::max(qx, qy), 0.0) <= rc;
          break;
        }
        case MetalShape::two_lobe: {
          const double d1 = (u - 0.9 * s) * (u - 0.9 * s) + v * v;
          const double d2 = (u + 0.9 * s) * (u + 0.9 * s) + v * v;
          inside = std::min(d1, d2) <= s * s;
          break;
        }
      }
      mask.set(r, col, inside);
    }
  return mask;
}

MetalInsertion insert_metal(const ImageRaster& hu, const Mask2D& body, const MetalSpec& spec) {
  if (!(body.rows == hu.size && body.cols == hu.size)) throw DataError("body mask does not match image");
  if (spec.target_pixels < 1) throw ConfigError("metal target must be at least one pixel");
  // Smallest scale whose pixel count reaches the target, then the closer of
  // it and the largest scale below it.
  double lo = 0.0;
  double hi = static_cast<double>(hu.size) * hu.pixel_pitch;
  for (int it = 0; it < 60; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (rasterize_metal(spec, mid, hu.size, hu.pixel_pitch).count() >= spec.target_pixels) hi = mid;
    else lo = mid;
  }
  Mask2D above = rasterize_metal(spec, hi, hu.size, hu.pixel_pitch);
  Mask2D below = rasterize_metal(spec, lo, hu.size, hu.pixel_pitch);
  const auto target = static_cast<long>(spec.target_pixels);
  const long da = std::labs(static_cast<long>(above.count()) - target);
  const long db = std::labs(static_cast<long>(below.count()) - target);
  MetalInsertion out{hu, (db < da && below.count() > 0) ? below : above};

  const Mask2D fov = fov_mask(hu.size);
  for (std::size_t i = 0; i < out.mask.bits.size(); ++i) {
    if (!out.mask.bits[i]) continue;
    if (!body.bits[i] || !fov.bits[i]) throw DataError("metal placement extends outside the body or FOV");
    out.hu.values[i] = spec.hu;
  }
  return out;
}

Mask2D segment_metal(const ImageRaster& hu, double threshold) {
  if (!std::isfinite(threshold)) throw ConfigError("segmentation threshold must be finite");
  Mask2D mask(hu.size, hu.size);
  for (std::size_t i = 0; i < hu.values.size(); ++i) mask.bits[i] = hu.values[i] > threshold ? 1 : 0;
  return mask;
}

SpectrumModel SpectrumModel::preset(const std::string& name) {
  if (name == "poly3") return {{0.3, 0.4, 0.3}, {1.14, 1.0, 0.877}, {1.25, 1.0, 0.96}, {1.8, 1.0, 0.6}};
  if (name == "mono") return {{1.0}, {1.0}, {1.0}, {1.0}};
  throw ConfigError("unknown spectrum preset '" + name + "'");
}

void SpectrumModel::validate() const {
  if (weights.empty()) throw ConfigError("spectrum needs at least one energy bin");
  if (water.size() != bins() || bone.size() != bins() || metal.size() != bins())
    throw ConfigError("spectrum tables disagree on the bin count");
  double total = 0.0;
  for (double w : weights) {
    if (!(w > 0.0)) throw ConfigError("spectrum weights must be positive");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("spectrum weights must sum to one");
  if (water[bins() / 2] != 1.0) throw ConfigError("water scale at the reference bin must be 1");
}

Sinogram corrupt(const ImageRaster& hu, const Mask2D& metal_mask, const FanBeamGeometry& geometry,
                 const CorruptionConfig& config) {
  config.spectrum.validate();
  if (!(config.photons > 0.0)) throw ConfigError("photon count must be positive");
  if (config.supersample < 1) throw ConfigError("supersampling factor must be at least 1");
  if (hu.size != geometry.image_size()) throw DataError("image size does not match geometry");
  if (!(metal_mask.rows == hu.size && metal_mask.cols == hu.size)) throw DataError("metal mask does not match image");

  // Material-resolved attenuation maps at the reference energy.
  ImageRaster water(hu.size, hu.pixel_pitch), bone(hu.size, hu.pixel_pitch), metal(hu.size, hu.pixel_pitch);
  for (std::size_t i = 0; i < hu.values.size(); ++i) {
    const double mu = std::max(0.0, hu_to_lac(hu.values[i]));
    if (metal_mask.bits[i]) metal.values[i] = mu;
    else if (hu.values[i] > config.bone_threshold) bone.values[i] = mu;
    else water.values[i] = mu;
  }

  const auto& sp = config.spectrum;
  const std::size_t sub = config.supersample;
  const double step = geometry.default_step() / static_cast<double>(sub);
  const std::size_t n_det = geometry.n_detectors();
  Sinogram y(geometry.n_views(), n_det);
  parallel_for(geometry.n_views(), [&](std::size_t v) {
    for (std::size_t d = 0; d < n_det; ++d) {
      double expected = 0.0;
      for (std::size_t j = 0; j < sub; ++j) {
        const double frac = (static_cast<double>(j) + 0.5) / static_cast<double>(sub) - 0.5;
        const Ray ray = geometry.ray_at(v, geometry.detector_offset(d) + frac * geometry.detector_pitch());
        double pw = 0.0, pb = 0.0, pm = 0.0;
        geometry.for_each_sample(ray, step, [&](Vec2 p, double dp) {
          pw += sample_bilinear(water, p) * dp;
          pb += sample_bilinear(bone, p) * dp;
          pm += sample_bilinear(metal, p) * dp;
        });
        for (std::size_t k = 0; k < sp.bins(); ++k)
          expected += sp.weights[k] * std::exp(-(sp.water[k] * pw + sp.bone[k] * pb + sp.metal[k] * pm));
      }
      double counts = config.photons * expected / static_cast<double>(sub);
      if (config.poisson) {
        CounterRng rng(derive_seed(config.seed, {0x6e6f697365, v * n_det + d}));
        counts = static_cast<double>(std::poisson_distribution<long long>(counts)(rng));
      }
      y(v, d) = -std::log(std::max(counts, 1.0) / config.photons);
    }
  });
  return y;
}

}  // namespace inrmar
