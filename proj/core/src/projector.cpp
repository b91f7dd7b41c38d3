#include "inrmar/projector.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <unsupported/Eigen/FFT>

#include "inrmar/errors.hpp"
#include "inrmar/parallel.hpp"

namespace inrmar {

namespace {

constexpr std::size_t kViewsPerBlock = 32;

struct BilinearTap {
  long row;
  long col;
  double fr;
  double fc;
};

inline BilinearTap locate(const ImageRaster& image, Vec2 mm) {
  const double half = 0.5 * static_cast<double>(image.size);
  const double pc = mm.x / image.pixel_pitch + half - 0.5;
  const double pr = mm.y / image.pixel_pitch + half - 0.5;
  const double c0 = std::floor(pc);
  const double r0 = std::floor(pr);
  return {static_cast<long>(r0), static_cast<long>(c0), pr - r0, pc - c0};
}

// Visits the (up to four) in-grid neighbours of a sample with their weights.
template <class Fn>
inline void for_each_tap(const ImageRaster& image, Vec2 mm, Fn&& fn) {
  const auto tap = locate(image, mm);
  const long n = static_cast<long>(image.size);
  const double wr[2] = {1.0 - tap.fr, tap.fr};
  const double wc[2] = {1.0 - tap.fc, tap.fc};
  for (int i = 0; i < 2; ++i) {
    const long r = tap.row + i;
    if (r < 0 || r >= n) continue;
    for (int j = 0; j < 2; ++j) {
      const long c = tap.col + j;
      if (c < 0 || c >= n) continue;
      fn(static_cast<std::size_t>(r * n + c), wr[i] * wc[j]);
    }
  }
}

void check_image(const ImageRaster& image, const FanBeamGeometry& g) {
  if (image.size != g.image_size() || image.values.size() != image.size * image.size)
    throw DataError("raster size does not match geometry");
}

void check_sinogram(const Sinogram& s, const FanBeamGeometry& g) {
  if (s.n_views != g.n_views() || s.n_detectors != g.n_detectors() ||
      s.values.size() != s.n_views * s.n_detectors)
    throw DataError("sinogram dimensions do not match geometry");
}

std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

}  // namespace

double sample_bilinear(const ImageRaster& image, Vec2 mm) {
  double acc = 0.0;
  for_each_tap(image, mm, [&](std::size_t idx, double w) { acc += w * image.values[idx]; });
  return acc;
}

Sinogram forward_project_raster(const ImageRaster& image, const FanBeamGeometry& geometry,
                                double step) {
  check_image(image, geometry);
  if (step <= 0.0) step = geometry.default_step();
  Sinogram out(geometry.n_views(), geometry.n_detectors());
  parallel_for(geometry.n_views(), [&](std::size_t v) {
    for (std::size_t d = 0; d < geometry.n_detectors(); ++d) {
      const Ray ray = geometry.ray_for(v, d);
      double acc = 0.0;
      geometry.for_each_sample(ray, step,
                               [&](Vec2 p, double dp) { acc += sample_bilinear(image, p) * dp; });
      out(v, d) = acc;
    }
  });
  return out;
}

ImageRaster backproject(const Sinogram& sinogram, const FanBeamGeometry& geometry, double step) {
  check_sinogram(sinogram, geometry);
  if (step <= 0.0) step = geometry.default_step();
  ImageRaster result(geometry.image_size(), geometry.pixel_pitch());
  const std::size_t blocks = (geometry.n_views() + kViewsPerBlock - 1) / kViewsPerBlock;
  std::vector<std::vector<double>> partial(blocks);
  parallel_for(blocks, [&](std::size_t b) {
    auto& acc = partial[b];
    acc.assign(result.values.size(), 0.0);
    const std::size_t v_end = std::min(geometry.n_views(), (b + 1) * kViewsPerBlock);
    for (std::size_t v = b * kViewsPerBlock; v < v_end; ++v) {
      for (std::size_t d = 0; d < geometry.n_detectors(); ++d) {
        const double value = sinogram(v, d);
        if (value == 0.0) continue;
        const Ray ray = geometry.ray_for(v, d);
        geometry.for_each_sample(ray, step, [&](Vec2 p, double dp) {
          for_each_tap(result, p, [&](std::size_t idx, double w) { acc[idx] += w * dp * value; });
        });
      }
    }
  });
  for (const auto& acc : partial)
    for (std::size_t i = 0; i < acc.size(); ++i) result.values[i] += acc[i];
  return result;
}

std::string to_string(RampWindow window) { return window == RampWindow::hann ? "hann" : "ram_lak"; }

RampWindow ramp_window_from_string(const std::string& name) {
  if (name == "ram_lak") return RampWindow::ram_lak;
  if (name == "hann") return RampWindow::hann;
  throw ConfigError("unknown ramp window '" + name + "'");
}

ImageRaster fbp(const Sinogram& sinogram, const FanBeamGeometry& geometry, RampWindow window) {
  check_sinogram(sinogram, geometry);
  const std::size_t n_det = geometry.n_detectors();
  const double dso = geometry.source_to_iso();
  const double magnification = geometry.source_to_detector() / dso;
  const double ds = geometry.detector_pitch() / magnification;  // spacing at isocentre
  const double centre = 0.5 * static_cast<double>(n_det - 1);

  // Ram-Lak impulse response laid out circularly, halved for the
  // full-circle redundancy and scaled by the convolution spacing.
  const std::size_t padded = next_pow2(2 * n_det);
  std::vector<double> kernel(padded, 0.0);
  kernel[0] = 1.0 / (4.0 * ds * ds);
  for (std::size_t k = 1; k < n_det; ++k) {
    if (k % 2 == 0) continue;
    const double kd = static_cast<double>(k);
    const double h = -1.0 / (kd * kd * M_PI * M_PI * ds * ds);
    kernel[k] = h;
    kernel[padded - k] = h;
  }
  for (auto& h : kernel) h *= 0.5 * ds;

  Eigen::FFT<double> fft;
  std::vector<std::complex<double>> response;
  fft.fwd(response, kernel);
  if (window == RampWindow::hann) {
    for (std::size_t k = 0; k < padded; ++k) {
      const double f = 2.0 * static_cast<double>(std::min(k, padded - k)) / static_cast<double>(padded);
      response[k] *= 0.5 * (1.0 + std::cos(M_PI * f));
    }
  }

  Sinogram filtered(sinogram.n_views, n_det);
  std::vector<double> cos_weight(n_det);
  for (std::size_t d = 0; d < n_det; ++d) {
    const double s = (static_cast<double>(d) - centre) * ds;
    cos_weight[d] = dso / std::sqrt(dso * dso + s * s);
  }
  parallel_for(sinogram.n_views, [&](std::size_t v) {
    Eigen::FFT<double> local_fft;
    std::vector<double> row(padded, 0.0);
    for (std::size_t d = 0; d < n_det; ++d) row[d] = sinogram(v, d) * cos_weight[d];
    std::vector<std::complex<double>> spectrum;
    local_fft.fwd(spectrum, row);
    for (std::size_t k = 0; k < padded; ++k) spectrum[k] *= response[k];
    local_fft.inv(row, spectrum);
    for (std::size_t d = 0; d < n_det; ++d) filtered(v, d) = row[d];
  });

  const std::size_t n = geometry.image_size();
  ImageRaster image(n, geometry.pixel_pitch());
  const Mask2D support = fov_mask(n);
  const double dbeta = geometry.angular_span() / static_cast<double>(geometry.n_views());
  std::vector<double> cosv(geometry.n_views()), sinv(geometry.n_views());
  for (std::size_t v = 0; v < geometry.n_views(); ++v) {
    cosv[v] = std::cos(geometry.view_angle(v));
    sinv[v] = std::sin(geometry.view_angle(v));
  }
  const double half = 0.5 * static_cast<double>(n);
  parallel_for(n, [&](std::size_t r) {
    const double y = (static_cast<double>(r) + 0.5 - half) * geometry.pixel_pitch();
    for (std::size_t c = 0; c < n; ++c) {
      if (!support(r, c)) continue;
      const double x = (static_cast<double>(c) + 0.5 - half) * geometry.pixel_pitch();
      double acc = 0.0;
      for (std::size_t v = 0; v < geometry.n_views(); ++v) {
        const double along = dso - (x * cosv[v] + y * sinv[v]);
        const double lateral = -x * sinv[v] + y * cosv[v];
        const double s = dso * lateral / along;
        const double u = along / dso;
        const double fd = s / ds + centre;
        const double f0 = std::floor(fd);
        const long d0 = static_cast<long>(f0);
        const double w = fd - f0;
        double q = 0.0;
        if (d0 >= 0 && d0 < static_cast<long>(n_det)) q += (1.0 - w) * filtered(v, d0);
        if (d0 + 1 >= 0 && d0 + 1 < static_cast<long>(n_det)) q += w * filtered(v, d0 + 1);
        acc += q / (u * u);
      }
      image(r, c) = acc * dbeta;
    }
  });
  return image;
}

}  // namespace inrmar

namespace inrmar {

namespace {

constexpr std::size_t kRaysPerChunk = 16;

GroupEmitter ray_emitter(const FanBeamGeometry& geometry, std::span<const Ray> rays, double step) {
  return [&geometry, rays, step](std::size_t g, std::vector<Vec2>& points, std::vector<double>& weights) {
    geometry.for_each_sample(rays[g], step, [&](Vec2 p, double dp) {
      points.push_back(geometry.normalized(p));
      weights.push_back(dp);
    });
  };
}

}  // namespace

std::vector<double> forward_project_rays(const InrModel& model, const FanBeamGeometry& geometry,
                                         std::span<const Ray> rays, double step) {
  if (step <= 0.0) step = geometry.default_step();
  return evaluate_groups(model, rays.size(), ray_emitter(geometry, rays, step), kRaysPerChunk);
}

double project_rays_backward(const InrModel& model, const FanBeamGeometry& geometry,
                             std::span<const Ray> rays, double step, const GroupLossFn& loss,
                             InrGradients& grads, std::span<double> projections) {
  if (step <= 0.0) step = geometry.default_step();
  return backprop_groups(model, rays.size(), ray_emitter(geometry, rays, step), loss, grads, kRaysPerChunk,
                         projections);
}

}  // namespace inrmar
