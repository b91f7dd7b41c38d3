#include "inrmar/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "inrmar/errors.hpp"

namespace inrmar {

namespace {

constexpr int kRadius = 5;
constexpr double kSigma = 1.5;

void check_pair(const ImageRaster& x, const ImageRaster& ref, const Mask2D* exclude) {
  if (x.size != ref.size || x.values.size() != ref.values.size()) throw DataError("metric inputs differ in shape");
  if (exclude && !(exclude->rows == ref.size && exclude->cols == ref.size))
    throw DataError("exclusion mask does not match image");
}

double resolve_range(const ImageRaster& ref, double data_range) {
  if (data_range <= 0.0) data_range = *std::max_element(ref.values.begin(), ref.values.end());
  if (!(data_range > 0.0)) throw ConfigError("data range must be positive");
  return data_range;
}

bool kept(const Mask2D* exclude, std::size_t i) { return !exclude || !exclude->bits[i]; }

// Separable Gaussian smoothing with the window truncated and renormalized at
// the image border.
std::vector<double> smooth(const std::vector<double>& in, std::size_t n) {
  double kernel[2 * kRadius + 1];
  for (int k = -kRadius; k <= kRadius; ++k) kernel[k + kRadius] = std::exp(-0.5 * k * k / (kSigma * kSigma));
  auto pass = [&](const std::vector<double>& src, bool along_rows) {
    std::vector<double> dst(src.size());
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < n; ++c) {
        double acc = 0.0, wsum = 0.0;
        for (int k = -kRadius; k <= kRadius; ++k) {
          const long rr = static_cast<long>(r) + (along_rows ? 0 : k);
          const long cc = static_cast<long>(c) + (along_rows ? k : 0);
          if (rr < 0 || cc < 0 || rr >= static_cast<long>(n) || cc >= static_cast<long>(n)) continue;
          const double w = kernel[k + kRadius];
          acc += w * src[static_cast<std::size_t>(rr) * n + static_cast<std::size_t>(cc)];
          wsum += w;
        }
        dst[r * n + c] = acc / wsum;
      }
    return dst;
  };
  return pass(pass(in, true), false);
}

}  // namespace

double psnr(const ImageRaster& x, const ImageRaster& ref, double data_range, const Mask2D* exclude) {
  check_pair(x, ref, exclude);
  data_range = resolve_range(ref, data_range);
  double sse = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < ref.values.size(); ++i) {
    if (!kept(exclude, i)) continue;
    const double e = x.values[i] - ref.values[i];
    sse += e * e;
    ++count;
  }
  if (count == 0) throw DataError("every pixel is excluded");
  if (sse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(data_range * data_range / (sse / static_cast<double>(count)));
}

double ssim(const ImageRaster& x, const ImageRaster& ref, double data_range, const Mask2D* exclude) {
  check_pair(x, ref, exclude);
  const std::size_t n = ref.size;
  if (n < 2 * kRadius + 1) throw DataError("image is smaller than the SSIM window");
  data_range = resolve_range(ref, data_range);
  const double c1 = (0.01 * data_range) * (0.01 * data_range);
  const double c2 = (0.03 * data_range) * (0.03 * data_range);

  std::vector<double> xx(x.values.size()), yy(xx.size()), xy(xx.size());
  for (std::size_t i = 0; i < xx.size(); ++i) {
    xx[i] = x.values[i] * x.values[i];
    yy[i] = ref.values[i] * ref.values[i];
    xy[i] = x.values[i] * ref.values[i];
  }
  const auto mx = smooth(x.values, n), my = smooth(ref.values, n);
  const auto sxx = smooth(xx, n), syy = smooth(yy, n), sxy = smooth(xy, n);

  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < xx.size(); ++i) {
    if (!kept(exclude, i)) continue;
    const double vx = sxx[i] - mx[i] * mx[i];
    const double vy = syy[i] - my[i] * my[i];
    const double cov = sxy[i] - mx[i] * my[i];
    total += ((2.0 * mx[i] * my[i] + c1) * (2.0 * cov + c2)) /
             ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
    ++count;
  }
  if (count == 0) throw DataError("every pixel is excluded");
  return total / static_cast<double>(count);
}

MetricReport evaluate(const ImageRaster& x, const ImageRaster& ref, const Mask2D* exclude, double data_range) {
  MetricReport report;
  report.data_range = resolve_range(ref, data_range);
  report.psnr = psnr(x, ref, report.data_range, exclude);
  report.identical = std::isinf(report.psnr);
  report.ssim = ssim(x, ref, report.data_range, exclude);
  report.metal_excluded = exclude != nullptr;
  report.pixels = exclude ? ref.pixel_count() - exclude->count() : ref.pixel_count();
  return report;
}

}  // namespace inrmar
