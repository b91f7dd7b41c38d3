#pragma once

#include <cstddef>
#include <optional>
#include <string>

#include "inrmar/raster.hpp"

namespace inrmar {

// Peak signal-to-noise ratio in dB over pixels outside `exclude`.
// data_range <= 0 selects the reference maximum. Returns +infinity for
// identical inputs.
double psnr(const ImageRaster& x, const ImageRaster& ref, double data_range = 0.0,
            const Mask2D* exclude = nullptr);

// Mean local SSIM (11x11 Gaussian window, sigma 1.5, K1 = 0.01, K2 = 0.03).
// Local statistics use the full image; excluded pixels are dropped from the
// final mean. Windows are truncated at the border.
double ssim(const ImageRaster& x, const ImageRaster& ref, double data_range = 0.0,
            const Mask2D* exclude = nullptr);

struct MetricReport {
  double psnr = 0.0;
  double ssim = 0.0;
  double data_range = 0.0;
  bool identical = false;
  bool metal_excluded = false;
  std::size_t pixels = 0;
};

MetricReport evaluate(const ImageRaster& x, const ImageRaster& ref, const Mask2D* exclude = nullptr,
                      double data_range = 0.0);

}  // namespace inrmar
