#include "inrmar/raster.hpp"

#include <cmath>

#include "inrmar/errors.hpp"

namespace inrmar {

std::size_t Mask2D::count() const {
  std::size_t n = 0;
  for (auto b : bits) n += b != 0;
  return n;
}

void ImageRaster::validate() const {
  if (values.size() != size * size) throw DataError("raster payload does not match its size");
  for (double v : values)
    if (!std::isfinite(v)) throw DataError("raster contains non-finite values");
  if (metal_mask && (metal_mask->rows != size || metal_mask->cols != size))
    throw DataError("metal mask dimensions differ from raster");
}

void Sinogram::validate() const {
  if (values.size() != n_views * n_detectors)
    throw DataError("sinogram payload does not match its dimensions");
  for (double v : values)
    if (!std::isfinite(v)) throw DataError("sinogram contains non-finite values");
}

Mask2D fov_mask(std::size_t size) {
  Mask2D m(size, size);
  const double half = 0.5 * static_cast<double>(size);
  for (std::size_t r = 0; r < size; ++r) {
    for (std::size_t c = 0; c < size; ++c) {
      const double x = static_cast<double>(c) + 0.5 - half;
      const double y = static_cast<double>(r) + 0.5 - half;
      m.set(r, c, x * x + y * y < half * half);
    }
  }
  return m;
}

}  // namespace inrmar
