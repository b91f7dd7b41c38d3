#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace inrmar {

// Row-major boolean field stored one byte per cell.
struct Mask2D {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> bits;

  Mask2D() = default;
  Mask2D(std::size_t r, std::size_t c, bool fill = false)
      : rows(r), cols(c), bits(r * c, fill ? 1 : 0) {}

  bool operator()(std::size_t r, std::size_t c) const { return bits[r * cols + c] != 0; }
  void set(std::size_t r, std::size_t c, bool v) { bits[r * cols + c] = v ? 1 : 0; }
  std::size_t count() const;
  bool same_shape(const Mask2D& o) const { return rows == o.rows && cols == o.cols; }
  friend bool operator==(const Mask2D&, const Mask2D&) = default;
};

// Square image on a regular grid. Values are linear attenuation coefficients
// (mm^-1) unless a function documents otherwise (HU, normalized diffusion space).
// Pixel (row, col) has its centre at x = (col + 0.5 - size/2) * pitch,
// y = (row + 0.5 - size/2) * pitch in image-centred millimetres.
struct ImageRaster {
  std::size_t size = 0;
  double pixel_pitch = 1.0;
  std::vector<double> values;
  std::optional<Mask2D> metal_mask;

  ImageRaster() = default;
  ImageRaster(std::size_t n, double pitch, double fill = 0.0)
      : size(n), pixel_pitch(pitch), values(n * n, fill) {}

  double& operator()(std::size_t row, std::size_t col) { return values[row * size + col]; }
  double operator()(std::size_t row, std::size_t col) const { return values[row * size + col]; }
  std::size_t pixel_count() const { return size * size; }

  // Throws DataError when values are non-finite or the mask shape disagrees.
  void validate() const;
};

// Line integrals indexed by (view, detector), row-major with views as rows.
struct Sinogram {
  std::size_t n_views = 0;
  std::size_t n_detectors = 0;
  std::vector<double> values;

  Sinogram() = default;
  Sinogram(std::size_t views, std::size_t dets, double fill = 0.0)
      : n_views(views), n_detectors(dets), values(views * dets, fill) {}

  double& operator()(std::size_t v, std::size_t d) { return values[v * n_detectors + d]; }
  double operator()(std::size_t v, std::size_t d) const { return values[v * n_detectors + d]; }
  std::span<double> view(std::size_t v) { return {values.data() + v * n_detectors, n_detectors}; }
  std::span<const double> view(std::size_t v) const {
    return {values.data() + v * n_detectors, n_detectors};
  }

  void validate() const;
};

// Bins whose rays cross metal; rows are views, columns detectors.
using MetalTrace = Mask2D;

// True inside the circle inscribed in a size x size pixel grid.
Mask2D fov_mask(std::size_t size);

}  // namespace inrmar
