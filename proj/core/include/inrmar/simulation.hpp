#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "inrmar/geometry.hpp"
#include "inrmar/raster.hpp"

namespace inrmar {

constexpr double kWaterLac = 0.0192;  // mm^-1 at the reference energy

double hu_to_lac(double hu);
double lac_to_hu(double lac);
ImageRaster hu_to_lac(const ImageRaster& hu);
ImageRaster lac_to_hu(const ImageRaster& lac);

struct PhantomSpec {
  std::uint64_t seed = 0;
  double body_min = 0.55;  // body semi-axes as a fraction of the FOV radius
  double body_max = 0.85;
  std::size_t soft_ellipses = 5;
  std::size_t bone_ellipses = 2;
  std::size_t air_ellipses = 1;
  double soft_lo = -100.0, soft_hi = 100.0;
  double bone_lo = 300.0, bone_hi = 1200.0;
  double air_hu = -1000.0;
  double smoothing = 1.0;  // edge ramp width in pixels
};

struct Phantom {
  ImageRaster hu;  // Hounsfield units
  Mask2D body;
};

// Nested soft-edged ellipses inside a body ellipse that stays within the FOV.
Phantom generate_phantom(const PhantomSpec& spec, std::size_t size, double pixel_pitch);

enum class MetalShape { disk, rounded_rectangle, two_lobe };

std::string to_string(MetalShape shape);
MetalShape metal_shape_from_string(const std::string& name);

struct MetalSpec {
  MetalShape shape = MetalShape::disk;
  std::size_t target_pixels = 43;
  double x_mm = 0.0;  // centre, image-centred millimetres
  double y_mm = 0.0;
  double angle = 0.0; // radians, for the non-circular shapes
  double hu = 8000.0;
};

// "large", "medium", "small": 2061, 451 and 124 px on a 416 px grid,
// scaled by (size/416)^2.
std::size_t metal_size_target(const std::string& size_class, std::size_t image_size);

// Pixels whose centres fall inside the shape drawn at the given scale
// (disk radius; the other shapes are proportioned from it).
Mask2D rasterize_metal(const MetalSpec& spec, double scale_mm, std::size_t size, double pixel_pitch);

struct MetalInsertion {
  ImageRaster hu;
  Mask2D mask;
};

// Rasterizes the shape, scaled so the pixel count lands as close as possible
// to the target, and writes the metal HU inside it. Throws DataError when any
// metal pixel falls outside `body` or the FOV circle.
MetalInsertion insert_metal(const ImageRaster& hu, const Mask2D& body, const MetalSpec& spec);

Mask2D segment_metal(const ImageRaster& hu, double threshold = 2500.0);

// Energy bins with weights and per-material attenuation scales
// (water, bone, metal); the middle bin is the reference energy.
struct SpectrumModel {
  std::vector<double> weights;
  std::vector<double> water;
  std::vector<double> bone;
  std::vector<double> metal;

  std::size_t bins() const { return weights.size(); }
  static SpectrumModel preset(const std::string& name);  // "poly3" or "mono"
  void validate() const;
};

struct CorruptionConfig {
  SpectrumModel spectrum = SpectrumModel::preset("poly3");
  double photons = 1e6;        // N0 per detector bin
  bool poisson = true;         // false: noiseless expected intensity
  std::size_t supersample = 2; // sub-rays per bin and along-ray refinement
  double bone_threshold = 250.0;
  std::uint64_t seed = 0;
};

// Polychromatic, partial-volume and Poisson corrupted measurement of an HU
// image; metal pixels are taken from `metal_mask`.
Sinogram corrupt(const ImageRaster& hu, const Mask2D& metal_mask, const FanBeamGeometry& geometry,
                 const CorruptionConfig& config);

}  // namespace inrmar
