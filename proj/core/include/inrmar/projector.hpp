#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "inrmar/geometry.hpp"
#include "inrmar/inr.hpp"
#include "inrmar/raster.hpp"

namespace inrmar {

// Bilinear interpolation of a raster at an image-centred millimetre position.
// Neighbours outside the grid contribute zero.
double sample_bilinear(const ImageRaster& image, Vec2 mm);

// Line integrals of the bilinearly interpolated raster along every ray,
// midpoint rule with the given step (<= 0 selects geometry.default_step()).
Sinogram forward_project_raster(const ImageRaster& image, const FanBeamGeometry& geometry,
                                double step = 0.0);

// Exact transpose of forward_project_raster for the same step.
ImageRaster backproject(const Sinogram& sinogram, const FanBeamGeometry& geometry,
                        double step = 0.0);

enum class RampWindow { ram_lak, hann };

std::string to_string(RampWindow window);
RampWindow ramp_window_from_string(const std::string& name);

// Flat-detector fan-beam filtered back-projection over a full circle.
// Pixels outside the inscribed field-of-view circle are zero.
ImageRaster fbp(const Sinogram& sinogram, const FanBeamGeometry& geometry,
                RampWindow window = RampWindow::ram_lak);

// Projections of the network image along `rays`: sum_k F(p_k) * dp.
std::vector<double> forward_project_rays(const InrModel& model, const FanBeamGeometry& geometry,
                                         std::span<const Ray> rays, double step = 0.0);

// Forward projection followed by reverse-mode accumulation into `grads`.
// `loss(i, projection)` returns the contribution of ray i and its derivative.
// Returns the summed loss; projections are written out when a buffer is given.
double project_rays_backward(const InrModel& model, const FanBeamGeometry& geometry,
                             std::span<const Ray> rays, double step, const GroupLossFn& loss,
                             InrGradients& grads, std::span<double> projections = {});

}  // namespace inrmar
