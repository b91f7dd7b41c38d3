#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "inrmar/diffusion.hpp"
#include "inrmar/geometry.hpp"
#include "inrmar/inr.hpp"
#include "inrmar/projector.hpp"
#include "inrmar/raster.hpp"

namespace inrmar {

enum class MarMode { full, inr_only, dm_only, li_baseline };

std::string to_string(MarMode mode);
MarMode mar_mode_from_string(const std::string& name);

struct MarConfig {
  std::size_t t_start = 1000;
  std::size_t t_interval = 50;
  std::size_t fidelity_steps = 1000;
  std::size_t fidelity_steps_low_t = 200;
  std::size_t t_low_threshold = 200;
  std::size_t regularization_steps = 200;
  std::size_t ray_batch = 4096;
  std::size_t pixel_batch = 4096;
  std::size_t final_fidelity_steps = 1000;
  double sample_step = 0.0;  // mm; <= 0 selects geometry.default_step()
  double learning_rate = 1e-3;
  RampWindow fbp_window = RampWindow::ram_lak;  // every FBP the modes run
  MarMode mode = MarMode::full;

  // t_start, t_start - t_interval, ..., t_interval.
  std::vector<std::size_t> timesteps() const;
  std::size_t fidelity_steps_at(std::size_t t) const;
  void validate(std::size_t t_total) const;
};

// Bins whose forward-projected mask exceeds `threshold` (<= 0 selects half a
// pixel pitch of path length).
MetalTrace compute_metal_trace(const Mask2D& metal_mask, const FanBeamGeometry& geometry,
                               double threshold = 0.0);

// Rays that are untraced and cross the FOV, as flat indices v * n_det + d.
std::vector<std::size_t> untraced_rays(const MetalTrace& trace, const FanBeamGeometry& geometry);

struct PhaseContext {
  InrModel& model;
  AdamOptimizer& optimizer;
  const FanBeamGeometry& geometry;
  double sample_step = 0.0;
};

// `steps` Adam steps on the mean absolute projection error over `batch` rays
// drawn uniformly (with replacement) from the untraced set. Returns the loss
// of every step.
std::vector<double> fidelity_phase(PhaseContext& ctx, const Sinogram& y, const MetalTrace& trace,
                                   std::size_t steps, std::size_t batch, std::uint64_t seed);

struct RegularizationOutcome {
  std::vector<double> losses;
  ImageRaster prior;  // the frozen Tweedie estimate
};

// Rasterizes the model, diffuses it to step t with fresh noise, denoises in
// one step and fits the model to that fixed image for `steps` Adam steps of
// mean squared error over `batch` random FOV pixels.
RegularizationOutcome regularization_phase(PhaseContext& ctx, std::size_t t, const EpsilonPredictor& predictor,
                                           const NoiseSchedule& schedule, const Normalization& norm,
                                           std::size_t steps, std::size_t batch, std::uint64_t seed);

struct IterationRecord {
  std::size_t iter = 0;
  std::size_t t = 0;
  std::size_t fidelity_steps = 0;
  std::size_t regularization_steps = 0;
  double fidelity_loss = 0.0;        // mean over the phase
  double regularization_loss = 0.0;  // mean over the phase; 0 when skipped
  double psnr = 0.0;                 // after the iteration, vs. ground truth
  double ssim = 0.0;
  double fidelity_seconds = 0.0;
  double regularization_seconds = 0.0;
};

struct MarResult {
  ImageRaster image;      // reconstruction with metal re-inserted
  ImageRaster inr_image;  // reconstruction before re-insertion
  std::vector<IterationRecord> iterations;
  std::optional<IterationRecord> final_pass;
  std::optional<InrModel> model;  // the fitted network (full and inr_only)
  bool metal_reinserted = false;
  bool view_axis_fallback = false;
  double seconds = 0.0;
};

struct MarInputs {
  const Sinogram& y;
  const MetalTrace& trace;
  const FanBeamGeometry& geometry;
  const Mask2D& metal_mask;
  const ImageRaster* ground_truth = nullptr;  // LAC; enables per-iteration metrics
};

// Pixels inside the mask are replaced by `source`; everything else is kept.
ImageRaster reinsert_metal(const ImageRaster& image, const ImageRaster& source, const Mask2D& mask);

// Alternating fidelity / regularization optimization of a fresh network
// (mode full or inr_only), followed by a final fidelity pass.
MarResult run_inr_dr(const MarInputs& in, const MarConfig& config, const InrConfig& inr,
                     const EpsilonPredictor* predictor, const NoiseSchedule& schedule,
                     const Normalization& norm, std::uint64_t seed);

// Traced bins of y replaced by `synthetic`; untraced bins copied from y.
Sinogram splice(const Sinogram& y, const Sinogram& synthetic, const MetalTrace& trace);

// Sinogram-inpainting ablation without a network: denoise, project, splice
// into y, reconstruct, re-noise to the next step.
MarResult run_dm_only(const MarInputs& in, const MarConfig& config, const EpsilonPredictor& predictor,
                      const NoiseSchedule& schedule, const Normalization& norm, std::uint64_t seed);

struct LiResult {
  Sinogram completed;
  ImageRaster image;
  bool view_axis_fallback = false;
};

// Per-view linear interpolation across traced runs (constant extension at
// the detector edges), then FBP. Views traced end to end are filled along
// the view axis instead.
LiResult li_baseline(const Sinogram& y, const MetalTrace& trace, const FanBeamGeometry& geometry,
                     RampWindow window = RampWindow::ram_lak);

}  // namespace inrmar
