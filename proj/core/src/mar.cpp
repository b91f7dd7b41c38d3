#include "inrmar/mar.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "inrmar/errors.hpp"
#include "inrmar/metrics.hpp"
#include "inrmar/projector.hpp"
#include "inrmar/random.hpp"

namespace inrmar {

std::string to_string(MarMode mode) {
  switch (mode) {
    case MarMode::full: return "full";
    case MarMode::inr_only: return "inr_only";
    case MarMode::dm_only: return "dm_only";
    case MarMode::li_baseline: return "li_baseline";
  }
  return "full";
}

MarMode mar_mode_from_string(const std::string& name) {
  if (name == "full") return MarMode::full;
  if (name == "inr_only") return MarMode::inr_only;
  if (name == "dm_only") return MarMode::dm_only;
  if (name == "li_baseline") return MarMode::li_baseline;
  throw ConfigError("unknown mode '" + name + "'");
}

std::vector<std::size_t> MarConfig::timesteps() const {
  std::vector<std::size_t> out;
  if (t_interval == 0) return out;
  for (std::size_t t = t_start; t >= t_interval; t -= t_interval) out.push_back(t);
  return out;
}

std::size_t MarConfig::fidelity_steps_at(std::size_t t) const {
  return t < t_low_threshold ? fidelity_steps_low_t : fidelity_steps;
}

void MarConfig::validate(std::size_t t_total) const {
  if (t_interval < 1) throw ConfigError("t_interval must be at least 1");
  if (t_start < t_interval) throw ConfigError("t_start must be at least t_interval");
  if (t_start > t_total) throw ConfigError("t_start exceeds the diffusion schedule length");
  if (fidelity_steps < 1 || fidelity_steps_low_t < 1 || regularization_steps < 1 || ray_batch < 1 ||
      pixel_batch < 1 || final_fidelity_steps < 1)
    throw ConfigError("step counts and batch sizes must be at least 1");
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
}

MetalTrace compute_metal_trace(const Mask2D& metal_mask, const FanBeamGeometry& geometry, double threshold) {
  if (metal_mask.rows != geometry.image_size() || metal_mask.cols != geometry.image_size())
    throw DataError("metal mask does not match geometry");
  if (threshold <= 0.0) threshold = 0.5 * geometry.pixel_pitch();
  ImageRaster indicator(geometry.image_size(), geometry.pixel_pitch());
  for (std::size_t i = 0; i < indicator.values.size(); ++i) indicator.values[i] = metal_mask.bits[i] ? 1.0 : 0.0;
  const Sinogram p = forward_project_raster(indicator, geometry);
  MetalTrace trace(p.n_views, p.n_detectors);
  for (std::size_t i = 0; i < p.values.size(); ++i) trace.bits[i] = p.values[i] > threshold ? 1 : 0;
  return trace;
}

std::vector<std::size_t> untraced_rays(const MetalTrace& trace, const FanBeamGeometry& geometry) {
  if (trace.rows != geometry.n_views() || trace.cols != geometry.n_detectors())
    throw DataError("metal trace does not match geometry");
  std::vector<std::size_t> out;
  for (std::size_t v = 0; v < geometry.n_views(); ++v)
    for (std::size_t d = 0; d < geometry.n_detectors(); ++d)
      if (!trace(v, d) && geometry.ray_for(v, d).length() > 0.0) out.push_back(v * geometry.n_detectors() + d);
  return out;
}

std::vector<double> fidelity_phase(PhaseContext& ctx, const Sinogram& y, const MetalTrace& trace,
                                   std::size_t steps, std::size_t batch, std::uint64_t seed) {
  const auto& g = ctx.geometry;
  if (y.n_views != g.n_views() || y.n_detectors != g.n_detectors()) throw DataError("sinogram does not match geometry");
  const auto pool = untraced_rays(trace, g);
  if (pool.empty()) throw DataError("the metal trace covers every ray");
  const double step = ctx.sample_step > 0.0 ? ctx.sample_step : g.default_step();
  auto grads = ctx.model.make_gradients();
  std::vector<double> losses;
  losses.reserve(steps);
  std::vector<Ray> rays(batch);
  std::vector<double> targets(batch);
  const double inv = 1.0 / static_cast<double>(batch);
  for (std::size_t s = 0; s < steps; ++s) {
    CounterRng rng(derive_seed(seed, {s}));
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t idx = pool[rng() % pool.size()];
      rays[b] = g.ray_for(idx / g.n_detectors(), idx % g.n_detectors());
      targets[b] = y.values[idx];
    }
    grads.clear();
    const double loss = project_rays_backward(
        ctx.model, g, rays, step,
        [&](std::size_t i, double v) {
          const double e = v - targets[i];
          return LossTerm{std::abs(e) * inv, e > 0.0 ? inv : (e < 0.0 ? -inv : 0.0)};
        },
        grads);
    if (!std::isfinite(loss)) throw NumericalError("fidelity loss became non-finite");
    opt_step(ctx.model, grads, ctx.optimizer);
    losses.push_back(loss);
  }
  return losses;
}

namespace {

ImageRaster raster_in_fov(const InrModel& model, const FanBeamGeometry& g) {
  ImageRaster image = rasterize(model, g.image_size(), g.pixel_pitch());
  const Mask2D fov = fov_mask(g.image_size());
  for (std::size_t i = 0; i < image.values.size(); ++i)
    if (!fov.bits[i]) image.values[i] = 0.0;
  return image;
}

double mean(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

using Clock = std::chrono::steady_clock;
double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

void score(IterationRecord& rec, const ImageRaster& image, const MarInputs& in) {
  if (!in.ground_truth) return;
  rec.psnr = psnr(image, *in.ground_truth, 0.0, &in.metal_mask);
  rec.ssim = ssim(image, *in.ground_truth, 0.0, &in.metal_mask);
}

}  // namespace

RegularizationOutcome regularization_phase(PhaseContext& ctx, std::size_t t, const EpsilonPredictor& predictor,
                                           const NoiseSchedule& schedule, const Normalization& norm,
                                           std::size_t steps, std::size_t batch, std::uint64_t seed) {
  schedule.check_t(t);
  const auto& g = ctx.geometry;
  const ImageRaster x0 = raster_in_fov(ctx.model, g);
  const auto eps = gaussian_noise(x0.values.size(), derive_seed(seed, {0x6e6f697365}));
  const ImageRaster xt = diffuse(x0, t, eps, schedule, norm);
  RegularizationOutcome out{{}, tweedie_denoise(xt, t, predictor, schedule, norm)};

  const std::size_t n = g.image_size();
  const Mask2D fov = fov_mask(n);
  std::vector<std::size_t> pool;
  for (std::size_t i = 0; i < fov.bits.size(); ++i)
    if (fov.bits[i]) pool.push_back(i);
  const double nd = static_cast<double>(n);
  const double inv = 1.0 / static_cast<double>(batch);

  auto grads = ctx.model.make_gradients();
  std::vector<std::size_t> picks(batch);
  out.losses.reserve(steps);
  for (std::size_t s = 0; s < steps; ++s) {
    CounterRng rng(derive_seed(seed, {s}));
    for (auto& p : picks) p = pool[rng() % pool.size()];
    grads.clear();
    const double loss = backprop_groups(
        ctx.model, batch,
        [&](std::size_t i, std::vector<Vec2>& pts, std::vector<double>& w) {
          const std::size_t p = picks[i];
          pts.push_back({(static_cast<double>(p % n) + 0.5) / nd, (static_cast<double>(p / n) + 0.5) / nd});
          w.push_back(1.0);
        },
        [&](std::size_t i, double v) {
          const double e = v - out.prior.values[picks[i]];
          return LossTerm{e * e * inv, 2.0 * e * inv};
        },
        grads, 64);
    if (!std::isfinite(loss)) throw NumericalError("regularization loss became non-finite");
    opt_step(ctx.model, grads, ctx.optimizer);
    out.losses.push_back(loss);
  }
  return out;
}

ImageRaster reinsert_metal(const ImageRaster& image, const ImageRaster& source, const Mask2D& mask) {
  if (source.values.size() != image.values.size() || mask.bits.size() != image.values.size())
    throw DataError("re-insertion inputs differ in shape");
  ImageRaster out = image;
  for (std::size_t i = 0; i < out.values.size(); ++i)
    if (mask.bits[i]) out.values[i] = source.values[i];
  out.metal_mask = mask;
  return out;
}

MarResult run_inr_dr(const MarInputs& in, const MarConfig& config, const InrConfig& inr,
                     const EpsilonPredictor* predictor, const NoiseSchedule& schedule,
                     const Normalization& norm, std::uint64_t seed) {
  if (config.mode != MarMode::full && config.mode != MarMode::inr_only)
    throw ConfigError("run_inr_dr handles the full and inr_only modes");
  config.validate(schedule.total);
  const bool regularize = config.mode == MarMode::full;
  if (regularize && !predictor) throw ConfigError("full mode needs a noise predictor");
  const auto& g = in.geometry;
  const auto t_all = Clock::now();

  InrModel model(inr, derive_seed(seed, {1}));
  // One moment state per objective: the L1 projection loss and the pixel
  // MSE differ in gradient scale by orders of magnitude.
  AdamOptimizer fid_opt(model.parameter_count(), AdamConfig{config.learning_rate});
  AdamOptimizer reg_opt(model.parameter_count(), AdamConfig{config.learning_rate});
  PhaseContext ctx{model, fid_opt, g, config.sample_step};
  PhaseContext reg_ctx{model, reg_opt, g, config.sample_step};

  MarResult result;
  const auto ts = config.timesteps();
  for (std::size_t i = 0; i < ts.size(); ++i) {
    IterationRecord rec;
    rec.iter = i + 1;
    rec.t = ts[i];
    rec.fidelity_steps = config.fidelity_steps_at(ts[i]);
    auto t0 = Clock::now();
    rec.fidelity_loss = mean(fidelity_phase(ctx, in.y, in.trace, rec.fidelity_steps, config.ray_batch,
                                            derive_seed(seed, {2, i})));
    rec.fidelity_seconds = since(t0);
    if (regularize) {
      t0 = Clock::now();
      rec.regularization_steps = config.regularization_steps;
      rec.regularization_loss = mean(regularization_phase(reg_ctx, ts[i], *predictor, schedule, norm,
                                                          config.regularization_steps, config.pixel_batch,
                                                          derive_seed(seed, {3, i}))
                                         .losses);
      rec.regularization_seconds = since(t0);
    }
    if (in.ground_truth) score(rec, raster_in_fov(model, g), in);
    result.iterations.push_back(rec);
  }

  IterationRecord fin;
  fin.iter = ts.size() + 1;
  fin.fidelity_steps = config.final_fidelity_steps;
  auto t0 = Clock::now();
  fin.fidelity_loss = mean(fidelity_phase(ctx, in.y, in.trace, config.final_fidelity_steps, config.ray_batch,
                                          derive_seed(seed, {4})));
  fin.fidelity_seconds = since(t0);

  result.inr_image = raster_in_fov(model, g);
  score(fin, result.inr_image, in);
  result.final_pass = fin;
  result.image = reinsert_metal(result.inr_image, fbp(in.y, g, config.fbp_window), in.metal_mask);
  result.metal_reinserted = true;
  result.model = std::move(model);
  result.seconds = since(t_all);
  return result;
}

Sinogram splice(const Sinogram& y, const Sinogram& synthetic, const MetalTrace& trace) {
  if (synthetic.values.size() != y.values.size() || trace.bits.size() != y.values.size())
    throw DataError("splice inputs differ in shape");
  Sinogram out = y;
  for (std::size_t i = 0; i < out.values.size(); ++i)
    if (trace.bits[i]) out.values[i] = synthetic.values[i];
  return out;
}

MarResult run_dm_only(const MarInputs& in, const MarConfig& config, const EpsilonPredictor& predictor,
                      const NoiseSchedule& schedule, const Normalization& norm, std::uint64_t seed) {
  config.validate(schedule.total);
  const auto& g = in.geometry;
  const auto t_all = Clock::now();
  const auto ts = config.timesteps();
  const std::size_t n = g.image_size();
  const Mask2D fov = fov_mask(n);

  ImageRaster xt(n, g.pixel_pitch());
  xt.values = gaussian_noise(n * n, derive_seed(seed, {5, 0}));
  ImageRaster image;
  MarResult result;
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const auto t0 = Clock::now();
    IterationRecord rec;
    rec.iter = i + 1;
    rec.t = ts[i];
    const ImageRaster prior = tweedie_denoise(xt, ts[i], predictor, schedule, norm);
    const Sinogram spliced = splice(in.y, forward_project_raster(prior, g), in.trace);
    image = fbp(spliced, g, config.fbp_window);
    for (std::size_t k = 0; k < image.values.size(); ++k)
      image.values[k] = fov.bits[k] ? std::max(0.0, image.values[k]) : 0.0;
    if (i + 1 < ts.size())
      xt = diffuse(image, ts[i + 1], gaussian_noise(n * n, derive_seed(seed, {5, i + 1})), schedule, norm);
    rec.fidelity_seconds = since(t0);
    score(rec, image, in);
    result.iterations.push_back(rec);
  }
  result.inr_image = image;
  result.image = reinsert_metal(image, fbp(in.y, g, config.fbp_window), in.metal_mask);
  result.metal_reinserted = true;
  result.seconds = since(t_all);
  return result;
}

LiResult li_baseline(const Sinogram& y, const MetalTrace& trace, const FanBeamGeometry& geometry,
                     RampWindow window) {
  if (y.n_views != geometry.n_views() || y.n_detectors != geometry.n_detectors() ||
      trace.rows != y.n_views || trace.cols != y.n_detectors)
    throw DataError("LI inputs do not match geometry");
  LiResult out{y, {}, false};
  const std::size_t nv = y.n_views, nd = y.n_detectors;
  std::vector<std::size_t> full_views;
  for (std::size_t v = 0; v < nv; ++v) {
    std::size_t d = 0;
    bool any_clean = false;
    for (std::size_t k = 0; k < nd; ++k) any_clean = any_clean || !trace(v, k);
    if (!any_clean) {
      full_views.push_back(v);
      continue;
    }
    while (d < nd) {
      if (!trace(v, d)) {
        ++d;
        continue;
      }
      const std::size_t start = d;
      while (d < nd && trace(v, d)) ++d;
      const bool has_left = start > 0, has_right = d < nd;
      const double a = has_left ? y(v, start - 1) : y(v, d);
      const double b = has_right ? y(v, d) : y(v, start - 1);
      const double span = static_cast<double>(d - start + 1);
      for (std::size_t k = start; k < d; ++k) {
        const double w = has_left && has_right ? static_cast<double>(k - start + 1) / span : 0.0;
        out.completed(v, k) = (1.0 - w) * a + w * b;
      }
    }
  }
  if (!full_views.empty()) {
    out.view_axis_fallback = true;
    std::vector<std::uint8_t> filled(nv, 1);
    for (auto v : full_views) filled[v] = 0;
    for (auto v : full_views) {
      std::size_t back = 1, fwd = 1;
      while (back < nv && !filled[(v + nv - back) % nv]) ++back;
      while (fwd < nv && !filled[(v + fwd) % nv]) ++fwd;
      if (back >= nv) break;  // every view is traced; nothing to interpolate from
      const double w = static_cast<double>(back) / static_cast<double>(back + fwd);
      for (std::size_t k = 0; k < nd; ++k)
        out.completed(v, k) = (1.0 - w) * out.completed((v + nv - back) % nv, k) + w * out.completed((v + fwd) % nv, k);
    }
  }
  out.image = fbp(out.completed, geometry, window);
  return out;
}

}  // namespace inrmar
