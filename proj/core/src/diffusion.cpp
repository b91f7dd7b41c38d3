#include "inrmar/diffusion.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <random>

#include "inrmar/errors.hpp"
#include "inrmar/inr.hpp"
#include "inrmar/parallel.hpp"
#include "inrmar/random.hpp"

namespace inrmar {

double NoiseSchedule::beta(std::size_t t) const {
  check_t(t);
  return betas[t - 1];
}

double NoiseSchedule::alpha_bar(std::size_t t) const {
  check_t(t);
  return alpha_bars[t - 1];
}

void NoiseSchedule::check_t(std::size_t t) const {
  if (t < 1 || t > total) throw ConfigError("timestep " + std::to_string(t) + " outside [1, " + std::to_string(total) + "]");
}

NoiseSchedule make_schedule(std::size_t total, double beta_start, double beta_end) {
  if (total < 1) throw ConfigError("schedule needs at least one timestep");
  if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0))
    throw ConfigError("beta endpoints must satisfy 0 < start <= end < 1");
  NoiseSchedule s{total, beta_start, beta_end, {}, {}};
  s.betas.resize(total);
  s.alpha_bars.resize(total);
  double prod = 1.0;
  for (std::size_t i = 0; i < total; ++i) {
    const double frac = total == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(total - 1);
    s.betas[i] = beta_start + (beta_end - beta_start) * frac;
    prod *= 1.0 - s.betas[i];
    s.alpha_bars[i] = prod;
  }
  return s;
}

std::vector<double> gaussian_noise(std::size_t count, std::uint64_t seed) {
  CounterRng rng(seed);
  std::normal_distribution<double> normal;
  std::vector<double> out(count);
  for (auto& v : out) v = normal(rng);
  return out;
}

ImageRaster diffuse(const ImageRaster& x0_lac, std::size_t t, std::span<const double> eps,
                    const NoiseSchedule& schedule, const Normalization& norm) {
  const double ab = schedule.alpha_bar(t);
  if (eps.size() != x0_lac.values.size()) throw DataError("noise raster does not match image");
  ImageRaster out(x0_lac.size, x0_lac.pixel_pitch);
  const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
  for (std::size_t i = 0; i < eps.size(); ++i) out.values[i] = a * norm.to_model(x0_lac.values[i]) + b * eps[i];
  return out;
}

std::vector<double> ZeroPredictor::predict(const ImageRaster& x_t, std::size_t) const {
  return std::vector<double>(x_t.values.size(), 0.0);
}

OracleNoise OracleNoise::from_noise(std::vector<double> eps) {
  OracleNoise o;
  o.eps_ = std::move(eps);
  return o;
}

OracleNoise OracleNoise::from_clean(const ImageRaster& x0_lac, const NoiseSchedule& schedule,
                                    const Normalization& norm) {
  OracleNoise o;
  o.clean_.resize(x0_lac.values.size());
  for (std::size_t i = 0; i < o.clean_.size(); ++i) o.clean_[i] = norm.to_model(x0_lac.values[i]);
  o.alpha_bars_ = schedule.alpha_bars;
  return o;
}

std::vector<double> OracleNoise::predict(const ImageRaster& x_t, std::size_t t) const {
  if (clean_.empty()) {
    if (eps_.size() != x_t.values.size()) throw DataError("oracle noise does not match input");
    return eps_;
  }
  if (clean_.size() != x_t.values.size()) throw DataError("oracle image does not match input");
  if (t < 1 || t > alpha_bars_.size()) throw ConfigError("timestep outside the oracle schedule");
  const double ab = alpha_bars_[t - 1];
  const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
  std::vector<double> out(clean_.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (x_t.values[i] - a * clean_[i]) / b;
  return out;
}

ImageRaster tweedie_denoise(const ImageRaster& x_t, std::size_t t, const EpsilonPredictor& predictor,
                            const NoiseSchedule& schedule, const Normalization& norm) {
  const double ab = schedule.alpha_bar(t);
  const auto eps = predictor.predict(x_t, t);
  if (eps.size() != x_t.values.size()) throw DataError("predictor changed the raster shape");
  const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
  ImageRaster out(x_t.size, x_t.pixel_pitch);
  for (std::size_t i = 0; i < eps.size(); ++i)
    out.values[i] = std::max(0.0, norm.to_lac((x_t.values[i] - b * eps[i]) / a));
  return out;
}

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<RowMatrix>;
using CMapM = Eigen::Map<const RowMatrix>;

// (channels * 9) x (side * side) patch matrix with zero padding.
void im2col(const double* x, std::size_t channels, std::size_t side, std::vector<double>& cols) {
  const std::size_t n = side * side;
  cols.assign(channels * 9 * n, 0.0);
  const long s = static_cast<long>(side);
  for (std::size_t ch = 0; ch < channels; ++ch)
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) {
        double* row = cols.data() + (ch * 9 + static_cast<std::size_t>(ky * 3 + kx)) * n;
        const double* src = x + ch * n;
        for (long y = 0; y < s; ++y) {
          const long sy = y + ky - 1;
          if (sy < 0 || sy >= s) continue;
          const long x0 = std::max(0L, 1L - kx), x1 = std::min(s, s + 1 - kx);
          for (long xx = x0; xx < x1; ++xx) row[y * s + xx] = src[sy * s + xx + kx - 1];
        }
      }
}

void col2im(const std::vector<double>& cols, std::size_t channels, std::size_t side, double* x) {
  const std::size_t n = side * side;
  std::fill_n(x, channels * n, 0.0);
  const long s = static_cast<long>(side);
  for (std::size_t ch = 0; ch < channels; ++ch)
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) {
        const double* row = cols.data() + (ch * 9 + static_cast<std::size_t>(ky * 3 + kx)) * n;
        double* dst = x + ch * n;
        for (long y = 0; y < s; ++y) {
          const long sy = y + ky - 1;
          if (sy < 0 || sy >= s) continue;
          const long x0 = std::max(0L, 1L - kx), x1 = std::min(s, s + 1 - kx);
          for (long xx = x0; xx < x1; ++xx) dst[sy * s + xx + kx - 1] += row[y * s + xx];
        }
      }
}

}  // namespace

TinyCnnDenoiser::TinyCnnDenoiser(const CnnConfig& config, std::size_t t_total, std::uint64_t seed)
    : config_(config), t_total_(t_total) {
  if (config_.hidden_layers < 1 || config_.channels < 1) throw ConfigError("denoiser needs at least one hidden layer");
  if (t_total_ < 1) throw ConfigError("denoiser needs a positive schedule length");
  std::size_t in = 2, offset = 0;
  for (std::size_t l = 0; l <= config_.hidden_layers; ++l) {
    const std::size_t out = l == config_.hidden_layers ? 1 : config_.channels;
    layers_.push_back({in, out, offset, offset + out * in * 9});
    offset += out * in * 9 + out;
    in = out;
  }
  params_.assign(offset, 0.0);
  CounterRng rng(derive_seed(seed, {0x636e6e}));
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& layer = layers_[l];
    const double fan_in = static_cast<double>(layer.in * 9);
    const double bound = std::sqrt((l + 1 == layers_.size() ? 3.0 : 6.0) / fan_in);
    for (std::size_t k = 0; k < layer.out * layer.in * 9; ++k)
      params_[layer.w_offset + k] = (2.0 * rng.uniform() - 1.0) * bound;
  }
  round_to_storage();
}

void TinyCnnDenoiser::round_to_storage() {
  for (auto& p : params_) p = static_cast<double>(static_cast<float>(p));
}

std::vector<double> TinyCnnDenoiser::run(const double* x, std::size_t side, double t_frac,
                                         std::vector<std::vector<double>>* acts) const {
  const std::size_t n = side * side;
  std::vector<double> cur(2 * n);
  std::copy_n(x, n, cur.begin());
  std::fill(cur.begin() + static_cast<std::ptrdiff_t>(n), cur.end(), t_frac);
  std::vector<double> cols;
  if (acts) acts->clear();
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& layer = layers_[l];
    im2col(cur.data(), layer.in, side, cols);
    if (acts) acts->push_back(cur);
    std::vector<double> next(layer.out * n);
    MapM y(next.data(), static_cast<Eigen::Index>(layer.out), static_cast<Eigen::Index>(n));
    CMapM w(params_.data() + layer.w_offset, static_cast<Eigen::Index>(layer.out), static_cast<Eigen::Index>(layer.in * 9));
    CMapM c(cols.data(), static_cast<Eigen::Index>(layer.in * 9), static_cast<Eigen::Index>(n));
    y.noalias() = w * c;
    const bool last = l + 1 == layers_.size();
    for (std::size_t o = 0; o < layer.out; ++o) {
      const double b = params_[layer.b_offset + o];
      double* row = next.data() + o * n;
      for (std::size_t k = 0; k < n; ++k) {
        const double v = row[k] + b;
        row[k] = last ? v : std::max(v, 0.0);
      }
    }
    cur.swap(next);
  }
  return cur;
}

std::vector<double> TinyCnnDenoiser::predict(const ImageRaster& x_t, std::size_t t) const {
  if (x_t.size < 16) throw DataError("denoiser input must be at least 16 pixels per side");
  if (t < 1 || t > t_total_) throw ConfigError("timestep outside the denoiser schedule");
  return run(x_t.values.data(), x_t.size, static_cast<double>(t) / static_cast<double>(t_total_), nullptr);
}

double TinyCnnDenoiser::loss_and_gradient(std::span<const std::vector<double>> inputs, std::span<const std::size_t> t,
                                          std::span<const std::vector<double>> targets, std::size_t side,
                                          std::vector<double>& grads) const {
  if (inputs.size() != t.size() || inputs.size() != targets.size() || inputs.empty())
    throw DataError("denoiser batch is inconsistent");
  grads.resize(params_.size(), 0.0);
  const std::size_t n = side * side;
  const double scale = 1.0 / static_cast<double>(inputs.size() * n);
  std::vector<std::vector<double>> partial(inputs.size());
  std::vector<double> losses(inputs.size(), 0.0);

  parallel_for(inputs.size(), [&](std::size_t item) {
    if (inputs[item].size() != n || targets[item].size() != n) throw DataError("denoiser sample has the wrong size");
    std::vector<std::vector<double>> acts;
    const auto out = run(inputs[item].data(), side, static_cast<double>(t[item]) / static_cast<double>(t_total_), &acts);
    auto& g = partial[item];
    g.assign(params_.size(), 0.0);
    std::vector<double> dy(n);
    double loss = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      const double e = out[k] - targets[item][k];
      loss += e * e;
      dy[k] = 2.0 * e * scale;
    }
    losses[item] = loss * scale;

    std::vector<double> cols, dcols, dx;
    for (std::size_t li = layers_.size(); li-- > 0;) {
      const auto& layer = layers_[li];
      const auto& x = acts[li];
      im2col(x.data(), layer.in, side, cols);
      CMapM dyv(dy.data(), static_cast<Eigen::Index>(layer.out), static_cast<Eigen::Index>(n));
      CMapM c(cols.data(), static_cast<Eigen::Index>(layer.in * 9), static_cast<Eigen::Index>(n));
      MapM dw(g.data() + layer.w_offset, static_cast<Eigen::Index>(layer.out), static_cast<Eigen::Index>(layer.in * 9));
      dw.noalias() += dyv * c.transpose();
      for (std::size_t o = 0; o < layer.out; ++o) {
        double acc = 0.0;
        for (std::size_t k = 0; k < n; ++k) acc += dy[o * n + k];
        g[layer.b_offset + o] += acc;
      }
      if (li == 0) break;
      CMapM w(params_.data() + layer.w_offset, static_cast<Eigen::Index>(layer.out), static_cast<Eigen::Index>(layer.in * 9));
      dcols.resize(layer.in * 9 * n);
      MapM dc(dcols.data(), static_cast<Eigen::Index>(layer.in * 9), static_cast<Eigen::Index>(n));
      dc.noalias() = w.transpose() * dyv;
      dx.resize(layer.in * n);
      col2im(dcols, layer.in, side, dx.data());
      // x is the post-ReLU input of this layer.
      for (std::size_t k = 0; k < dx.size(); ++k)
        if (!(x[k] > 0.0)) dx[k] = 0.0;
      dy.swap(dx);
    }
  });

  double total = 0.0;
  for (std::size_t item = 0; item < inputs.size(); ++item) {
    total += losses[item];
    for (std::size_t k = 0; k < grads.size(); ++k) grads[k] += partial[item][k];
  }
  return total;
}

namespace {

// One of the eight symmetries of the square applied to a crop.
std::vector<double> crop_view(const ImageRaster& image, std::size_t r0, std::size_t c0, std::size_t side,
                              unsigned symmetry) {
  std::vector<double> out(side * side);
  for (std::size_t r = 0; r < side; ++r)
    for (std::size_t c = 0; c < side; ++c) {
      std::size_t rr = r, cc = c;
      if (symmetry & 1u) cc = side - 1 - cc;
      if (symmetry & 2u) rr = side - 1 - rr;
      if (symmetry & 4u) std::swap(rr, cc);
      out[r * side + c] = image(r0 + rr, c0 + cc);
    }
  return out;
}

}  // namespace

DenoiserTraining train_denoiser(TinyCnnDenoiser& model, std::span<const ImageRaster> corpus,
                                const NoiseSchedule& schedule, const Normalization& norm,
                                const DenoiserTrainConfig& config) {
  if (corpus.empty()) throw DataError("denoiser corpus is empty");
  const std::size_t size = corpus.front().size;
  for (const auto& image : corpus)
    if (image.size != size) throw DataError("corpus rasters differ in size");
  if (config.crop < 16 || config.crop > size) throw ConfigError("crop must lie in [16, image size]");
  if (config.batch < 1 || config.steps < 1) throw ConfigError("batch and steps must be positive");
  if (model.t_total() != schedule.total) throw ConfigError("denoiser and schedule lengths differ");

  AdamOptimizer optimizer(model.parameters().size(), AdamConfig{config.learning_rate, 0.9, 0.999, 1e-8});
  DenoiserTraining out;
  out.losses.reserve(config.steps);
  std::vector<double> grads;
  const std::size_t n = config.crop * config.crop;
  for (std::size_t step = 0; step < config.steps; ++step) {
    CounterRng rng(derive_seed(config.seed, {0x747261696e, step}));
    std::vector<std::vector<double>> inputs(config.batch), targets(config.batch);
    std::vector<std::size_t> ts(config.batch);
    for (std::size_t b = 0; b < config.batch; ++b) {
      const auto& image = corpus[rng() % corpus.size()];
      const std::size_t r0 = rng() % (size - config.crop + 1);
      const std::size_t c0 = rng() % (size - config.crop + 1);
      const auto symmetry = static_cast<unsigned>(rng() % 8);
      ts[b] = 1 + rng() % schedule.total;
      const auto x0 = crop_view(image, r0, c0, config.crop, symmetry);
      targets[b] = gaussian_noise(n, rng());
      const double ab = schedule.alpha_bar(ts[b]);
      const double a = std::sqrt(ab), s = std::sqrt(1.0 - ab);
      inputs[b].resize(n);
      for (std::size_t k = 0; k < n; ++k) inputs[b][k] = a * norm.to_model(x0[k]) + s * targets[b][k];
    }
    grads.assign(model.parameters().size(), 0.0);
    const double loss = model.loss_and_gradient(inputs, ts, targets, config.crop, grads);
    if (!std::isfinite(loss)) throw NumericalError("denoiser loss became non-finite at step " + std::to_string(step));
    optimizer.step(model.parameters(), grads, 0, {}, 0);
    model.round_to_storage();
    out.losses.push_back(loss);
  }
  return out;
}

}  // namespace inrmar
