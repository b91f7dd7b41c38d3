#include "inrmar/inr.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "inrmar/errors.hpp"
#include "inrmar/parallel.hpp"
#include "inrmar/random.hpp"

namespace inrmar {

namespace {

constexpr std::uint32_t kPrimeY = 2654435761u;

double round_storage(double v) { return static_cast<double>(static_cast<float>(v)); }

// Four-lane vector used by the dense kernels. Per-sample arithmetic is fixed
// by the loop structure, never by the batch size, so single and batched
// evaluations agree bitwise.
typedef double v4d __attribute__((vector_size(32)));

inline v4d load4(const double* p) {
  v4d v;
  std::memcpy(&v, p, sizeof v);
  return v;
}
inline void store4(double* p, v4d v) { std::memcpy(p, &v, sizeof v); }
inline v4d splat(double x) { return v4d{x, x, x, x}; }
inline double hsum(v4d a, v4d b) {
  const v4d c = a + b;
  return (c[0] + c[1]) + (c[2] + c[3]);
}

constexpr std::size_t kBlock = 16;

typedef double v8d __attribute__((vector_size(64)));

inline v8d load8(const double* p) {
  v8d v;
  std::memcpy(&v, p, sizeof v);
  return v;
}
inline void store8(double* p, v8d v) { std::memcpy(p, &v, sizeof v); }

template <std::size_t Rows>
inline void forward_block(const double* x, std::size_t in, const double* w, const double* b,
                          std::size_t out, std::size_t ob, double* y) {
  v8d acc[Rows][2];
  for (std::size_t r = 0; r < Rows; ++r) {
    acc[r][0] = load8(b + ob);
    acc[r][1] = load8(b + ob + 8);
  }
  for (std::size_t i = 0; i < in; ++i) {
    const double* wr = w + i * out + ob;
    const v8d w0 = load8(wr), w1 = load8(wr + 8);
    for (std::size_t r = 0; r < Rows; ++r) {
      const double xv = x[r * in + i];
      const v8d xs = {xv, xv, xv, xv, xv, xv, xv, xv};
      acc[r][0] += xs * w0;
      acc[r][1] += xs * w1;
    }
  }
  for (std::size_t r = 0; r < Rows; ++r) {
    store8(y + r * out + ob, acc[r][0]);
    store8(y + r * out + ob + 8, acc[r][1]);
  }
}

inline void forward_tail(const double* x, std::size_t in, const double* w, const double* b,
                         std::size_t out, std::size_t ob, double* y) {
  for (std::size_t o = ob; o < out; ++o) {
    double acc = b[o];
    for (std::size_t i = 0; i < in; ++i) acc = std::fma(x[i], w[i * out + o], acc);
    y[o] = acc;
  }
}

inline double dot(const double* a, const double* b, std::size_t n) {
  v4d p0 = splat(0.0), p1 = splat(0.0);
  std::size_t k = 0;
  for (; k + 8 <= n; k += 8) {
    p0 += load4(a + k) * load4(b + k);
    p1 += load4(a + k + 4) * load4(b + k + 4);
  }
  double tail = 0.0;
  for (; k < n; ++k) tail = std::fma(a[k], b[k], tail);
  return hsum(p0, p1) + tail;
}

// Y = X W + b for a batch, W stored input-major.
void dense_forward(const double* x, std::size_t batch, std::size_t in, const double* w,
                   const double* b, std::size_t out, double* y, bool relu) {
  if (out == 1) {
    for (std::size_t s = 0; s < batch; ++s) y[s] = b[0] + dot(x + s * in, w, in);
  } else {
    const std::size_t full = out - out % kBlock;
    std::size_t s = 0;
    for (; s + 4 <= batch; s += 4)
      for (std::size_t ob = 0; ob < full; ob += kBlock) forward_block<4>(x + s * in, in, w, b, out, ob, y + s * out);
    for (; s < batch; ++s)
      for (std::size_t ob = 0; ob < full; ob += kBlock) forward_block<1>(x + s * in, in, w, b, out, ob, y + s * out);
    if (full < out)
      for (s = 0; s < batch; ++s) forward_tail(x + s * in, in, w, b, out, full, y + s * out);
  }
  if (relu)
    for (std::size_t k = 0; k < batch * out; ++k) y[k] = y[k] > 0.0 ? y[k] : 0.0;
}

constexpr std::size_t kSampleTile = 64;

// dW[i][o] += sum_s X[s][i] G[s][o], each element accumulated over samples in
// ascending order.
void dense_weight_grad(const double* x, const double* g, std::size_t batch, std::size_t in,
                       std::size_t out, double* dw) {
  if (out % 4 != 0) {
    for (std::size_t s = 0; s < batch; ++s)
      for (std::size_t i = 0; i < in; ++i) {
        const double xi = x[s * in + i];
        for (std::size_t o = 0; o < out; ++o) dw[i * out + o] = std::fma(xi, g[s * out + o], dw[i * out + o]);
      }
    return;
  }
  for (std::size_t s0 = 0; s0 < batch; s0 += kSampleTile) {
    const std::size_t s1 = std::min(batch, s0 + kSampleTile);
    for (std::size_t ob = 0; ob < out; ob += kBlock) {
      const std::size_t lanes = std::min(kBlock, out - ob) / 4;
      std::size_t i = 0;
      for (; i + 2 <= in; i += 2) {
        double* d0 = dw + i * out + ob;
        double* d1 = d0 + out;
        v4d a0[4], a1[4];
        for (std::size_t j = 0; j < lanes; ++j) {
          a0[j] = load4(d0 + 4 * j);
          a1[j] = load4(d1 + 4 * j);
        }
        for (std::size_t s = s0; s < s1; ++s) {
          const v4d x0 = splat(x[s * in + i]);
          const v4d x1 = splat(x[s * in + i + 1]);
          const double* gr = g + s * out + ob;
          for (std::size_t j = 0; j < lanes; ++j) {
            const v4d gv = load4(gr + 4 * j);
            a0[j] += x0 * gv;
            a1[j] += x1 * gv;
          }
        }
        for (std::size_t j = 0; j < lanes; ++j) {
          store4(d0 + 4 * j, a0[j]);
          store4(d1 + 4 * j, a1[j]);
        }
      }
      for (; i < in; ++i) {
        double* d0 = dw + i * out + ob;
        v4d a0[4];
        for (std::size_t j = 0; j < lanes; ++j) a0[j] = load4(d0 + 4 * j);
        for (std::size_t s = s0; s < s1; ++s) {
          const v4d x0 = splat(x[s * in + i]);
          const double* gr = g + s * out + ob;
          for (std::size_t j = 0; j < lanes; ++j) a0[j] += x0 * load4(gr + 4 * j);
        }
        for (std::size_t j = 0; j < lanes; ++j) store4(d0 + 4 * j, a0[j]);
      }
    }
  }
}

// dX[s][i] = sum_o W[i][o] G[s][o], evaluated as a dense layer with the
// transposed weights and no bias.
void dense_input_grad(const double* g, std::size_t batch, const double* w, std::size_t in,
                      std::size_t out, double* dx) {
  std::vector<double> wt(in * out);
  for (std::size_t i = 0; i < in; ++i)
    for (std::size_t o = 0; o < out; ++o) wt[o * in + i] = w[i * out + o];
  const std::vector<double> zero(in, 0.0);
  if (in == 1) {
    for (std::size_t s = 0; s < batch; ++s) dx[s] = dot(g + s * out, wt.data(), out);
    return;
  }
  dense_forward(g, batch, out, wt.data(), zero.data(), in, dx, false);
}

}  // namespace

std::string to_string(EncodingKind kind) {
  switch (kind) {
    case EncodingKind::hash: return "hash";
    case EncodingKind::fourier: return "fourier";
    case EncodingKind::none: return "none";
  }
  return "hash";
}

EncodingKind encoding_from_string(const std::string& name) {
  if (name == "hash") return EncodingKind::hash;
  if (name == "fourier") return EncodingKind::fourier;
  if (name == "none") return EncodingKind::none;
  throw ConfigError("unknown encoding '" + name + "'");
}

std::size_t HashEncodingConfig::resolution(std::size_t level) const {
  return static_cast<std::size_t>(
      std::floor(static_cast<double>(base_resolution) * std::pow(growth_factor, static_cast<double>(level)) + 1e-9));
}

double HashEncodingConfig::growth_for(std::size_t levels, std::size_t base, std::size_t finest) {
  if (levels < 2) return 2.0;
  return std::exp(std::log(static_cast<double>(finest) / static_cast<double>(base)) /
                  static_cast<double>(levels - 1));
}

InrConfig InrConfig::paper(std::size_t image_size) {
  InrConfig c;
  c.hash.growth_factor = HashEncodingConfig::growth_for(c.hash.levels, c.hash.base_resolution, 2 * image_size);
  return c;
}

InrConfig InrConfig::fourier_ablation() {
  InrConfig c;
  c.encoding = EncodingKind::fourier;
  c.fourier_frequencies = 8;
  c.hidden.assign(6, 256);
  return c;
}

std::size_t InrConfig::feature_dim() const {
  switch (encoding) {
    case EncodingKind::hash: return hash.levels * hash.features_per_level;
    case EncodingKind::fourier: return 4 * fourier_frequencies;
    case EncodingKind::none: return 2;
  }
  return 0;
}

void InrConfig::validate() const {
  if (encoding == EncodingKind::hash) {
    if (hash.levels < 1 || hash.features_per_level < 1 || hash.table_size < 1)
      throw ConfigError("hash encoding dimensions must be positive");
    if (hash.base_resolution < 2) throw ConfigError("hash base resolution must be >= 2");
    if (!(hash.growth_factor > 1.0)) throw ConfigError("hash growth factor must exceed 1");
    if (hash.table_size > (std::size_t{1} << 32)) throw ConfigError("hash table too large");
  }
  if (encoding == EncodingKind::fourier && fourier_frequencies < 1)
    throw ConfigError("fourier encoding needs at least one frequency");
  if (!(output_scale > 0.0) || !std::isfinite(output_scale)) throw ConfigError("output scale must be positive");
  for (auto h : hidden)
    if (h < 1) throw ConfigError("hidden layer widths must be positive");
}

std::uint32_t hash_vertex(std::uint32_t x, std::uint32_t y, std::size_t table_size) {
  const std::uint32_t h = (x * 1u) ^ (y * kPrimeY);
  return static_cast<std::uint32_t>(h % table_size);
}

void InrGradients::clear() {
  std::fill(values.begin() + static_cast<std::ptrdiff_t>(dense_begin()), values.end(), 0.0);
  for (auto row : touched_rows) {
    std::fill_n(values.begin() + static_cast<std::ptrdiff_t>(row * hash_row_width), hash_row_width, 0.0);
    row_flag[row] = 0;
  }
  touched_rows.clear();
}

bool InrGradients::all_finite() const {
  for (std::size_t i = dense_begin(); i < values.size(); ++i)
    if (!std::isfinite(values[i])) return false;
  for (auto row : touched_rows)
    for (std::size_t f = 0; f < hash_row_width; ++f)
      if (!std::isfinite(values[row * hash_row_width + f])) return false;
  return true;
}

InrModel::InrModel(const InrConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  feature_dim_ = config_.feature_dim();
  std::size_t offset = 0;
  if (config_.encoding == EncodingKind::hash) {
    for (std::size_t l = 0; l < config_.hash.levels; ++l) level_res_.push_back(config_.hash.resolution(l));
    hash_rows_ = config_.hash.levels * config_.hash.table_size;
    row_width_ = config_.hash.features_per_level;
    offset = hash_rows_ * row_width_;
  }
  std::size_t in = feature_dim_;
  auto add_layer = [&](std::size_t out) {
    Layer layer{in, out, offset, offset + in * out};
    offset = layer.b_offset + out;
    layers_.push_back(layer);
    in = out;
  };
  for (auto h : config_.hidden) add_layer(h);
  add_layer(1);
  params_.assign(offset, 0.0);

  CounterRng hash_rng(derive_seed(seed, {1}));
  for (std::size_t i = 0; i < hash_parameter_count(); ++i) params_[i] = (2.0 * hash_rng.uniform() - 1.0) * 1e-4;
  CounterRng mlp_rng(derive_seed(seed, {2}));
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& layer = layers_[l];
    const bool last = l + 1 == layers_.size();
    const double bound = std::sqrt((last ? 3.0 : 6.0) / static_cast<double>(layer.in));
    for (std::size_t k = 0; k < layer.in * layer.out; ++k)
      params_[layer.w_offset + k] = (2.0 * mlp_rng.uniform() - 1.0) * bound;
  }
  apply_precision();
}

void InrModel::encode_hash(Vec2 uv, double* features, std::uint32_t* rows, double* weights) const {
  const auto& h = config_.hash;
  const double u = std::clamp(uv.x, 0.0, 1.0);
  const double v = std::clamp(uv.y, 0.0, 1.0);
  for (std::size_t l = 0; l < h.levels; ++l) {
    const auto res = level_res_[l];
    const double px = u * static_cast<double>(res);
    const double py = v * static_cast<double>(res);
    const double fx0 = std::min(std::floor(px), static_cast<double>(res - 1));
    const double fy0 = std::min(std::floor(py), static_cast<double>(res - 1));
    const double fx = px - fx0;
    const double fy = py - fy0;
    const auto x0 = static_cast<std::uint32_t>(fx0);
    const auto y0 = static_cast<std::uint32_t>(fy0);
    const std::uint32_t corner_rows[4] = {
        static_cast<std::uint32_t>(l * h.table_size + hash_vertex(x0, y0, h.table_size)),
        static_cast<std::uint32_t>(l * h.table_size + hash_vertex(x0 + 1, y0, h.table_size)),
        static_cast<std::uint32_t>(l * h.table_size + hash_vertex(x0, y0 + 1, h.table_size)),
        static_cast<std::uint32_t>(l * h.table_size + hash_vertex(x0 + 1, y0 + 1, h.table_size))};
    const double corner_w[4] = {(1.0 - fx) * (1.0 - fy), fx * (1.0 - fy), (1.0 - fx) * fy, fx * fy};
    double* block = features + l * h.features_per_level;
    std::fill_n(block, h.features_per_level, 0.0);
    for (int k = 0; k < 4; ++k) {
      const double* entry = params_.data() + static_cast<std::size_t>(corner_rows[k]) * row_width_;
      for (std::size_t f = 0; f < h.features_per_level; ++f) block[f] += corner_w[k] * entry[f];
      if (rows) {
        rows[l * 4 + k] = corner_rows[k];
        weights[l * 4 + k] = corner_w[k];
      }
    }
  }
}

void InrModel::encode(Vec2 uv, std::span<double> out) const {
  if (out.size() != feature_dim_) throw DataError("encode output has wrong length");
  switch (config_.encoding) {
    case EncodingKind::hash:
      encode_hash(uv, out.data(), nullptr, nullptr);
      break;
    case EncodingKind::fourier: {
      const double p[2] = {std::clamp(uv.x, 0.0, 1.0), std::clamp(uv.y, 0.0, 1.0)};
      for (std::size_t k = 0; k < config_.fourier_frequencies; ++k) {
        const double freq = std::ldexp(1.0, static_cast<int>(k)) * M_PI;
        for (int a = 0; a < 2; ++a) {
          out[4 * k + 2 * a] = std::sin(freq * p[a]);
          out[4 * k + 2 * a + 1] = std::cos(freq * p[a]);
        }
      }
      break;
    }
    case EncodingKind::none:
      out[0] = std::clamp(uv.x, 0.0, 1.0);
      out[1] = std::clamp(uv.y, 0.0, 1.0);
      break;
  }
}

void InrModel::run_mlp(const double* features, std::size_t batch,
                       std::vector<std::vector<double>>* acts, double* out) const {
  std::vector<std::vector<double>> local;
  auto& store = acts ? *acts : local;
  store.resize(layers_.size() - 1);
  const double* x = features;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const auto& layer = layers_[l];
    const bool last = l + 1 == layers_.size();
    double* y = out;
    if (!last) {
      store[l].resize(batch * layer.out);
      y = store[l].data();
    }
    dense_forward(x, batch, layer.in, params_.data() + layer.w_offset, params_.data() + layer.b_offset,
                  layer.out, y, !last);
    x = y;
  }
  if (config_.output_scale != 1.0)
    for (std::size_t s = 0; s < batch; ++s) out[s] *= config_.output_scale;
}

double InrModel::forward(Vec2 uv) const {
  double out = 0.0;
  forward(std::span<const Vec2>(&uv, 1), std::span<double>(&out, 1));
  return out;
}

void InrModel::forward(std::span<const Vec2> uv, std::span<double> out) const {
  if (out.size() != uv.size()) throw DataError("forward output has wrong length");
  std::vector<double> features(uv.size() * feature_dim_);
  for (std::size_t s = 0; s < uv.size(); ++s)
    encode(uv[s], std::span<double>(features.data() + s * feature_dim_, feature_dim_));
  run_mlp(features.data(), uv.size(), nullptr, out.data());
}

void InrModel::forward(std::span<const Vec2> uv, InrWorkspace& ws) const {
  ws.batch = uv.size();
  ws.features.resize(uv.size() * feature_dim_);
  ws.output.resize(uv.size());
  if (config_.encoding == EncodingKind::hash) {
    const std::size_t taps = config_.hash.levels * 4;
    ws.tap_rows.resize(uv.size() * taps);
    ws.tap_weights.resize(uv.size() * taps);
    for (std::size_t s = 0; s < uv.size(); ++s)
      encode_hash(uv[s], ws.features.data() + s * feature_dim_, ws.tap_rows.data() + s * taps,
                  ws.tap_weights.data() + s * taps);
  } else {
    ws.tap_rows.clear();
    ws.tap_weights.clear();
    for (std::size_t s = 0; s < uv.size(); ++s)
      encode(uv[s], std::span<double>(ws.features.data() + s * feature_dim_, feature_dim_));
  }
  run_mlp(ws.features.data(), uv.size(), &ws.activations, ws.output.data());
}

void InrModel::backward_local(const InrWorkspace& ws, std::span<const double> upstream,
                              std::vector<double>& dense, std::vector<double>& d_features) const {
  if (upstream.size() != ws.batch || ws.output.size() != ws.batch)
    throw DataError("backward batch does not match the recorded forward pass");
  const std::size_t base = hash_parameter_count();
  dense.assign(params_.size() - base, 0.0);
  const std::size_t batch = ws.batch;

  std::vector<double> g(upstream.begin(), upstream.end());
  if (config_.output_scale != 1.0)
    for (auto& v : g) v *= config_.output_scale;
  std::vector<double> g_prev;
  for (std::size_t li = layers_.size(); li-- > 0;) {
    const auto& layer = layers_[li];
    const double* x = li == 0 ? ws.features.data() : ws.activations[li - 1].data();
    double* dw = dense.data() + (layer.w_offset - base);
    double* db = dense.data() + (layer.b_offset - base);
    for (std::size_t s = 0; s < batch; ++s) {
      const double* gr = g.data() + s * layer.out;
      for (std::size_t o = 0; o < layer.out; ++o) db[o] += gr[o];
    }
    dense_weight_grad(x, g.data(), batch, layer.in, layer.out, dw);
    if (li == 0 && config_.encoding != EncodingKind::hash) break;
    g_prev.resize(batch * layer.in);
    dense_input_grad(g.data(), batch, params_.data() + layer.w_offset, layer.in, layer.out, g_prev.data());
    if (li > 0) {
      const auto& a = ws.activations[li - 1];
      for (std::size_t k = 0; k < g_prev.size(); ++k)
        if (!(a[k] > 0.0)) g_prev[k] = 0.0;
      g.swap(g_prev);
    } else {
      d_features.swap(g_prev);
    }
  }
}

void InrModel::commit(const InrWorkspace& ws, const std::vector<double>& dense,
                      const std::vector<double>& d_features, InrGradients& grads) const {
  const std::size_t base = hash_parameter_count();
  for (std::size_t k = 0; k < dense.size(); ++k) grads.values[base + k] += dense[k];
  if (config_.encoding != EncodingKind::hash) return;
  const std::size_t levels = config_.hash.levels;
  const std::size_t c = config_.hash.features_per_level;
  for (std::size_t s = 0; s < ws.batch; ++s) {
    const double* df = d_features.data() + s * feature_dim_;
    for (std::size_t l = 0; l < levels; ++l) {
      for (int k = 0; k < 4; ++k) {
        const std::size_t tap = (s * levels + l) * 4 + static_cast<std::size_t>(k);
        const std::size_t row = ws.tap_rows[tap];
        const double w = ws.tap_weights[tap];
        grads.mark(row);
        double* dst = grads.values.data() + row * c;
        for (std::size_t f = 0; f < c; ++f) dst[f] += w * df[l * c + f];
      }
    }
  }
}

void InrModel::backward(const InrWorkspace& ws, std::span<const double> upstream, InrGradients& grads) const {
  std::vector<double> dense, d_features;
  backward_local(ws, upstream, dense, d_features);
  commit(ws, dense, d_features, grads);
}

InrGradients InrModel::make_gradients() const {
  InrGradients g;
  g.values.assign(params_.size(), 0.0);
  g.hash_rows = hash_rows_;
  g.hash_row_width = row_width_;
  g.row_flag.assign(hash_rows_, 0);
  return g;
}

void InrModel::apply_precision() {
  if (config_.precision != Precision::f32) return;
  for (auto& p : params_) p = round_storage(p);
}

void InrModel::apply_precision(std::span<const std::size_t> rows) {
  if (config_.precision != Precision::f32) return;
  for (std::size_t i = hash_parameter_count(); i < params_.size(); ++i) params_[i] = round_storage(params_[i]);
  for (auto row : rows)
    for (std::size_t f = 0; f < row_width_; ++f) params_[row * row_width_ + f] = round_storage(params_[row * row_width_ + f]);
}

AdamOptimizer::AdamOptimizer(std::size_t parameter_count, AdamConfig config)
    : config_(config), m_(parameter_count, 0.0), v_(parameter_count, 0.0) {
  if (!(config_.learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
}

void AdamOptimizer::step(std::span<double> params, std::span<const double> grads, std::size_t dense_begin,
                         std::span<const std::size_t> rows, std::size_t row_width) {
  if (params.size() != m_.size() || grads.size() != m_.size())
    throw DataError("optimizer state does not match parameter count");
  for (std::size_t i = dense_begin; i < grads.size(); ++i)
    if (!std::isfinite(grads[i])) throw NumericalError("non-finite gradient for parameter " + std::to_string(i));
  for (auto row : rows)
    for (std::size_t f = 0; f < row_width; ++f)
      if (!std::isfinite(grads[row * row_width + f]))
        throw NumericalError("non-finite gradient in hash row " + std::to_string(row));

  ++steps_;
  const double b1 = config_.beta1;
  const double b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  const double lr = config_.learning_rate;
  const double eps = config_.epsilon;
  auto update = [&](std::size_t i) {
    const double g = grads[i];
    m_[i] = b1 * m_[i] + (1.0 - b1) * g;
    v_[i] = b2 * v_[i] + (1.0 - b2) * g * g;
    const double mh = m_[i] / c1;
    const double vh = v_[i] / c2;
    params[i] -= lr * mh / (std::sqrt(vh) + eps);
  };
  for (auto row : rows)
    for (std::size_t f = 0; f < row_width; ++f) update(row * row_width + f);
  for (std::size_t i = dense_begin; i < params.size(); ++i) update(i);
}

void opt_step(InrModel& model, const InrGradients& grads, AdamOptimizer& optimizer) {
  optimizer.step(model.parameters(), grads.values, grads.dense_begin(), grads.touched_rows, grads.hash_row_width);
  model.apply_precision(grads.touched_rows);
}

std::vector<double> rasterize_raw(const InrModel& model, std::size_t size) {
  if (size < 1) throw ConfigError("raster size must be positive");
  std::vector<double> out(size * size);
  const double n = static_cast<double>(size);
  parallel_for(size, [&](std::size_t r) {
    std::vector<Vec2> row(size);
    for (std::size_t c = 0; c < size; ++c)
      row[c] = {(static_cast<double>(c) + 0.5) / n, (static_cast<double>(r) + 0.5) / n};
    model.forward(row, std::span<double>(out.data() + r * size, size));
  });
  return out;
}

ImageRaster rasterize(const InrModel& model, std::size_t size, double pixel_pitch) {
  ImageRaster image(size, pixel_pitch);
  image.values = rasterize_raw(model, size);
  for (auto& v : image.values) v = std::max(v, 0.0);
  return image;
}

namespace {

struct ChunkSlot {
  std::vector<Vec2> points;
  std::vector<double> weights;
  std::vector<std::size_t> group_end;
  InrWorkspace ws;
  std::vector<double> upstream;
  std::vector<double> dense;
  std::vector<double> d_features;
  std::vector<double> values;
  double loss = 0.0;
};

void gather(ChunkSlot& slot, std::size_t first, std::size_t last, const GroupEmitter& emit) {
  slot.points.clear();
  slot.weights.clear();
  slot.group_end.clear();
  for (std::size_t g = first; g < last; ++g) {
    emit(g, slot.points, slot.weights);
    if (slot.weights.size() != slot.points.size()) throw DataError("group emitter produced mismatched weights");
    slot.group_end.push_back(slot.points.size());
  }
}

}  // namespace

std::vector<double> evaluate_groups(const InrModel& model, std::size_t groups, const GroupEmitter& emit,
                                    std::size_t groups_per_chunk) {
  groups_per_chunk = std::max<std::size_t>(1, groups_per_chunk);
  std::vector<double> values(groups, 0.0);
  const std::size_t chunks = (groups + groups_per_chunk - 1) / groups_per_chunk;
  parallel_for(chunks, [&](std::size_t ci) {
    ChunkSlot slot;
    const std::size_t first = ci * groups_per_chunk;
    const std::size_t last = std::min(groups, first + groups_per_chunk);
    gather(slot, first, last, emit);
    std::vector<double> out(slot.points.size());
    model.forward(slot.points, out);
    std::size_t k = 0;
    for (std::size_t g = first; g < last; ++g) {
      double acc = 0.0;
      for (; k < slot.group_end[g - first]; ++k) acc += slot.weights[k] * out[k];
      values[g] = acc;
    }
  });
  return values;
}

double backprop_groups(const InrModel& model, std::size_t groups, const GroupEmitter& emit,
                       const GroupLossFn& loss, InrGradients& grads, std::size_t groups_per_chunk,
                       std::span<double> values) {
  if (!values.empty() && values.size() != groups) throw DataError("values buffer has wrong length");
  groups_per_chunk = std::max<std::size_t>(1, groups_per_chunk);
  const std::size_t chunks = (groups + groups_per_chunk - 1) / groups_per_chunk;
  const std::size_t width = std::max<std::size_t>(1, worker_count());
  std::vector<ChunkSlot> slots(std::min(width, std::max<std::size_t>(1, chunks)));
  double total = 0.0;
  for (std::size_t wave = 0; wave < chunks; wave += slots.size()) {
    const std::size_t in_wave = std::min(slots.size(), chunks - wave);
    parallel_for(in_wave, [&](std::size_t i) {
      auto& slot = slots[i];
      const std::size_t first = (wave + i) * groups_per_chunk;
      const std::size_t last = std::min(groups, first + groups_per_chunk);
      gather(slot, first, last, emit);
      model.forward(slot.points, slot.ws);
      slot.upstream.assign(slot.points.size(), 0.0);
      slot.values.assign(last - first, 0.0);
      slot.loss = 0.0;
      std::size_t begin = 0;
      for (std::size_t g = first; g < last; ++g) {
        const std::size_t end = slot.group_end[g - first];
        double acc = 0.0;
        for (std::size_t k = begin; k < end; ++k) acc += slot.weights[k] * slot.ws.output[k];
        const LossTerm term = loss(g, acc);
        slot.loss += term.loss;
        slot.values[g - first] = acc;
        for (std::size_t k = begin; k < end; ++k) slot.upstream[k] = term.grad * slot.weights[k];
        begin = end;
      }
      model.backward_local(slot.ws, slot.upstream, slot.dense, slot.d_features);
    });
    for (std::size_t i = 0; i < in_wave; ++i) {
      auto& slot = slots[i];
      model.commit(slot.ws, slot.dense, slot.d_features, grads);
      total += slot.loss;
      if (!values.empty()) {
        const std::size_t first = (wave + i) * groups_per_chunk;
        std::copy(slot.values.begin(), slot.values.end(), values.begin() + static_cast<std::ptrdiff_t>(first));
      }
    }
  }
  return total;
}

}  // namespace inrmar
