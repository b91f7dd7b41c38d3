#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "inrmar/geometry.hpp"
#include "inrmar/raster.hpp"

namespace inrmar {

enum class EncodingKind { hash, fourier, none };

std::string to_string(EncodingKind kind);
EncodingKind encoding_from_string(const std::string& name);

// Parameter storage policy. f32 rounds every stored parameter to the nearest
// float after initialization and after each optimizer step; arithmetic is
// always carried out in double.
enum class Precision { f32, f64 };

struct HashEncodingConfig {
  std::size_t levels = 16;
  std::size_t features_per_level = 8;
  std::size_t table_size = std::size_t{1} << 19;
  std::size_t base_resolution = 16;
  double growth_factor = 1.5;

  // N_l = floor(N_min * b^l)
  std::size_t resolution(std::size_t level) const;
  // Growth factor that puts the finest level near `finest` cells per axis.
  static double growth_for(std::size_t levels, std::size_t base, std::size_t finest);
};

struct InrConfig {
  EncodingKind encoding = EncodingKind::hash;
  HashEncodingConfig hash;
  std::size_t fourier_frequencies = 8;
  std::vector<std::size_t> hidden = {64, 64};
  Precision precision = Precision::f32;
  // Constant multiplier on the network output, so the MLP itself works at
  // unit scale when the image is in small physical units.
  double output_scale = 1.0;

  // 16 levels x 8 features, 2^19 entries per level, two hidden layers of 64;
  // finest level at twice the image resolution.
  static InrConfig paper(std::size_t image_size);
  // Fourier features (8 per axis) with six hidden layers of 256.
  static InrConfig fourier_ablation();

  std::size_t feature_dim() const;
  void validate() const;
};

// Spatial hash of an integer grid vertex: (x * 1 XOR y * 2654435761) mod T,
// evaluated in 32-bit unsigned arithmetic.
std::uint32_t hash_vertex(std::uint32_t x, std::uint32_t y, std::size_t table_size);

// Reverse-mode gradient buffer laid out like InrModel::parameters().
// Hash rows that received gradient are tracked so clearing and sparse
// optimizer updates cost O(touched) rather than O(table).
struct InrGradients {
  std::vector<double> values;
  std::vector<std::size_t> touched_rows;
  std::vector<std::uint8_t> row_flag;
  std::size_t hash_row_width = 0;  // features per row
  std::size_t hash_rows = 0;

  double& hash(std::size_t row, std::size_t f) { return values[row * hash_row_width + f]; }
  void mark(std::size_t row) {
    if (!row_flag[row]) {
      row_flag[row] = 1;
      touched_rows.push_back(row);
    }
  }
  std::size_t dense_begin() const { return hash_rows * hash_row_width; }
  void clear();
  bool all_finite() const;
};

// Activations recorded by a forward pass for a later backward pass.
struct InrWorkspace {
  std::size_t batch = 0;
  std::vector<double> features;                 // batch x feature_dim
  std::vector<std::vector<double>> activations; // per hidden layer, post-ReLU
  std::vector<double> output;                   // batch
  std::vector<std::uint32_t> tap_rows;          // batch x levels x 4
  std::vector<double> tap_weights;              // batch x levels x 4
};

// Continuous image F(p) = MLP(encode(p)). Coordinates are normalized to the
// unit square and clamped there by the encoders.
//
// Parameter layout (also the checkpoint payload order): hash tables
// level-major, each level T rows of C features; then for every dense layer
// from input to output its weights stored input-major (W[i][o], fan_in rows
// of fan_out values) followed by its biases.
class InrModel {
 public:
  InrModel(const InrConfig& config, std::uint64_t seed);

  const InrConfig& config() const { return config_; }
  std::size_t feature_dim() const { return feature_dim_; }
  std::size_t parameter_count() const { return params_.size(); }
  std::size_t hash_parameter_count() const { return hash_rows_ * row_width_; }
  std::size_t hash_rows() const { return hash_rows_; }
  std::span<double> parameters() { return params_; }
  std::span<const double> parameters() const { return params_; }

  // Offsets of a dense layer's weights and biases in parameters().
  std::size_t weight_offset(std::size_t layer) const { return layers_[layer].w_offset; }
  std::size_t bias_offset(std::size_t layer) const { return layers_[layer].b_offset; }
  std::size_t layer_count() const { return layers_.size(); }
  std::size_t level_resolution(std::size_t level) const { return level_res_[level]; }

  void encode(Vec2 uv, std::span<double> out) const;
  double forward(Vec2 uv) const;
  void forward(std::span<const Vec2> uv, std::span<double> out) const;
  void forward(std::span<const Vec2> uv, InrWorkspace& ws) const;

  // Writes d loss / d parameters into a zeroed `dense` MLP block and
  // d loss / d features into `d_features`, without touching shared state.
  void backward_local(const InrWorkspace& ws, std::span<const double> upstream,
                      std::vector<double>& dense, std::vector<double>& d_features) const;
  // Adds a backward_local result into `grads`, scattering feature gradients
  // into the hash tables in sample order.
  void commit(const InrWorkspace& ws, const std::vector<double>& dense,
              const std::vector<double>& d_features, InrGradients& grads) const;
  // backward_local followed by commit.
  void backward(const InrWorkspace& ws, std::span<const double> upstream, InrGradients& grads) const;

  InrGradients make_gradients() const;
  std::size_t dense_parameter_count() const { return params_.size() - hash_parameter_count(); }

  // Applies the storage precision policy to all parameters or to the dense
  // block plus the given hash rows.
  void apply_precision();
  void apply_precision(std::span<const std::size_t> rows);

 private:
  struct Layer {
    std::size_t in;
    std::size_t out;
    std::size_t w_offset;
    std::size_t b_offset;
  };

  void encode_hash(Vec2 uv, double* features, std::uint32_t* rows, double* weights) const;
  void run_mlp(const double* features, std::size_t batch, std::vector<std::vector<double>>* acts,
               double* out) const;

  InrConfig config_;
  std::size_t feature_dim_ = 0;
  std::size_t hash_rows_ = 0;
  std::size_t row_width_ = 0;
  std::vector<std::size_t> level_res_;
  std::vector<Layer> layers_;
  std::vector<double> params_;
};

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.99;
  double epsilon = 1e-15;
};

// Adaptive-moment optimizer state. Dense parameters are updated every step;
// hash rows only on steps where they received gradient (their moments are
// left untouched otherwise). Bias correction uses the global step count.
class AdamOptimizer {
 public:
  AdamOptimizer(std::size_t parameter_count, AdamConfig config = {});

  const AdamConfig& config() const { return config_; }
  std::uint64_t step_count() const { return steps_; }

  // Generic update: every parameter in [dense_begin, n) plus the listed rows
  // of width `row_width` below dense_begin. Throws NumericalError without
  // modifying anything if a gradient in scope is non-finite.
  void step(std::span<double> params, std::span<const double> grads, std::size_t dense_begin,
            std::span<const std::size_t> rows, std::size_t row_width);

 private:
  AdamConfig config_;
  std::vector<double> m_;
  std::vector<double> v_;
  std::uint64_t steps_ = 0;
};

// One optimizer step on the model; applies the precision policy afterwards.
// Gradients are left intact; call grads.clear() before the next accumulation.
void opt_step(InrModel& model, const InrGradients& grads, AdamOptimizer& optimizer);

// Evaluates the model at pixel centres ((c + 0.5)/size, (r + 0.5)/size) and
// clamps to >= 0.
ImageRaster rasterize(const InrModel& model, std::size_t size, double pixel_pitch = 1.0);
// Same grid without the clamp.
std::vector<double> rasterize_raw(const InrModel& model, std::size_t size);

struct LossTerm {
  double loss;
  double grad;
};

// Linear functionals of the network. For group g, `emit` appends points p_k
// and weights w_k; the group value is sum_k w_k F(p_k).
using GroupEmitter =
    std::function<void(std::size_t group, std::vector<Vec2>& points, std::vector<double>& weights)>;
using GroupLossFn = std::function<LossTerm(std::size_t group, double value)>;

std::vector<double> evaluate_groups(const InrModel& model, std::size_t groups,
                                    const GroupEmitter& emit, std::size_t groups_per_chunk);

// Sums loss(g, value_g) over all groups and accumulates its gradient into
// `grads`. Work is split into fixed chunks whose partial results are merged
// in chunk order, so the result is independent of the worker count.
double backprop_groups(const InrModel& model, std::size_t groups, const GroupEmitter& emit,
                       const GroupLossFn& loss, InrGradients& grads, std::size_t groups_per_chunk,
                       std::span<double> values = {});

}  // namespace inrmar
