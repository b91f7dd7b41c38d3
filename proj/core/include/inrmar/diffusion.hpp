#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "inrmar/raster.hpp"

namespace inrmar {

// Linear beta schedule; timesteps are 1-based, t in [1, total].
struct NoiseSchedule {
  std::size_t total = 0;
  double beta_start = 0.0;
  double beta_end = 0.0;
  std::vector<double> betas;       // betas[t - 1]
  std::vector<double> alpha_bars;  // alpha_bars[t - 1] = prod_{i <= t} (1 - beta_i)

  double beta(std::size_t t) const;
  double alpha_bar(std::size_t t) const;
  void check_t(std::size_t t) const;
};

NoiseSchedule make_schedule(std::size_t total = 1000, double beta_start = 1e-4, double beta_end = 0.02);

// Affine map between attenuation [0, mu_max] and the model range [-1, 1].
struct Normalization {
  double mu_max = 2.0 * 0.0192;

  double to_model(double lac) const { return 2.0 * lac / mu_max - 1.0; }
  double to_lac(double z) const { return 0.5 * (z + 1.0) * mu_max; }
};

// Standard normal raster drawn from a counter-based stream.
std::vector<double> gaussian_noise(std::size_t count, std::uint64_t seed);

// x_t = sqrt(abar) * normalize(x0) + sqrt(1 - abar) * eps, in model space.
ImageRaster diffuse(const ImageRaster& x0_lac, std::size_t t, std::span<const double> eps,
                    const NoiseSchedule& schedule, const Normalization& norm);

// Noise prediction eps_theta(x_t, t) on a model-space raster.
class EpsilonPredictor {
 public:
  virtual ~EpsilonPredictor() = default;
  virtual std::vector<double> predict(const ImageRaster& x_t, std::size_t t) const = 0;
};

class ZeroPredictor final : public EpsilonPredictor {
 public:
  std::vector<double> predict(const ImageRaster& x_t, std::size_t t) const override;
};

// Test predictor. Built from a noise raster it returns that raster; built
// from a clean attenuation image it returns the noise that maps the given
// x_t back onto that image.
class OracleNoise final : public EpsilonPredictor {
 public:
  static OracleNoise from_noise(std::vector<double> eps);
  static OracleNoise from_clean(const ImageRaster& x0_lac, const NoiseSchedule& schedule,
                                const Normalization& norm);
  std::vector<double> predict(const ImageRaster& x_t, std::size_t t) const override;

 private:
  std::vector<double> eps_;
  std::vector<double> clean_;  // model space
  std::vector<double> alpha_bars_;
};

// x0_hat = (x_t - sqrt(1 - abar) eps_theta) / sqrt(abar), mapped back to
// attenuation and clamped to >= 0.
ImageRaster tweedie_denoise(const ImageRaster& x_t, std::size_t t, const EpsilonPredictor& predictor,
                            const NoiseSchedule& schedule, const Normalization& norm);

struct CnnConfig {
  std::size_t hidden_layers = 4;
  std::size_t channels = 32;
};

// Fully convolutional noise predictor: `hidden_layers` 3x3 convolutions with
// ReLU, then a linear 3x3 convolution to one channel. Input channels are x_t
// and the constant t / total. Zero padding keeps the spatial size.
//
// Parameter layout: per layer, weights [out][in][3][3] then biases.
class TinyCnnDenoiser final : public EpsilonPredictor {
 public:
  TinyCnnDenoiser(const CnnConfig& config, std::size_t t_total, std::uint64_t seed);

  const CnnConfig& config() const { return config_; }
  std::size_t t_total() const { return t_total_; }
  std::span<double> parameters() { return params_; }
  std::span<const double> parameters() const { return params_; }

  std::vector<double> predict(const ImageRaster& x_t, std::size_t t) const override;

  // Mean squared error between predict() on each input and its target noise;
  // gradients are added into `grads`.
  double loss_and_gradient(std::span<const std::vector<double>> inputs, std::span<const std::size_t> t,
                           std::span<const std::vector<double>> targets, std::size_t side,
                           std::vector<double>& grads) const;

  // Rounds parameters to 32-bit floats (the checkpoint precision).
  void round_to_storage();

 private:
  struct Layer {
    std::size_t in;
    std::size_t out;
    std::size_t w_offset;
    std::size_t b_offset;
  };

  std::vector<double> run(const double* x, std::size_t side, double t_frac,
                          std::vector<std::vector<double>>* acts) const;

  CnnConfig config_;
  std::size_t t_total_;
  std::vector<Layer> layers_;
  std::vector<double> params_;
};

struct DenoiserTrainConfig {
  std::size_t steps = 2000;
  std::size_t batch = 4;
  std::size_t crop = 32;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
};

struct DenoiserTraining {
  std::vector<double> losses;  // per step
};

// Standard epsilon-matching objective over random crops, dihedral flips,
// uniformly drawn t and corpus images. Deterministic for a fixed seed.
DenoiserTraining train_denoiser(TinyCnnDenoiser& model, std::span<const ImageRaster> corpus_lac,
                                const NoiseSchedule& schedule, const Normalization& norm,
                                const DenoiserTrainConfig& config);

}  // namespace inrmar
