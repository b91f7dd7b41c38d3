#include <benchmark/benchmark.h>

#include <random>

#include "inrmar/diffusion.hpp"
#include "inrmar/inr.hpp"
#include "inrmar/mar.hpp"
#include "inrmar/parallel.hpp"
#include "inrmar/projector.hpp"
#include "inrmar/simulation.hpp"

namespace {

using namespace inrmar;

FanBeamGeometry desk() { return make_geometry(GeometryConfig::preset("desk")); }

ImageRaster phantom_lac() {
  PhantomSpec ps;
  ps.seed = 1;
  return hu_to_lac(generate_phantom(ps, 128, 2.6).hu);
}

InrConfig bench_inr() {
  InrConfig c = InrConfig::paper(128);
  c.hash.levels = 8;
  c.hash.features_per_level = 2;
  c.hash.table_size = 1 << 16;
  c.hash.growth_factor = HashEncodingConfig::growth_for(8, 16, 256);
  c.output_scale = 0.0192;
  return c;
}

void BM_ForwardProjectRaster(benchmark::State& state) {
  set_worker_count(1);
  const auto g = desk();
  const auto x = phantom_lac();
  for (auto _ : state) benchmark::DoNotOptimize(forward_project_raster(x, g));
}
BENCHMARK(BM_ForwardProjectRaster)->Unit(benchmark::kMillisecond);

void BM_Backproject(benchmark::State& state) {
  set_worker_count(1);
  const auto g = desk();
  const auto y = forward_project_raster(phantom_lac(), g);
  for (auto _ : state) benchmark::DoNotOptimize(backproject(y, g));
}
BENCHMARK(BM_Backproject)->Unit(benchmark::kMillisecond);

void BM_Fbp(benchmark::State& state) {
  set_worker_count(1);
  const auto g = desk();
  const auto y = forward_project_raster(phantom_lac(), g);
  for (auto _ : state) benchmark::DoNotOptimize(fbp(y, g));
}
BENCHMARK(BM_Fbp)->Unit(benchmark::kMillisecond);

// One fidelity step: project a ray batch, backpropagate, Adam update.
void BM_FidelityStep(benchmark::State& state) {
  set_worker_count(1);
  const auto g = desk();
  const auto y = forward_project_raster(phantom_lac(), g);
  const MetalTrace trace(g.n_views(), g.n_detectors());
  InrModel model(bench_inr(), 1);
  AdamOptimizer opt(model.parameter_count(), AdamConfig{1e-3});
  PhaseContext ctx{model, opt, g, 2.6};
  std::uint64_t seed = 0;
  for (auto _ : state)
    benchmark::DoNotOptimize(fidelity_phase(ctx, y, trace, 1, static_cast<std::size_t>(state.range(0)), ++seed));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_FidelityStep)->Arg(256)->Arg(1024)->Unit(benchmark::kMillisecond);

void BM_InrRasterize(benchmark::State& state) {
  set_worker_count(1);
  InrModel model(bench_inr(), 1);
  for (auto _ : state) benchmark::DoNotOptimize(rasterize(model, 128, 2.6));
}
BENCHMARK(BM_InrRasterize)->Unit(benchmark::kMillisecond);

void BM_DenoiserPredict(benchmark::State& state) {
  set_worker_count(1);
  const TinyCnnDenoiser dn(CnnConfig{4, 32}, 1000, 3);
  const auto schedule = make_schedule();
  const auto xt = diffuse(phantom_lac(), 500, gaussian_noise(128 * 128, 1), schedule, Normalization{});
  for (auto _ : state) benchmark::DoNotOptimize(dn.predict(xt, 500));
}
BENCHMARK(BM_DenoiserPredict)->Unit(benchmark::kMillisecond);

void BM_DenoiserTrainStep(benchmark::State& state) {
  set_worker_count(1);
  TinyCnnDenoiser dn(CnnConfig{4, 32}, 1000, 3);
  const std::vector<ImageRaster> corpus = {phantom_lac()};
  DenoiserTrainConfig tc;
  tc.steps = 1;
  tc.batch = 8;
  tc.crop = 32;
  const auto schedule = make_schedule();
  for (auto _ : state) {
    benchmark::DoNotOptimize(train_denoiser(dn, corpus, schedule, Normalization{}, tc));
    ++tc.seed;
  }
}
BENCHMARK(BM_DenoiserTrainStep)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
