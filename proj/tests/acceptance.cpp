// Acceptance run: one PASS/FAIL line per criterion, margins alongside.
//
//   acceptance [criterion ...]    (default: all)
//
// The summary lines are also written to ./acceptance_summary.txt.
//
// Exits non-zero when a criterion fails for a reason not marked "(known)".

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "inrmar/commands.hpp"
#include "inrmar/config.hpp"
#include "inrmar/diffusion.hpp"
#include "inrmar/inr.hpp"
#include "inrmar/io.hpp"
#include "inrmar/mar.hpp"
#include "inrmar/metrics.hpp"
#include "inrmar/parallel.hpp"
#include "inrmar/projector.hpp"
#include "inrmar/simulation.hpp"

namespace fs = std::filesystem;
using namespace inrmar;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
  // Failing clauses that are understood and recorded; when every failing
  // clause is known the run still exits 0.
  bool known = false;
};

std::string format(const char* fmt, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, fmt, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

class ScratchDir {
 public:
  ScratchDir() : path_(fs::temp_directory_path() / ("inrmar_acceptance_" + std::to_string(::getpid()))) {
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~ScratchDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

FanBeamGeometry desk() { return make_geometry(GeometryConfig::preset("desk")); }

// Reduced reconstruction profile for the desk suite (single core budget).
RunConfig desk_profile() {
  RunConfig c;
  c.workers = 1;
  c.mar.t_start = 500;
  c.mar.t_interval = 50;
  c.mar.fidelity_steps = 100;
  c.mar.fidelity_steps_low_t = 20;
  c.mar.regularization_steps = 50;
  c.mar.final_fidelity_steps = 400;
  c.mar.ray_batch = 256;
  c.mar.pixel_batch = 1024;
  c.mar.sample_step = 2.6;
  c.inr.hash.levels = 8;
  c.inr.hash.features_per_level = 2;
  c.inr.hash.table_size = 1 << 16;
  c.hash_finest_resolution = 256;
  c.cnn = CnnConfig{4, 32};
  c.training.steps = 3000;
  c.training.batch = 8;
  c.training.crop = 32;
  c.training.learning_rate = 1e-3;
  c.training.seed = 9;
  return c;
}

// ---------------------------------------------------------------------------

Verdict projector() {
  const auto g = desk();
  const std::size_t n = g.image_size();
  const double h = g.pixel_pitch();
  const Vec2 centre{20.0, -15.0};
  const double radius = 90.0, mu = 0.02;
  ImageRaster disk(n, h);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c) {
      int inside = 0;
      for (int a = 0; a < 16; ++a)
        for (int b = 0; b < 16; ++b) {
          const Vec2 p{(c + (b + 0.5) / 16.0 - 0.5 * n) * h, (r + (a + 0.5) / 16.0 - 0.5 * n) * h};
          inside += norm(p - centre) < radius;
        }
      disk(r, c) = mu * inside / 256.0;
    }
  const auto sino = forward_project_raster(disk, g);
  double chord = 0.0;
  for (std::size_t v = 0; v < g.n_views(); ++v)
    for (std::size_t d = 0; d < g.n_detectors(); ++d) {
      const Ray ray = g.ray_for(v, d);
      const Vec2 q = centre - ray.origin;
      const double dist = std::abs(q.x * ray.direction.y - q.y * ray.direction.x);
      if (dist >= 0.8 * radius) continue;
      const double exact = mu * 2.0 * std::sqrt(radius * radius - dist * dist);
      chord = std::max(chord, std::abs(sino(v, d) - exact) / exact);
    }

  std::mt19937_64 rng(11);
  std::normal_distribution<double> n01;
  double adjoint = 0.0;
  for (int trial = 0; trial < 5; ++trial) {
    ImageRaster x(n, h);
    for (auto& v : x.values) v = n01(rng);
    Sinogram y(g.n_views(), g.n_detectors());
    for (auto& v : y.values) v = n01(rng);
    const auto ax = forward_project_raster(x, g);
    const auto aty = backproject(y, g);
    double lhs = 0.0, rhs = 0.0;
    for (std::size_t i = 0; i < y.values.size(); ++i) lhs += ax.values[i] * y.values[i];
    for (std::size_t i = 0; i < x.values.size(); ++i) rhs += x.values[i] * aty.values[i];
    adjoint = std::max(adjoint, std::abs(lhs - rhs) / std::max(std::abs(lhs), std::abs(rhs)));
  }
  return {chord < 0.01 && adjoint < 1e-10,
          format("disk chord worst rel err %.4g (rays within 0.8 R), adjoint worst rel err %.3g", chord, adjoint)};
}

Verdict gradients() {
  const auto g = desk();
  InrConfig c;
  c.hash.levels = 4;
  c.hash.features_per_level = 2;
  c.hash.table_size = 1 << 12;
  c.hash.base_resolution = 8;
  c.hash.growth_factor = 2.0;
  c.hidden = {16, 16};
  c.precision = Precision::f64;
  c.output_scale = 0.02;
  InrModel m(c, 17);
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-0.1, 0.1);
  for (std::size_t i = 0; i < m.hash_parameter_count(); ++i) m.parameters()[i] = u(rng);
  // Zero biases put dead samples exactly on a ReLU kink; move off it.
  for (std::size_t l = 0; l < m.layer_count(); ++l) {
    const std::size_t end = l + 1 < m.layer_count() ? m.weight_offset(l + 1) : m.parameter_count();
    for (std::size_t k = m.bias_offset(l); k < end; ++k) m.parameters()[k] = u(rng);
  }

  std::vector<Ray> rays;
  for (std::size_t k = 0; k < 12; ++k) rays.push_back(g.ray_for((k * 37) % g.n_views(), 20 + (k * 53) % 140));
  std::vector<double> target(rays.size());
  for (std::size_t i = 0; i < rays.size(); ++i) target[i] = 0.02 * rays[i].length() * (0.5 + 0.05 * i);
  const double step = 2.3;
  auto loss_of = [&](std::span<const double> p) {
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) s += (p[i] - target[i]) * (p[i] - target[i]);
    return s;
  };
  auto grads = m.make_gradients();
  project_rays_backward(m, g, rays, step,
                        [&](std::size_t i, double v) {
                          const double e = v - target[i];
                          return LossTerm{e * e, 2.0 * e};
                        },
                        grads);

  std::vector<std::size_t> picks;
  for (std::size_t r : grads.touched_rows)
    if (picks.size() < 60) picks.push_back(r * grads.hash_row_width + picks.size() % grads.hash_row_width);
  for (std::size_t l = 0; l < m.layer_count(); ++l) {
    const std::size_t nw = m.bias_offset(l) - m.weight_offset(l);
    for (std::size_t k = 0; k < 20; ++k) picks.push_back(m.weight_offset(l) + (k * 7919) % nw);
    const std::size_t end = l + 1 < m.layer_count() ? m.weight_offset(l + 1) : m.parameter_count();
    for (std::size_t k = 0; k < std::min<std::size_t>(end - m.bias_offset(l), 8); ++k)
      picks.push_back(m.bias_offset(l) + k);
  }
  const double eps = 1e-6;
  double worst = 0.0;
  for (std::size_t i : picks) {
    const double keep = m.parameters()[i];
    m.parameters()[i] = keep + eps;
    const double up = loss_of(forward_project_rays(m, g, rays, step));
    m.parameters()[i] = keep - eps;
    const double down = loss_of(forward_project_rays(m, g, rays, step));
    m.parameters()[i] = keep;
    const double fd = (up - down) / (2.0 * eps), an = grads.values[i];
    worst = std::max(worst, std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-8}));
  }
  return {picks.size() >= 100 && worst < 1e-4,
          format("%zu parameters (hash, weights, biases) through ray projection, worst rel err %.3g", picks.size(),
                 worst)};
}

Verdict tweedie() {
  const auto schedule = make_schedule();
  const Normalization norm;
  PhantomSpec ps;
  ps.seed = 3;
  const ImageRaster x0 = hu_to_lac(generate_phantom(ps, 128, 2.6).hu);
  double top = 0.0;
  for (double v : x0.values) top = std::max(top, std::abs(v));
  double worst = 0.0;
  for (std::size_t t : {1, 250, 500, 750, 1000}) {
    const auto eps = gaussian_noise(x0.values.size(), 100 + t);
    const auto xt = diffuse(x0, t, eps, schedule, norm);
    const auto x0_hat = tweedie_denoise(xt, t, OracleNoise::from_noise(eps), schedule, norm);
    for (std::size_t i = 0; i < x0.values.size(); ++i)
      worst = std::max(worst, std::abs(x0_hat.values[i] - x0.values[i]) / top);
  }
  return {worst <= 1e-5, format("worst rel err %.3g over t in {1,250,500,750,1000}", worst)};
}

// A tiny fixture and checkpoint for command-level checks.
struct TinySetup {
  RunConfig config;
  fs::path fixture;
  fs::path checkpoint;
};

TinySetup tiny_setup(const fs::path& dir) {
  TinySetup s;
  RunConfig& c = s.config;
  c.workers = 1;
  c.image_size = 64;
  c.pixel_pitch = 5.2;
  c.n_views = 60;
  c.n_detectors = 93;
  c.cnn = CnnConfig{1, 2};
  c.training.steps = 2;
  c.training.batch = 1;
  c.training.crop = 16;
  std::ofstream(dir / "m.txt") << "size_class any min_pixels 1\nfixture name=f1 seed=1 size=medium x=20 y=10\n";
  cmd_simulate(dir / "m.txt", dir / "fx", c);
  cmd_train_denoiser(dir / "fx", c, dir / "tiny.weights");
  s.fixture = dir / "fx" / "f1";
  s.checkpoint = dir / "tiny.weights";
  return s;
}

Verdict schedule_log(const fs::path& dir) {
  TinySetup s = tiny_setup(dir);
  // Default schedule and step counts; only batch sizes and network size
  // are cut down.
  RunConfig c = s.config;
  c.mar.ray_batch = 4;
  c.mar.pixel_batch = 8;
  c.inr.hash.levels = 2;
  c.inr.hash.features_per_level = 1;
  c.inr.hash.table_size = 256;
  c.inr.hidden = {4};
  c.hash_finest_resolution = 32;
  const MarConfig defaults;
  cmd_reconstruct(s.fixture, c, s.checkpoint, dir / "sched");
  const Table log = read_table(dir / "sched" / "iterations.tsv");
  std::vector<std::size_t> ts, steps;
  bool reg_ok = true;
  for (const auto& row : log.rows) {
    if (row[log.column("t")] == "final") continue;
    ts.push_back(parse_uint(row[log.column("t")], "t"));
    steps.push_back(parse_uint(row[log.column("fidelity_steps")], "steps"));
    reg_ok = reg_ok && parse_uint(row[log.column("regularization_steps")], "steps") == defaults.regularization_steps;
  }
  bool ok = ts.size() == 20 && reg_ok;
  for (std::size_t i = 0; ok && i < ts.size(); ++i) {
    ok = ts[i] == 1000 - 50 * i;
    ok = ok && steps[i] == (ts[i] < 200 ? defaults.fidelity_steps_low_t : defaults.fidelity_steps);
  }
  ok = ok && defaults.fidelity_steps_low_t < defaults.fidelity_steps;
  std::size_t low = 0;
  for (std::size_t i = 0; i < ts.size(); ++i) low += ts[i] < 200;
  return {ok, format("%zu iterations logged, t %zu..%zu, %zu at t<200 with %zu fidelity steps (else %zu)", ts.size(),
                     ts.empty() ? 0 : ts.front(), ts.empty() ? 0 : ts.back(), low, defaults.fidelity_steps_low_t,
                     defaults.fidelity_steps)};
}

Verdict encodings() {
  PhantomSpec ps;
  ps.seed = 7;
  const ImageRaster gt = hu_to_lac(generate_phantom(ps, 128, 2.6).hu);
  const std::size_t n = gt.size;
  // Every fifth pixel (random, fixed seed) is held out.
  std::mt19937_64 split(23);
  Mask2D train(n, n);
  std::vector<std::size_t> train_idx;
  for (std::size_t i = 0; i < n * n; ++i) {
    train.bits[i] = split() % 5 != 0;
    if (train.bits[i]) train_idx.push_back(i);
  }
  const RunConfig profile = desk_profile();
  std::map<EncodingKind, double> score;
  for (EncodingKind kind : {EncodingKind::hash, EncodingKind::fourier, EncodingKind::none}) {
    InrConfig c = profile.inr_config();
    c.encoding = kind;
    c.hidden = {64, 64};
    InrModel m(c, 5);
    AdamOptimizer opt(m.parameter_count(), AdamConfig{1e-2});
    auto grads = m.make_gradients();
    std::mt19937_64 rng(31);
    std::vector<std::size_t> batch(1024);
    const double inv = 1.0 / batch.size();
    for (int s = 0; s < 2000; ++s) {
      for (auto& b : batch) b = train_idx[rng() % train_idx.size()];
      grads.clear();
      backprop_groups(
          m, batch.size(),
          [&](std::size_t i, std::vector<Vec2>& p, std::vector<double>& w) {
            p.push_back({(batch[i] % n + 0.5) / n, (batch[i] / n + 0.5) / n});
            w.push_back(1.0);
          },
          [&](std::size_t i, double v) {
            const double e = v - gt.values[batch[i]];
            return LossTerm{e * e * inv, 2.0 * e * inv};
          },
          grads, 256);
      opt_step(m, grads, opt);
    }
    const ImageRaster fit = rasterize(m, n, gt.pixel_pitch);
    score[kind] = psnr(fit, gt, 0.0, &train);
  }
  const double h = score[EncodingKind::hash], f = score[EncodingKind::fourier], z = score[EncodingKind::none];
  return {h > f && h > z,
          format("held-out PSNR hash %.2f, fourier %.2f, none %.2f dB (margins %+.2f, %+.2f)", h, f, z, h - f, h - z)};
}

Verdict determinism(const fs::path& dir) {
  auto run = [&](const std::string& args, const std::string& log) {
    const std::string cmd = std::string(INRMAR_CLI) + " " + args + " > " + (dir / log).string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  };
  const std::string d = dir.string();
  std::ofstream(dir / "m.txt") << "size_class large min_pixels 30\nsize_class small min_pixels 1\n"
                                  "fixture name=f1 seed=1 size=medium x=20 y=10\n"
                                  "fixture name=f2 seed=2 shape=two-lobe size=small x=-10 y=15 angle=40\n"
                                  "phantom name=c1 seed=1000\n";
  const std::string small =
      " -j 1 --set geometry.image_size=64 --set geometry.pixel_pitch=5.2 --set geometry.n_views=60"
      " --set geometry.n_detectors=93 --set denoiser.steps=20 --set denoiser.crop=16 --set denoiser.batch=2"
      " --set denoiser.channels=4 --set denoiser.hidden_layers=2 --set mar.t_start=150 --set mar.fidelity_steps=8"
      " --set mar.fidelity_steps_low_t=4 --set mar.regularization_steps=4 --set mar.final_fidelity_steps=8"
      " --set mar.ray_batch=32 --set mar.pixel_batch=64 --set inr.hash_levels=4 --set inr.hash_table_size=1024"
      " --set inr.hidden=16 --set evaluate.sweep_intervals=50,100";
  std::vector<std::string> diffs;
  auto same = [&](const fs::path& a, const fs::path& b) {
    if (!fs::is_regular_file(a) || slurp(a) != slurp(b)) diffs.push_back(fs::relative(a, dir).string());
  };
  int bad = 0;
  bad += run("simulate -m " + d + "/m.txt -o " + d + "/fx" + small, "s1.log") != 0;
  bad += run("simulate -m " + d + "/m.txt -c " + d + "/fx/config.ini -o " + d + "/fx2", "s2.log") != 0;
  for (const char* f : {"f1/gt.raster", "f1/y.sino", "f1/metal.mask", "f1/trace.mask", "f1/fbp.png", "f2/y.sino",
                        "c1/gt.raster", "index.tsv", "config.ini"})
    same(dir / "fx" / f, dir / "fx2" / f);

  bad += run("train-denoiser --corpus " + d + "/fx -o " + d + "/d1.weights" + small, "t1.log") != 0;
  bad += run("train-denoiser --corpus " + d + "/fx -c " + d + "/d1.config.ini -o " + d + "/d2.weights", "t2.log") != 0;
  same(dir / "d1.weights", dir / "d2.weights");
  same(dir / "d1.loss.tsv", dir / "d2.loss.tsv");

  for (const char* mode : {"full", "inr_only", "dm_only", "li_baseline"}) {
    const std::string a = d + "/r_" + mode + "_a", b = d + "/r_" + mode + "_b";
    const std::string f = " -f " + d + "/fx/f1 --checkpoint " + d + "/d1.weights";
    bad += run(std::string("reconstruct --mode ") + mode + f + " -o " + a + small, "r1.log") != 0;
    bad += run("reconstruct" + f + " -c " + a + "/config.ini -o " + b, "r2.log") != 0;
    for (const char* file : {"recon.raster", "recon.png", "overlay.png", "config.ini"}) same(fs::path(a) / file, fs::path(b) / file);
  }

  bad += run("ablate --sweep -m " + d + "/m.txt --checkpoint " + d + "/d1.weights -o " + d + "/ab1" + small, "a1.log") != 0;
  bad += run("ablate --sweep -m " + d + "/m.txt --checkpoint " + d + "/d1.weights -c " + d + "/ab1/config.ini -o " + d +
                 "/ab2",
             "a2.log") != 0;
  std::size_t ablate_files = 0;
  for (const auto& e : fs::recursive_directory_iterator(dir / "ab1")) {
    const auto name = e.path().filename().string();
    if (!e.is_regular_file() || name == "metrics.tsv" || name == "iterations.tsv" || name.ends_with(".tsv")) continue;
    same(e.path(), dir / "ab2" / fs::relative(e.path(), dir / "ab1"));
    ++ablate_files;
  }

  // evaluate reads results, so its tables must be identical run to run.
  bad += run("evaluate -r " + d + "/ab1/runs" + small, "e1.log") != 0;
  const std::string first = slurp(dir / "ab1" / "runs" / "medians.tsv");
  bad += run("evaluate -r " + d + "/ab1/runs -c " + d + "/ab1/config.ini", "e2.log") != 0;
  if (first.empty() || first != slurp(dir / "ab1" / "runs" / "medians.tsv")) diffs.push_back("medians.tsv");

  std::string list;
  for (const auto& x : diffs) list += " " + x;
  return {bad == 0 && diffs.empty(),
          format("5 commands rerun from their captured configs, %d failed invocations, %zu ablate files compared, "
                 "differing:%s",
                 bad, ablate_files, diffs.empty() ? " none" : list.c_str())};
}

// ---------------------------------------------------------------------------
// Criteria that share the trained denoiser and the desk suite.

struct SuiteRun {
  std::string name;
  std::string size_class;
  double fbp = 0.0, li = 0.0, inr_only = 0.0, full = 0.0, dm_only = 0.0;
  double full_seconds = 0.0;
};

struct Shared {
  RunConfig profile = desk_profile();
  Manifest manifest = desk_suite_manifest();
  std::vector<FixtureData> fixtures;
  std::optional<TinyCnnDenoiser> denoiser;
  double train_seconds = 0.0;
  std::vector<double> losses;

  void ensure_fixtures() {
    if (!fixtures.empty()) return;
    for (const auto& spec : manifest.fixtures) fixtures.push_back(simulate_fixture(spec, profile, manifest));
  }
  const TinyCnnDenoiser& ensure_denoiser() {
    if (denoiser) return *denoiser;
    std::vector<ImageRaster> corpus;
    for (std::uint64_t i = 0; i < 32; ++i) {
      PhantomSpec ps;
      ps.seed = 1000 + i;
      corpus.push_back(hu_to_lac(generate_phantom(ps, 128, 2.6).hu));
    }
    denoiser.emplace(profile.cnn, profile.t_total, 3);
    const auto t0 = std::chrono::steady_clock::now();
    losses = train_denoiser(*denoiser, corpus, profile.schedule(), profile.normalization(), profile.training).losses;
    denoiser->round_to_storage();
    train_seconds = seconds_since(t0);
    std::printf("# denoiser: %zu steps in %.0f s, loss %.4f -> %.4f (first/last 100 mean)\n", losses.size(),
                train_seconds, mean_of(0, 100), mean_of(losses.size() - 100, losses.size()));
    std::fflush(stdout);
    return *denoiser;
  }
  double mean_of(std::size_t a, std::size_t b) const {
    double s = 0.0;
    for (std::size_t i = a; i < b; ++i) s += losses[i];
    return s / static_cast<double>(b - a);
  }
  MarResult run(const FixtureData& fx, MarMode mode, std::size_t interval, const Sinogram* y = nullptr) {
    RunConfig c = profile;
    c.mar.mode = mode;
    c.mar.t_interval = interval;
    const auto g = c.geometry();
    const MarInputs in{y ? *y : fx.y, fx.trace, g, fx.metal, nullptr};
    if (mode == MarMode::dm_only)
      return run_dm_only(in, c.mar, ensure_denoiser(), c.schedule(), c.normalization(), c.seed);
    return run_inr_dr(in, c.mar, c.inr_config(), mode == MarMode::full ? &ensure_denoiser() : nullptr, c.schedule(),
                      c.normalization(), c.seed);
  }
};

Verdict denoiser_sanity(Shared& s) {
  s.ensure_fixtures();
  const auto& dn = s.ensure_denoiser();
  const auto schedule = s.profile.schedule();
  const auto norm = s.profile.normalization();
  std::string detail;
  bool ok = true;
  for (std::size_t t : {100, 500}) {
    std::vector<double> trained, identity;
    // Held out: the suite phantoms (seeds 1-5) are not in the training corpus.
    for (std::size_t k = 0; k < s.fixtures.size(); k += 3) {
      const auto& x0 = s.fixtures[k].ground_truth;
      const auto xt = diffuse(x0, t, gaussian_noise(x0.values.size(), 500 + k), schedule, norm);
      trained.push_back(psnr(tweedie_denoise(xt, t, dn, schedule, norm), x0));
      identity.push_back(psnr(tweedie_denoise(xt, t, ZeroPredictor(), schedule, norm), x0));
    }
    const double a = median(trained), b = median(identity);
    ok = ok && a > b;
    detail += format("%st=%zu trained %.2f vs zero predictor %.2f dB (%+.2f)", detail.empty() ? "" : ", ", t, a, b, a - b);
  }
  return {ok, detail};
}

Verdict masking(Shared& s) {
  s.ensure_fixtures();
  const FixtureData& fx = s.fixtures[1];
  Sinogram perturbed = fx.y;
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  std::size_t touched = 0;
  for (std::size_t i = 0; i < perturbed.values.size(); ++i)
    if (fx.trace.bits[i]) {
      perturbed.values[i] += u(rng);
      ++touched;
    }
  const MarResult a = s.run(fx, MarMode::full, s.profile.mar.t_interval);
  const MarResult b = s.run(fx, MarMode::full, s.profile.mar.t_interval, &perturbed);
  const bool same = a.inr_image.values == b.inr_image.values;
  std::size_t differ = 0;
  for (std::size_t i = 0; i < a.inr_image.values.size(); ++i) differ += a.inr_image.values[i] != b.inr_image.values[i];
  return {same && touched > 0,
          format("%s: %zu traced bins perturbed, %zu of %zu output pixels differ (before metal re-insertion)",
                 fx.name.c_str(), touched, differ, a.inr_image.values.size())};
}

std::vector<SuiteRun> suite_runs;

Verdict ablation(Shared& s) {
  s.ensure_fixtures();
  s.ensure_denoiser();
  const auto g = s.profile.geometry();
  for (const auto& fx : s.fixtures) {
    SuiteRun r;
    r.name = fx.name;
    r.size_class = fx.size_class;
    const Mask2D* ex = &fx.metal;
    r.fbp = psnr(fbp(fx.y, g), fx.ground_truth, 0.0, ex);
    r.li = psnr(li_baseline(fx.y, fx.trace, g).image, fx.ground_truth, 0.0, ex);
    r.inr_only = psnr(s.run(fx, MarMode::inr_only, 50).image, fx.ground_truth, 0.0, ex);
    const MarResult full = s.run(fx, MarMode::full, 50);
    r.full = psnr(full.image, fx.ground_truth, 0.0, ex);
    r.full_seconds = full.seconds;
    r.dm_only = psnr(s.run(fx, MarMode::dm_only, 50).image, fx.ground_truth, 0.0, ex);
    std::printf("# %-10s fbp %.2f  li %.2f  inr_only %.2f  full %.2f  dm_only %.2f  (full %.0f s)\n", r.name.c_str(),
                r.fbp, r.li, r.inr_only, r.full, r.dm_only, r.full_seconds);
    std::fflush(stdout);
    suite_runs.push_back(r);
  }
  auto med = [](double SuiteRun::*field) {
    std::vector<double> v;
    for (const auto& r : suite_runs) v.push_back(r.*field);
    return median(v);
  };
  const double fbp_m = med(&SuiteRun::fbp), li = med(&SuiteRun::li), inr = med(&SuiteRun::inr_only),
               full = med(&SuiteRun::full), dm = med(&SuiteRun::dm_only);
  struct Clause {
    const char* name;
    double a, b;
    bool known;
  };
  const std::vector<Clause> clauses = {{"full > inr_only", full, inr, false}, {"full > dm_only", full, dm, false},
                                       {"full > li", full, li, false},       {"full > fbp", full, fbp_m, false},
                                       {"inr_only > fbp", inr, fbp_m, false}, {"li > fbp", li, fbp_m, false},
                                       {"dm_only > fbp", dm, fbp_m, true}};
  bool ok = true, all_known = true;
  std::string detail = format("medians over %zu fixtures: fbp %.2f, li %.2f, inr_only %.2f, full %.2f, dm_only %.2f;",
                              suite_runs.size(), fbp_m, li, inr, full, dm);
  for (const auto& c : clauses) {
    const bool held = c.a > c.b;
    ok = ok && held;
    if (!held && !c.known) all_known = false;
    detail += format("%s %s %+.2f%s", &c == &clauses.front() ? " " : ", ", c.name, c.a - c.b, held ? "" : " (violated)");
  }
  return {ok, detail, !ok && all_known};
}

Verdict sweep(Shared& s) {
  s.ensure_fixtures();
  s.ensure_denoiser();
  if (suite_runs.empty()) ablation(s);
  std::vector<std::size_t> picks;
  for (std::size_t i = 0; i < s.fixtures.size(); ++i)
    if (s.fixtures[i].size_class == "medium") picks.push_back(i);
  std::map<std::size_t, std::vector<double>> quality, runtime;
  for (std::size_t i : picks) {
    quality[50].push_back(suite_runs[i].full);
    runtime[50].push_back(suite_runs[i].full_seconds);
    for (std::size_t interval : {200, 100}) {
      const auto& fx = s.fixtures[i];
      const MarResult r = s.run(fx, MarMode::full, interval);
      quality[interval].push_back(psnr(r.image, fx.ground_truth, 0.0, &fx.metal));
      runtime[interval].push_back(r.seconds);
      std::printf("# sweep %-10s interval %zu: psnr %.2f, %.0f s\n", fx.name.c_str(), interval, quality[interval].back(),
                  r.seconds);
      std::fflush(stdout);
    }
  }
  const double q200 = median(quality[200]), q100 = median(quality[100]), q50 = median(quality[50]);
  const double s200 = median(runtime[200]), s100 = median(runtime[100]), s50 = median(runtime[50]);
  return {q100 >= q200 && q50 >= q100 && s100 > s200 && s50 > s100,
          format("%zu medium fixtures; interval 200/100/50: median PSNR %.2f / %.2f / %.2f dB, runtime %.0f / %.0f / "
                 "%.0f s",
                 picks.size(), q200, q100, q50, s200, s100, s50)};
}

}  // namespace

int main(int argc, char** argv) {
  set_worker_count(1);
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));
  if (wanted.empty())
    for (int i = 1; i <= 10; ++i) wanted.insert(i);

  ScratchDir scratch;
  Shared shared;
  const std::vector<std::pair<int, std::function<Verdict()>>> criteria = {
      {1, projector},
      {2, gradients},
      {3, tweedie},
      {4, [&] { return schedule_log(scratch.path() / "c4"); }},
      {9, encodings},
      {10, [&] { return determinism(scratch.path() / "c10"); }},
      {8, [&] { return denoiser_sanity(shared); }},
      {5, [&] { return masking(shared); }},
      {6, [&] { return ablation(shared); }},
      {7, [&] { return sweep(shared); }},
  };
  int unexpected = 0;
  std::map<int, std::string> lines;
  for (const auto& [id, check] : criteria) {
    if (!wanted.count(id)) continue;
    fs::create_directories(scratch.path() / ("c" + std::to_string(id)));
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = check();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    std::string line = format("criterion %d: %s", id, v.pass ? "PASS" : "FAIL");
    if (!v.pass && v.known) line += " (known)";
    line += " - " + v.detail + format(" [%.0f s]", seconds_since(t0));
    std::printf("%s\n", line.c_str());
    std::fflush(stdout);
    lines[id] = line;
    if (!v.pass && !v.known) ++unexpected;
  }
  std::printf("\nsummary\n");
  std::ofstream report("acceptance_summary.txt");
  for (const auto& [id, line] : lines) {
    std::printf("%s\n", line.c_str());
    report << line << '\n';
  }
  return unexpected ? 1 : 0;
}
