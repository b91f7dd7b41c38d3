#include "inrmar/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numbers>
#include <tuple>

#include "inrmar/errors.hpp"
#include "inrmar/projector.hpp"
#include "inrmar/random.hpp"
#include "inrmar/simulation.hpp"

namespace inrmar {

namespace fs = std::filesystem;

namespace {

using Fields = std::vector<std::pair<std::string, std::string>>;

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
}

void write_config(const fs::path& path, const RunConfig& config) { write_text(path, dump_config(config)); }

void require_file(const fs::path& path) {
  if (!fs::is_regular_file(path)) throw DataError("missing file " + path.string());
}

std::string fmt(double v) { return format_double(v); }

const std::vector<std::string> kMetricColumns = {"fixture",  "mode", "size_class", "metal_pixels", "t_interval",
                                                 "psnr",     "ssim", "psnr_full",  "ssim_full",    "seconds"};

void write_metrics(const fs::path& path, const FixtureData& fx, const std::string& mode, const std::string& interval,
                   const MetricReport& m, const MetricReport& full, double seconds) {
  Table t;
  t.columns = kMetricColumns;
  t.add({fx.name, mode, fx.size_class, std::to_string(fx.metal.count()), interval, fmt(m.psnr), fmt(m.ssim),
         fmt(full.psnr), fmt(full.ssim), fmt(seconds)});
  write_table(path, t);
}

ImageRaster truth_with_metal(const FixtureData& fx) {
  ImageRaster ref = fx.ground_truth;
  const double mu = hu_to_lac(fx.metal_hu);
  for (std::size_t i = 0; i < ref.values.size(); ++i)
    if (fx.metal.bits[i]) ref.values[i] = mu;
  return ref;
}

void check_geometry(const FixtureData& fx, const FanBeamGeometry& g, const fs::path& dir) {
  RasterFile header;
  load_sinogram(dir / kSinogramFile, &header);
  if (header.field("geometry_hash") != geometry_hash(g))
    throw DataError("fixture " + fx.name + " was simulated with a different geometry than the config describes");
}

std::string interval_of(const RunConfig& c) {
  return c.mar.mode == MarMode::li_baseline ? "-" : std::to_string(c.mar.t_interval);
}

}  // namespace

double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t h = v.size() / 2;
  return v.size() % 2 ? v[h] : 0.5 * (v[h - 1] + v[h]);
}

RunConfig fixture_config(const FixtureSpec& spec, const RunConfig& config) {
  RunConfig c = config;
  c.geometry_preset = spec.preset;
  c.photons = spec.photons;
  c.spectrum = spec.spectrum;
  return c;
}

FixtureData simulate_fixture(const FixtureSpec& spec, const RunConfig& config, const Manifest& manifest) {
  const RunConfig c = fixture_config(spec, config);
  const FanBeamGeometry g = c.geometry();
  const std::size_t n = g.image_size();

  PhantomSpec ps;
  ps.seed = spec.seed;
  const Phantom ph = generate_phantom(ps, n, g.pixel_pitch());

  FixtureData fx;
  fx.name = spec.name;
  fx.seed = spec.seed;
  fx.ground_truth = hu_to_lac(ph.hu);
  if (!spec.has_metal) return fx;

  MetalSpec ms;
  ms.shape = spec.shape;
  ms.target_pixels = spec.metal_pixels ? spec.metal_pixels : metal_size_target(spec.size_class, n);
  ms.x_mm = spec.x_mm;
  ms.y_mm = spec.y_mm;
  ms.angle = spec.angle_deg * std::numbers::pi / 180.0;
  const MetalInsertion ins = insert_metal(ph.hu, ph.body, ms);
  fx.metal_hu = ms.hu;
  fx.metal = ins.mask;
  fx.y = corrupt(ins.hu, ins.mask, g, c.corruption(spec.seed));
  fx.trace = compute_metal_trace(ins.mask, g, c.trace_threshold);
  fx.size_class = manifest.size_classes.empty() ? spec.size_class : manifest.classify(ins.mask.count());
  return fx;
}

FixtureData load_fixture(const fs::path& dir) {
  for (const char* f : {kGroundTruthFile, kMetalFile, kSinogramFile, kTraceFile}) require_file(dir / f);
  FixtureData fx;
  RasterFile gt_header, metal_header;
  fx.ground_truth = load_image(dir / kGroundTruthFile, &gt_header);
  fx.metal = load_mask(dir / kMetalFile, &metal_header);
  fx.y = load_sinogram(dir / kSinogramFile);
  fx.trace = load_mask(dir / kTraceFile);
  fx.name = gt_header.field("fixture");
  fx.seed = parse_uint(gt_header.field("seed"), "seed");
  fx.size_class = metal_header.field("size_class");
  fx.metal_hu = metal_header.number("metal_hu");
  if (fx.metal.rows != fx.ground_truth.size || fx.metal.cols != fx.ground_truth.size ||
      fx.trace.rows != fx.y.n_views || fx.trace.cols != fx.y.n_detectors)
    throw DataError("fixture files in " + dir.string() + " disagree in shape");
  return fx;
}

std::vector<fs::path> cmd_simulate(const fs::path& manifest_path, const fs::path& out, const RunConfig& config) {
  const Manifest manifest = load_manifest(manifest_path);
  if (manifest.fixtures.empty()) throw DataError("manifest lists no fixtures");
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec || !fs::is_directory(out)) throw DataError("cannot create output directory " + out.string());

  Table index;
  index.columns = {"fixture", "kind", "file", "seed", "size_class", "metal_pixels"};
  std::vector<fs::path> files;
  for (const auto& spec : manifest.fixtures) {
    const FixtureData fx = simulate_fixture(spec, config, manifest);
    const RunConfig c = fixture_config(spec, config);
    const FanBeamGeometry g = c.geometry();
    const fs::path dir = out / fx.name;
    const std::string seed = std::to_string(fx.seed);
    const std::string pixels = std::to_string(fx.metal.count());
    auto record = [&](const char* file, const std::string& kind) {
      files.push_back(dir / file);
      index.add({fx.name, kind, fx.name + "/" + file, seed, fx.size_class, spec.has_metal ? pixels : "0"});
    };
    save_image(dir / kGroundTruthFile, fx.ground_truth,
               Fields{{"role", "ground_truth"}, {"fixture", fx.name}, {"seed", seed}});
    record(kGroundTruthFile, "ground_truth");
    if (!spec.has_metal) continue;
    save_mask(dir / kMetalFile, fx.metal,
              Fields{{"role", "metal"}, {"size_class", fx.size_class}, {"metal_pixels", pixels},
                     {"metal_hu", fmt(fx.metal_hu)}});
    record(kMetalFile, "metal_mask");
    save_sinogram(dir / kSinogramFile, fx.y, g,
                  Fields{{"fixture", fx.name}, {"photons", fmt(c.photons)}, {"spectrum", c.spectrum}});
    record(kSinogramFile, "sinogram");
    save_mask(dir / kTraceFile, fx.trace, Fields{{"role", "trace"}, {"geometry_hash", geometry_hash(g)}});
    record(kTraceFile, "metal_trace");
    write_png_preview(dir / kFbpPreviewFile, fbp(fx.y, g, c.mar.fbp_window));
    record(kFbpPreviewFile, "fbp_preview");
  }
  write_table(out / "index.tsv", index);
  write_config(out / "config.ini", config);
  return files;
}

DenoiserTraining cmd_train_denoiser(const fs::path& corpus, const RunConfig& config, const fs::path& out) {
  if (!fs::is_directory(corpus)) throw DataError("corpus directory " + corpus.string() + " does not exist");
  std::vector<fs::path> paths;
  for (const auto& e : fs::recursive_directory_iterator(corpus))
    if (e.is_regular_file() && e.path().filename() == kGroundTruthFile) paths.push_back(e.path());
  std::sort(paths.begin(), paths.end());
  std::vector<ImageRaster> images;
  for (const auto& p : paths) images.push_back(load_image(p));
  if (images.empty()) throw DataError("no ground-truth rasters found below " + corpus.string());

  const NoiseSchedule schedule = config.schedule();
  const Normalization norm = config.normalization();
  TinyCnnDenoiser model(config.cnn, schedule.total, derive_seed(config.training.seed, {0x696e6974}));
  DenoiserTraining training = train_denoiser(model, images, schedule, norm, config.training);

  save_denoiser(out, model, schedule, norm);
  Table loss;
  loss.columns = {"step", "loss"};
  for (std::size_t i = 0; i < training.losses.size(); ++i) loss.add({std::to_string(i + 1), fmt(training.losses[i])});
  const fs::path stem = out.parent_path() / out.stem();
  write_table(stem.string() + ".loss.tsv", loss);
  write_config(stem.string() + ".config.ini", config);
  return training;
}

ReconstructOutcome cmd_reconstruct(const fs::path& fixture_dir, const RunConfig& config, const fs::path& checkpoint,
                                   const fs::path& out) {
  config.validate();
  const FixtureData fx = load_fixture(fixture_dir);
  const FanBeamGeometry g = config.geometry();
  check_geometry(fx, g, fixture_dir);
  if (fx.ground_truth.size != g.image_size()) throw DataError("fixture image size differs from the config geometry");

  const NoiseSchedule schedule = config.schedule();
  const Normalization norm = config.normalization();
  std::optional<DenoiserCheckpoint> denoiser;
  if (config.mar.mode == MarMode::full || config.mar.mode == MarMode::dm_only) {
    if (checkpoint.empty()) throw ConfigError("mode " + to_string(config.mar.mode) + " needs a denoiser checkpoint");
    require_file(checkpoint);
    denoiser.emplace(load_denoiser(checkpoint));
    check_compatible(*denoiser, schedule, norm);
  }

  ReconstructOutcome outcome;
  MarResult& r = outcome.result;
  const MarInputs in{fx.y, fx.trace, g, fx.metal, &fx.ground_truth};
  const auto t0 = std::chrono::steady_clock::now();
  switch (config.mar.mode) {
    case MarMode::full:
    case MarMode::inr_only:
      r = run_inr_dr(in, config.mar, config.inr_config(), denoiser ? &denoiser->model : nullptr, schedule, norm,
                     config.seed);
      break;
    case MarMode::dm_only:
      r = run_dm_only(in, config.mar, denoiser->model, schedule, norm, config.seed);
      break;
    case MarMode::li_baseline: {
      const LiResult li = li_baseline(fx.y, fx.trace, g, config.mar.fbp_window);
      r.inr_image = li.image;
      r.image = reinsert_metal(li.image, fbp(fx.y, g, config.mar.fbp_window), fx.metal);
      r.metal_reinserted = true;
      r.view_axis_fallback = li.view_axis_fallback;
      r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      break;
    }
  }

  fs::create_directories(out);
  save_image(out / "recon.raster", r.image,
             Fields{{"fixture", fx.name},
                    {"mode", to_string(config.mar.mode)},
                    {"fbp_window", to_string(config.mar.fbp_window)},
                    {"metal_reinserted", r.metal_reinserted ? "true" : "false"},
                    {"view_axis_fallback", r.view_axis_fallback ? "true" : "false"},
                    {"seed", std::to_string(config.seed)}});
  write_png_preview(out / "recon.png", r.image);
  write_png_overlay(out / "overlay.png", r.image, fx.metal);

  Table log;
  log.columns = {"iter", "t", "fidelity_steps", "regularization_steps", "fidelity_loss", "regularization_loss",
                 "psnr", "ssim", "fidelity_seconds", "regularization_seconds"};
  auto add = [&](const IterationRecord& it, const std::string& t) {
    log.add({std::to_string(it.iter), t, std::to_string(it.fidelity_steps), std::to_string(it.regularization_steps),
             fmt(it.fidelity_loss), fmt(it.regularization_loss), fmt(it.psnr), fmt(it.ssim), fmt(it.fidelity_seconds),
             fmt(it.regularization_seconds)});
  };
  for (const auto& it : r.iterations) add(it, std::to_string(it.t));
  if (r.final_pass) add(*r.final_pass, "final");
  write_table(out / "iterations.tsv", log);

  outcome.metrics = evaluate(r.image, fx.ground_truth, &fx.metal);
  outcome.metrics_full = evaluate(r.image, truth_with_metal(fx));
  write_metrics(out / "metrics.tsv", fx, to_string(config.mar.mode), interval_of(config), *outcome.metrics,
                *outcome.metrics_full, r.seconds);
  write_config(out / "config.ini", config);
  if (config.save_model && r.model) save_inr(out / "model.weights", *r.model);
  return outcome;
}

void write_fbp_input_metrics(const fs::path& fixture_dir, const RunConfig& config, const fs::path& out) {
  const FixtureData fx = load_fixture(fixture_dir);
  const FanBeamGeometry g = config.geometry();
  check_geometry(fx, g, fixture_dir);
  const auto t0 = std::chrono::steady_clock::now();
  const ImageRaster image = fbp(fx.y, g, config.mar.fbp_window);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_metrics(out / "metrics.tsv", fx, "fbp_input", "-", evaluate(image, fx.ground_truth, &fx.metal),
                evaluate(image, truth_with_metal(fx)), seconds);
}

EvaluationTables cmd_evaluate(const fs::path& results, const RunConfig& config) {
  if (!fs::is_directory(results)) throw DataError("results directory " + results.string() + " does not exist");
  std::vector<fs::path> paths;
  for (const auto& e : fs::recursive_directory_iterator(results))
    if (e.is_regular_file() && e.path().filename() == "metrics.tsv") paths.push_back(e.path());
  std::sort(paths.begin(), paths.end());
  if (paths.empty()) throw DataError("no runs found below " + results.string());

  EvaluationTables out;
  out.runs.columns = kMetricColumns;
  for (const auto& p : paths) {
    const Table t = read_table(p);
    if (t.columns != kMetricColumns) throw DataError(p.string() + " is not a metrics table");
    for (const auto& row : t.rows) out.runs.add(row);
  }
  std::stable_sort(out.runs.rows.begin(), out.runs.rows.end(), [](const auto& a, const auto& b) {
    return std::tie(a[0], a[1], a[4]) < std::tie(b[0], b[1], b[4]);
  });

  const std::size_t c_mode = 1, c_class = 2, c_interval = 4, c_psnr = 5, c_seconds = 9;
  auto num = [](const std::string& s) { return parse_double(s, "metrics cell"); };

  out.medians.columns = {"mode", "t_interval", "size_class", "n", "psnr", "ssim", "psnr_full", "ssim_full", "seconds"};
  std::map<std::pair<std::string, std::string>, std::vector<const std::vector<std::string>*>> groups;
  for (const auto& row : out.runs.rows) groups[{row[c_mode], row[c_interval]}].push_back(&row);
  for (const auto& [key, rows] : groups) {
    std::vector<std::string> classes = {"all"};
    for (const auto* r : rows)
      if (std::find(classes.begin(), classes.end(), (*r)[c_class]) == classes.end()) classes.push_back((*r)[c_class]);
    for (const auto& cls : classes) {
      std::vector<std::vector<double>> cols(5);
      for (const auto* r : rows) {
        if (cls != "all" && (*r)[c_class] != cls) continue;
        for (std::size_t k = 0; k < 5; ++k) cols[k].push_back(num((*r)[c_psnr + k]));
      }
      std::vector<std::string> row = {key.first, key.second, cls, std::to_string(cols[0].size())};
      for (auto& c : cols) row.push_back(fmt(median(c)));
      out.medians.add(row);
    }
  }

  out.sweep.columns = {"t_interval", "n", "psnr", "ssim", "seconds"};
  for (const auto interval : config.sweep_intervals) {
    std::vector<double> p, s, sec;
    for (const auto& row : out.runs.rows)
      if (row[c_mode] == to_string(MarMode::full) && row[c_interval] == std::to_string(interval)) {
        p.push_back(num(row[c_psnr]));
        s.push_back(num(row[c_psnr + 1]));
        sec.push_back(num(row[c_seconds]));
      }
    out.sweep.add({std::to_string(interval), std::to_string(p.size()), fmt(median(p)), fmt(median(s)),
                   fmt(median(sec))});
  }

  write_table(results / "summary.tsv", out.runs);
  write_table(results / "medians.tsv", out.medians);
  write_table(results / "sweep.tsv", out.sweep);
  return out;
}

EvaluationTables cmd_ablate(const fs::path& manifest_path, const RunConfig& config, const fs::path& checkpoint,
                            const fs::path& out, bool sweep) {
  config.validate();
  if (checkpoint.empty()) throw ConfigError("ablate needs a denoiser checkpoint");
  require_file(checkpoint);
  const Manifest manifest = load_manifest(manifest_path);
  cmd_simulate(manifest_path, out / "fixtures", config);
  write_config(out / "config.ini", config);

  for (const auto& spec : manifest.fixtures) {
    if (!spec.has_metal) continue;
    const fs::path fixture = out / "fixtures" / spec.name;
    const fs::path runs = out / "runs" / spec.name;
    const RunConfig base = fixture_config(spec, config);
    write_fbp_input_metrics(fixture, base, runs / "fbp_input");
    for (MarMode mode : {MarMode::full, MarMode::inr_only, MarMode::dm_only, MarMode::li_baseline}) {
      RunConfig c = base;
      c.mar.mode = mode;
      cmd_reconstruct(fixture, c, checkpoint, runs / to_string(mode));
    }
    if (!sweep) continue;
    for (const auto interval : config.sweep_intervals) {
      if (interval == config.mar.t_interval) continue;
      RunConfig c = base;
      c.mar.mode = MarMode::full;
      c.mar.t_interval = interval;
      cmd_reconstruct(fixture, c, checkpoint, runs / ("full_i" + std::to_string(interval)));
    }
  }
  return cmd_evaluate(out / "runs", config);
}

}  // namespace inrmar
