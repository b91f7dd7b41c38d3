#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "inrmar/config.hpp"
#include "inrmar/io.hpp"
#include "inrmar/mar.hpp"
#include "inrmar/metrics.hpp"

namespace inrmar {

// One simulated case. Ground truth is the metal-free attenuation image.
struct FixtureData {
  std::string name;
  std::uint64_t seed = 0;
  std::string size_class;
  double metal_hu = 0.0;
  ImageRaster ground_truth;
  Mask2D metal;
  Sinogram y;
  MetalTrace trace;
};

// Fixture files inside a fixture directory.
inline constexpr const char* kGroundTruthFile = "gt.raster";
inline constexpr const char* kMetalFile = "metal.mask";
inline constexpr const char* kSinogramFile = "y.sino";
inline constexpr const char* kTraceFile = "trace.mask";
inline constexpr const char* kFbpPreviewFile = "fbp.png";

// The geometry a fixture is simulated with: the config geometry with the
// fixture's preset.
RunConfig fixture_config(const FixtureSpec& spec, const RunConfig& config);

FixtureData simulate_fixture(const FixtureSpec& spec, const RunConfig& config, const Manifest& manifest);
FixtureData load_fixture(const std::filesystem::path& dir);

// Writes <out>/<name>/{gt.raster, metal.mask, y.sino, trace.mask, fbp.png}
// per metal fixture (gt.raster only for clean phantoms), <out>/index.tsv and
// <out>/config.ini. Returns every data file written.
std::vector<std::filesystem::path> cmd_simulate(const std::filesystem::path& manifest_path,
                                                const std::filesystem::path& out, const RunConfig& config);

// Trains on every ground-truth raster below `corpus` (sorted by path) and
// writes the checkpoint, <stem>.loss.tsv and <stem>.config.ini beside it.
DenoiserTraining cmd_train_denoiser(const std::filesystem::path& corpus, const RunConfig& config,
                                    const std::filesystem::path& out);

struct ReconstructOutcome {
  MarResult result;
  std::optional<MetricReport> metrics;       // metal excluded
  std::optional<MetricReport> metrics_full;  // every pixel, reference with metal
};

// Runs config.mode on a fixture directory. Writes recon.raster, recon.png,
// overlay.png, iterations.tsv, metrics.tsv and config.ini into `out`.
// `checkpoint` is required for the full and dm_only modes.
ReconstructOutcome cmd_reconstruct(const std::filesystem::path& fixture_dir, const RunConfig& config,
                                   const std::filesystem::path& checkpoint, const std::filesystem::path& out);

// Scores the FBP of the corrupted sinogram as mode "fbp_input".
void write_fbp_input_metrics(const std::filesystem::path& fixture_dir, const RunConfig& config,
                             const std::filesystem::path& out);

struct EvaluationTables {
  Table runs;     // every metrics row
  Table medians;  // per mode, interval and size class ("all" included)
  Table sweep;    // full mode, one row per configured interval
};

// Collects every metrics.tsv below `results` and writes summary.tsv,
// medians.tsv and sweep.tsv there.
EvaluationTables cmd_evaluate(const std::filesystem::path& results, const RunConfig& config);

// simulate, then reconstruct every metal fixture in each mode (and, with
// `sweep`, full mode at every sweep interval), then evaluate <out>/runs.
EvaluationTables cmd_ablate(const std::filesystem::path& manifest_path, const RunConfig& config,
                            const std::filesystem::path& checkpoint, const std::filesystem::path& out, bool sweep);

// Median of the values; the mean of the two middle ones for even counts.
double median(std::vector<double> values);

}  // namespace inrmar
