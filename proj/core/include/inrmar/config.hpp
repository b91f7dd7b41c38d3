#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "inrmar/diffusion.hpp"
#include "inrmar/geometry.hpp"
#include "inrmar/inr.hpp"
#include "inrmar/mar.hpp"
#include "inrmar/simulation.hpp"

namespace inrmar {

// Everything a command needs, read from `key = value` lines grouped under
// [section] headers. Unknown sections or keys are rejected. Geometry fields
// left at zero follow the preset.
struct RunConfig {
  // [run]
  std::uint64_t seed = 0;
  std::size_t workers = 0;  // 0: hardware concurrency
  bool save_model = false;

  // [geometry]
  std::string geometry_preset = "desk";
  std::size_t n_views = 0;
  std::size_t n_detectors = 0;
  std::size_t image_size = 0;
  double pixel_pitch = 0.0;
  double source_to_iso = 0.0;
  double source_to_detector = 0.0;
  double detector_pitch = 0.0;

  // [mar]; run.mode selects mar.mode
  MarConfig mar;
  double trace_threshold = 0.0;  // <= 0: half a pixel pitch

  // [inr]
  InrConfig inr = [] {
    InrConfig c = InrConfig::paper(128);
    c.output_scale = kWaterLac;
    return c;
  }();
  std::size_t hash_finest_resolution = 256;  // sets the growth factor

  // [diffusion]
  std::size_t t_total = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  double mu_max = 2.0 * kWaterLac;

  // [denoiser]
  CnnConfig cnn;
  DenoiserTrainConfig training;

  // [simulation]
  double photons = 1e6;
  std::string spectrum = "poly3";
  std::size_t supersample = 2;
  bool poisson = true;

  // [evaluate]
  std::vector<std::size_t> sweep_intervals = {10, 25, 50, 100, 200};

  // [paths]
  std::string manifest;
  std::string checkpoint;
  std::string output;
  std::string corpus;

  GeometryConfig geometry_config() const;
  FanBeamGeometry geometry() const;
  InrConfig inr_config() const;  // inr with the growth factor resolved
  NoiseSchedule schedule() const;
  Normalization normalization() const { return Normalization{mu_max}; }
  CorruptionConfig corruption(std::uint64_t fixture_seed) const;
  void validate() const;
};

RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);
// Every key with its resolved value; parse_config(dump_config(c)) == c.
std::string dump_config(const RunConfig& config);
// Applies one `section.key=value` override.
void apply_override(RunConfig& config, const std::string& assignment);

bool operator==(const RunConfig& a, const RunConfig& b);

// A simulated case. size_class names a target from metal_size_target;
// metal_pixels > 0 overrides it. Entries without metal are clean phantoms.
struct FixtureSpec {
  std::string name;
  std::uint64_t seed = 0;
  bool has_metal = true;
  MetalShape shape = MetalShape::disk;
  std::string size_class = "medium";
  std::size_t metal_pixels = 0;
  double x_mm = 0.0;
  double y_mm = 0.0;
  double angle_deg = 0.0;
  std::string preset = "desk";
  double photons = 1e6;
  std::string spectrum = "poly3";
};

struct SizeClass {
  std::string name;
  std::size_t min_pixels = 0;
};

// Plain-text manifest, one entry per line, '#' comments:
//
//   size_class large min_pixels 120
//   fixture name=s1_large seed=1 shape=disk size=large x=30 y=-20 angle=0 preset=desk n0=1e6 spectrum=poly3
//   phantom name=c1000 seed=1000 preset=desk
struct Manifest {
  std::vector<SizeClass> size_classes;  // descending min_pixels
  std::vector<FixtureSpec> fixtures;

  // Class with the largest threshold not above `pixels`; empty when none.
  std::string classify(std::size_t pixels) const;
};

Manifest parse_manifest(const std::string& text);
Manifest load_manifest(const std::filesystem::path& path);
std::string format_manifest(const Manifest& manifest);

// The acceptance suite: seeds 1-5, each with a large, medium and small
// implant of varying shape and placement, plus the size thresholds.
Manifest desk_suite_manifest();

}  // namespace inrmar
