#include "inrmar/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <numbers>
#include <sstream>

#include "inrmar/errors.hpp"
#include "inrmar/io.hpp"

namespace inrmar {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string to_text(std::size_t v) { return std::to_string(v); }
std::string to_text(double v) { return format_double(v); }
std::string to_text(bool v) { return v ? "true" : "false"; }
std::string to_text(const std::string& v) { return v; }
std::string to_text(MarMode v) { return to_string(v); }
std::string to_text(RampWindow v) { return to_string(v); }
std::string to_text(EncodingKind v) { return to_string(v); }
std::string to_text(Precision v) { return v == Precision::f32 ? "f32" : "f64"; }
std::string to_text(const std::vector<std::size_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

void from_text(const std::string& s, std::size_t& v, const std::string& key) { v = parse_uint(s, key); }
void from_text(const std::string& s, double& v, const std::string& key) { v = parse_double(s, key); }
void from_text(const std::string& s, bool& v, const std::string& key) {
  if (s == "true" || s == "1") v = true;
  else if (s == "false" || s == "0") v = false;
  else throw ConfigError("'" + s + "' is not a boolean (" + key + ")");
}
void from_text(const std::string& s, std::string& v, const std::string&) { v = s; }
void from_text(const std::string& s, MarMode& v, const std::string&) { v = mar_mode_from_string(s); }
void from_text(const std::string& s, RampWindow& v, const std::string&) { v = ramp_window_from_string(s); }
void from_text(const std::string& s, EncodingKind& v, const std::string&) { v = encoding_from_string(s); }
void from_text(const std::string& s, Precision& v, const std::string& key) {
  if (s == "f32") v = Precision::f32;
  else if (s == "f64") v = Precision::f64;
  else throw ConfigError("'" + s + "' is not a precision (" + key + ")");
}
void from_text(const std::string& s, std::vector<std::size_t>& v, const std::string& key) {
  v.clear();
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) v.push_back(parse_uint(trim(item), key));
}

struct Entry {
  std::string section;
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

template <class Access>
Entry entry(std::string section, std::string key, Access access) {
  const std::string full = section + "." + key;
  return Entry{std::move(section), std::move(key),
               [access](const RunConfig& c) { return to_text(access(const_cast<RunConfig&>(c))); },
               [access, full](RunConfig& c, const std::string& s) { from_text(s, access(c), full); }};
}

#define INRMAR_KEY(section, key, expr) entry(section, key, [](RunConfig& c) -> decltype(auto) { return (expr); })

const std::vector<Entry>& registry() {
  static const std::vector<Entry> entries = {
      INRMAR_KEY("run", "seed", c.seed),
      INRMAR_KEY("run", "workers", c.workers),
      INRMAR_KEY("run", "mode", c.mar.mode),
      INRMAR_KEY("run", "save_model", c.save_model),
      INRMAR_KEY("geometry", "preset", c.geometry_preset),
      INRMAR_KEY("geometry", "n_views", c.n_views),
      INRMAR_KEY("geometry", "n_detectors", c.n_detectors),
      INRMAR_KEY("geometry", "image_size", c.image_size),
      INRMAR_KEY("geometry", "pixel_pitch", c.pixel_pitch),
      INRMAR_KEY("geometry", "source_to_iso", c.source_to_iso),
      INRMAR_KEY("geometry", "source_to_detector", c.source_to_detector),
      INRMAR_KEY("geometry", "detector_pitch", c.detector_pitch),
      INRMAR_KEY("mar", "t_start", c.mar.t_start),
      INRMAR_KEY("mar", "t_interval", c.mar.t_interval),
      INRMAR_KEY("mar", "fidelity_steps", c.mar.fidelity_steps),
      INRMAR_KEY("mar", "fidelity_steps_low_t", c.mar.fidelity_steps_low_t),
      INRMAR_KEY("mar", "t_low_threshold", c.mar.t_low_threshold),
      INRMAR_KEY("mar", "regularization_steps", c.mar.regularization_steps),
      INRMAR_KEY("mar", "final_fidelity_steps", c.mar.final_fidelity_steps),
      INRMAR_KEY("mar", "ray_batch", c.mar.ray_batch),
      INRMAR_KEY("mar", "pixel_batch", c.mar.pixel_batch),
      INRMAR_KEY("mar", "sample_step", c.mar.sample_step),
      INRMAR_KEY("mar", "learning_rate", c.mar.learning_rate),
      INRMAR_KEY("mar", "trace_threshold", c.trace_threshold),
      INRMAR_KEY("mar", "fbp_window", c.mar.fbp_window),
      INRMAR_KEY("inr", "encoding", c.inr.encoding),
      INRMAR_KEY("inr", "hash_levels", c.inr.hash.levels),
      INRMAR_KEY("inr", "hash_features", c.inr.hash.features_per_level),
      INRMAR_KEY("inr", "hash_table_size", c.inr.hash.table_size),
      INRMAR_KEY("inr", "hash_base_resolution", c.inr.hash.base_resolution),
      INRMAR_KEY("inr", "hash_finest_resolution", c.hash_finest_resolution),
      INRMAR_KEY("inr", "fourier_frequencies", c.inr.fourier_frequencies),
      INRMAR_KEY("inr", "hidden", c.inr.hidden),
      INRMAR_KEY("inr", "precision", c.inr.precision),
      INRMAR_KEY("inr", "output_scale", c.inr.output_scale),
      INRMAR_KEY("diffusion", "t_total", c.t_total),
      INRMAR_KEY("diffusion", "beta_start", c.beta_start),
      INRMAR_KEY("diffusion", "beta_end", c.beta_end),
      INRMAR_KEY("diffusion", "mu_max", c.mu_max),
      INRMAR_KEY("denoiser", "hidden_layers", c.cnn.hidden_layers),
      INRMAR_KEY("denoiser", "channels", c.cnn.channels),
      INRMAR_KEY("denoiser", "steps", c.training.steps),
      INRMAR_KEY("denoiser", "batch", c.training.batch),
      INRMAR_KEY("denoiser", "crop", c.training.crop),
      INRMAR_KEY("denoiser", "learning_rate", c.training.learning_rate),
      INRMAR_KEY("denoiser", "seed", c.training.seed),
      INRMAR_KEY("simulation", "photons", c.photons),
      INRMAR_KEY("simulation", "spectrum", c.spectrum),
      INRMAR_KEY("simulation", "supersample", c.supersample),
      INRMAR_KEY("simulation", "poisson", c.poisson),
      INRMAR_KEY("evaluate", "sweep_intervals", c.sweep_intervals),
      INRMAR_KEY("paths", "manifest", c.manifest),
      INRMAR_KEY("paths", "checkpoint", c.checkpoint),
      INRMAR_KEY("paths", "output", c.output),
      INRMAR_KEY("paths", "corpus", c.corpus),
  };
  return entries;
}

#undef INRMAR_KEY

const Entry& lookup(const std::string& section, const std::string& key) {
  for (const auto& e : registry())
    if (e.section == section && e.key == key) return e;
  throw ConfigError("unknown config key '" + section + "." + key + "'");
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

GeometryConfig RunConfig::geometry_config() const {
  GeometryConfig g = GeometryConfig::preset(geometry_preset);
  if (n_views) g.n_views = n_views;
  if (n_detectors) g.n_detectors = n_detectors;
  if (image_size) g.image_size = image_size;
  if (pixel_pitch > 0.0) g.pixel_pitch = pixel_pitch;
  if (source_to_iso > 0.0) g.source_to_iso = source_to_iso;
  if (source_to_detector > 0.0) g.source_to_detector = source_to_detector;
  if (detector_pitch > 0.0) g.detector_pitch = detector_pitch;
  return g;
}

FanBeamGeometry RunConfig::geometry() const { return make_geometry(geometry_config()); }

InrConfig RunConfig::inr_config() const {
  InrConfig c = inr;
  const std::size_t finest = hash_finest_resolution ? hash_finest_resolution : 2 * geometry_config().image_size;
  if (c.encoding == EncodingKind::hash)
    c.hash.growth_factor = HashEncodingConfig::growth_for(c.hash.levels, c.hash.base_resolution, finest);
  return c;
}

NoiseSchedule RunConfig::schedule() const { return make_schedule(t_total, beta_start, beta_end); }

CorruptionConfig RunConfig::corruption(std::uint64_t fixture_seed) const {
  CorruptionConfig c;
  c.spectrum = SpectrumModel::preset(spectrum);
  c.photons = photons;
  c.poisson = poisson;
  c.supersample = supersample;
  c.seed = fixture_seed;
  return c;
}

void RunConfig::validate() const {
  geometry();
  mar.validate(t_total);
  inr_config().validate();
  schedule();
  if (!(mu_max > 0.0)) throw ConfigError("diffusion.mu_max must be positive");
  if (cnn.hidden_layers == 0 || cnn.channels == 0) throw ConfigError("denoiser needs at least one hidden layer");
  if (training.steps == 0 || training.batch == 0 || training.crop < 3) throw ConfigError("invalid denoiser training");
  if (!(training.learning_rate > 0.0)) throw ConfigError("denoiser.learning_rate must be positive");
  SpectrumModel::preset(spectrum).validate();
  if (!(photons > 0.0)) throw ConfigError("simulation.photons must be positive");
  if (supersample == 0) throw ConfigError("simulation.supersample must be at least 1");
  for (auto i : sweep_intervals)
    if (i == 0 || i > t_total) throw ConfigError("sweep intervals must lie in [1, t_total]");
}

RunConfig parse_config(const std::string& text) {
  RunConfig c;
  std::stringstream ss(text);
  std::string line, section;
  std::size_t lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("line " + std::to_string(lineno) + ": malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      if (std::none_of(registry().begin(), registry().end(), [&](const Entry& e) { return e.section == section; }))
        throw ConfigError("unknown config section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    if (section.empty()) throw ConfigError("line " + std::to_string(lineno) + ": key outside any section");
    lookup(section, trim(line.substr(0, eq))).set(c, trim(line.substr(eq + 1)));
  }
  c.validate();
  return c;
}

RunConfig load_config(const std::filesystem::path& path) { return parse_config(read_text(path)); }

std::string dump_config(const RunConfig& config) {
  std::string out, section;
  for (const auto& e : registry()) {
    if (e.section != section) {
      out += (section.empty() ? "[" : "\n[") + e.section + "]\n";
      section = e.section;
    }
    out += e.key + " = " + e.get(config) + "\n";
  }
  return out;
}

void apply_override(RunConfig& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  const auto dot = assignment.find('.');
  if (eq == std::string::npos || dot == std::string::npos || dot > eq)
    throw ConfigError("override '" + assignment + "' is not section.key=value");
  lookup(trim(assignment.substr(0, dot)), trim(assignment.substr(dot + 1, eq - dot - 1)))
      .set(config, trim(assignment.substr(eq + 1)));
}

bool operator==(const RunConfig& a, const RunConfig& b) { return dump_config(a) == dump_config(b); }

std::string Manifest::classify(std::size_t pixels) const {
  for (const auto& c : size_classes)
    if (pixels >= c.min_pixels) return c.name;
  return "";
}

Manifest parse_manifest(const std::string& text) {
  Manifest m;
  std::stringstream ss(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::stringstream ls(line);
    std::vector<std::string> tok;
    for (std::string t; ls >> t;) tok.push_back(t);
    if (tok.empty()) continue;
    const std::string where = "manifest line " + std::to_string(lineno);
    if (tok[0] == "size_class") {
      if (tok.size() != 4 || tok[2] != "min_pixels") throw ConfigError(where + ": expected size_class NAME min_pixels N");
      m.size_classes.push_back({tok[1], parse_uint(tok[3], where)});
      continue;
    }
    if (tok[0] != "fixture" && tok[0] != "phantom") throw ConfigError(where + ": unknown entry '" + tok[0] + "'");
    FixtureSpec f;
    f.has_metal = tok[0] == "fixture";
    bool named = false, seeded = false;
    for (std::size_t i = 1; i < tok.size(); ++i) {
      const auto eq = tok[i].find('=');
      if (eq == std::string::npos) throw ConfigError(where + ": expected key=value, got '" + tok[i] + "'");
      const std::string k = tok[i].substr(0, eq), v = tok[i].substr(eq + 1);
      if (k == "name") f.name = v, named = true;
      else if (k == "seed") f.seed = parse_uint(v, where), seeded = true;
      else if (k == "preset") f.preset = v;
      else if (k == "n0") f.photons = parse_double(v, where);
      else if (k == "spectrum") f.spectrum = v;
      else if (f.has_metal && k == "shape") f.shape = metal_shape_from_string(v);
      else if (f.has_metal && k == "size") f.size_class = v;
      else if (f.has_metal && k == "pixels") f.metal_pixels = parse_uint(v, where);
      else if (f.has_metal && k == "x") f.x_mm = parse_double(v, where);
      else if (f.has_metal && k == "y") f.y_mm = parse_double(v, where);
      else if (f.has_metal && k == "angle") f.angle_deg = parse_double(v, where);
      else throw ConfigError(where + ": unknown field '" + k + "'");
    }
    if (!named || !seeded) throw ConfigError(where + ": name and seed are required");
    if (f.name.find_first_of("/\\") != std::string::npos || f.name == "." || f.name == "..")
      throw ConfigError(where + ": fixture name must be a plain file name");
    for (const auto& other : m.fixtures)
      if (other.name == f.name) throw ConfigError(where + ": duplicate fixture name '" + f.name + "'");
    if (f.has_metal && f.metal_pixels == 0) metal_size_target(f.size_class, 128);  // validates the class name
    m.fixtures.push_back(f);
  }
  std::sort(m.size_classes.begin(), m.size_classes.end(),
            [](const SizeClass& a, const SizeClass& b) { return a.min_pixels > b.min_pixels; });
  return m;
}

Manifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open manifest " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_manifest(ss.str());
}

std::string format_manifest(const Manifest& m) {
  std::string out;
  for (const auto& c : m.size_classes) out += "size_class " + c.name + " min_pixels " + std::to_string(c.min_pixels) + "\n";
  for (const auto& f : m.fixtures) {
    out += (f.has_metal ? "fixture" : "phantom") + std::string(" name=") + f.name + " seed=" + std::to_string(f.seed);
    if (f.has_metal) {
      out += " shape=" + to_string(f.shape) + " size=" + f.size_class;
      if (f.metal_pixels) out += " pixels=" + std::to_string(f.metal_pixels);
      out += " x=" + format_double(f.x_mm) + " y=" + format_double(f.y_mm) + " angle=" + format_double(f.angle_deg);
    }
    out += " preset=" + f.preset + " n0=" + format_double(f.photons) + " spectrum=" + f.spectrum + "\n";
  }
  return out;
}

Manifest desk_suite_manifest() {
  Manifest m;
  m.size_classes = {{"large", 100}, {"medium", 25}, {"small", 1}};
  const char* classes[3] = {"large", "medium", "small"};
  const MetalShape shapes[3] = {MetalShape::disk, MetalShape::rounded_rectangle, MetalShape::two_lobe};
  for (std::uint64_t seed = 1; seed <= 5; ++seed)
    for (std::size_t c = 0; c < 3; ++c) {
      FixtureSpec f;
      f.name = "s" + std::to_string(seed) + "_" + classes[c];
      f.seed = seed;
      f.size_class = classes[c];
      f.shape = shapes[(seed + c) % 3];
      const double deg = static_cast<double>(72 * seed + 120 * c);
      f.x_mm = std::round(35.0 * std::cos(deg * std::numbers::pi / 180.0) * 10.0) / 10.0;
      f.y_mm = std::round(35.0 * std::sin(deg * std::numbers::pi / 180.0) * 10.0) / 10.0;
      f.angle_deg = deg;
      m.fixtures.push_back(f);
    }
  return m;
}

}  // namespace inrmar
