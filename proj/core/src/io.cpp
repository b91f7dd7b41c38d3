#include "inrmar/io.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>

#include "inrmar/errors.hpp"
#include "inrmar/simulation.hpp"

namespace inrmar {

namespace fs = std::filesystem;

namespace {

constexpr const char* kMagic = "INRMAR1";

FileKind kind_from_string(const std::string& s) {
  if (s == "raster") return FileKind::raster;
  if (s == "sinogram") return FileKind::sinogram;
  if (s == "mask") return FileKind::mask;
  if (s == "weights") return FileKind::weights;
  throw DataError("unknown file kind '" + s + "'");
}

DType dtype_from_string(const std::string& s) {
  if (s == "f32le") return DType::f32le;
  if (s == "u8") return DType::u8;
  throw DataError("unknown dtype '" + s + "'");
}

std::size_t dtype_size(DType d) { return d == DType::f32le ? 4 : 1; }

bool has_space(const std::string& s) {
  return s.empty() || std::any_of(s.begin(), s.end(), [](char c) { return c == ' ' || c == '\n' || c == '\t'; });
}

void create_parent(const fs::path& path) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
}

std::ofstream open_out(const fs::path& path) {
  create_parent(path);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  return out;
}

std::string join_sizes(const std::vector<std::size_t>& v, char sep) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += sep;
    s += std::to_string(v[i]);
  }
  return s;
}

std::vector<std::size_t> split_sizes(const std::string& s, char sep, const std::string& what) {
  std::vector<std::size_t> out;
  if (s.empty()) return out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) out.push_back(parse_uint(item, what));
  return out;
}

void expect_kind(const RasterFile& f, FileKind kind, std::size_t rank, const fs::path& path) {
  if (f.kind != kind) throw DataError(path.string() + " holds a " + to_string(f.kind) + ", not a " + to_string(kind));
  if (f.dims.size() != rank) throw DataError(path.string() + " has the wrong number of dimensions");
}

std::uint8_t window_hu(double lac) {
  const double hu = lac_to_hu(lac);
  const double v = std::clamp((hu + 175.0) / 450.0, 0.0, 1.0);
  return static_cast<std::uint8_t>(std::lround(v * 255.0));
}

void write_png(const fs::path& path, std::size_t width, std::size_t height, int color_type,
               const std::vector<std::uint8_t>& pixels) {
  create_parent(path);
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "wb"), std::fclose);
  if (!fp) throw DataError("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw DataError("libpng initialization failed");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError("PNG encoding failed for " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8, color_type,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t stride = pixels.size() / height;
  for (std::size_t r = 0; r < height; ++r)
    png_write_row(png, const_cast<png_bytep>(pixels.data() + r * stride));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

std::string to_string(FileKind kind) {
  switch (kind) {
    case FileKind::raster: return "raster";
    case FileKind::sinogram: return "sinogram";
    case FileKind::mask: return "mask";
    case FileKind::weights: return "weights";
  }
  return "?";
}

std::string to_string(DType dtype) { return dtype == DType::f32le ? "f32le" : "u8"; }

std::size_t RasterFile::element_count() const {
  std::size_t n = dims.empty() ? 0 : 1;
  for (auto d : dims) n *= d;
  return n;
}

const std::string* RasterFile::find(const std::string& name) const {
  for (const auto& [k, v] : fields)
    if (k == name) return &v;
  return nullptr;
}

const std::string& RasterFile::field(const std::string& name) const {
  if (const auto* v = find(name)) return *v;
  throw DataError("header field '" + name + "' is missing");
}

double RasterFile::number(const std::string& name) const { return parse_double(field(name), name); }

void RasterFile::set(const std::string& name, const std::string& value) {
  for (auto& [k, v] : fields)
    if (k == name) {
      v = value;
      return;
    }
  fields.emplace_back(name, value);
}

void RasterFile::set(const std::string& name, double value) { set(name, format_double(value)); }

std::string format_double(double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

double parse_double(const std::string& text, const std::string& what) {
  double v = 0.0;
  const char* b = text.data();
  const char* e = b + text.size();
  if (b != e && *b == '+') ++b;
  const auto r = std::from_chars(b, e, v);
  if (r.ec != std::errc() || r.ptr != e) throw ConfigError("'" + text + "' is not a number (" + what + ")");
  return v;
}

std::uint64_t parse_uint(const std::string& text, const std::string& what) {
  std::uint64_t v = 0;
  const auto r = std::from_chars(text.data(), text.data() + text.size(), v);
  if (r.ec != std::errc() || r.ptr != text.data() + text.size())
    throw ConfigError("'" + text + "' is not a non-negative integer (" + what + ")");
  return v;
}

void write_raster_file(const fs::path& path, const RasterFile& file) {
  if (file.dims.empty()) throw DataError("a raster file needs at least one dimension");
  if (file.data.size() != file.element_count()) throw DataError("payload length does not match dimensions");
  std::string header = std::string(kMagic) + "\nkind " + to_string(file.kind) + "\ndtype " + to_string(file.dtype) +
                       "\ndims " + join_sizes(file.dims, ' ') + "\n";
  for (const auto& [k, v] : file.fields) {
    if (has_space(k) || has_space(v)) throw DataError("header field '" + k + "' contains whitespace");
    header += "field " + k + " " + v + "\n";
  }
  header += "end\n";

  std::vector<char> payload(file.data.size() * dtype_size(file.dtype));
  if (file.dtype == DType::f32le) {
    for (std::size_t i = 0; i < file.data.size(); ++i) {
      const auto bits = std::bit_cast<std::uint32_t>(static_cast<float>(file.data[i]));
      for (int b = 0; b < 4; ++b) payload[4 * i + b] = static_cast<char>((bits >> (8 * b)) & 0xffu);
    }
  } else {
    for (std::size_t i = 0; i < file.data.size(); ++i) {
      const double v = file.data[i];
      if (!(v >= 0.0 && v <= 255.0) || v != std::floor(v)) throw DataError("u8 payload value out of range");
      payload[i] = static_cast<char>(static_cast<std::uint8_t>(v));
    }
  }
  auto out = open_out(path);
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) throw DataError("write failed for " + path.string());
}

RasterFile read_raster_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  auto bad = [&](const std::string& why) { return DataError(path.string() + ": " + why); };
  std::string line;
  if (!std::getline(in, line) || line != kMagic) throw bad("bad magic");

  RasterFile f;
  bool have_kind = false, have_dtype = false, have_dims = false, ended = false;
  while (std::getline(in, line)) {
    if (line == "end") {
      ended = true;
      break;
    }
    const auto sp = line.find(' ');
    if (sp == std::string::npos) throw bad("malformed header line '" + line + "'");
    const std::string key = line.substr(0, sp), rest = line.substr(sp + 1);
    if (key == "kind") {
      f.kind = kind_from_string(rest);
      have_kind = true;
    } else if (key == "dtype") {
      f.dtype = dtype_from_string(rest);
      have_dtype = true;
    } else if (key == "dims") {
      try {
        f.dims = split_sizes(rest, ' ', "dims");
      } catch (const ConfigError& e) {
        throw bad(e.what());
      }
      have_dims = !f.dims.empty();
    } else if (key == "field") {
      const auto sp2 = rest.find(' ');
      if (sp2 == std::string::npos) throw bad("malformed field line");
      f.fields.emplace_back(rest.substr(0, sp2), rest.substr(sp2 + 1));
    } else {
      throw bad("unknown header line '" + key + "'");
    }
  }
  if (!ended || !have_kind || !have_dtype || !have_dims) throw bad("incomplete header");

  const std::size_t n = f.element_count();
  const std::size_t bytes = n * dtype_size(f.dtype);
  std::vector<char> payload(bytes);
  in.read(payload.data(), static_cast<std::streamsize>(bytes));
  if (static_cast<std::size_t>(in.gcount()) != bytes) throw bad("payload is truncated");
  if (in.peek() != std::ifstream::traits_type::eof()) throw bad("payload is longer than its dimensions");

  f.data.resize(n);
  if (f.dtype == DType::f32le) {
    for (std::size_t i = 0; i < n; ++i) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(payload[4 * i + b])) << (8 * b);
      f.data[i] = std::bit_cast<float>(bits);
    }
  } else {
    for (std::size_t i = 0; i < n; ++i) f.data[i] = static_cast<unsigned char>(payload[i]);
  }
  return f;
}

std::string geometry_hash(const FanBeamGeometry& g) {
  const std::string key = std::to_string(g.n_views()) + ";" + std::to_string(g.n_detectors()) + ";" +
                          std::to_string(g.image_size()) + ";" + format_double(g.pixel_pitch()) + ";" +
                          format_double(g.source_to_iso()) + ";" + format_double(g.source_to_detector()) + ";" +
                          format_double(g.detector_pitch());
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : key) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void save_image(const fs::path& path, const ImageRaster& image,
                const std::vector<std::pair<std::string, std::string>>& extra) {
  RasterFile f;
  f.kind = FileKind::raster;
  f.dims = {image.size, image.size};
  f.set("pixel_pitch", image.pixel_pitch);
  f.set("units", "lac_per_mm");
  for (const auto& [k, v] : extra) f.set(k, v);
  f.data = image.values;
  write_raster_file(path, f);
}

ImageRaster load_image(const fs::path& path, RasterFile* header) {
  RasterFile f = read_raster_file(path);
  expect_kind(f, FileKind::raster, 2, path);
  if (f.dims[0] != f.dims[1]) throw DataError(path.string() + " is not square");
  ImageRaster image(f.dims[0], f.number("pixel_pitch"));
  image.values = f.data;
  if (header) {
    f.data.clear();
    *header = std::move(f);
  }
  return image;
}

void save_sinogram(const fs::path& path, const Sinogram& sinogram, const FanBeamGeometry& geometry,
                   const std::vector<std::pair<std::string, std::string>>& extra) {
  if (sinogram.n_views != geometry.n_views() || sinogram.n_detectors != geometry.n_detectors())
    throw DataError("sinogram does not match the geometry");
  RasterFile f;
  f.kind = FileKind::sinogram;
  f.dims = {sinogram.n_views, sinogram.n_detectors};
  f.set("geometry_hash", geometry_hash(geometry));
  for (const auto& [k, v] : extra) f.set(k, v);
  f.data = sinogram.values;
  write_raster_file(path, f);
}

Sinogram load_sinogram(const fs::path& path, RasterFile* header) {
  RasterFile f = read_raster_file(path);
  expect_kind(f, FileKind::sinogram, 2, path);
  Sinogram s(f.dims[0], f.dims[1]);
  s.values = f.data;
  if (header) {
    f.data.clear();
    *header = std::move(f);
  }
  return s;
}

void save_mask(const fs::path& path, const Mask2D& mask, const std::vector<std::pair<std::string, std::string>>& extra) {
  RasterFile f;
  f.kind = FileKind::mask;
  f.dtype = DType::u8;
  f.dims = {mask.rows, mask.cols};
  for (const auto& [k, v] : extra) f.set(k, v);
  f.data.assign(mask.bits.begin(), mask.bits.end());
  write_raster_file(path, f);
}

Mask2D load_mask(const fs::path& path, RasterFile* header) {
  RasterFile f = read_raster_file(path);
  expect_kind(f, FileKind::mask, 2, path);
  Mask2D m(f.dims[0], f.dims[1]);
  for (std::size_t i = 0; i < f.data.size(); ++i) {
    if (f.data[i] > 1.0) throw DataError(path.string() + " holds a non-binary mask");
    m.bits[i] = static_cast<std::uint8_t>(f.data[i]);
  }
  if (header) {
    f.data.clear();
    *header = std::move(f);
  }
  return m;
}

void save_inr(const fs::path& path, const InrModel& model) {
  const auto& c = model.config();
  RasterFile f;
  f.kind = FileKind::weights;
  f.dims = {model.parameter_count()};
  f.set("model", "inr");
  f.set("encoding", to_string(c.encoding));
  f.set("hash_levels", std::to_string(c.hash.levels));
  f.set("hash_features", std::to_string(c.hash.features_per_level));
  f.set("hash_table_size", std::to_string(c.hash.table_size));
  f.set("hash_base_resolution", std::to_string(c.hash.base_resolution));
  f.set("hash_growth_factor", c.hash.growth_factor);
  f.set("fourier_frequencies", std::to_string(c.fourier_frequencies));
  f.set("hidden", join_sizes(c.hidden, ','));
  f.set("output_scale", c.output_scale);
  f.set("precision", c.precision == Precision::f32 ? "f32" : "f64");
  f.set("order", "hash_level_major,dense_input_to_output,weights_then_biases");
  f.data.assign(model.parameters().begin(), model.parameters().end());
  write_raster_file(path, f);
}

InrModel load_inr(const fs::path& path) {
  RasterFile f = read_raster_file(path);
  expect_kind(f, FileKind::weights, 1, path);
  if (f.field("model") != "inr") throw DataError(path.string() + " is not a network checkpoint");
  InrConfig c;
  c.encoding = encoding_from_string(f.field("encoding"));
  c.hash.levels = parse_uint(f.field("hash_levels"), "hash_levels");
  c.hash.features_per_level = parse_uint(f.field("hash_features"), "hash_features");
  c.hash.table_size = parse_uint(f.field("hash_table_size"), "hash_table_size");
  c.hash.base_resolution = parse_uint(f.field("hash_base_resolution"), "hash_base_resolution");
  c.hash.growth_factor = f.number("hash_growth_factor");
  c.fourier_frequencies = parse_uint(f.field("fourier_frequencies"), "fourier_frequencies");
  c.hidden = split_sizes(f.field("hidden"), ',', "hidden");
  c.output_scale = f.number("output_scale");
  c.precision = f.field("precision") == "f64" ? Precision::f64 : Precision::f32;
  InrModel model(c, 0);
  if (model.parameter_count() != f.data.size()) throw DataError(path.string() + ": parameter count mismatch");
  std::copy(f.data.begin(), f.data.end(), model.parameters().begin());
  return model;
}

void save_denoiser(const fs::path& path, const TinyCnnDenoiser& model, const NoiseSchedule& schedule,
                   const Normalization& norm) {
  if (model.t_total() != schedule.total) throw ConfigError("denoiser and schedule disagree on the step count");
  RasterFile f;
  f.kind = FileKind::weights;
  f.dims = {model.parameters().size()};
  f.set("model", "tiny_cnn");
  f.set("hidden_layers", std::to_string(model.config().hidden_layers));
  f.set("channels", std::to_string(model.config().channels));
  f.set("t_total", std::to_string(schedule.total));
  f.set("beta_start", schedule.beta_start);
  f.set("beta_end", schedule.beta_end);
  f.set("mu_max", norm.mu_max);
  f.set("normalization", "lac[0,mu_max]->[-1,1]");
  f.set("order", "layer_input_to_output,weights_out_in_3x3_then_biases");
  f.data.assign(model.parameters().begin(), model.parameters().end());
  write_raster_file(path, f);
}

DenoiserCheckpoint load_denoiser(const fs::path& path) {
  RasterFile f = read_raster_file(path);
  expect_kind(f, FileKind::weights, 1, path);
  if (f.field("model") != "tiny_cnn") throw DataError(path.string() + " is not a denoiser checkpoint");
  CnnConfig c;
  c.hidden_layers = parse_uint(f.field("hidden_layers"), "hidden_layers");
  c.channels = parse_uint(f.field("channels"), "channels");
  const std::size_t total = parse_uint(f.field("t_total"), "t_total");
  DenoiserCheckpoint ck{TinyCnnDenoiser(c, total, 0), make_schedule(total, f.number("beta_start"), f.number("beta_end")),
                        Normalization{f.number("mu_max")}};
  if (ck.model.parameters().size() != f.data.size()) throw DataError(path.string() + ": parameter count mismatch");
  std::copy(f.data.begin(), f.data.end(), ck.model.parameters().begin());
  return ck;
}

void check_compatible(const DenoiserCheckpoint& ck, const NoiseSchedule& schedule, const Normalization& norm) {
  if (ck.schedule.total != schedule.total || ck.schedule.beta_start != schedule.beta_start ||
      ck.schedule.beta_end != schedule.beta_end)
    throw ConfigError("denoiser checkpoint was trained with a different noise schedule");
  if (ck.norm.mu_max != norm.mu_max) throw ConfigError("denoiser checkpoint uses a different normalization");
}

void write_png_preview(const fs::path& path, const ImageRaster& lac) {
  std::vector<std::uint8_t> px(lac.values.size());
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = window_hu(lac.values[i]);
  write_png(path, lac.size, lac.size, PNG_COLOR_TYPE_GRAY, px);
}

void write_png_overlay(const fs::path& path, const ImageRaster& lac, const Mask2D& metal) {
  if (metal.bits.size() != lac.values.size()) throw DataError("overlay mask does not match image");
  std::vector<std::uint8_t> px(3 * lac.values.size());
  for (std::size_t i = 0; i < lac.values.size(); ++i) {
    const std::uint8_t g = window_hu(lac.values[i]);
    const bool m = metal.bits[i] != 0;
    px[3 * i] = m ? 255 : g;
    px[3 * i + 1] = m ? 0 : g;
    px[3 * i + 2] = m ? 0 : g;
  }
  write_png(path, lac.size, lac.size, PNG_COLOR_TYPE_RGB, px);
}

PngImage read_png(const fs::path& path) {
  png_image img;
  std::memset(&img, 0, sizeof img);
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) throw DataError("cannot read PNG " + path.string());
  PngImage out;
  out.width = img.width;
  out.height = img.height;
  const bool color = (img.format & PNG_FORMAT_FLAG_COLOR) != 0;
  img.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  out.channels = color ? 3 : 1;
  out.pixels.resize(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, out.pixels.data(), 0, nullptr)) {
    png_image_free(&img);
    throw DataError("cannot decode PNG " + path.string());
  }
  return out;
}

std::size_t Table::column(const std::string& name) const {
  const auto it = std::find(columns.begin(), columns.end(), name);
  if (it == columns.end()) throw DataError("table has no column '" + name + "'");
  return static_cast<std::size_t>(it - columns.begin());
}

void Table::add(std::vector<std::string> row) {
  if (row.size() != columns.size()) throw DataError("table row has the wrong number of cells");
  rows.push_back(std::move(row));
}

void write_table(const fs::path& path, const Table& table) {
  auto out = open_out(path);
  auto line = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (cells[i].find_first_of("\t\n") != std::string::npos) throw DataError("table cell contains a tab or newline");
      out << (i ? "\t" : "") << cells[i];
    }
    out << '\n';
  };
  line(table.columns);
  for (const auto& r : table.rows) line(r);
  if (!out) throw DataError("write failed for " + path.string());
}

Table read_table(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  auto split = [](const std::string& s) {
    std::vector<std::string> cells;
    std::size_t start = 0;
    for (;;) {
      const auto tab = s.find('\t', start);
      cells.push_back(s.substr(start, tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    return cells;
  };
  Table t;
  std::string line;
  if (!std::getline(in, line)) throw DataError(path.string() + " is empty");
  t.columns = split(line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto cells = split(line);
    if (cells.size() != t.columns.size()) throw DataError(path.string() + ": ragged row");
    t.rows.push_back(std::move(cells));
  }
  return t;
}

}  // namespace inrmar
