#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "inrmar/diffusion.hpp"
#include "inrmar/geometry.hpp"
#include "inrmar/inr.hpp"
#include "inrmar/raster.hpp"

namespace inrmar {

enum class FileKind { raster, sinogram, mask, weights };
enum class DType { f32le, u8 };

std::string to_string(FileKind kind);
std::string to_string(DType dtype);

// Self-describing container. On disk: a text header
//
//   INRMAR1
//   kind raster
//   dtype f32le
//   dims 128 128
//   field pixel_pitch 2.6000000000000001
//   end
//
// followed by product(dims) little-endian values, row-major.
struct RasterFile {
  FileKind kind = FileKind::raster;
  DType dtype = DType::f32le;
  std::vector<std::size_t> dims;
  std::vector<std::pair<std::string, std::string>> fields;  // in header order
  std::vector<double> data;

  std::size_t element_count() const;
  const std::string* find(const std::string& name) const;
  const std::string& field(const std::string& name) const;  // DataError when absent
  double number(const std::string& name) const;
  void set(const std::string& name, const std::string& value);
  void set(const std::string& name, double value);
  friend bool operator==(const RasterFile&, const RasterFile&) = default;
};

void write_raster_file(const std::filesystem::path& path, const RasterFile& file);
RasterFile read_raster_file(const std::filesystem::path& path);

// Shortest decimal that parses back to the same double.
std::string format_double(double v);
double parse_double(const std::string& text, const std::string& what);
std::uint64_t parse_uint(const std::string& text, const std::string& what);

// 16 hex digits identifying every geometry parameter.
std::string geometry_hash(const FanBeamGeometry& geometry);

// Values are written as 32-bit floats. `extra` fields are appended to the
// header.
void save_image(const std::filesystem::path& path, const ImageRaster& image,
                const std::vector<std::pair<std::string, std::string>>& extra = {});
ImageRaster load_image(const std::filesystem::path& path, RasterFile* header = nullptr);

void save_sinogram(const std::filesystem::path& path, const Sinogram& sinogram, const FanBeamGeometry& geometry,
                   const std::vector<std::pair<std::string, std::string>>& extra = {});
Sinogram load_sinogram(const std::filesystem::path& path, RasterFile* header = nullptr);

void save_mask(const std::filesystem::path& path, const Mask2D& mask,
               const std::vector<std::pair<std::string, std::string>>& extra = {});
Mask2D load_mask(const std::filesystem::path& path, RasterFile* header = nullptr);

// Network weights; the payload follows InrModel::parameters().
void save_inr(const std::filesystem::path& path, const InrModel& model);
InrModel load_inr(const std::filesystem::path& path);

struct DenoiserCheckpoint {
  TinyCnnDenoiser model;
  NoiseSchedule schedule;
  Normalization norm;
};

// The header records the noise schedule and normalization the model was
// trained with.
void save_denoiser(const std::filesystem::path& path, const TinyCnnDenoiser& model, const NoiseSchedule& schedule,
                   const Normalization& norm);
DenoiserCheckpoint load_denoiser(const std::filesystem::path& path);

// ConfigError unless the checkpoint was trained with this schedule and map.
void check_compatible(const DenoiserCheckpoint& checkpoint, const NoiseSchedule& schedule, const Normalization& norm);

// 8-bit grayscale preview of an attenuation image, window [-175, 275] HU.
void write_png_preview(const std::filesystem::path& path, const ImageRaster& lac);
// The same preview as RGB with metal pixels drawn in red.
void write_png_overlay(const std::filesystem::path& path, const ImageRaster& lac, const Mask2D& metal);

struct PngImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 0;
  std::vector<std::uint8_t> pixels;
};
PngImage read_png(const std::filesystem::path& path);

// Tab-separated table with a header row.
struct Table {
  std::vector<std::string> columns;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(const std::string& name) const;  // DataError when absent
  void add(std::vector<std::string> row);
};

void write_table(const std::filesystem::path& path, const Table& table);
Table read_table(const std::filesystem::path& path);

}  // namespace inrmar
