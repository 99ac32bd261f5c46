#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "unetlite/tensor.hpp"

namespace unetlite {

/// In-memory form of the UNW1 weight container.
///
/// Byte layout (little-endian): "UNW1", u16 version, u32 record count, then per
/// record: u16 name length, UTF-8 name, u8 dtype (0=f32, 1=i8, 2=i32), u8 ndim,
/// ndim x u32 dims, row-major payload. Integer tensors are followed by
/// companion records `<name>.scale` (f32), `<name>.zero_point` (i32) and
/// `<name>.qconf` (i32: bits, signed, symmetric). Calibration ranges are stored
/// as `<site>.calib.min` / `<site>.calib.max` scalars.
struct WeightStore {
  static constexpr std::uint16_t kVersion = 1;

  std::vector<std::pair<std::string, Tensor>> tensors;
  std::map<std::string, std::pair<float, float>> calibration;

  /// Throws FormatError(duplicate_name) when `name` is taken.
  void add(std::string name, Tensor tensor);
  const Tensor* find(std::string_view name) const noexcept;
  std::size_t size() const noexcept { return tensors.size(); }

  bool operator==(const WeightStore&) const = default;
};

std::vector<std::uint8_t> encode_store(const WeightStore& store);
WeightStore decode_store(std::span<const std::uint8_t> bytes);

void write_store(const std::filesystem::path& path, const WeightStore& store);
WeightStore read_store(const std::filesystem::path& path);

/// Binary raster, one byte per pixel holding 0 or 1.
struct Mask {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> values;

  Mask() = default;
  Mask(std::size_t h, std::size_t w, std::uint8_t fill = 0) : height(h), width(w), values(h * w, fill) {}

  std::uint8_t at(std::size_t y, std::size_t x) const { return values[y * width + x]; }
  bool operator==(const Mask&) const = default;
};

/// P6, maxval 255 -> (1,3,H,W) tensor scaled by 1/255.
Tensor decode_ppm(std::span<const std::uint8_t> bytes);
Tensor read_ppm(const std::filesystem::path& path);
/// (1,3,H,W) tensor in [0,1] -> P6 (values rounded to the nearest of 256 levels).
void write_ppm(const std::filesystem::path& path, const Tensor& rgb);

/// P5, maxval 255, values restricted to {0,255}.
Mask decode_pgm(std::span<const std::uint8_t> bytes);
Mask read_pgm(const std::filesystem::path& path);
std::vector<std::uint8_t> encode_pgm(const Mask& mask);
void write_pgm(const std::filesystem::path& path, const Mask& mask);

struct DatasetIndex {
  struct Pair {
    std::string stem;
    std::filesystem::path image;
    std::filesystem::path mask;
  };
  std::vector<Pair> pairs;

  std::size_t size() const noexcept { return pairs.size(); }
};

/// Pairs `dir/images/<stem>.ppm` with `dir/gt/<stem>.pgm`, sorted by stem.
/// Orphans on either side raise Error(integrity) listing the stems.
DatasetIndex index_dataset(const std::filesystem::path& dir, std::optional<std::size_t> limit = std::nullopt);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace unetlite
