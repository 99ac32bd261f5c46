#pragma once

#include <cstddef>
#include <mutex>
#include <optional>
#include <span>
#include <vector>

#include "unetlite/model.hpp"
#include "unetlite/storage.hpp"

namespace unetlite {

struct Raster {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<float> values;

  float at(std::size_t y, std::size_t x) const { return values[y * width + x]; }
  bool operator==(const Raster&) const = default;
};

struct TileOrigin {
  std::size_t y = 0;
  std::size_t x = 0;
};

/// Overlapping square tiles over an H x W raster. Per axis the origins are
/// 0, S, 2S, ... with the last one clamped to dim - T, so tiles never leave
/// the image and the final tile ends exactly on the border.
struct TileGrid {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t tile = 256;
  std::size_t stride = 224;
  std::vector<std::size_t> origins_y;
  std::vector<std::size_t> origins_x;

  std::size_t count() const noexcept { return origins_y.size() * origins_x.size(); }
  /// Row-major: index = iy * origins_x.size() + ix.
  TileOrigin origin(std::size_t index) const;
  std::vector<TileOrigin> tiles() const;
};

TileGrid plan(std::size_t height, std::size_t width, std::size_t tile = 256, std::size_t stride = 224);

/// Collects per-tile maps in any order; finish() blends them in tile-index
/// order so the result does not depend on completion order. add() may be
/// called concurrently.
class StitchAccumulator {
 public:
  explicit StitchAccumulator(TileGrid grid);

  void add(std::size_t tile_index, std::vector<float> map);
  /// Per-pixel mean of the covering tiles. Throws Error(integrity) if a tile is missing.
  Raster finish() const;

 private:
  TileGrid grid_;
  std::vector<std::optional<std::vector<float>>> maps_;
  mutable std::mutex mutex_;
};

Raster stitch(const TileGrid& grid, std::span<const std::vector<float>> tile_maps);

/// Crops a (1,C,T,T) tile from a (1,C,H,W) image.
Tensor crop_tile(const Tensor& image, const TileGrid& grid, std::size_t tile_index);

/// Cuts T x T windows out of a single-channel raster (test and fixture helper).
std::vector<std::vector<float>> cut_tiles(const Raster& raster, const TileGrid& grid);

/// Tile-wise forward and stitch. `workers` > 1 runs tiles on a thread pool.
Raster predict_image(const UNetModel& model, const Tensor& image, const TileGrid& grid, unsigned workers = 1);

/// Pixels with probability >= threshold become 1.
Mask threshold_raster(const Raster& probs, float threshold);

Mask segment_image(const UNetModel& model, const Tensor& image, const TileGrid& grid, float threshold = 0.5f,
                   unsigned workers = 1);

}  // namespace unetlite
