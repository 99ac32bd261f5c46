#include "unetlite/tiling.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <thread>

#include <fmt/format.h>

#include "unetlite/errors.hpp"

namespace unetlite {

namespace {

std::vector<std::size_t> axis_origins(std::size_t dim, std::size_t tile, std::size_t stride) {
  std::vector<std::size_t> origins;
  const std::size_t last = dim - tile;
  for (std::size_t o = 0; o < last; o += stride) origins.push_back(o);
  origins.push_back(last);
  return origins;
}

}  // namespace

TileOrigin TileGrid::origin(std::size_t index) const {
  if (index >= count()) throw Error(ErrorKind::usage, fmt::format("tile index {} out of range", index));
  return {origins_y[index / origins_x.size()], origins_x[index % origins_x.size()]};
}

std::vector<TileOrigin> TileGrid::tiles() const {
  std::vector<TileOrigin> out;
  out.reserve(count());
  for (auto y : origins_y) {
    for (auto x : origins_x) out.push_back({y, x});
  }
  return out;
}

TileGrid plan(std::size_t height, std::size_t width, std::size_t tile, std::size_t stride) {
  if (tile == 0 || tile > std::min(height, width)) {
    throw Error(ErrorKind::usage, fmt::format("tile size {} does not fit a {}x{} image", tile, height, width));
  }
  if (stride == 0 || stride > tile) {
    throw Error(ErrorKind::usage, fmt::format("stride must be in [1, {}], got {}", tile, stride));
  }
  TileGrid g;
  g.height = height;
  g.width = width;
  g.tile = tile;
  g.stride = stride;
  g.origins_y = axis_origins(height, tile, stride);
  g.origins_x = axis_origins(width, tile, stride);
  return g;
}

StitchAccumulator::StitchAccumulator(TileGrid grid) : grid_(std::move(grid)), maps_(grid_.count()) {}

void StitchAccumulator::add(std::size_t tile_index, std::vector<float> map) {
  if (map.size() != grid_.tile * grid_.tile) {
    throw Error(ErrorKind::shape, fmt::format("tile map has {} values, expected {}", map.size(), grid_.tile * grid_.tile));
  }
  std::lock_guard lock(mutex_);
  if (tile_index >= maps_.size()) throw Error(ErrorKind::usage, fmt::format("tile index {} out of range", tile_index));
  maps_[tile_index] = std::move(map);
}

Raster StitchAccumulator::finish() const {
  std::lock_guard lock(mutex_);
  const std::size_t t = grid_.tile;
  std::vector<double> sum(grid_.height * grid_.width, 0.0);
  std::vector<std::uint32_t> count(sum.size(), 0);
  for (std::size_t i = 0; i < maps_.size(); ++i) {
    if (!maps_[i]) throw Error(ErrorKind::integrity, fmt::format("stitch is missing tile {}", i));
    const auto o = grid_.origin(i);
    const auto& map = *maps_[i];
    for (std::size_t y = 0; y < t; ++y) {
      const std::size_t row = (o.y + y) * grid_.width + o.x;
      for (std::size_t x = 0; x < t; ++x) {
        sum[row + x] += static_cast<double>(map[y * t + x]);
        ++count[row + x];
      }
    }
  }
  Raster out{grid_.height, grid_.width, std::vector<float>(sum.size())};
  for (std::size_t i = 0; i < sum.size(); ++i) out.values[i] = static_cast<float>(sum[i] / count[i]);
  return out;
}

Raster stitch(const TileGrid& grid, std::span<const std::vector<float>> tile_maps) {
  if (tile_maps.size() != grid.count()) {
    throw Error(ErrorKind::integrity, fmt::format("stitch got {} tiles for a {}-tile grid", tile_maps.size(), grid.count()));
  }
  StitchAccumulator acc(grid);
  for (std::size_t i = 0; i < tile_maps.size(); ++i) acc.add(i, tile_maps[i]);
  return acc.finish();
}

Tensor crop_tile(const Tensor& image, const TileGrid& grid, std::size_t tile_index) {
  if (image.rank() != 4 || image.dim(0) != 1 || image.dim(2) != grid.height || image.dim(3) != grid.width) {
    throw Error(ErrorKind::shape, fmt::format("image {} does not match the {}x{} tile grid", shape_string(image.shape()),
                                              grid.height, grid.width));
  }
  const auto o = grid.origin(tile_index);
  const std::size_t c = image.dim(1), t = grid.tile;
  const auto src = image.f32();
  std::vector<float> out(c * t * t);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < t; ++y) {
      const float* row = src.data() + (ch * grid.height + o.y + y) * grid.width + o.x;
      std::copy_n(row, t, out.data() + (ch * t + y) * t);
    }
  }
  return Tensor({1, c, t, t}, std::move(out));
}

std::vector<std::vector<float>> cut_tiles(const Raster& raster, const TileGrid& grid) {
  std::vector<std::vector<float>> out;
  const std::size_t t = grid.tile;
  for (const auto& o : grid.tiles()) {
    std::vector<float> map(t * t);
    for (std::size_t y = 0; y < t; ++y) {
      std::copy_n(raster.values.data() + (o.y + y) * raster.width + o.x, t, map.data() + y * t);
    }
    out.push_back(std::move(map));
  }
  return out;
}

Raster predict_image(const UNetModel& model, const Tensor& image, const TileGrid& grid, unsigned workers) {
  const auto& cfg = model.config();
  if (cfg.out_channels != 1) throw Error(ErrorKind::config, "tiled inference needs a single-channel model");
  if (grid.tile != cfg.input_h || grid.tile != cfg.input_w) {
    throw Error(ErrorKind::config, fmt::format("tile size {} differs from the model input {}x{}", grid.tile,
                                               cfg.input_h, cfg.input_w));
  }
  StitchAccumulator acc(grid);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto work = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= grid.count()) return;
      try {
        const Tensor probs = forward(model, crop_tile(image, grid, i));
        acc.add(i, std::vector<float>(probs.f32().begin(), probs.f32().end()));
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
        next = grid.count();
        return;
      }
    }
  };
  workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(grid.count())));
  if (workers == 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work);
  }
  if (failure) std::rethrow_exception(failure);
  return acc.finish();
}

Mask threshold_raster(const Raster& probs, float threshold) {
  Mask m(probs.height, probs.width);
  std::transform(probs.values.begin(), probs.values.end(), m.values.begin(),
                 [threshold](float p) { return static_cast<std::uint8_t>(p >= threshold ? 1 : 0); });
  return m;
}

Mask segment_image(const UNetModel& model, const Tensor& image, const TileGrid& grid, float threshold,
                   unsigned workers) {
  return threshold_raster(predict_image(model, image, grid, workers), threshold);
}

}  // namespace unetlite
