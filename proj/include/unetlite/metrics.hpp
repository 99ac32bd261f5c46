#pragma once

#include <cstdint>
#include <span>
#include <string>

#include "unetlite/storage.hpp"

namespace unetlite::metrics {

/// Pixel confusion counts for the building (= 1) class.
struct Confusion {
  std::uint64_t tp = 0;
  std::uint64_t fp = 0;
  std::uint64_t fn = 0;
  std::uint64_t tn = 0;

  std::uint64_t total() const noexcept { return tp + fp + fn + tn; }
  Confusion& operator+=(const Confusion& other) noexcept;
  friend Confusion operator+(Confusion a, const Confusion& b) noexcept { return a += b; }
  bool operator==(const Confusion&) const = default;
};

/// Accumulates pred vs. ground truth. Throws Error(shape) on size mismatch and
/// Error(usage) on values other than 0/1.
Confusion update(Confusion conf, const Mask& pred, const Mask& gt);

/// tp / (tp + fp + fn); Error(undefined_metric) when the denominator is zero.
double iou(const Confusion& conf);
/// (tp + tn) / total; Error(undefined_metric) when total is zero.
double accuracy(const Confusion& conf);

/// Mean binary cross-entropy with p clamped to [1e-7, 1 - 1e-7].
double bce(std::span<const float> probs, std::span<const std::uint8_t> gt);

/// `images,tp,fp,fn,tn,iou,accuracy` header plus one dataset-level row.
std::string eval_csv(std::size_t images, const Confusion& conf);

}  // namespace unetlite::metrics
