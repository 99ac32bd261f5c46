#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "unetlite/model.hpp"

namespace unetlite {

enum class CalibrationMode { minmax, percentile };

struct LayerOverride {
  int weight_bits = 8;
  int act_bits = 8;
};

/// Post-training quantization recipe. Weights are symmetric per-tensor,
/// activations affine per-tensor.
struct QuantScheme {
  int weight_bits = 8;
  int act_bits = 8;
  bool skip_first_layer = true;
  CalibrationMode calibration = CalibrationMode::minmax;
  double percentile = 0.999;
  std::map<std::string, LayerOverride> overrides;  // keyed by layer name

  void validate() const;

  /// Int8 weights and activations, first conv kept in float.
  static QuantScheme int8();
  /// Binary weights, 4-bit activations on every layer (float emulation).
  static QuantScheme w1a4();
};

struct SiteStats {
  float min = 0.0f;
  float max = 0.0f;
  /// Histogram of |x| over [0, hist_limit], filled in percentile mode only.
  std::vector<std::uint64_t> histogram;
  float hist_limit = 0.0f;
};

struct CalibrationStats {
  std::map<std::string, SiteStats> sites;
};

/// Runs float forwards over every batch and records per-site ranges.
/// Throws Error(usage) for an empty batch list or a quantized model.
CalibrationStats calibrate(const UNetModel& model, std::span<const Tensor> batches, const QuantScheme& scheme);

/// Elementwise min/max union of two minmax calibrations.
CalibrationStats merge(const CalibrationStats& a, const CalibrationStats& b);

/// Range used to derive a site's quantization parameters: the observed range,
/// clipped to the p-quantile of |x| in percentile mode.
std::pair<float, float> effective_range(const SiteStats& stats, const QuantScheme& scheme);

/// True when every layer can run on the integer kernels (all bit-widths >= 2).
bool uses_integer_kernels(const QuantScheme& scheme);

UNetModel quantize_model(const UNetModel& model, const CalibrationStats& stats, const QuantScheme& scheme);

/// Rebuilds the quantized state of a model whose store carries i8 weights and
/// calibration ranges (as written by export_weights on a quantized model).
UNetModel restore_quantized(const UNetModel& bound, const WeightStore& store, const QuantScheme& scheme);

/// Weight + bias bytes: 4 per element for float layers, 1 for quantized ones.
std::uint64_t quantized_size(const UNetModel& model);

}  // namespace unetlite
