#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "unetlite/model.hpp"
#include "unetlite/quant.hpp"

namespace unetlite {

/// A model directory holds `config.json` (architecture, plus a `quant` block
/// for quantized exports) and `weights.unw`.
///
///   {"blocks":4,"base_channels":16,"in_channels":3,"out_channels":1,
///    "upsample":"tconv","input_size":[256,256],
///    "quant":{"weight_bits":8,"act_bits":8,"skip_first_layer":true,
///             "calibration":"minmax","percentile":0.999}}
struct ModelDirConfig {
  UNetConfig arch;
  std::optional<QuantScheme> quant;
};

inline constexpr const char* kConfigFile = "config.json";
inline constexpr const char* kWeightsFile = "weights.unw";

/// Throws Error(config) on malformed or out-of-range fields.
ModelDirConfig parse_model_config(const std::string& json_text);
std::string model_config_json(const ModelDirConfig& config);

ModelDirConfig read_model_config(const std::filesystem::path& dir);

/// Writes config.json and weights.unw. `scheme` must be set for quantized models.
void save_model_dir(const std::filesystem::path& dir, const UNetModel& model,
                    const std::optional<QuantScheme>& scheme = std::nullopt);

/// Float model bound from the directory. With `quantized`, the quantized state
/// is restored and a float export raises Error(config). A nonzero `input_size`
/// rebuilds the graph for square inputs of that side instead of the stored one.
UNetModel load_model_dir(const std::filesystem::path& dir, bool quantized = false, std::size_t input_size = 0);

}  // namespace unetlite
