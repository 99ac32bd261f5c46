#include "unetlite/model_dir.hpp"

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "unetlite/errors.hpp"
#include "unetlite/storage.hpp"

namespace unetlite {

namespace {

using nlohmann::json;

const char* to_string(CalibrationMode mode) { return mode == CalibrationMode::minmax ? "minmax" : "percentile"; }

CalibrationMode parse_calibration(const std::string& text) {
  if (text == "minmax") return CalibrationMode::minmax;
  if (text == "percentile") return CalibrationMode::percentile;
  throw Error(ErrorKind::config, fmt::format("unknown calibration mode '{}'", text));
}

QuantScheme parse_scheme(const json& j) {
  QuantScheme s;
  s.weight_bits = j.value("weight_bits", s.weight_bits);
  s.act_bits = j.value("act_bits", s.act_bits);
  s.skip_first_layer = j.value("skip_first_layer", s.skip_first_layer);
  s.calibration = parse_calibration(j.value("calibration", std::string("minmax")));
  s.percentile = j.value("percentile", s.percentile);
  if (j.contains("overrides")) {
    for (const auto& [name, o] : j.at("overrides").items()) {
      s.overrides[name] = LayerOverride{o.at("weight_bits").get<int>(), o.at("act_bits").get<int>()};
    }
  }
  s.validate();
  return s;
}

}  // namespace

ModelDirConfig parse_model_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::config, fmt::format("config is not valid JSON: {}", e.what()));
  }
  if (!j.is_object()) throw Error(ErrorKind::config, "config must be a JSON object");
  ModelDirConfig out;
  try {
    auto& a = out.arch;
    a.blocks = j.value("blocks", a.blocks);
    a.base_channels = j.value("base_channels", a.base_channels);
    a.in_channels = j.value("in_channels", a.in_channels);
    a.out_channels = j.value("out_channels", a.out_channels);
    if (j.contains("upsample")) a.upsample = parse_upsample_mode(j.at("upsample").get<std::string>());
    if (j.contains("input_size")) {
      const auto& size = j.at("input_size");
      if (!size.is_array() || size.size() != 2) throw Error(ErrorKind::config, "input_size must be [H, W]");
      a.input_h = size[0].get<std::size_t>();
      a.input_w = size[1].get<std::size_t>();
    }
    if (j.contains("quant") && !j.at("quant").is_null()) out.quant = parse_scheme(j.at("quant"));
  } catch (const json::exception& e) {
    throw Error(ErrorKind::config, fmt::format("malformed config field: {}", e.what()));
  }
  out.arch.validate();
  return out;
}

std::string model_config_json(const ModelDirConfig& config) {
  const auto& a = config.arch;
  nlohmann::ordered_json j;
  j["blocks"] = a.blocks;
  j["base_channels"] = a.base_channels;
  j["in_channels"] = a.in_channels;
  j["out_channels"] = a.out_channels;
  j["upsample"] = to_string(a.upsample);
  j["input_size"] = {a.input_h, a.input_w};
  if (config.quant) {
    const auto& s = *config.quant;
    nlohmann::ordered_json q;
    q["weight_bits"] = s.weight_bits;
    q["act_bits"] = s.act_bits;
    q["skip_first_layer"] = s.skip_first_layer;
    q["calibration"] = to_string(s.calibration);
    q["percentile"] = s.percentile;
    if (!s.overrides.empty()) {
      nlohmann::ordered_json o;
      for (const auto& [name, ov] : s.overrides) o[name] = {{"weight_bits", ov.weight_bits}, {"act_bits", ov.act_bits}};
      q["overrides"] = o;
    }
    j["quant"] = q;
  }
  return j.dump(2) + "\n";
}

ModelDirConfig read_model_config(const std::filesystem::path& dir) {
  const auto bytes = read_file_bytes(dir / kConfigFile);
  return parse_model_config(std::string(bytes.begin(), bytes.end()));
}

void save_model_dir(const std::filesystem::path& dir, const UNetModel& model,
                    const std::optional<QuantScheme>& scheme) {
  if (model.quantized() && !scheme) throw Error(ErrorKind::usage, "saving a quantized model needs its scheme");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::io, fmt::format("cannot create '{}': {}", dir.string(), ec.message()));
  ModelDirConfig cfg{model.config(), model.quantized() ? scheme : std::nullopt};
  const auto text = model_config_json(cfg);
  write_file_bytes(dir / kConfigFile, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
  write_store(dir / kWeightsFile, export_weights(model));
}

UNetModel load_model_dir(const std::filesystem::path& dir, bool quantized, std::size_t input_size) {
  auto cfg = read_model_config(dir);
  if (input_size != 0) {
    cfg.arch.input_h = cfg.arch.input_w = input_size;
    cfg.arch.validate();
  }
  const auto store = read_store(dir / kWeightsFile);
  auto model = bind_weights(build(cfg.arch), store);
  if (!quantized) return model;
  if (!cfg.quant) {
    throw Error(ErrorKind::config, fmt::format("'{}' holds a float model; run quantize first", dir.string()));
  }
  return restore_quantized(model, store, *cfg.quant);
}

}  // namespace unetlite
