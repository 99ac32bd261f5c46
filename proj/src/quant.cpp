#include "unetlite/quant.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "unetlite/errors.hpp"
#include "unetlite/storage.hpp"

namespace unetlite {

namespace {

constexpr std::size_t kHistogramBins = 2048;

void check_bits(int bits, const char* what) {
  if (bits < 1 || bits > 8) throw Error(ErrorKind::config, fmt::format("{} must be in [1,8], got {}", what, bits));
}

int weight_bits_for(const QuantScheme& scheme, const std::string& layer) {
  auto it = scheme.overrides.find(layer);
  return it == scheme.overrides.end() ? scheme.weight_bits : it->second.weight_bits;
}

int act_bits_for(const QuantScheme& scheme, const std::string& site) {
  auto it = scheme.overrides.find(site);
  return it == scheme.overrides.end() ? scheme.act_bits : it->second.act_bits;
}

void record_range(SiteStats& s, std::span<const float> values, bool first) {
  auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  if (first) {
    s.min = *lo;
    s.max = *hi;
  } else {
    s.min = std::min(s.min, *lo);
    s.max = std::max(s.max, *hi);
  }
}

}  // namespace

void QuantScheme::validate() const {
  check_bits(weight_bits, "weight bits");
  check_bits(act_bits, "activation bits");
  for (const auto& [name, o] : overrides) {
    check_bits(o.weight_bits, "override weight bits");
    check_bits(o.act_bits, "override activation bits");
  }
  if (calibration == CalibrationMode::percentile && !(percentile > 0.5 && percentile <= 1.0)) {
    throw Error(ErrorKind::config, fmt::format("percentile must be in (0.5, 1], got {}", percentile));
  }
}

QuantScheme QuantScheme::int8() { return QuantScheme{}; }

QuantScheme QuantScheme::w1a4() {
  QuantScheme s;
  s.weight_bits = 1;
  s.act_bits = 4;
  s.skip_first_layer = false;
  return s;
}

bool uses_integer_kernels(const QuantScheme& scheme) {
  if (scheme.weight_bits < 2 || scheme.act_bits < 2) return false;
  return std::all_of(scheme.overrides.begin(), scheme.overrides.end(),
                     [](const auto& kv) { return kv.second.weight_bits >= 2 && kv.second.act_bits >= 2; });
}

CalibrationStats calibrate(const UNetModel& model, std::span<const Tensor> batches, const QuantScheme& scheme) {
  scheme.validate();
  if (batches.empty()) throw Error(ErrorKind::usage, "calibration needs at least one batch");
  if (model.quantized()) throw Error(ErrorKind::usage, "calibration runs on the float model");

  CalibrationStats stats;
  ForwardHooks hooks;
  hooks.observe = [&](const std::string& site, const Tensor& value) {
    auto [it, inserted] = stats.sites.try_emplace(site);
    record_range(it->second, value.f32(), inserted);
  };
  for (const auto& batch : batches) forward(model, batch, hooks);

  if (scheme.calibration == CalibrationMode::percentile) {
    for (auto& [site, s] : stats.sites) {
      s.hist_limit = std::max(std::fabs(s.min), std::fabs(s.max));
      s.histogram.assign(kHistogramBins, 0);
    }
    hooks.observe = [&](const std::string& site, const Tensor& value) {
      auto& s = stats.sites.at(site);
      if (s.hist_limit <= 0.0f) {
        s.histogram[0] += value.size();
        return;
      }
      const double per_bin = static_cast<double>(kHistogramBins) / static_cast<double>(s.hist_limit);
      for (float v : value.f32()) {
        const auto bin = static_cast<std::size_t>(std::fabs(static_cast<double>(v)) * per_bin);
        ++s.histogram[std::min(bin, kHistogramBins - 1)];
      }
    };
    for (const auto& batch : batches) forward(model, batch, hooks);
  }
  return stats;
}

CalibrationStats merge(const CalibrationStats& a, const CalibrationStats& b) {
  CalibrationStats out = a;
  for (const auto& [site, s] : b.sites) {
    auto [it, inserted] = out.sites.try_emplace(site, s);
    if (!inserted) {
      it->second.min = std::min(it->second.min, s.min);
      it->second.max = std::max(it->second.max, s.max);
      it->second.histogram.clear();
      it->second.hist_limit = 0.0f;
    }
  }
  return out;
}

std::pair<float, float> effective_range(const SiteStats& stats, const QuantScheme& scheme) {
  if (stats.min > stats.max) throw Error(ErrorKind::calibration, "calibration range has min > max");
  if (scheme.calibration != CalibrationMode::percentile || stats.histogram.empty() || stats.hist_limit <= 0.0f) {
    return {stats.min, stats.max};
  }
  std::uint64_t total = 0;
  for (auto c : stats.histogram) total += c;
  const double target = scheme.percentile * static_cast<double>(total);
  std::uint64_t running = 0;
  std::size_t bin = 0;
  for (; bin < stats.histogram.size(); ++bin) {
    running += stats.histogram[bin];
    if (static_cast<double>(running) >= target) break;
  }
  const double clip = static_cast<double>(stats.hist_limit) * static_cast<double>(bin + 1) /
                      static_cast<double>(stats.histogram.size());
  const float c = static_cast<float>(clip);
  return {std::max(stats.min, -c), std::min(stats.max, c)};
}

namespace {

ModelQuant quant_skeleton(const UNetModel& model, const QuantScheme& scheme) {
  ModelQuant q;
  q.exec = uses_integer_kernels(scheme) ? QuantExec::integer : QuantExec::emulated;
  q.weight_bits = scheme.weight_bits;
  q.act_bits = scheme.act_bits;
  q.skip_first_layer = scheme.skip_first_layer;
  q.layers.resize(model.layers().size());
  if (scheme.skip_first_layer && !q.layers.empty()) q.layers.front().keep_float = true;
  return q;
}

void assign_site_params(ModelQuant& q, const UNetModel& model, const QuantScheme& scheme) {
  for (const auto& site : activation_sites(model.config())) {
    if (site == "output") continue;
    if (site == "input" && q.layers.front().keep_float) continue;
    auto it = q.calibration.find(site);
    if (it == q.calibration.end()) {
      throw Error(ErrorKind::calibration, fmt::format("calibration stats are missing site '{}'", site));
    }
    q.sites[site] = QuantParams::affine_for(it->second.first, it->second.second, act_bits_for(scheme, site));
  }
}

}  // namespace

UNetModel quantize_model(const UNetModel& model, const CalibrationStats& stats, const QuantScheme& scheme) {
  scheme.validate();
  if (!model.bound()) throw Error(ErrorKind::binding, "cannot quantize a model without weights");
  if (model.quantized()) throw Error(ErrorKind::usage, "model is already quantized");

  ModelQuant q = quant_skeleton(model, scheme);
  for (const auto& site : activation_sites(model.config())) {
    if (site == "output") continue;
    if (site == "input" && q.layers.front().keep_float) continue;
    auto it = stats.sites.find(site);
    if (it == stats.sites.end()) {
      throw Error(ErrorKind::calibration, fmt::format("calibration stats are missing site '{}'", site));
    }
    q.calibration[site] = effective_range(it->second, scheme);
  }
  assign_site_params(q, model, scheme);

  std::vector<Layer> layers = model.layers();
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (q.layers[i].keep_float) continue;
    auto& layer = layers[i];
    const int bits = weight_bits_for(scheme, layer.spec.name);
    const auto w = layer.weight.f32();
    float max_abs = 0.0f;
    for (float v : w) max_abs = std::max(max_abs, std::fabs(v));
    q.layers[i].weight_q = quantize(layer.weight, QuantParams::symmetric_for(max_abs, bits));
    layer.weight = dequantize(q.layers[i].weight_q);
  }
  return UNetModel(model.config(), std::move(layers), true).with_quant(std::move(q));
}

UNetModel restore_quantized(const UNetModel& bound, const WeightStore& store, const QuantScheme& scheme) {
  scheme.validate();
  if (!bound.bound()) throw Error(ErrorKind::binding, "restore_quantized needs a bound model");
  ModelQuant q = quant_skeleton(bound, scheme);
  q.calibration = store.calibration;
  for (std::size_t i = 0; i < bound.layers().size(); ++i) {
    const auto& spec = bound.layers()[i].spec;
    const Tensor* w = store.find(spec.weight_name());
    const bool is_codes = w && w->dtype() == DType::i8;
    if (q.layers[i].keep_float != !is_codes) {
      throw Error(ErrorKind::binding, fmt::format("'{}' is {} but the scheme expects it {}", spec.weight_name(),
                                                  is_codes ? "quantized" : "float",
                                                  q.layers[i].keep_float ? "float" : "quantized"));
    }
    if (is_codes) q.layers[i].weight_q = *w;
  }
  assign_site_params(q, bound, scheme);
  return bound.with_quant(std::move(q));
}

std::uint64_t quantized_size(const UNetModel& model) {
  std::uint64_t bytes = 0;
  const auto& q = model.quant();
  for (std::size_t i = 0; i < model.layers().size(); ++i) {
    const bool int_layer = q && !q->layers[i].keep_float;
    bytes += model.layers()[i].spec.params() * (int_layer ? 1u : 4u);
  }
  return bytes;
}

}  // namespace unetlite
