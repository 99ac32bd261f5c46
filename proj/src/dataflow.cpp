#include "unetlite/dataflow.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "unetlite/errors.hpp"

namespace unetlite::dataflow {

namespace {

std::uint64_t simd_extent(const LayerSpec& layer) {
  return static_cast<std::uint64_t>(layer.in_channels) * layer.kernel * layer.kernel;
}

std::vector<std::uint64_t> divisors(std::uint64_t n) {
  std::vector<std::uint64_t> out;
  for (std::uint64_t d = 1; d * d <= n; ++d) {
    if (n % d == 0) {
      out.push_back(d);
      if (d != n / d) out.push_back(n / d);
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::uint64_t ceil_div(std::uint64_t a, std::uint64_t b) { return (a + b - 1) / b; }

}  // namespace

std::uint64_t node_cycles(const LayerSpec& layer, std::uint64_t pe, std::uint64_t simd) {
  if (pe == 0 || layer.out_channels % pe != 0) {
    throw Error(ErrorKind::config,
                fmt::format("{}: pe {} does not divide {} output channels", layer.name, pe, layer.out_channels));
  }
  if (simd == 0 || simd_extent(layer) % simd != 0) {
    throw Error(ErrorKind::config, fmt::format("{}: simd {} does not divide in_channels*k*k = {}", layer.name, simd,
                                               simd_extent(layer)));
  }
  return ceil_div(layer.macs(), pe * simd);
}

std::optional<double> DataflowReport::energy_mj() const {
  if (!power_w) return std::nullopt;
  return 1000.0 * *power_w * latency_s();
}

DataflowReport from_ii(std::uint64_t ii_cycles, std::uint64_t clock_hz, std::optional<double> power_w) {
  if (ii_cycles == 0 || clock_hz == 0) throw Error(ErrorKind::config, "II and clock must be positive");
  DataflowReport r;
  r.ii_cycles = ii_cycles;
  r.clock_hz = clock_hz;
  r.power_w = power_w;
  return r;
}

DataflowReport estimate(const std::vector<LayerSpec>& layers, const FoldingConfig& folding,
                        std::optional<double> power_w) {
  if (folding.clock_hz == 0) throw Error(ErrorKind::config, "clock_hz must be positive");
  if (layers.empty()) throw Error(ErrorKind::config, "dataflow graph has no nodes");
  std::set<std::string> known;
  DataflowReport r;
  r.clock_hz = folding.clock_hz;
  r.power_w = power_w;
  for (const auto& layer : layers) {
    known.insert(layer.name);
    auto it = folding.layers.find(layer.name);
    if (it == folding.layers.end()) {
      throw Error(ErrorKind::config, fmt::format("folding does not cover layer '{}'", layer.name));
    }
    NodeReport node{layer.name, layer.macs(), it->second, node_cycles(layer, it->second.pe, it->second.simd)};
    if (node.cycles > r.ii_cycles) {
      r.ii_cycles = node.cycles;
      r.bottleneck = node.name;
    }
    r.nodes.push_back(std::move(node));
  }
  for (const auto& [name, fold] : folding.layers) {
    if (!known.count(name)) throw Error(ErrorKind::config, fmt::format("folding names unknown layer '{}'", name));
  }
  return r;
}

DataflowReport estimate(const UNetModel& model, const FoldingConfig& folding, std::optional<double> power_w) {
  std::vector<LayerSpec> layers;
  for (const auto& l : model.layers()) layers.push_back(l.spec);
  return estimate(layers, folding, power_w);
}

FoldingConfig all_ones(const std::vector<LayerSpec>& layers, std::uint64_t clock_hz) {
  FoldingConfig f;
  f.clock_hz = clock_hz;
  for (const auto& l : layers) f.layers[l.name] = Fold{};
  return f;
}

FoldingConfig target_latency_fold(const std::vector<LayerSpec>& layers, std::uint64_t clock_hz,
                                  double target_latency_s) {
  if (clock_hz == 0) throw Error(ErrorKind::config, "clock_hz must be positive");
  if (!(target_latency_s > 0.0) || !std::isfinite(target_latency_s)) {
    throw Error(ErrorKind::config, fmt::format("target latency must be positive, got {}", target_latency_s));
  }
  // Small relative slack so that e.g. 7.87 ms at 100 MHz yields 787000 cycles.
  const double raw = target_latency_s * static_cast<double>(clock_hz);
  const auto target = static_cast<std::uint64_t>(std::floor(raw * (1.0 + 1e-12)));

  FoldingConfig folding;
  folding.clock_hz = clock_hz;
  const LayerSpec* worst = nullptr;
  for (const auto& layer : layers) {
    const auto macs = layer.macs();
    std::optional<Fold> best;
    std::uint64_t best_par = 0;
    for (auto pe : divisors(layer.out_channels)) {
      for (auto simd : divisors(simd_extent(layer))) {
        const auto par = pe * simd;
        if (ceil_div(macs, par) > target) continue;
        if (!best || par < best_par || (par == best_par && pe < best->pe)) {
          best = Fold{pe, simd};
          best_par = par;
        }
        break;  // larger simd only increases parallelism for this pe
      }
    }
    if (!best) {
      if (!worst || macs > worst->macs()) worst = &layer;
      continue;
    }
    folding.layers[layer.name] = *best;
  }
  if (worst) {
    throw Error(ErrorKind::config,
                fmt::format("target latency {} s ({} cycles) is infeasible; bottleneck layer '{}' needs at least {} "
                            "cycles fully unrolled",
                            target_latency_s, target, worst->name,
                            ceil_div(worst->macs(), worst->out_channels * simd_extent(*worst))));
  }
  return folding;
}

FoldingConfig parse_folding_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::config, fmt::format("folding file is not valid JSON: {}", e.what()));
  }
  if (!j.is_object()) throw Error(ErrorKind::config, "folding file must be a JSON object");
  FoldingConfig f;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "clock_hz") {
        f.clock_hz = value.get<std::uint64_t>();
        continue;
      }
      f.layers[key] = Fold{value.at("pe").get<std::uint64_t>(), value.at("simd").get<std::uint64_t>()};
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::config, fmt::format("malformed folding entry: {}", e.what()));
  }
  return f;
}

std::string folding_json(const FoldingConfig& folding) {
  nlohmann::ordered_json j;
  j["clock_hz"] = folding.clock_hz;
  for (const auto& [name, fold] : folding.layers) j[name] = {{"pe", fold.pe}, {"simd", fold.simd}};
  return j.dump(2) + "\n";
}

std::string report_csv(const DataflowReport& report) {
  std::string out = "node,cycles\n";
  for (const auto& n : report.nodes) out += fmt::format("{},{}\n", n.name, n.cycles);
  out += fmt::format("summary,ii_cycles={},clock_hz={},latency_ms={:.6f},fps={:.6f}", report.ii_cycles,
                     report.clock_hz, report.latency_s() * 1000.0, report.fps());
  if (auto e = report.energy_mj()) out += fmt::format(",power_w={:.6f},energy_mj={:.6f}", *report.power_w, *e);
  if (!report.bottleneck.empty()) out += fmt::format(",bottleneck={}", report.bottleneck);
  out += "\n";
  return out;
}

}  // namespace unetlite::dataflow
