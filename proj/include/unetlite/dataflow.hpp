#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "unetlite/model.hpp"

namespace unetlite::dataflow {

// Pipelined dataflow model: every weighted layer is a node that needs
// ceil(MACs / (PE * SIMD)) cycles per image; the slowest node sets the
// initiation interval (II) and steady-state throughput is clock / II.

struct Fold {
  std::uint64_t pe = 1;    // output-channel parallelism, divides out_channels
  std::uint64_t simd = 1;  // input parallelism, divides in_channels * k * k

  bool operator==(const Fold&) const = default;
};

struct FoldingConfig {
  std::map<std::string, Fold> layers;
  std::uint64_t clock_hz = 100'000'000;
};

/// Throws Error(config) when pe/simd do not divide the layer dimensions.
std::uint64_t node_cycles(const LayerSpec& layer, std::uint64_t pe, std::uint64_t simd);

struct NodeReport {
  std::string name;
  std::uint64_t macs = 0;
  Fold fold;
  std::uint64_t cycles = 0;
};

struct DataflowReport {
  std::vector<NodeReport> nodes;
  std::uint64_t ii_cycles = 0;
  std::uint64_t clock_hz = 0;
  std::string bottleneck;
  std::optional<double> power_w;

  double latency_s() const noexcept { return static_cast<double>(ii_cycles) / static_cast<double>(clock_hz); }
  double fps() const noexcept { return static_cast<double>(clock_hz) / static_cast<double>(ii_cycles); }
  /// Throughput as the exact fraction clock_hz / ii_cycles.
  std::pair<std::uint64_t, std::uint64_t> fps_fraction() const noexcept { return {clock_hz, ii_cycles}; }
  std::optional<double> energy_mj() const;
};

/// Report for a known initiation interval (no per-node breakdown).
DataflowReport from_ii(std::uint64_t ii_cycles, std::uint64_t clock_hz, std::optional<double> power_w = {});

/// Every layer must appear in `folding`; uncovered or unknown names raise
/// Error(config) naming the layer.
DataflowReport estimate(const std::vector<LayerSpec>& layers, const FoldingConfig& folding,
                        std::optional<double> power_w = {});
DataflowReport estimate(const UNetModel& model, const FoldingConfig& folding, std::optional<double> power_w = {});

FoldingConfig all_ones(const std::vector<LayerSpec>& layers, std::uint64_t clock_hz);

/// Smallest total parallelism (sum of PE*SIMD) whose II fits the target;
/// ties go to the smaller PE. Throws Error(config) naming the largest
/// infeasible layer when even full unrolling misses the target.
FoldingConfig target_latency_fold(const std::vector<LayerSpec>& layers, std::uint64_t clock_hz,
                                  double target_latency_s);

/// `{"clock_hz": 100000000, "enc0.conv0": {"pe": 4, "simd": 9}, ...}`
FoldingConfig parse_folding_json(const std::string& text);
std::string folding_json(const FoldingConfig& folding);

/// `node,cycles` rows followed by a `summary,...` line.
std::string report_csv(const DataflowReport& report);

}  // namespace unetlite::dataflow
