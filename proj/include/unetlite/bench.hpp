#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "unetlite/model.hpp"

namespace unetlite::bench {

struct LatencyStats {
  std::size_t samples = 0;
  double mean_ms = 0.0;
  double std_ms = 0.0;  // sample standard deviation, 0 for a single sample
  double p95_ms = 0.0;  // nearest-rank percentile
  double max_ms = 0.0;
};

LatencyStats summarize(std::vector<double> samples_ms);

/// Model-based memory estimate, in bytes.
struct MemoryEstimate {
  std::uint64_t weight_bytes = 0;
  std::uint64_t peak_activation_bytes = 0;  // one image
  std::uint64_t input_bytes = 0;            // one image

  std::uint64_t total(std::size_t batch) const noexcept {
    return weight_bytes + batch * (peak_activation_bytes + input_bytes);
  }
};

/// Largest sum of simultaneously live intermediate tensors over the
/// topological execution order, skip tensors included. The network input is
/// excluded (it is counted separately).
std::uint64_t peak_activation_bytes(const UNetConfig& config, std::size_t bytes_per_element);

MemoryEstimate memory_breakdown(const UNetModel& model);
std::uint64_t memory_estimate(const UNetModel& model, std::size_t batch);

/// 1000 * power / fps. Throws Error(usage) for fps <= 0 or negative power.
double energy_per_image(double power_w, double fps);

struct BenchOptions {
  std::size_t batch = 1;
  std::size_t warmup = 5;
  std::size_t iters = 50;
  std::optional<double> power_w;
  std::uint64_t seed = 42;
};

struct BenchReport {
  std::size_t batch_size = 1;
  std::size_t warmup = 0;
  double cold_ms = 0.0;  // first forward on a fresh copy, excluded from `warm`
  LatencyStats warm;
  double fps = 0.0;  // batch / mean warm latency
  std::optional<double> power_w;
  std::optional<double> energy_mj;  // per image
  MemoryEstimate memory;
  std::uint64_t memory_bytes = 0;

  /// Throws Error(numeric) if the report's arithmetic is inconsistent.
  void check() const;
};

BenchReport run(const UNetModel& model, const BenchOptions& options);

std::vector<BenchReport> batch_sweep(const UNetModel& model, const std::vector<std::size_t>& batches,
                                     const BenchOptions& options);

/// `batch,cold_ms,mean_ms,std_ms,p95_ms,max_ms,fps,power_w,energy_mj,mem_bytes`.
/// Power and energy cells are empty when no power was supplied.
std::string bench_csv(const std::vector<BenchReport>& reports);

}  // namespace unetlite::bench
