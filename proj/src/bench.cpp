#include "unetlite/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "unetlite/errors.hpp"
#include "unetlite/quant.hpp"

namespace unetlite::bench {

LatencyStats summarize(std::vector<double> samples_ms) {
  LatencyStats s;
  s.samples = samples_ms.size();
  if (samples_ms.empty()) return s;
  std::sort(samples_ms.begin(), samples_ms.end());
  const double n = static_cast<double>(samples_ms.size());
  s.mean_ms = std::accumulate(samples_ms.begin(), samples_ms.end(), 0.0) / n;
  if (samples_ms.size() > 1) {
    double sq = 0.0;
    for (double v : samples_ms) sq += (v - s.mean_ms) * (v - s.mean_ms);
    s.std_ms = std::sqrt(sq / (n - 1.0));
  }
  const auto rank = static_cast<std::size_t>(std::ceil(0.95 * n));
  s.p95_ms = samples_ms[std::max<std::size_t>(rank, 1) - 1];
  s.max_ms = samples_ms.back();
  return s;
}

namespace {

struct LiveTensor {
  std::uint64_t bytes = 0;
  std::size_t last_use = 0;
};

/// Replays the forward schedule, tracking tensor lifetimes.
class LivenessWalk {
 public:
  explicit LivenessWalk(std::size_t bytes_per_element) : elem_(bytes_per_element) {}

  std::size_t produce(std::size_t c, std::size_t h, std::size_t w, std::vector<std::size_t> inputs) {
    const std::size_t id = tensors_.size();
    tensors_.push_back({c * h * w * elem_, 0});
    ops_.push_back({id, std::move(inputs)});
    return id;
  }

  std::uint64_t peak() {
    for (std::size_t k = 0; k < ops_.size(); ++k) {
      for (auto in : ops_[k].inputs) tensors_[in].last_use = std::max(tensors_[in].last_use, k);
    }
    std::uint64_t best = 0;
    for (std::size_t k = 0; k < ops_.size(); ++k) {
      std::uint64_t live = 0;
      // Tensor i is produced by op i; it is live from op i until its last use.
      for (std::size_t i = 0; i <= k; ++i) {
        if (i == k || tensors_[i].last_use >= k) live += tensors_[i].bytes;
      }
      best = std::max(best, live);
    }
    return best;
  }

 private:
  struct Op {
    std::size_t output;
    std::vector<std::size_t> inputs;
  };
  std::size_t elem_;
  std::vector<LiveTensor> tensors_;
  std::vector<Op> ops_;
};

constexpr std::size_t kNetworkInput = static_cast<std::size_t>(-1);

}  // namespace

std::uint64_t peak_activation_bytes(const UNetConfig& config, std::size_t bytes_per_element) {
  LivenessWalk walk(bytes_per_element);
  const auto plan = layer_plan(config);
  std::vector<std::size_t> skips;
  std::size_t cur = kNetworkInput;
  auto inputs_of = [](std::size_t id) {
    return id == kNetworkInput ? std::vector<std::size_t>{} : std::vector<std::size_t>{id};
  };
  for (const auto& l : plan) {
    if (l.kind == LayerKind::up) {
      if (config.upsample == UpsampleMode::nn_upsample_conv) {
        cur = walk.produce(l.in_channels, l.out_h, l.out_w, inputs_of(cur));
      }
      const std::size_t up = walk.produce(l.out_channels, l.out_h, l.out_w, inputs_of(cur));
      cur = walk.produce(2 * l.out_channels, l.out_h, l.out_w, {up, skips.back()});
      skips.pop_back();
      continue;
    }
    cur = walk.produce(l.out_channels, l.out_h, l.out_w, inputs_of(cur));
    if (l.path == PathKind::encoder && l.name.ends_with("conv1")) {
      skips.push_back(cur);
      cur = walk.produce(l.out_channels, l.out_h / 2, l.out_w / 2, {cur});
    }
  }
  walk.produce(config.out_channels, config.input_h, config.input_w, {cur});  // sigmoid
  return walk.peak();
}

MemoryEstimate memory_breakdown(const UNetModel& model) {
  const auto& cfg = model.config();
  const bool integer = model.quant() && model.quant()->exec == QuantExec::integer;
  MemoryEstimate m;
  m.weight_bytes = quantized_size(model);
  m.peak_activation_bytes = peak_activation_bytes(cfg, integer ? 1 : 4);
  m.input_bytes = static_cast<std::uint64_t>(cfg.in_channels) * cfg.input_h * cfg.input_w * 4;
  return m;
}

std::uint64_t memory_estimate(const UNetModel& model, std::size_t batch) {
  return memory_breakdown(model).total(batch);
}

double energy_per_image(double power_w, double fps) {
  if (!(fps > 0.0)) throw Error(ErrorKind::usage, fmt::format("fps must be positive, got {}", fps));
  if (power_w < 0.0) throw Error(ErrorKind::usage, fmt::format("power must be non-negative, got {}", power_w));
  return 1000.0 * power_w / fps;
}

void BenchReport::check() const {
  auto close = [](double a, double b) { return std::fabs(a - b) <= 1e-9 * std::max({1.0, std::fabs(a), std::fabs(b)}); };
  if (!(fps > 0.0)) throw Error(ErrorKind::numeric, "bench report: fps must be positive");
  if (!close(fps * warm.mean_ms / 1000.0, static_cast<double>(batch_size))) {
    throw Error(ErrorKind::numeric, "bench report: fps * mean latency != batch size");
  }
  if (!(warm.max_ms >= warm.p95_ms && (warm.max_ms >= warm.mean_ms || close(warm.max_ms, warm.mean_ms)) &&
        warm.mean_ms >= 0.0)) {
    throw Error(ErrorKind::numeric, "bench report: latency statistics are not ordered");
  }
  if (power_w.has_value() != energy_mj.has_value()) {
    throw Error(ErrorKind::numeric, "bench report: energy requires power");
  }
  if (power_w && !close(*energy_mj, 1000.0 * *power_w / fps)) {
    throw Error(ErrorKind::numeric, "bench report: energy != power / fps");
  }
  if (memory_bytes != memory.total(batch_size)) throw Error(ErrorKind::numeric, "bench report: memory mismatch");
}

namespace {

double time_forward_ms(const UNetModel& model, const Tensor& x) {
  const auto start = std::chrono::steady_clock::now();
  const Tensor out = forward(model, x);
  const auto stop = std::chrono::steady_clock::now();
  (void)out;
  return std::chrono::duration<double, std::milli>(stop - start).count();
}

}  // namespace

BenchReport run(const UNetModel& model, const BenchOptions& options) {
  if (options.iters == 0) throw Error(ErrorKind::usage, "bench needs at least one timed iteration");
  if (options.batch == 0) throw Error(ErrorKind::usage, "batch size must be positive");
  const auto& cfg = model.config();
  const Tensor x = random_tensor({options.batch, cfg.in_channels, cfg.input_h, cfg.input_w}, options.seed);

  BenchReport r;
  r.batch_size = options.batch;
  r.warmup = options.warmup;
  {
    const UNetModel fresh = model;
    r.cold_ms = time_forward_ms(fresh, x);
  }
  for (std::size_t i = 0; i < options.warmup; ++i) time_forward_ms(model, x);
  std::vector<double> samples;
  samples.reserve(options.iters);
  for (std::size_t i = 0; i < options.iters; ++i) samples.push_back(time_forward_ms(model, x));
  r.warm = summarize(std::move(samples));
  r.fps = static_cast<double>(options.batch) / (r.warm.mean_ms / 1000.0);
  if (options.power_w) {
    r.power_w = options.power_w;
    r.energy_mj = energy_per_image(*options.power_w, r.fps);
  }
  r.memory = memory_breakdown(model);
  r.memory_bytes = r.memory.total(options.batch);
  r.check();
  return r;
}

std::vector<BenchReport> batch_sweep(const UNetModel& model, const std::vector<std::size_t>& batches,
                                     const BenchOptions& options) {
  std::vector<BenchReport> out;
  for (auto b : batches) {
    BenchOptions o = options;
    o.batch = b;
    out.push_back(run(model, o));
  }
  return out;
}

std::string bench_csv(const std::vector<BenchReport>& reports) {
  std::string out = "batch,cold_ms,mean_ms,std_ms,p95_ms,max_ms,fps,power_w,energy_mj,mem_bytes\n";
  for (const auto& r : reports) {
    r.check();
    out += fmt::format("{},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f},{:.6f},{},{},{}\n", r.batch_size, r.cold_ms,
                       r.warm.mean_ms, r.warm.std_ms, r.warm.p95_ms, r.warm.max_ms, r.fps,
                       r.power_w ? fmt::format("{:.6f}", *r.power_w) : std::string(),
                       r.energy_mj ? fmt::format("{:.6f}", *r.energy_mj) : std::string(), r.memory_bytes);
  }
  return out;
}

}  // namespace unetlite::bench
