#include <doctest.h>

#include <cmath>
#include <sstream>

#include "oracle.hpp"
#include "unetlite/analyzer.hpp"
#include "unetlite/bench.hpp"
#include "unetlite/errors.hpp"
#include "unetlite/quant.hpp"

using namespace unetlite;

namespace {

UNetConfig small() {
  UNetConfig c;
  c.blocks = 2;
  c.base_channels = 2;
  c.input_h = c.input_w = 32;
  return c;
}

UNetModel small_model() { return bind_weights(build(small()), random_weights(small(), 3)); }

}  // namespace

TEST_CASE("summarize") {
  const auto one = bench::summarize({4.0});
  CHECK(one.mean_ms == 4.0);
  CHECK(one.p95_ms == 4.0);
  CHECK(one.max_ms == 4.0);
  CHECK(one.std_ms == 0.0);

  std::vector<double> v;
  for (int i = 1; i <= 20; ++i) v.push_back(i);
  const auto s = bench::summarize(v);
  CHECK(s.mean_ms == 10.5);
  CHECK(s.p95_ms == 19.0);  // nearest rank: ceil(0.95 * 20) = 19
  CHECK(s.max_ms == 20.0);
  CHECK(s.std_ms == doctest::Approx(std::sqrt(35.0)));
}

TEST_CASE("energy per image") {
  CHECK(bench::energy_per_image(14.56, 74.6) == doctest::Approx(195.174).epsilon(1e-4));
  CHECK(bench::energy_per_image(5.46, 127.2) == doctest::Approx(42.925).epsilon(1e-4));
  CHECK(bench::energy_per_image(2.51, 46.9) == doctest::Approx(53.518).epsilon(1e-4));
  CHECK(bench::energy_per_image(0.0, 10.0) == 0.0);
  CHECK_THROWS_AS(bench::energy_per_image(1.0, 0.0), Error);
  CHECK_THROWS_AS(bench::energy_per_image(-1.0, 10.0), Error);
}

TEST_CASE("memory estimate") {
  const UNetConfig def{};
  const auto model = build(def);
  const auto m = bench::memory_breakdown(model);
  CHECK(m.weight_bytes == 7764420);
  CHECK(m.weight_bytes == analyzer::count_params(def) * 4);
  CHECK(m.input_bytes == 3 * 256 * 256 * 4);

  // deepest point keeps all four skip tensors alive
  std::uint64_t skips = 0;
  for (int b = 0; b < 4; ++b) skips += def.width(b) * (256u >> b) * (256u >> b) * 4;
  CHECK(m.peak_activation_bytes > skips);

  CHECK(bench::memory_estimate(model, 2) - bench::memory_estimate(model, 1) == m.peak_activation_bytes + m.input_bytes);
}

TEST_CASE("property: peak activation equals the reference liveness walk") {
  for (int blocks = 1; blocks <= 4; ++blocks) {
    for (auto mode : {UpsampleMode::transposed_conv, UpsampleMode::nn_upsample_conv}) {
      UNetConfig c;
      c.blocks = blocks;
      c.base_channels = 2;
      c.input_h = c.input_w = 32;
      c.upsample = mode;
      const auto store = random_weights(c, 1);
      const auto ref = oracle::reference_forward(c, store, oracle::from_tensor(random_tensor({1, 3, 32, 32}, 2)));
      CHECK(bench::peak_activation_bytes(c, 4) == ref.peak_live_elements * 4);
      CHECK(bench::peak_activation_bytes(c, 1) == ref.peak_live_elements);
    }
  }
}

TEST_CASE("run") {
  const auto model = small_model();
  bench::BenchOptions o;
  o.warmup = 1;
  o.iters = 1;
  const auto r = bench::run(model, o);
  CHECK(r.warm.mean_ms == r.warm.p95_ms);
  CHECK(r.warm.p95_ms == r.warm.max_ms);
  CHECK(r.cold_ms > 0.0);
  CHECK(std::fabs(r.fps * r.warm.mean_ms / 1000.0 - 1.0) <= 1e-9);
  CHECK_FALSE(r.energy_mj.has_value());

  o.iters = 0;
  try {
    bench::run(model, o);
    FAIL("iters=0 accepted");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::usage);
  }
}

TEST_CASE("batch sweep") {
  const auto model = small_model();
  bench::BenchOptions o;
  o.warmup = 1;
  o.iters = 3;
  o.power_w = 14.56;
  const auto rows = bench::batch_sweep(model, {1, 8, 16, 32}, o);
  REQUIRE(rows.size() == 4);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    rows[i].check();
    CHECK(rows[i].memory.weight_bytes == rows[0].memory.weight_bytes);
    CHECK(*rows[i].energy_mj == doctest::Approx(14560.0 / rows[i].fps).epsilon(1e-12));
    if (i > 0) CHECK(rows[i].memory_bytes > rows[i - 1].memory_bytes);
  }
  const auto csv = bench::bench_csv(rows);
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  CHECK(line == "batch,cold_ms,mean_ms,std_ms,p95_ms,max_ms,fps,power_w,energy_mj,mem_bytes");
  std::size_t n = 0;
  while (std::getline(in, line)) ++n;
  CHECK(n == 4);

  o.power_w.reset();
  const auto nopower = bench::bench_csv(bench::batch_sweep(model, {1}, o));
  const auto row = nopower.substr(nopower.find('\n') + 1);
  std::vector<std::string> cells;
  std::istringstream cs(row.substr(0, row.size() - 1));
  for (std::string cell; std::getline(cs, cell, ',');) cells.push_back(cell);
  REQUIRE(cells.size() == 10);
  CHECK(cells[7].empty());
  CHECK(cells[8].empty());
  CHECK_FALSE(cells[9].empty());
}

TEST_CASE("per-image latency scales sanely with batch") {
  const auto model = small_model();
  bench::BenchOptions o;
  o.warmup = 2;
  o.iters = 10;
  const auto one = bench::run(model, o);
  o.batch = 2;
  const auto two = bench::run(model, o);
  const double ratio = (two.warm.mean_ms / 2.0) / one.warm.mean_ms;
  CHECK(ratio >= 0.5);
  CHECK(ratio <= 2.0);
}

TEST_CASE("report check catches inconsistencies") {
  const auto model = small_model();
  bench::BenchOptions o;
  o.warmup = 0;
  o.iters = 2;
  o.power_w = 2.0;
  auto r = bench::run(model, o);
  auto bad = r;
  bad.fps *= 1.01;
  CHECK_THROWS_AS(bad.check(), Error);
  bad = r;
  *bad.energy_mj += 1.0;
  CHECK_THROWS_AS(bad.check(), Error);
  bad = r;
  bad.memory_bytes += 1;
  CHECK_THROWS_AS(bad.check(), Error);
}

TEST_CASE("int8 weights shrink the memory estimate") {
  const auto model = small_model();
  const std::vector<Tensor> batches{random_tensor({1, 3, 32, 32}, 4)};
  const auto stats = calibrate(model, batches, QuantScheme::int8());
  const auto q = quantize_model(model, stats, QuantScheme::int8());
  CHECK(bench::memory_breakdown(q).weight_bytes < bench::memory_breakdown(model).weight_bytes);
}
