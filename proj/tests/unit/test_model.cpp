#include <doctest.h>

#include <string>

#include "gen.hpp"
#include "oracle.hpp"
#include "unetlite/analyzer.hpp"
#include "unetlite/errors.hpp"
#include "unetlite/model.hpp"
#include "unetlite/storage.hpp"

using namespace unetlite;

namespace {

UNetConfig small(int blocks, std::size_t base, std::size_t hw, UpsampleMode mode = UpsampleMode::transposed_conv) {
  UNetConfig c;
  c.blocks = blocks;
  c.base_channels = base;
  c.input_h = hw;
  c.input_w = hw;
  c.upsample = mode;
  return c;
}

Error caught(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e;
  }
  FAIL("expected an Error");
  return Error(ErrorKind::usage, "");
}

WeightStore without(const WeightStore& s, const std::string& name) {
  WeightStore out;
  for (const auto& [n, t] : s.tensors) {
    if (n != name) out.add(n, t);
  }
  return out;
}

}  // namespace

TEST_CASE("default config has 23 weighted layers") {
  const auto plan = layer_plan(UNetConfig{});
  CHECK(plan.size() == 23);
  std::size_t convs = 0, ups = 0;
  for (const auto& l : plan) (l.kind == LayerKind::up ? ups : convs)++;
  CHECK(convs == 19);  // 18 3x3 convs plus the final 1x1
  CHECK(ups == 4);
  CHECK(plan.back().name == "final.conv");
  CHECK(plan.back().kernel == 1);
}

TEST_CASE("blocks=1 base=2 unrolls to the block rule") {
  const auto plan = layer_plan(small(1, 2, 256));
  struct Row {
    const char* name;
    std::size_t in, out, k;
  };
  const Row expected[] = {{"enc0.conv0", 3, 2, 3}, {"enc0.conv1", 2, 2, 3}, {"mid.conv0", 2, 4, 3},
                          {"mid.conv1", 4, 4, 3},  {"dec0.up", 4, 2, 2},    {"dec0.conv0", 4, 2, 3},
                          {"dec0.conv1", 2, 2, 3}, {"final.conv", 2, 1, 1}};
  REQUIRE(plan.size() == 8);
  for (std::size_t i = 0; i < plan.size(); ++i) {
    CHECK(plan[i].name == expected[i].name);
    CHECK(plan[i].in_channels == expected[i].in);
    CHECK(plan[i].out_channels == expected[i].out);
    CHECK(plan[i].kernel == expected[i].k);
  }
  const auto sites = activation_sites(small(1, 2, 256));
  CHECK(sites.front() == "input");
  CHECK(sites.back() == "output");
  CHECK(std::find(sites.begin(), sites.end(), "dec0.concat") != sites.end());
}

TEST_CASE("config validation") {
  CHECK(caught([] { build(small(5, 16, 256)); }).kind() == ErrorKind::config);
  CHECK(caught([] { build(small(0, 16, 256)); }).kind() == ErrorKind::config);
  CHECK(caught([] { build(small(4, 16, 100)); }).kind() == ErrorKind::config);
  CHECK(caught([] { parse_upsample_mode("bilinear"); }).kind() == ErrorKind::config);
}

TEST_CASE("property: skip consistency and upsample parameter parity") {
  for (int blocks = 1; blocks <= 4; ++blocks) {
    for (std::size_t base : {1u, 2u, 5u, 16u}) {
      const auto a = small(blocks, base, 64);
      const auto b = small(blocks, base, 64, UpsampleMode::nn_upsample_conv);
      CHECK(build(a).total_params() == build(b).total_params());
      for (const auto& l : layer_plan(a)) {
        if (l.path == PathKind::decoder && l.name.ends_with("conv0")) {
          CHECK(l.in_channels == 2 * a.width(l.block));
        }
      }
    }
  }
}

TEST_CASE("bind weights") {
  const auto cfg = small(2, 4, 32);
  const auto store = random_weights(cfg, 1);
  const auto model = bind_weights(build(cfg), store);
  CHECK(model.bound());
  CHECK(bind_weights(build(cfg), export_weights(model)).layers().size() == model.layers().size());

  const auto missing = caught([&] { bind_weights(build(cfg), without(store, "final.conv.weight")); });
  CHECK(missing.kind() == ErrorKind::binding);
  CHECK(std::string(missing.what()).find("final.conv.weight") != std::string::npos);

  std::vector<std::string> unused;
  WeightStore extra = store;
  extra.add("stray.weight", Tensor({1}, {0.0f}));
  bind_weights(build(cfg), extra, &unused);
  CHECK(unused == std::vector<std::string>{"stray.weight"});
}

TEST_CASE("property: permuted weight dims raise shape errors") {
  const auto cfg = small(2, 4, 32);
  const auto store = random_weights(cfg, 2);
  gen::Gen g(40);
  for (const auto& spec : layer_plan(cfg)) {
    auto shape = spec.weight_shape();
    std::swap(shape[0], shape[1]);
    if (shape == spec.weight_shape()) shape[2] += 1;
    WeightStore bad;
    for (const auto& [n, t] : store.tensors) {
      bad.add(n, n == spec.weight_name() ? g.tensor(shape) : t);
    }
    const auto e = caught([&] { bind_weights(build(cfg), bad); });
    CHECK(e.kind() == ErrorKind::shape);
    CHECK(std::string(e.what()).find(spec.weight_name()) != std::string::npos);
  }
}

TEST_CASE("zero weights give 0.5 everywhere") {
  const auto cfg = small(2, 4, 16);
  WeightStore zeros;
  for (const auto& l : layer_plan(cfg)) {
    zeros.add(l.weight_name(), Tensor::zeros(l.weight_shape()));
    zeros.add(l.bias_name(), Tensor::zeros({l.out_channels}));
  }
  const auto out = forward(bind_weights(build(cfg), zeros), random_tensor({2, 3, 16, 16}, 3));
  CHECK(out.shape() == Tensor::Shape{2, 1, 16, 16});
  for (float v : out.f32()) CHECK(v == 0.5f);
}

TEST_CASE("forward input checks") {
  const auto cfg = small(1, 2, 16);
  const auto model = bind_weights(build(cfg), random_weights(cfg, 4));
  CHECK(caught([&] { forward(model, Tensor::zeros({1, 4, 16, 16})); }).kind() == ErrorKind::shape);
  CHECK(caught([&] { forward(model, Tensor::zeros({1, 3, 32, 32})); }).kind() == ErrorKind::shape);
  CHECK(caught([&] { forward(build(cfg), Tensor::zeros({1, 3, 16, 16})); }).kind() == ErrorKind::binding);
}

TEST_CASE("property: batch independence is bitwise") {
  gen::Gen g(41);
  for (int trial = 0; trial < 4; ++trial) {
    const auto cfg = small(g.integer(1, 3), g.size(1, 4), 16, g.coin() ? UpsampleMode::nn_upsample_conv
                                                                        : UpsampleMode::transposed_conv);
    const auto model = bind_weights(build(cfg), random_weights(cfg, g.seed()));
    const Tensor a = g.tensor({1, 3, 16, 16}, 0.0, 1.0), b = g.tensor({1, 3, 16, 16}, 0.0, 1.0);
    std::vector<float> both(a.f32().begin(), a.f32().end());
    both.insert(both.end(), b.f32().begin(), b.f32().end());
    const Tensor ab = forward(model, Tensor({2, 3, 16, 16}, both));
    std::vector<float> sep;
    for (const auto* t : {&a, &b}) {
      const Tensor y = forward(model, *t);
      sep.insert(sep.end(), y.f32().begin(), y.f32().end());
    }
    CHECK(std::vector<float>(ab.f32().begin(), ab.f32().end()) == sep);
  }
}

TEST_CASE("property: forward matches the reference network") {
  gen::Gen g(42);
  for (int trial = 0; trial < 6; ++trial) {
    const auto mode = trial % 2 ? UpsampleMode::nn_upsample_conv : UpsampleMode::transposed_conv;
    const auto cfg = small(g.integer(1, 3), g.size(1, 4), 16, mode);
    const auto store = random_weights(cfg, g.seed());
    const Tensor x = g.tensor({g.size(1, 2), 3, 16, 16}, 0.0, 1.0);
    const auto y = forward(bind_weights(build(cfg), store), x);
    const auto ref = oracle::reference_forward(cfg, store, oracle::from_tensor(x));
    CHECK(oracle::max_abs_diff(oracle::from_tensor(y), ref.output) <= 1e-5);
  }
}

TEST_CASE("instrumented forward MACs equal the analyzer") {
  for (auto mode : {UpsampleMode::transposed_conv, UpsampleMode::nn_upsample_conv}) {
    const auto cfg = small(3, 2, 32, mode);
    const auto model = bind_weights(build(cfg), random_weights(cfg, 5));
    nn::MacCounter counter;
    std::map<std::string, std::uint64_t> per_layer;
    ForwardHooks hooks;
    hooks.counter = &counter;
    hooks.layer_macs = &per_layer;
    forward(model, random_tensor({1, 3, 32, 32}, 6), hooks);
    const auto report = analyzer::analyze(cfg);
    CHECK(counter.macs == report.total_macs);
    for (const auto& row : report.rows) CHECK(per_layer.at(row.name) == row.macs);
  }
}

TEST_CASE("observe hook sees every site in order") {
  const auto cfg = small(2, 2, 16);
  const auto model = bind_weights(build(cfg), random_weights(cfg, 7));
  std::vector<std::string> seen;
  ForwardHooks hooks;
  hooks.observe = [&](const std::string& site, const Tensor&) { seen.push_back(site); };
  forward(model, random_tensor({1, 3, 16, 16}, 8), hooks);
  CHECK(seen == activation_sites(cfg));
}
