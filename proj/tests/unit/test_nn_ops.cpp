#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "gen.hpp"
#include "oracle.hpp"
#include "unetlite/errors.hpp"
#include "unetlite/nn_ops.hpp"

using namespace unetlite;

namespace {

bool raises(ErrorKind kind, auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind() == kind;
  }
  return false;
}

nn::ConvSpec spec_for(std::size_t in, std::size_t out, std::size_t k, std::size_t stride, std::vector<float> bias) {
  nn::ConvSpec s;
  s.in_channels = in;
  s.out_channels = out;
  s.kernel_h = k;
  s.kernel_w = k;
  s.stride = stride;
  s.bias = std::move(bias);
  return s;
}

}  // namespace

TEST_CASE("conv2d examples") {
  const auto s = spec_for(1, 1, 1, 1, {0.0f});
  CHECK(nn::conv2d(Tensor({1, 1, 1, 1}, {5.0f}), Tensor({1, 1, 1, 1}, {1.0f}), s).f32()[0] == 5.0f);

  gen::Gen g(1);
  const Tensor x = g.tensor({2, 3, 5, 7});
  const auto zs = spec_for(3, 4, 3, 1, {0.5f, -1.0f, 2.0f, 0.0f});
  const Tensor y = nn::conv2d(x, Tensor::zeros({4, 3, 3, 3}), zs);
  CHECK(y.shape() == Tensor::Shape{2, 4, 5, 7});
  for (std::size_t i = 0; i < y.size(); ++i) {
    const std::size_t c = (i / 35) % 4;
    CHECK(y.f32()[i] == zs.bias[c]);
  }
}

TEST_CASE("conv2d 1x3x8x8 with 16 kernels matches the loop oracle") {
  gen::Gen g(2);
  const Tensor x = g.tensor({1, 3, 8, 8});
  const Tensor w = g.tensor({16, 3, 3, 3});
  const auto bias = g.floats(16);
  const Tensor y = nn::conv2d(x, w, spec_for(3, 16, 3, 1, bias));
  const auto ref = oracle::conv2d(oracle::from_tensor(x), oracle::from_tensor(w), gen::to_double(bias), 1, true);
  CHECK(oracle::max_abs_diff(oracle::from_tensor(y), ref) <= 1e-5);
}

TEST_CASE("property: conv2d against oracle across kernels and strides") {
  gen::Gen g(3);
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t k = g.size(1, 3), stride = g.size(1, 2);
    const Tensor x = g.activation(16, 8);
    const std::size_t c_in = x.dim(1), c_out = g.size(1, 16);
    const Tensor w = g.tensor({c_out, c_in, k, k});
    const auto bias = g.floats(c_out);
    nn::MacCounter counter;
    const Tensor y = nn::conv2d(x, w, spec_for(c_in, c_out, k, stride, bias), &counter);
    const auto ref = oracle::conv2d(oracle::from_tensor(x), oracle::from_tensor(w), gen::to_double(bias), stride, true);
    CHECK(oracle::max_abs_diff(oracle::from_tensor(y), ref) <= 1e-5);
    CHECK(counter.macs == x.dim(0) * c_in * c_out * k * k * y.dim(2) * y.dim(3));
  }
}

TEST_CASE("conv2d errors") {
  const auto s = spec_for(2, 1, 3, 1, {});
  CHECK(raises(ErrorKind::shape, [&] { nn::conv2d(Tensor::zeros({1, 3, 4, 4}), Tensor::zeros({1, 2, 3, 3}), s); }));
  CHECK(raises(ErrorKind::shape, [&] { nn::conv2d(Tensor::zeros({1, 2, 4, 4}), Tensor::zeros({1, 2, 1, 3}), s); }));
  CHECK(raises(ErrorKind::shape, [&] { nn::conv2d(Tensor::zeros({2, 4, 4}), Tensor::zeros({1, 2, 3, 3}), s); }));
}

TEST_CASE("tconv2d examples") {
  const auto s = spec_for(1, 1, 2, 2, {0.0f});
  const Tensor y = nn::tconv2d(Tensor({1, 1, 1, 1}, {3.0f}), Tensor::filled({1, 1, 2, 2}, 1.0f), s);
  CHECK(y.shape() == Tensor::Shape{1, 1, 2, 2});
  for (float v : y.f32()) CHECK(v == 3.0f);

  const auto sb = spec_for(2, 3, 2, 2, {1.0f, -2.0f, 0.25f});
  gen::Gen g(4);
  const Tensor zero = nn::tconv2d(Tensor::zeros({1, 2, 3, 3}), g.tensor({3, 2, 2, 2}), sb);
  for (std::size_t i = 0; i < zero.size(); ++i) CHECK(zero.f32()[i] == sb.bias[i / 36]);

  CHECK(raises(ErrorKind::config, [] {
    nn::tconv2d(Tensor::zeros({1, 1, 2, 2}), Tensor::zeros({1, 1, 3, 3}), spec_for(1, 1, 3, 2, {}));
  }));
  CHECK(raises(ErrorKind::config, [] {
    nn::tconv2d(Tensor::zeros({1, 1, 2, 2}), Tensor::zeros({1, 1, 2, 2}), spec_for(1, 1, 2, 1, {}));
  }));
}

TEST_CASE("tconv2d random 1x4x5x5 to 2 channels matches the scatter oracle") {
  gen::Gen g(5);
  const Tensor x = g.tensor({1, 4, 5, 5});
  const Tensor w = g.tensor({2, 4, 2, 2});
  const auto bias = g.floats(2);
  const Tensor y = nn::tconv2d(x, w, spec_for(4, 2, 2, 2, bias));
  CHECK(y.shape() == Tensor::Shape{1, 2, 10, 10});
  const auto ref = oracle::tconv2x2_scatter(oracle::from_tensor(x), oracle::from_tensor(w), gen::to_double(bias));
  CHECK(oracle::max_abs_diff(oracle::from_tensor(y), ref) <= 1e-5);
}

TEST_CASE("maxpool2 examples") {
  std::vector<float> v(16);
  for (int i = 0; i < 16; ++i) v[i] = static_cast<float>(i + 1);
  const Tensor y = nn::maxpool2(Tensor({1, 1, 4, 4}, v));
  CHECK(y.shape() == Tensor::Shape{1, 1, 2, 2});
  CHECK(std::vector<float>(y.f32().begin(), y.f32().end()) == std::vector<float>{6, 8, 14, 16});
  CHECK(nn::maxpool2(Tensor::filled({1, 2, 6, 4}, -2.5f)) == Tensor::filled({1, 2, 3, 2}, -2.5f));
  CHECK(raises(ErrorKind::shape, [] { nn::maxpool2(Tensor::zeros({1, 1, 3, 4})); }));
}

TEST_CASE("upsample examples") {
  CHECK(nn::nn_upsample2(Tensor({1, 1, 1, 1}, {7.0f})) == Tensor::filled({1, 1, 2, 2}, 7.0f));
  gen::Gen g(6);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor x = g.activation();
    CHECK(nn::maxpool2(nn::nn_upsample2(x)) == x);
  }
}

TEST_CASE("concat examples") {
  gen::Gen g(7);
  const Tensor a = g.tensor({1, 16, 32, 32}), b = g.tensor({1, 16, 32, 32});
  const Tensor c = nn::concat_channels(a, b);
  CHECK(c.shape() == Tensor::Shape{1, 32, 32, 32});
  CHECK(nn::concat_channels(a, Tensor()) == a);
  CHECK(raises(ErrorKind::shape, [&] { nn::concat_channels(a, g.tensor({1, 2, 16, 32})); }));
}

TEST_CASE("property: concat slices recover both inputs") {
  gen::Gen g(8);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = g.size(1, 3), h = g.size(1, 6), w = g.size(1, 6);
    const Tensor a = g.tensor({n, g.size(1, 5), h, w}), b = g.tensor({n, g.size(1, 5), h, w});
    const auto ref = oracle::concat(oracle::from_tensor(a), oracle::from_tensor(b));
    CHECK(oracle::max_abs_diff(oracle::from_tensor(nn::concat_channels(a, b)), ref) == 0.0);
  }
}

TEST_CASE("relu and sigmoid") {
  const Tensor r = nn::relu(Tensor({2}, {-3.0f, 3.0f}));
  CHECK(r.f32()[0] == 0.0f);
  CHECK(r.f32()[1] == 3.0f);
  CHECK(nn::sigmoid(Tensor({1}, {0.0f})).f32()[0] == 0.5f);

  gen::Gen g(9);
  for (int trial = 0; trial < 20; ++trial) {
    auto v = g.floats(g.size(2, 200), -20.0, 20.0);
    std::sort(v.begin(), v.end());
    const Tensor s = nn::sigmoid(Tensor({v.size()}, v));
    CHECK(std::is_sorted(s.f32().begin(), s.f32().end()));
    for (float p : s.f32()) CHECK((p > 0.0f && p < 1.0f));
  }
}

TEST_CASE("property: quantized conv within one output step of the dequantized oracle") {
  gen::Gen g(10);
  for (int trial = 0; trial < 40; ++trial) {
    const bool up = g.coin();
    const std::size_t k = up ? 2 : (g.coin() ? 3 : 1);
    const Tensor xf = g.activation(8, 6);
    const std::size_t c_in = xf.dim(1), c_out = g.size(1, 8);
    const auto px = QuantParams::affine_for(-1.0f, 1.0f, 8);
    const Tensor xq = quantize(xf, px);
    const Tensor wf = g.tensor({c_out, c_in, k, k});
    const Tensor wq = quantize(wf, QuantParams::symmetric_for(1.0f, 8));
    const auto bias = g.floats(c_out, -0.3, 0.3);
    const auto spec = spec_for(c_in, c_out, k, up ? 2 : 1, bias);

    const auto xd = oracle::from_tensor(xq), wd = oracle::from_tensor(wq);
    const auto ref = up ? oracle::tconv2x2_scatter(xd, wd, gen::to_double(bias))
                        : oracle::conv2d(xd, wd, gen::to_double(bias), 1, true);
    const auto [lo, hi] = std::minmax_element(ref.v.begin(), ref.v.end());
    const auto po = QuantParams::affine_for(static_cast<float>(*lo), static_cast<float>(*hi), 8);
    const Tensor yq = up ? nn::tconv2d_q(xq, wq, spec, po) : nn::conv2d_q(xq, wq, spec, po);
    CHECK(yq.dtype() == DType::i8);
    CHECK(oracle::max_abs_diff(oracle::from_tensor(yq), ref) <= po.scale);
  }
}

TEST_CASE("quantized relu clamps at the zero point") {
  const auto p = QuantParams::affine_for(-1.0f, 1.0f, 8);
  const Tensor q = quantize(Tensor({3}, {-0.5f, 0.0f, 0.5f}), p);
  const Tensor r = dequantize(nn::relu(q));
  CHECK(r.f32()[0] == 0.0f);
  CHECK(r.f32()[1] == 0.0f);
  CHECK(r.f32()[2] == doctest::Approx(0.5).epsilon(0.01));
}

TEST_CASE("requantize preserves values within a step") {
  gen::Gen g(11);
  const Tensor x = g.tensor({64}, -1.0, 1.0);
  const auto a = QuantParams::affine_for(-1.0f, 1.0f, 8);
  const auto b = QuantParams::affine_for(-2.0f, 2.0f, 8);
  const Tensor y = nn::requantize(quantize(x, a), b);
  CHECK(*y.quant() == b);
  CHECK(oracle::max_abs_diff(oracle::from_tensor(y), oracle::from_tensor(quantize(x, a))) <= b.scale / 2 + 1e-6);
}
