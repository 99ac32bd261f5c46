#include "unetlite/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "unetlite/errors.hpp"

namespace unetlite {

const char* to_string(DType dtype) noexcept {
  switch (dtype) {
    case DType::f32: return "f32";
    case DType::i8: return "i8";
    case DType::i32: return "i32";
  }
  return "?";
}

std::int64_t QuantParams::qmin() const noexcept {
  if (symmetric && bits == 1) return -1;
  if (!is_signed) return 0;
  const std::int64_t half = std::int64_t{1} << (bits - 1);
  return symmetric ? -(half - 1) : -half;
}

std::int64_t QuantParams::qmax() const noexcept {
  if (symmetric && bits == 1) return 1;
  if (!is_signed) return (std::int64_t{1} << bits) - 1;
  return (std::int64_t{1} << (bits - 1)) - 1;
}

void QuantParams::validate(DType dtype) const {
  const int max_bits = dtype == DType::i32 ? 32 : 8;
  if (bits < 1 || bits > max_bits) {
    throw Error(ErrorKind::config, fmt::format("quant bits {} outside [1,{}]", bits, max_bits));
  }
  if (!(scale > 0.0f) || !std::isfinite(scale)) {
    throw Error(ErrorKind::config, fmt::format("quant scale must be positive and finite, got {}", scale));
  }
  if (symmetric && zero_point != 0) {
    throw Error(ErrorKind::config, "symmetric quantization requires zero_point == 0");
  }
  if (symmetric && !is_signed) {
    throw Error(ErrorKind::config, "symmetric quantization must be signed");
  }
  if (zero_point < qmin() || zero_point > qmax()) {
    throw Error(ErrorKind::config, fmt::format("zero_point {} outside [{},{}]", zero_point, qmin(), qmax()));
  }
  if (dtype == DType::i8 && (qmin() < -128 || qmax() > 127)) {
    throw Error(ErrorKind::config, fmt::format("{}-bit range does not fit an i8 payload", bits));
  }
}

QuantParams QuantParams::symmetric_for(float max_abs, int bits) {
  QuantParams p;
  p.bits = bits;
  p.symmetric = true;
  p.is_signed = true;
  p.zero_point = 0;
  const double levels = bits == 1 ? 1.0 : static_cast<double>(p.qmax());
  const double s = static_cast<double>(std::fabs(max_abs)) / levels;
  p.scale = (s > 0.0 && std::isfinite(s)) ? static_cast<float>(s) : 1.0f;
  return p;
}

QuantParams QuantParams::affine_for(float lo, float hi, int bits) {
  QuantParams p;
  p.bits = bits;
  p.symmetric = false;
  p.is_signed = true;
  const double a = std::min<double>(lo, 0.0);
  const double b = std::max<double>(hi, 0.0);
  const double span = static_cast<double>(p.qmax() - p.qmin());
  const double s = (b - a) / span;
  p.scale = (s > 0.0 && std::isfinite(s)) ? static_cast<float>(s) : 1.0f;
  const double zp = static_cast<double>(p.qmin()) - round_half_even(a / p.scale);
  p.zero_point = static_cast<std::int32_t>(
      std::clamp<double>(zp, static_cast<double>(p.qmin()), static_cast<double>(p.qmax())));
  return p;
}

std::size_t shape_volume(const Tensor::Shape& shape) noexcept {
  if (shape.empty()) return 0;
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Tensor random_tensor(Tensor::Shape shape, std::uint64_t seed, float lo, float hi) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> dist(lo, hi);
  std::vector<float> values(shape_volume(shape));
  for (auto& v : values) v = dist(rng);
  return Tensor(std::move(shape), std::move(values));
}

std::string shape_string(const Tensor::Shape& shape) {
  return fmt::format("({})", fmt::join(shape, ","));
}

double round_half_even(double value) noexcept {
  // nearbyint honours the current rounding mode, which is round-to-nearest-even
  // unless someone changed it; do it explicitly instead.
  const double floor_v = std::floor(value);
  const double diff = value - floor_v;
  if (diff > 0.5) return floor_v + 1.0;
  if (diff < 0.5) return floor_v;
  return std::fmod(floor_v, 2.0) == 0.0 ? floor_v : floor_v + 1.0;
}

Tensor::Tensor(Shape shape, std::vector<float> values) : shape_(std::move(shape)), payload_(std::move(values)) {
  check_invariants();
}

Tensor::Tensor(Shape shape, std::vector<std::int8_t> values, QuantParams quant)
    : shape_(std::move(shape)), payload_(std::move(values)), quant_(quant) {
  check_invariants();
}

Tensor::Tensor(Shape shape, std::vector<std::int32_t> values, QuantParams quant)
    : shape_(std::move(shape)), payload_(std::move(values)), quant_(quant) {
  check_invariants();
}

Tensor Tensor::zeros(Shape shape) { return filled(std::move(shape), 0.0f); }

Tensor Tensor::filled(Shape shape, float value) {
  const auto n = shape_volume(shape);
  return Tensor(std::move(shape), std::vector<float>(n, value));
}

std::size_t Tensor::size() const noexcept { return shape_volume(shape_); }

void Tensor::check_invariants() const {
  if (shape_.empty()) throw Error(ErrorKind::shape, "tensor must have at least one dimension");
  for (auto d : shape_) {
    if (d == 0) throw Error(ErrorKind::shape, fmt::format("zero dimension in shape {}", shape_string(shape_)));
  }
  const auto n = std::visit([](const auto& v) { return v.size(); }, payload_);
  if (n != size()) {
    throw Error(ErrorKind::shape,
                fmt::format("payload length {} does not match shape {}", n, shape_string(shape_)));
  }
  if (dtype() == DType::f32 && quant_) throw Error(ErrorKind::config, "f32 tensor cannot carry quant params");
  if (dtype() != DType::f32) {
    if (!quant_) throw Error(ErrorKind::config, "integer tensor requires quant params");
    quant_->validate(dtype());
  }
}

std::span<const float> Tensor::f32() const {
  if (const auto* v = std::get_if<std::vector<float>>(&payload_)) return *v;
  throw Error(ErrorKind::shape, fmt::format("expected f32 tensor, got {}", to_string(dtype())));
}

std::span<const std::int8_t> Tensor::i8() const {
  if (const auto* v = std::get_if<std::vector<std::int8_t>>(&payload_)) return *v;
  throw Error(ErrorKind::shape, fmt::format("expected i8 tensor, got {}", to_string(dtype())));
}

std::span<const std::int32_t> Tensor::i32() const {
  if (const auto* v = std::get_if<std::vector<std::int32_t>>(&payload_)) return *v;
  throw Error(ErrorKind::shape, fmt::format("expected i32 tensor, got {}", to_string(dtype())));
}

std::vector<double> Tensor::raw_values() const {
  return std::visit([](const auto& v) { return std::vector<double>(v.begin(), v.end()); }, payload_);
}

namespace {

void require_finite(std::span<const float> values) {
  for (auto v : values) {
    if (!std::isfinite(v)) throw Error(ErrorKind::numeric, "non-finite value in quantization input");
  }
}

double mean_abs(std::span<const float> values) {
  double sum = 0.0;
  for (auto v : values) sum += std::fabs(static_cast<double>(v));
  return values.empty() ? 0.0 : sum / static_cast<double>(values.size());
}

bool is_binary(const QuantParams& p) { return p.symmetric && p.bits == 1; }

}  // namespace

Tensor quantize(const Tensor& x, const QuantParams& p) {
  const auto in = x.f32();
  require_finite(in);
  QuantParams out_p = p;
  std::vector<std::int32_t> codes(in.size());

  if (is_binary(p)) {
    const double s = mean_abs(in);
    if (s > 0.0) {
      out_p.scale = static_cast<float>(s);
      std::transform(in.begin(), in.end(), codes.begin(), [](float v) { return v >= 0.0f ? 1 : -1; });
    } else {
      out_p.scale = 1.0f;  // all-zero input: codes stay 0
    }
    out_p.validate(DType::i8);
  } else {
    p.validate(p.qmax() <= 127 && p.qmin() >= -128 ? DType::i8 : DType::i32);
    const double lo = static_cast<double>(p.qmin());
    const double hi = static_cast<double>(p.qmax());
    const double scale = static_cast<double>(p.scale);
    std::transform(in.begin(), in.end(), codes.begin(), [&](float v) {
      const double q = round_half_even(static_cast<double>(v) / scale) + p.zero_point;
      return static_cast<std::int32_t>(std::clamp(q, lo, hi));
    });
  }

  if (out_p.qmin() >= -128 && out_p.qmax() <= 127) {
    return Tensor(x.shape(), std::vector<std::int8_t>(codes.begin(), codes.end()), out_p);
  }
  return Tensor(x.shape(), std::move(codes), out_p);
}

Tensor dequantize(const Tensor& q) {
  if (q.dtype() == DType::f32) return q;
  const auto& p = *q.quant();
  std::vector<float> out(q.size());
  auto convert = [&](auto codes) {
    std::transform(codes.begin(), codes.end(), out.begin(), [&](auto c) {
      return static_cast<float>(static_cast<std::int32_t>(c) - p.zero_point) * p.scale;
    });
  };
  if (q.dtype() == DType::i8) {
    convert(q.i8());
  } else {
    convert(q.i32());
  }
  return Tensor(q.shape(), std::move(out));
}

Tensor fake_quantize(const Tensor& x, const QuantParams& p) {
  return dequantize(quantize(x, p));
}

}  // namespace unetlite
