#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace unetlite {

enum class DType : std::uint8_t { f32 = 0, i8 = 1, i32 = 2 };

const char* to_string(DType dtype) noexcept;

/// Per-tensor quantization parameters.
///
/// Representable integer ranges:
///   bits == 1           : {-1, +1} (binary weights, scale = mean |x|)
///   signed, symmetric   : [-(2^(b-1) - 1), 2^(b-1) - 1], zero_point == 0
///   signed, affine      : [-2^(b-1), 2^(b-1) - 1]
///   unsigned            : [0, 2^b - 1]
/// i32 accumulator tensors may use bits up to 32.
struct QuantParams {
  int bits = 8;
  float scale = 1.0f;
  std::int32_t zero_point = 0;
  bool is_signed = true;
  bool symmetric = true;

  std::int64_t qmin() const noexcept;
  std::int64_t qmax() const noexcept;

  /// Throws Error(config) when the parameters are not usable for `dtype`.
  void validate(DType dtype = DType::i8) const;

  /// Symmetric signed parameters covering [-max_abs, max_abs].
  static QuantParams symmetric_for(float max_abs, int bits);

  /// Affine signed parameters covering [lo, hi] (range is widened to include 0).
  static QuantParams affine_for(float lo, float hi, int bits);

  bool operator==(const QuantParams&) const = default;
};

/// Row-major N-dimensional array. Activations are N,C,H,W; conv weights are
/// O,I,Kh,Kw. Integer payloads always carry their QuantParams.
class Tensor {
 public:
  using Shape = std::vector<std::size_t>;

  Tensor() = default;
  Tensor(Shape shape, std::vector<float> values);
  Tensor(Shape shape, std::vector<std::int8_t> values, QuantParams quant);
  Tensor(Shape shape, std::vector<std::int32_t> values, QuantParams quant);

  static Tensor zeros(Shape shape);
  static Tensor filled(Shape shape, float value);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept;
  DType dtype() const noexcept { return static_cast<DType>(payload_.index()); }
  const std::optional<QuantParams>& quant() const noexcept { return quant_; }
  bool empty() const noexcept { return shape_.empty(); }

  std::span<const float> f32() const;
  std::span<const std::int8_t> i8() const;
  std::span<const std::int32_t> i32() const;

  /// Element values as doubles regardless of dtype (integers are the raw codes).
  std::vector<double> raw_values() const;

  bool operator==(const Tensor& other) const = default;

 private:
  void check_invariants() const;

  Shape shape_;
  std::variant<std::vector<float>, std::vector<std::int8_t>, std::vector<std::int32_t>> payload_;
  std::optional<QuantParams> quant_;
};

/// Uniform values in [lo, hi) from a seeded mt19937_64.
Tensor random_tensor(Tensor::Shape shape, std::uint64_t seed, float lo = 0.0f, float hi = 1.0f);

std::size_t shape_volume(const Tensor::Shape& shape) noexcept;
std::string shape_string(const Tensor::Shape& shape);

/// Round half to even (banker's rounding).
double round_half_even(double value) noexcept;

/// Quantize then dequantize. bits == 1 ignores p.scale and maps each element
/// to +/- mean(|x|).
Tensor fake_quantize(const Tensor& x, const QuantParams& p);

/// q = clamp(round_half_even(x / scale) + zero_point). Signed payloads with
/// at most 8 bits are stored as i8, wider unsigned ranges as i32.
Tensor quantize(const Tensor& x, const QuantParams& p);

Tensor dequantize(const Tensor& q);

}  // namespace unetlite
