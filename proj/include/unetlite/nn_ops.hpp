#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "unetlite/tensor.hpp"

namespace unetlite::nn {

enum class Padding { same_zero, none };

struct ConvSpec {
  std::size_t in_channels = 1;
  std::size_t out_channels = 1;
  std::size_t kernel_h = 3;
  std::size_t kernel_w = 3;
  std::size_t stride = 1;
  Padding padding = Padding::same_zero;
  std::vector<float> bias;  // empty means zero bias
};

/// Counts multiply-accumulate slots visited by the kernels, including taps
/// that land on zero padding or on the implicit zeros of a transposed conv.
struct MacCounter {
  std::uint64_t macs = 0;
};

// Float path. Inputs are N,C,H,W; weights are O,I,Kh,Kw.

Tensor conv2d(const Tensor& x, const Tensor& w, const ConvSpec& spec, MacCounter* counter = nullptr);

/// Kernel 2x2, stride 2 only: out(2i+a, 2j+b, o) = sum_c x(i,j,c) * w(o,c,a,b) + bias(o).
Tensor tconv2d(const Tensor& x, const Tensor& w, const ConvSpec& spec, MacCounter* counter = nullptr);

Tensor maxpool2(const Tensor& x);
Tensor nn_upsample2(const Tensor& x);

/// Channels of `a` first. An empty `b` (default-constructed tensor) returns `a`.
Tensor concat_channels(const Tensor& a, const Tensor& b);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

// Quantized path. Activations are i8 with affine or symmetric params,
// weights i8 symmetric. Accumulation is int32; bias enters the accumulator as
// round(bias / (s_x * s_w)); the result is requantized to `out` with
// round-half-even then clamped.

Tensor conv2d_q(const Tensor& x, const Tensor& w, const ConvSpec& spec, const QuantParams& out,
                MacCounter* counter = nullptr);
Tensor tconv2d_q(const Tensor& x, const Tensor& w, const ConvSpec& spec, const QuantParams& out,
                 MacCounter* counter = nullptr);

/// Re-expresses integer codes under new parameters.
Tensor requantize(const Tensor& q, const QuantParams& out);

/// Both inputs are requantized to `out` before stacking.
Tensor concat_channels_q(const Tensor& a, const Tensor& b, const QuantParams& out);

}  // namespace unetlite::nn
