#include "unetlite/nn_ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <fmt/format.h>

#include "unetlite/errors.hpp"

namespace unetlite::nn {

namespace {

struct Geometry {
  std::size_t out_h = 0, out_w = 0;
  std::size_t pad_top = 0, pad_left = 0;
  std::size_t padded_h = 0, padded_w = 0;
};

std::size_t padded_extent(std::size_t in, std::size_t out, std::size_t k, std::size_t stride, std::size_t* before) {
  const std::size_t needed = (out - 1) * stride + k;
  const std::size_t total = needed > in ? needed - in : 0;
  // Odd totals put the extra row/column at the bottom/right.
  *before = total / 2;
  return in + total;
}

Geometry conv_geometry(std::size_t h, std::size_t w, const ConvSpec& spec) {
  Geometry g;
  if (spec.padding == Padding::same_zero) {
    g.out_h = (h + spec.stride - 1) / spec.stride;
    g.out_w = (w + spec.stride - 1) / spec.stride;
    g.padded_h = padded_extent(h, g.out_h, spec.kernel_h, spec.stride, &g.pad_top);
    g.padded_w = padded_extent(w, g.out_w, spec.kernel_w, spec.stride, &g.pad_left);
  } else {
    if (h < spec.kernel_h || w < spec.kernel_w) {
      throw Error(ErrorKind::shape, fmt::format("input {}x{} smaller than kernel {}x{}", h, w, spec.kernel_h,
                                                spec.kernel_w));
    }
    g.out_h = (h - spec.kernel_h) / spec.stride + 1;
    g.out_w = (w - spec.kernel_w) / spec.stride + 1;
    g.padded_h = h;
    g.padded_w = w;
  }
  return g;
}

void check_activation(const Tensor& x, const char* op) {
  if (x.rank() != 4) {
    throw Error(ErrorKind::shape, fmt::format("{}: expected N,C,H,W input, got {}", op, shape_string(x.shape())));
  }
}

void check_conv_args(const Tensor& x, const Tensor& w, const ConvSpec& spec, const char* op) {
  check_activation(x, op);
  if (spec.kernel_h == 0 || spec.kernel_w == 0 || spec.stride == 0 || spec.in_channels == 0 ||
      spec.out_channels == 0) {
    throw Error(ErrorKind::config, fmt::format("{}: kernel, stride and channel counts must be positive", op));
  }
  if (x.dim(1) != spec.in_channels) {
    throw Error(ErrorKind::shape,
                fmt::format("{}: input has {} channels, spec expects {}", op, x.dim(1), spec.in_channels));
  }
  const Tensor::Shape expected{spec.out_channels, spec.in_channels, spec.kernel_h, spec.kernel_w};
  if (w.shape() != expected) {
    throw Error(ErrorKind::shape, fmt::format("{}: weight shape {} does not match spec {}", op,
                                              shape_string(w.shape()), shape_string(expected)));
  }
  if (!spec.bias.empty() && spec.bias.size() != spec.out_channels) {
    throw Error(ErrorKind::shape,
                fmt::format("{}: bias has {} entries for {} output channels", op, spec.bias.size(), spec.out_channels));
  }
}

void check_tconv_spec(const ConvSpec& spec) {
  if (spec.kernel_h != 2 || spec.kernel_w != 2 || spec.stride != 2) {
    throw Error(ErrorKind::config, fmt::format("tconv2d supports only kernel 2x2 stride 2, got {}x{} stride {}",
                                               spec.kernel_h, spec.kernel_w, spec.stride));
  }
}

constexpr std::size_t kBlockW = 16;  // outputs per register block
constexpr std::size_t kBlockO = 4;   // output channels per register block

/// Accumulates `oc` (<= kBlockO) output channels over a `width`-wide run of
/// one output row, stride 1. With width == kBlockW the accumulators stay in
/// registers.
template <std::size_t Width, typename In, typename Wt, typename Acc>
void accumulate_block(const In* padded, std::size_t channels, std::size_t hp, std::size_t wp, const Wt* const* kernels,
                      std::size_t oc, std::size_t kh, std::size_t kw, bool flip, std::size_t oy, std::size_t ox,
                      std::size_t width, Acc (&acc)[kBlockO][kBlockW]) {
  const std::size_t n = Width ? Width : width;
  for (std::size_t c = 0; c < channels; ++c) {
    const In* src = padded + c * hp * wp;
    for (std::size_t ky = 0; ky < kh; ++ky) {
      const In* line = src + (oy + ky) * wp + ox;
      for (std::size_t kx = 0; kx < kw; ++kx) {
        const std::size_t tap = (flip ? kh - 1 - ky : ky) * kw + (flip ? kw - 1 - kx : kx);
        const In* row = line + kx;
        for (std::size_t o = 0; o < oc; ++o) {
          const Acc wv = static_cast<Acc>(kernels[o][c * kh * kw + tap]);
          for (std::size_t j = 0; j < n; ++j) acc[o][j] += wv * static_cast<Acc>(row[j]);
        }
      }
    }
  }
}

/// Valid cross-correlation of a padded C x Hp x Wp plane stack with O x C x Kh x Kw
/// weights. Every tap is evaluated, so the counter sees the full slot count.
template <typename In, typename Wt, typename Acc>
void correlate(const In* padded, std::size_t channels, std::size_t hp, std::size_t wp, const Wt* weights,
               std::size_t out_channels, std::size_t kh, std::size_t kw, bool flip, std::size_t stride,
               std::size_t out_h, std::size_t out_w, const std::vector<Acc>& bias, Acc* out, MacCounter* counter) {
  const std::size_t plane = out_h * out_w;
  const std::size_t taps = channels * kh * kw;
  if (stride == 1) {
    for (std::size_t o0 = 0; o0 < out_channels; o0 += kBlockO) {
      const std::size_t oc = std::min(kBlockO, out_channels - o0);
      const Wt* kernels[kBlockO];
      for (std::size_t o = 0; o < oc; ++o) kernels[o] = weights + (o0 + o) * taps;
      for (std::size_t oy = 0; oy < out_h; ++oy) {
        for (std::size_t ox = 0; ox < out_w; ox += kBlockW) {
          const std::size_t width = std::min(kBlockW, out_w - ox);
          Acc acc[kBlockO][kBlockW];
          for (std::size_t o = 0; o < kBlockO; ++o)
            for (std::size_t j = 0; j < kBlockW; ++j) acc[o][j] = bias.empty() || o >= oc ? Acc{} : bias[o0 + o];
          if (width == kBlockW) {
            accumulate_block<kBlockW>(padded, channels, hp, wp, kernels, oc, kh, kw, flip, oy, ox, width, acc);
          } else {
            accumulate_block<0>(padded, channels, hp, wp, kernels, oc, kh, kw, flip, oy, ox, width, acc);
          }
          for (std::size_t o = 0; o < oc; ++o) std::copy_n(acc[o], width, out + (o0 + o) * plane + oy * out_w + ox);
        }
      }
    }
  } else {
    for (std::size_t o = 0; o < out_channels; ++o) {
      Acc* dst = out + o * plane;
      std::fill(dst, dst + plane, bias.empty() ? Acc{} : bias[o]);
      for (std::size_t oy = 0; oy < out_h; ++oy) {
        Acc* orow = dst + oy * out_w;
        for (std::size_t c = 0; c < channels; ++c) {
          const In* src = padded + c * hp * wp;
          const Wt* kernel = weights + o * taps + c * kh * kw;
          for (std::size_t ky = 0; ky < kh; ++ky) {
            for (std::size_t kx = 0; kx < kw; ++kx) {
              const std::size_t wy = flip ? kh - 1 - ky : ky;
              const std::size_t wx = flip ? kw - 1 - kx : kx;
              const Acc wv = static_cast<Acc>(kernel[wy * kw + wx]);
              const In* row = src + (oy * stride + ky) * wp + kx;
              for (std::size_t ox = 0; ox < out_w; ++ox) orow[ox] += wv * static_cast<Acc>(row[ox * stride]);
            }
          }
        }
      }
    }
  }
  if (counter) counter->macs += static_cast<std::uint64_t>(out_channels) * channels * kh * kw * plane;
}

/// Copies one batch item into a zero-initialised padded buffer.
template <typename T, typename Src, typename Fn>
std::vector<T> pad_item(const Src* src, std::size_t channels, std::size_t h, std::size_t w, const Geometry& g, Fn convert) {
  std::vector<T> buf(channels * g.padded_h * g.padded_w, T{});
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t y = 0; y < h; ++y) {
      T* dst = buf.data() + (c * g.padded_h + y + g.pad_top) * g.padded_w + g.pad_left;
      const Src* row = src + (c * h + y) * w;
      for (std::size_t x = 0; x < w; ++x) dst[x] = convert(row[x]);
    }
  }
  return buf;
}

/// Zero-inserted, top/left padded buffer so that a flipped 2x2 correlation
/// reproduces the stride-2 transposed convolution.
template <typename T, typename Src, typename Fn>
std::vector<T> zero_insert_item(const Src* src, std::size_t channels, std::size_t h, std::size_t w, Fn convert) {
  const std::size_t hp = 2 * h + 1;
  const std::size_t wp = 2 * w + 1;
  std::vector<T> buf(channels * hp * wp, T{});
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t y = 0; y < h; ++y) {
      T* dst = buf.data() + (c * hp + 2 * y + 1) * wp + 1;
      const Src* row = src + (c * h + y) * w;
      for (std::size_t x = 0; x < w; ++x) dst[2 * x] = convert(row[x]);
    }
  }
  return buf;
}

std::int32_t saturate_i32(double v) {
  constexpr double lo = std::numeric_limits<std::int32_t>::min();
  constexpr double hi = std::numeric_limits<std::int32_t>::max();
  return static_cast<std::int32_t>(std::clamp(v, lo, hi));
}

std::vector<std::int32_t> quantized_bias(const ConvSpec& spec, double acc_scale) {
  std::vector<std::int32_t> bias;
  bias.reserve(spec.bias.size());
  for (float b : spec.bias) bias.push_back(saturate_i32(round_half_even(static_cast<double>(b) / acc_scale)));
  return bias;
}

std::vector<std::int8_t> requantize_acc(const std::vector<std::int32_t>& acc, double multiplier, const QuantParams& out) {
  const double lo = static_cast<double>(out.qmin());
  const double hi = static_cast<double>(out.qmax());
  std::vector<std::int8_t> codes(acc.size());
  std::transform(acc.begin(), acc.end(), codes.begin(), [&](std::int32_t a) {
    const double q = round_half_even(static_cast<double>(a) * multiplier) + out.zero_point;
    return static_cast<std::int8_t>(std::clamp(q, lo, hi));
  });
  return codes;
}

const QuantParams& quant_of(const Tensor& t, const char* op, const char* role) {
  if (t.dtype() != DType::i8) {
    throw Error(ErrorKind::shape, fmt::format("{}: {} must be an i8 tensor, got {}", op, role, to_string(t.dtype())));
  }
  return *t.quant();
}

template <typename Fn>
Tensor map_codes_or_values(const Tensor& x, Fn&& on_float, auto&& on_code) {
  if (x.dtype() == DType::f32) {
    const auto in = x.f32();
    std::vector<float> out(in.size());
    std::transform(in.begin(), in.end(), out.begin(), on_float);
    return Tensor(x.shape(), std::move(out));
  }
  const auto in = x.i8();
  std::vector<std::int8_t> out(in.size());
  std::transform(in.begin(), in.end(), out.begin(), on_code);
  return Tensor(x.shape(), std::move(out), *x.quant());
}

/// Applies `fn(src_plane, dst_plane, h, w)` per N*C plane for f32 or i8 payloads.
template <typename Fn>
Tensor per_plane(const Tensor& x, std::size_t out_h, std::size_t out_w, Fn&& fn) {
  const std::size_t planes = x.dim(0) * x.dim(1);
  const std::size_t h = x.dim(2), w = x.dim(3);
  Tensor::Shape shape{x.dim(0), x.dim(1), out_h, out_w};
  auto run = [&](auto in, auto& out) {
    for (std::size_t p = 0; p < planes; ++p) fn(in.data() + p * h * w, out.data() + p * out_h * out_w, h, w);
  };
  if (x.dtype() == DType::f32) {
    std::vector<float> out(planes * out_h * out_w);
    run(x.f32(), out);
    return Tensor(std::move(shape), std::move(out));
  }
  if (x.dtype() == DType::i8) {
    std::vector<std::int8_t> out(planes * out_h * out_w);
    run(x.i8(), out);
    return Tensor(std::move(shape), std::move(out), *x.quant());
  }
  throw Error(ErrorKind::shape, "i32 activations are not supported");
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const ConvSpec& spec, MacCounter* counter) {
  check_conv_args(x, w, spec, "conv2d");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const Geometry g = conv_geometry(h, wd, spec);
  const auto in = x.f32();
  const auto weights = w.f32();
  const std::size_t out_item = spec.out_channels * g.out_h * g.out_w;
  std::vector<float> out(n * out_item);
  for (std::size_t i = 0; i < n; ++i) {
    auto buf = pad_item<float>(in.data() + i * c * h * wd, c, h, wd, g, [](float v) { return v; });
    correlate(buf.data(), c, g.padded_h, g.padded_w, weights.data(), spec.out_channels, spec.kernel_h, spec.kernel_w,
              false, spec.stride, g.out_h, g.out_w, spec.bias, out.data() + i * out_item, counter);
  }
  return Tensor({n, spec.out_channels, g.out_h, g.out_w}, std::move(out));
}

Tensor tconv2d(const Tensor& x, const Tensor& w, const ConvSpec& spec, MacCounter* counter) {
  check_tconv_spec(spec);
  check_conv_args(x, w, spec, "tconv2d");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t out_h = 2 * h, out_w = 2 * wd;
  const auto in = x.f32();
  const auto weights = w.f32();
  const std::size_t out_item = spec.out_channels * out_h * out_w;
  std::vector<float> out(n * out_item);
  for (std::size_t i = 0; i < n; ++i) {
    auto buf = zero_insert_item<float>(in.data() + i * c * h * wd, c, h, wd, [](float v) { return v; });
    correlate(buf.data(), c, 2 * h + 1, 2 * wd + 1, weights.data(), spec.out_channels, 2, 2, true, 1, out_h, out_w,
              spec.bias, out.data() + i * out_item, counter);
  }
  return Tensor({n, spec.out_channels, out_h, out_w}, std::move(out));
}

Tensor conv2d_q(const Tensor& x, const Tensor& w, const ConvSpec& spec, const QuantParams& out_p,
                MacCounter* counter) {
  check_conv_args(x, w, spec, "conv2d_q");
  const auto& px = quant_of(x, "conv2d_q", "input");
  const auto& pw = quant_of(w, "conv2d_q", "weight");
  out_p.validate(DType::i8);
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const Geometry g = conv_geometry(h, wd, spec);
  const double acc_scale = static_cast<double>(px.scale) * static_cast<double>(pw.scale);
  const auto bias = quantized_bias(spec, acc_scale);

  std::vector<std::int32_t> weights(w.size());
  std::transform(w.i8().begin(), w.i8().end(), weights.begin(),
                 [&](std::int8_t v) { return static_cast<std::int32_t>(v) - pw.zero_point; });

  const auto in = x.i8();
  const std::size_t out_item = spec.out_channels * g.out_h * g.out_w;
  std::vector<std::int32_t> acc(n * out_item);
  for (std::size_t i = 0; i < n; ++i) {
    auto buf = pad_item<std::int32_t>(in.data() + i * c * h * wd, c, h, wd, g,
                                      [&](std::int8_t v) { return static_cast<std::int32_t>(v) - px.zero_point; });
    correlate(buf.data(), c, g.padded_h, g.padded_w, weights.data(), spec.out_channels, spec.kernel_h, spec.kernel_w,
              false, spec.stride, g.out_h, g.out_w, bias, acc.data() + i * out_item, counter);
  }
  const double multiplier = acc_scale / static_cast<double>(out_p.scale);
  return Tensor({n, spec.out_channels, g.out_h, g.out_w}, requantize_acc(acc, multiplier, out_p), out_p);
}

Tensor tconv2d_q(const Tensor& x, const Tensor& w, const ConvSpec& spec, const QuantParams& out_p,
                 MacCounter* counter) {
  check_tconv_spec(spec);
  check_conv_args(x, w, spec, "tconv2d_q");
  const auto& px = quant_of(x, "tconv2d_q", "input");
  const auto& pw = quant_of(w, "tconv2d_q", "weight");
  out_p.validate(DType::i8);
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t out_h = 2 * h, out_w = 2 * wd;
  const double acc_scale = static_cast<double>(px.scale) * static_cast<double>(pw.scale);
  const auto bias = quantized_bias(spec, acc_scale);

  std::vector<std::int32_t> weights(w.size());
  std::transform(w.i8().begin(), w.i8().end(), weights.begin(),
                 [&](std::int8_t v) { return static_cast<std::int32_t>(v) - pw.zero_point; });

  const auto in = x.i8();
  const std::size_t out_item = spec.out_channels * out_h * out_w;
  std::vector<std::int32_t> acc(n * out_item);
  for (std::size_t i = 0; i < n; ++i) {
    auto buf = zero_insert_item<std::int32_t>(in.data() + i * c * h * wd, c, h, wd, [&](std::int8_t v) {
      return static_cast<std::int32_t>(v) - px.zero_point;
    });
    correlate(buf.data(), c, 2 * h + 1, 2 * wd + 1, weights.data(), spec.out_channels, 2, 2, true, 1, out_h, out_w,
              bias, acc.data() + i * out_item, counter);
  }
  const double multiplier = acc_scale / static_cast<double>(out_p.scale);
  return Tensor({n, spec.out_channels, out_h, out_w}, requantize_acc(acc, multiplier, out_p), out_p);
}

Tensor maxpool2(const Tensor& x) {
  check_activation(x, "maxpool2");
  const std::size_t h = x.dim(2), w = x.dim(3);
  if (h % 2 != 0 || w % 2 != 0) {
    throw Error(ErrorKind::shape, fmt::format("maxpool2 needs even spatial dims, got {}x{}", h, w));
  }
  return per_plane(x, h / 2, w / 2, [](const auto* src, auto* dst, std::size_t ih, std::size_t iw) {
    const std::size_t ow = iw / 2;
    for (std::size_t y = 0; y < ih / 2; ++y) {
      const auto* r0 = src + (2 * y) * iw;
      const auto* r1 = r0 + iw;
      for (std::size_t x = 0; x < ow; ++x) {
        dst[y * ow + x] = std::max({r0[2 * x], r0[2 * x + 1], r1[2 * x], r1[2 * x + 1]});
      }
    }
  });
}

Tensor nn_upsample2(const Tensor& x) {
  check_activation(x, "nn_upsample2");
  return per_plane(x, 2 * x.dim(2), 2 * x.dim(3), [](const auto* src, auto* dst, std::size_t ih, std::size_t iw) {
    const std::size_t ow = 2 * iw;
    for (std::size_t y = 0; y < 2 * ih; ++y) {
      const auto* row = src + (y / 2) * iw;
      for (std::size_t x = 0; x < ow; ++x) dst[y * ow + x] = row[x / 2];
    }
  });
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  if (b.empty()) return a;
  if (a.empty()) return b;
  check_activation(a, "concat_channels");
  check_activation(b, "concat_channels");
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
    throw Error(ErrorKind::shape, fmt::format("concat_channels: {} and {} differ outside the channel axis",
                                              shape_string(a.shape()), shape_string(b.shape())));
  }
  const std::size_t n = a.dim(0);
  const std::size_t item_a = a.size() / n, item_b = b.size() / n;
  const Tensor::Shape shape{n, a.dim(1) + b.dim(1), a.dim(2), a.dim(3)};
  auto stack = [&](auto pa, auto pb, auto& out) {
    auto it = out.begin();
    for (std::size_t i = 0; i < n; ++i) {
      it = std::copy_n(pa.begin() + static_cast<std::ptrdiff_t>(i * item_a), item_a, it);
      it = std::copy_n(pb.begin() + static_cast<std::ptrdiff_t>(i * item_b), item_b, it);
    }
  };
  if (a.dtype() == DType::f32 && b.dtype() == DType::f32) {
    std::vector<float> out(a.size() + b.size());
    stack(a.f32(), b.f32(), out);
    return Tensor(shape, std::move(out));
  }
  if (a.dtype() == DType::i8 && b.dtype() == DType::i8 && a.quant() == b.quant()) {
    std::vector<std::int8_t> out(a.size() + b.size());
    stack(a.i8(), b.i8(), out);
    return Tensor(shape, std::move(out), *a.quant());
  }
  throw Error(ErrorKind::shape, "concat_channels: inputs must share dtype and quant params");
}

Tensor relu(const Tensor& x) {
  const std::int8_t floor_code = x.dtype() == DType::i8 ? static_cast<std::int8_t>(x.quant()->zero_point) : 0;
  return map_codes_or_values(
      x, [](float v) { return v > 0.0f ? v : 0.0f; },
      [floor_code](std::int8_t q) { return std::max(q, floor_code); });
}

Tensor sigmoid(const Tensor& x) {
  const auto in = x.f32();
  std::vector<float> out(in.size());
  // Saturating inputs would round to exactly 0 or 1 in f32; keep the open interval.
  constexpr float lo = std::numeric_limits<float>::denorm_min();
  const float hi = std::nextafter(1.0f, 0.0f);
  std::transform(in.begin(), in.end(), out.begin(), [lo, hi](float v) {
    return std::clamp(static_cast<float>(1.0 / (1.0 + std::exp(-static_cast<double>(v)))), lo, hi);
  });
  return Tensor(x.shape(), std::move(out));
}

Tensor requantize(const Tensor& q, const QuantParams& out_p) {
  const auto& in_p = quant_of(q, "requantize", "input");
  out_p.validate(DType::i8);
  if (in_p == out_p) return q;
  const double ratio = static_cast<double>(in_p.scale) / static_cast<double>(out_p.scale);
  const double lo = static_cast<double>(out_p.qmin());
  const double hi = static_cast<double>(out_p.qmax());
  const auto in = q.i8();
  std::vector<std::int8_t> out(in.size());
  std::transform(in.begin(), in.end(), out.begin(), [&](std::int8_t c) {
    const double v = round_half_even(static_cast<double>(c - in_p.zero_point) * ratio) + out_p.zero_point;
    return static_cast<std::int8_t>(std::clamp(v, lo, hi));
  });
  return Tensor(q.shape(), std::move(out), out_p);
}

Tensor concat_channels_q(const Tensor& a, const Tensor& b, const QuantParams& out_p) {
  return concat_channels(requantize(a, out_p), requantize(b, out_p));
}

}  // namespace unetlite::nn
