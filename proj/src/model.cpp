#include "unetlite/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include <fmt/format.h>

#include "unetlite/errors.hpp"
#include "unetlite/storage.hpp"

namespace unetlite {

const char* to_string(UpsampleMode mode) noexcept {
  return mode == UpsampleMode::transposed_conv ? "tconv" : "nn_upsample_conv";
}

UpsampleMode parse_upsample_mode(const std::string& text) {
  if (text == "tconv" || text == "transposed_conv") return UpsampleMode::transposed_conv;
  if (text == "nn_upsample_conv" || text == "upsample") return UpsampleMode::nn_upsample_conv;
  throw Error(ErrorKind::config, fmt::format("unknown upsample mode '{}'", text));
}

const char* to_string(PathKind path) noexcept {
  switch (path) {
    case PathKind::encoder: return "encoder";
    case PathKind::middle: return "middle";
    case PathKind::decoder: return "decoder";
    case PathKind::final: return "final";
  }
  return "?";
}

void UNetConfig::validate() const {
  if (blocks < 1 || blocks > 4) throw Error(ErrorKind::config, fmt::format("blocks must be in [1,4], got {}", blocks));
  if (base_channels < 1 || base_channels > 4096) {
    throw Error(ErrorKind::config, fmt::format("base_channels must be in [1,4096], got {}", base_channels));
  }
  if (in_channels < 1 || out_channels < 1) throw Error(ErrorKind::config, "channel counts must be positive");
  const std::size_t factor = std::size_t{1} << blocks;
  if (input_h == 0 || input_w == 0 || input_h % factor != 0 || input_w % factor != 0) {
    throw Error(ErrorKind::config, fmt::format("input size {}x{} is not divisible by 2^{} = {}", input_h, input_w,
                                               blocks, factor));
  }
}

std::uint64_t LayerSpec::params() const noexcept {
  return static_cast<std::uint64_t>(in_channels) * out_channels * kernel * kernel + out_channels;
}

std::uint64_t LayerSpec::macs() const noexcept {
  return static_cast<std::uint64_t>(in_channels) * out_channels * kernel * kernel * out_h * out_w;
}

nn::ConvSpec LayerSpec::conv_spec(std::vector<float> bias) const {
  nn::ConvSpec spec;
  spec.in_channels = in_channels;
  spec.out_channels = out_channels;
  spec.kernel_h = kernel;
  spec.kernel_w = kernel;
  spec.bias = std::move(bias);
  if (kind == LayerKind::up) spec.stride = 2;  // tconv form; the nn-upsample form overrides this
  return spec;
}

std::vector<LayerSpec> layer_plan(const UNetConfig& config) {
  config.validate();
  std::vector<LayerSpec> plan;
  auto add = [&](std::string name, PathKind path, LayerKind kind, int block, std::size_t in, std::size_t out,
                 std::size_t k, std::size_t h, std::size_t w, bool relu) {
    plan.push_back(LayerSpec{std::move(name), path, kind, block, in, out, k, h, w, relu});
  };
  const int depth = config.blocks;
  std::size_t in = config.in_channels;
  for (int b = 0; b < depth; ++b) {
    const std::size_t h = config.input_h >> b, w = config.input_w >> b, c = config.width(b);
    add(fmt::format("enc{}.conv0", b), PathKind::encoder, LayerKind::conv, b, in, c, 3, h, w, true);
    add(fmt::format("enc{}.conv1", b), PathKind::encoder, LayerKind::conv, b, c, c, 3, h, w, true);
    in = c;
  }
  {
    const std::size_t h = config.input_h >> depth, w = config.input_w >> depth, c = config.width(depth);
    add("mid.conv0", PathKind::middle, LayerKind::conv, depth, in, c, 3, h, w, true);
    add("mid.conv1", PathKind::middle, LayerKind::conv, depth, c, c, 3, h, w, true);
    in = c;
  }
  for (int b = depth - 1; b >= 0; --b) {
    const std::size_t h = config.input_h >> b, w = config.input_w >> b, c = config.width(b);
    add(fmt::format("dec{}.up", b), PathKind::decoder, LayerKind::up, b, in, c, 2, h, w, false);
    add(fmt::format("dec{}.conv0", b), PathKind::decoder, LayerKind::conv, b, 2 * c, c, 3, h, w, true);
    add(fmt::format("dec{}.conv1", b), PathKind::decoder, LayerKind::conv, b, c, c, 3, h, w, true);
    in = c;
  }
  add("final.conv", PathKind::final, LayerKind::conv, 0, in, config.out_channels, 1, config.input_h, config.input_w,
      false);
  return plan;
}

std::vector<std::string> activation_sites(const UNetConfig& config) {
  std::vector<std::string> sites{"input"};
  for (const auto& l : layer_plan(config)) {
    sites.push_back(l.name);
    if (l.kind == LayerKind::up) sites.push_back(fmt::format("dec{}.concat", l.block));
  }
  sites.push_back("output");
  return sites;
}

UNetModel::UNetModel(UNetConfig config, std::vector<Layer> layers, bool bound)
    : config_(std::move(config)), layers_(std::move(layers)), bound_(bound) {}

const Layer& UNetModel::layer(const std::string& name) const {
  for (const auto& l : layers_) {
    if (l.spec.name == name) return l;
  }
  throw Error(ErrorKind::config, fmt::format("no layer named '{}'", name));
}

UNetModel UNetModel::with_quant(ModelQuant quant) const {
  if (quant.layers.size() != layers_.size()) {
    throw Error(ErrorKind::config, "quantization state does not cover every layer");
  }
  UNetModel out = *this;
  out.quant_ = std::move(quant);
  return out;
}

std::uint64_t UNetModel::total_params() const noexcept {
  std::uint64_t total = 0;
  for (const auto& l : layers_) total += l.spec.params();
  return total;
}

UNetModel build(const UNetConfig& config) {
  std::vector<Layer> layers;
  for (auto& spec : layer_plan(config)) {
    Layer l;
    l.weight = Tensor::zeros(spec.weight_shape());
    l.bias.assign(spec.out_channels, 0.0f);
    l.spec = std::move(spec);
    layers.push_back(std::move(l));
  }
  return UNetModel(config, std::move(layers), false);
}

UNetModel bind_weights(const UNetModel& model, const WeightStore& store, std::vector<std::string>* unused) {
  std::vector<Layer> layers = model.layers();
  std::set<std::string> used;
  for (auto& l : layers) {
    const Tensor* w = store.find(l.spec.weight_name());
    const Tensor* b = store.find(l.spec.bias_name());
    if (!w) throw Error(ErrorKind::binding, fmt::format("weight store is missing '{}'", l.spec.weight_name()));
    if (!b) throw Error(ErrorKind::binding, fmt::format("weight store is missing '{}'", l.spec.bias_name()));
    if (w->shape() != l.spec.weight_shape()) {
      throw Error(ErrorKind::shape, fmt::format("'{}' has shape {}, expected {}", l.spec.weight_name(),
                                                shape_string(w->shape()), shape_string(l.spec.weight_shape())));
    }
    if (b->shape() != Tensor::Shape{l.spec.out_channels}) {
      throw Error(ErrorKind::shape, fmt::format("'{}' has shape {}, expected ({})", l.spec.bias_name(),
                                                shape_string(b->shape()), l.spec.out_channels));
    }
    if (b->dtype() != DType::f32) {
      throw Error(ErrorKind::binding, fmt::format("'{}' must be f32", l.spec.bias_name()));
    }
    l.weight = w->dtype() == DType::f32 ? *w : dequantize(*w);
    l.bias.assign(b->f32().begin(), b->f32().end());
    used.insert(l.spec.weight_name());
    used.insert(l.spec.bias_name());
  }
  if (unused) {
    for (const auto& [name, t] : store.tensors) {
      if (!used.count(name)) unused->push_back(name);
    }
  }
  return UNetModel(model.config(), std::move(layers), true);
}

WeightStore random_weights(const UNetConfig& config, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  WeightStore store;
  for (const auto& spec : layer_plan(config)) {
    const double fan_in = static_cast<double>(spec.in_channels * spec.kernel * spec.kernel);
    std::normal_distribution<double> weight_dist(0.0, std::sqrt(2.0 / fan_in));
    std::uniform_real_distribution<double> bias_dist(-0.05, 0.05);
    std::vector<float> w(shape_volume(spec.weight_shape()));
    for (auto& v : w) v = static_cast<float>(weight_dist(rng));
    std::vector<float> b(spec.out_channels);
    for (auto& v : b) v = static_cast<float>(bias_dist(rng));
    store.add(spec.weight_name(), Tensor(spec.weight_shape(), std::move(w)));
    store.add(spec.bias_name(), Tensor({spec.out_channels}, std::move(b)));
  }
  return store;
}

WeightStore export_weights(const UNetModel& model) {
  WeightStore store;
  const auto& quant = model.quant();
  for (std::size_t i = 0; i < model.layers().size(); ++i) {
    const auto& l = model.layers()[i];
    const bool as_codes = quant && !quant->layers[i].keep_float;
    store.add(l.spec.weight_name(), as_codes ? quant->layers[i].weight_q : l.weight);
    store.add(l.spec.bias_name(), Tensor({l.spec.out_channels}, l.bias));
  }
  if (quant) store.calibration = quant->calibration;
  return store;
}

// ---------------------------------------------------------------------------
// Forward

namespace {

void check_input(const UNetModel& model, const Tensor& x) {
  const auto& cfg = model.config();
  if (!model.bound()) throw Error(ErrorKind::binding, "model has no bound weights");
  if (x.dtype() != DType::f32 || x.rank() != 4 || x.dim(1) != cfg.in_channels || x.dim(2) != cfg.input_h ||
      x.dim(3) != cfg.input_w) {
    throw Error(ErrorKind::shape, fmt::format("forward expects (N,{},{},{}) f32 input, got {}", cfg.in_channels,
                                              cfg.input_h, cfg.input_w, shape_string(x.shape())));
  }
}

/// Execution strategy for one numeric mode. Values flowing between layers are
/// f32 for the float and emulated modes and i8 for the integer mode.
class Executor {
 public:
  Executor(const UNetModel& model, const ForwardHooks& hooks) : model_(model), hooks_(hooks) {
    if (const auto& q = model.quant()) quant_ = &*q;
  }

  Tensor run(const Tensor& x) {
    const auto& layers = model_.layers();
    // A float first layer consumes the raw input, so the input site is only
    // quantized when that layer is.
    Tensor cur = x;
    if (quant_ && !quant_->layers.front().keep_float) {
      cur = at_site("input", x);
    } else {
      observe("input", x);
    }
    std::vector<Tensor> skips;
    std::size_t i = 0;
    for (; i < layers.size() && layers[i].spec.path == PathKind::encoder; ++i) {
      cur = apply(i, cur);
      if (layers[i].spec.name.ends_with("conv1")) {
        skips.push_back(cur);
        cur = nn::maxpool2(cur);
      }
    }
    for (; i < layers.size() && layers[i].spec.path == PathKind::middle; ++i) cur = apply(i, cur);
    for (; i < layers.size() && layers[i].spec.path == PathKind::decoder; ++i) {
      const auto& spec = layers[i].spec;
      cur = apply(i, cur);
      if (spec.kind == LayerKind::up) {
        cur = concat(fmt::format("dec{}.concat", spec.block), cur, skips.back());
        skips.pop_back();
      }
    }
    Tensor logits = apply(i, cur);
    Tensor probs = nn::sigmoid(integer() ? dequantize(logits) : logits);
    observe("output", probs);
    return probs;
  }

 private:
  bool integer() const { return quant_ && quant_->exec == QuantExec::integer; }

  const QuantParams& site_params(const std::string& site) const {
    auto it = quant_->sites.find(site);
    if (it == quant_->sites.end()) {
      throw Error(ErrorKind::calibration, fmt::format("no quantization parameters for site '{}'", site));
    }
    return it->second;
  }

  void observe(const std::string& site, const Tensor& value) const {
    if (hooks_.observe) hooks_.observe(site, value);
  }

  /// Converts a freshly produced float activation into the representation the
  /// next layer consumes.
  Tensor at_site(const std::string& site, Tensor value) const {
    if (quant_) {
      const auto& p = site_params(site);
      value = integer() ? quantize(value, p) : fake_quantize(value, p);
    }
    observe(site, value);
    return value;
  }

  Tensor concat(const std::string& site, const Tensor& up, const Tensor& skip) const {
    if (integer()) {
      Tensor out = nn::concat_channels_q(up, skip, site_params(site));
      observe(site, out);
      return out;
    }
    return at_site(site, nn::concat_channels(up, skip));
  }

  Tensor apply(std::size_t index, const Tensor& input) {
    const Layer& layer = model_.layers()[index];
    const auto& spec = layer.spec;
    const std::uint64_t before = counter_.macs;
    Tensor out;
    if (integer() && !quant_->layers[index].keep_float) {
      out = apply_integer(layer, quant_->layers[index].weight_q, input);
    } else {
      const Tensor x = input.dtype() == DType::f32 ? input : dequantize(input);
      out = apply_float(layer, x);
      if (spec.relu) out = nn::relu(out);
      if (quant_) {
        out = at_site(spec.name, std::move(out));
      } else {
        observe(spec.name, out);
      }
    }
    const std::uint64_t delta = counter_.macs - before;
    if (hooks_.counter) hooks_.counter->macs += delta;
    if (hooks_.layer_macs) (*hooks_.layer_macs)[spec.name] += delta;
    return out;
  }

  Tensor apply_float(const Layer& layer, const Tensor& x) {
    const auto& spec = layer.spec;
    auto conv = spec.conv_spec(layer.bias);
    if (spec.kind == LayerKind::conv) return nn::conv2d(x, layer.weight, conv, &counter_);
    if (model_.config().upsample == UpsampleMode::transposed_conv) return nn::tconv2d(x, layer.weight, conv, &counter_);
    conv.stride = 1;
    return nn::conv2d(nn::nn_upsample2(x), layer.weight, conv, &counter_);
  }

  Tensor apply_integer(const Layer& layer, const Tensor& weight_q, const Tensor& input) {
    const auto& spec = layer.spec;
    const QuantParams& out_p = site_params(spec.name);
    const Tensor x = input.dtype() == DType::i8 ? input : quantize(input, site_params("input"));
    auto conv = spec.conv_spec(layer.bias);
    Tensor out;
    if (spec.kind == LayerKind::conv) {
      out = nn::conv2d_q(x, weight_q, conv, out_p, &counter_);
    } else if (model_.config().upsample == UpsampleMode::transposed_conv) {
      out = nn::tconv2d_q(x, weight_q, conv, out_p, &counter_);
    } else {
      conv.stride = 1;
      out = nn::conv2d_q(nn::nn_upsample2(x), weight_q, conv, out_p, &counter_);
    }
    if (spec.relu) out = nn::relu(out);
    observe(spec.name, out);
    return out;
  }

  const UNetModel& model_;
  const ForwardHooks& hooks_;
  const ModelQuant* quant_ = nullptr;
  nn::MacCounter counter_;
};

}  // namespace

Tensor forward(const UNetModel& model, const Tensor& x, const ForwardHooks& hooks) {
  check_input(model, x);
  return Executor(model, hooks).run(x);
}

}  // namespace unetlite
