#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "unetlite/nn_ops.hpp"
#include "unetlite/tensor.hpp"

namespace unetlite {

struct WeightStore;

enum class UpsampleMode { transposed_conv, nn_upsample_conv };

const char* to_string(UpsampleMode mode) noexcept;
UpsampleMode parse_upsample_mode(const std::string& text);

struct UNetConfig {
  int blocks = 4;
  std::size_t base_channels = 16;
  std::size_t in_channels = 3;
  std::size_t out_channels = 1;
  UpsampleMode upsample = UpsampleMode::transposed_conv;
  std::size_t input_h = 256;
  std::size_t input_w = 256;

  /// Channel width at encoder depth d; depth == blocks is the middle.
  std::size_t width(int depth) const noexcept { return base_channels << depth; }

  /// Throws Error(config) on out-of-range values or indivisible input size.
  void validate() const;

  bool operator==(const UNetConfig&) const = default;
};

enum class PathKind { encoder, middle, decoder, final };
enum class LayerKind { conv, up };

const char* to_string(PathKind path) noexcept;

/// One weighted layer of the unrolled graph.
struct LayerSpec {
  std::string name;  // e.g. "enc0.conv1", "dec2.up", "final.conv"
  PathKind path = PathKind::encoder;
  LayerKind kind = LayerKind::conv;
  int block = 0;
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 3;
  std::size_t out_h = 0;
  std::size_t out_w = 0;
  bool relu = true;

  std::uint64_t params() const noexcept;
  /// Output-centric count: in * out * k * k * out_h * out_w (bias adds excluded).
  std::uint64_t macs() const noexcept;
  Tensor::Shape weight_shape() const { return {out_channels, in_channels, kernel, kernel}; }
  std::string weight_name() const { return name + ".weight"; }
  std::string bias_name() const { return name + ".bias"; }
  nn::ConvSpec conv_spec(std::vector<float> bias) const;
};

/// Encoder blocks, middle, decoder blocks (deepest first), final 1x1 conv.
std::vector<LayerSpec> layer_plan(const UNetConfig& config);

/// Names of every activation site observed during a forward pass, in
/// execution order: "input", each layer name, "dec{b}.concat", "output".
std::vector<std::string> activation_sites(const UNetConfig& config);

struct Layer {
  LayerSpec spec;
  Tensor weight;            // f32, O,I,K,K (dequantized values for quantized layers)
  std::vector<float> bias;  // f32, one per output channel
};

enum class QuantExec { integer, emulated };

struct LayerQuant {
  bool keep_float = false;
  Tensor weight_q;  // i8 codes with symmetric params; empty when keep_float
};

/// Everything forward() needs to run a quantized model.
struct ModelQuant {
  QuantExec exec = QuantExec::integer;
  int weight_bits = 8;
  int act_bits = 8;
  bool skip_first_layer = true;
  std::map<std::string, QuantParams> sites;
  std::vector<LayerQuant> layers;  // parallel to UNetModel::layers()
  std::map<std::string, std::pair<float, float>> calibration;  // site -> observed (min, max)
};

class UNetModel {
 public:
  UNetModel() = default;
  UNetModel(UNetConfig config, std::vector<Layer> layers, bool bound);

  const UNetConfig& config() const noexcept { return config_; }
  const std::vector<Layer>& layers() const noexcept { return layers_; }
  const Layer& layer(const std::string& name) const;
  bool bound() const noexcept { return bound_; }

  const std::optional<ModelQuant>& quant() const noexcept { return quant_; }
  bool quantized() const noexcept { return quant_.has_value(); }
  UNetModel with_quant(ModelQuant quant) const;

  std::uint64_t total_params() const noexcept;

 private:
  UNetConfig config_;
  std::vector<Layer> layers_;
  bool bound_ = false;
  std::optional<ModelQuant> quant_;
};

/// Graph with zero-filled, unbound weights.
UNetModel build(const UNetConfig& config);

/// Binds every `<layer>.weight` / `<layer>.bias` from the store. Missing
/// tensors raise Error(binding), wrong dims Error(shape), both naming the
/// tensor. Names the model does not use are appended to `unused`.
UNetModel bind_weights(const UNetModel& model, const WeightStore& store,
                       std::vector<std::string>* unused = nullptr);

/// Deterministic He-style initialisation for tests, fixtures and benchmarks.
WeightStore random_weights(const UNetConfig& config, std::uint64_t seed);

/// Float weights of a bound model, quantized layers as i8 codes.
WeightStore export_weights(const UNetModel& model);

struct ForwardHooks {
  std::function<void(const std::string& site, const Tensor& value)> observe;
  nn::MacCounter* counter = nullptr;
  std::map<std::string, std::uint64_t>* layer_macs = nullptr;
};

/// x is N,in_channels,H,W in [0,1]; returns N,out_channels,H,W probabilities.
Tensor forward(const UNetModel& model, const Tensor& x, const ForwardHooks& hooks = {});

}  // namespace unetlite
