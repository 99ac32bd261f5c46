// unetlite command line: analyze, init, infer, quantize, eval, bench, estimate.

#include <CLI11.hpp>
#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "unetlite/analyzer.hpp"
#include "unetlite/bench.hpp"
#include "unetlite/dataflow.hpp"
#include "unetlite/errors.hpp"
#include "unetlite/metrics.hpp"
#include "unetlite/model_dir.hpp"
#include "unetlite/quant.hpp"
#include "unetlite/storage.hpp"
#include "unetlite/tiling.hpp"

namespace fs = std::filesystem;
using namespace unetlite;

namespace {

struct Global {
  std::uint64_t seed = 42;
  unsigned workers = 0;
};

std::string thousands(std::uint64_t v) {
  std::string digits = std::to_string(v);
  std::string out;
  for (std::size_t i = 0; i < digits.size(); ++i) {
    if (i != 0 && (digits.size() - i) % 3 == 0) out.push_back(',');
    out.push_back(digits[i]);
  }
  return out;
}

void emit(const std::string& text, const std::string& path) {
  if (path.empty() || path == "-") {
    std::fwrite(text.data(), 1, text.size(), stdout);
    return;
  }
  write_file_bytes(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

unsigned worker_count(const Global& g) {
  return g.workers != 0 ? g.workers : std::max(1u, std::thread::hardware_concurrency());
}

// ---------------------------------------------------------------------------

struct AnalyzeArgs {
  int blocks = 4;
  std::size_t base = 16;
  std::string upsample = "tconv";
  std::size_t input = 256;
  bool sweep = false;
  std::string out;
};

int run_analyze(const AnalyzeArgs& a) {
  if (a.sweep) {
    emit(analyzer::sweep_csv(analyzer::sweep()), a.out);
    return 0;
  }
  UNetConfig cfg;
  cfg.blocks = a.blocks;
  cfg.base_channels = a.base;
  cfg.upsample = parse_upsample_mode(a.upsample);
  cfg.input_h = cfg.input_w = a.input;
  const auto report = analyzer::analyze(cfg);
  const auto& s = report.shares;
  fmt::print("config   blocks={} base={} upsample={} input={}x{}\n", cfg.blocks, cfg.base_channels,
             to_string(cfg.upsample), cfg.input_h, cfg.input_w);
  fmt::print("params   {}\n", thousands(report.total_params));
  fmt::print("macs     {}\n", thousands(report.total_macs));
  fmt::print("params   encoder {:.4f}  middle {:.4f}  decoder {:.4f}  final {:.4f}\n", s.params.encoder,
             s.params.middle, s.params.decoder, s.params.final);
  fmt::print("macs     encoder {:.4f}  middle {:.4f}  decoder {:.4f}  final {:.4f}\n", s.macs.encoder, s.macs.middle,
             s.macs.decoder, s.macs.final);
  if (!a.out.empty()) emit(analyzer::cost_csv(report), a.out);
  return 0;
}

// ---------------------------------------------------------------------------

struct InitArgs {
  int blocks = 4;
  std::size_t base = 16;
  std::string upsample = "tconv";
  std::size_t input = 256;
  std::string out;
};

int run_init(const InitArgs& a, const Global& g) {
  UNetConfig cfg;
  cfg.blocks = a.blocks;
  cfg.base_channels = a.base;
  cfg.upsample = parse_upsample_mode(a.upsample);
  cfg.input_h = cfg.input_w = a.input;
  save_model_dir(a.out, bind_weights(build(cfg), random_weights(cfg, g.seed)));
  fmt::print("wrote {} ({} params)\n", a.out, thousands(analyzer::count_params(cfg)));
  return 0;
}

// ---------------------------------------------------------------------------

struct TileArgs {
  std::size_t tile = 256;
  std::size_t stride = 224;
  float threshold = 0.5f;
  bool quantized = false;
};

struct InferArgs {
  std::string model, image, out;
  TileArgs tiling;
};

int run_infer(const InferArgs& a, const Global& g) {
  const auto model = load_model_dir(a.model, a.tiling.quantized, a.tiling.tile);
  const auto img = read_ppm(a.image);
  const auto grid = plan(img.dim(2), img.dim(3), a.tiling.tile, a.tiling.stride);
  const auto mask = segment_image(model, img, grid, a.tiling.threshold, worker_count(g));
  write_pgm(a.out, mask);
  std::size_t ones = 0;
  for (auto v : mask.values) ones += v;
  fmt::print("{}x{} image, {} tiles, {} building pixels -> {}\n", img.dim(3), img.dim(2), grid.count(), ones, a.out);
  return 0;
}

// ---------------------------------------------------------------------------

struct QuantizeArgs {
  std::string model, calib, out;
  int bits_w = 8;
  int bits_a = 8;
  bool no_skip_first = false;
  std::optional<double> percentile;
  std::optional<std::size_t> limit;
};

std::vector<fs::path> calibration_images(const fs::path& dir) {
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw Error(ErrorKind::io, fmt::format("calibration dir '{}' not found", dir.string()));
  std::vector<fs::path> out;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".ppm") out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  if (out.empty()) throw Error(ErrorKind::io, fmt::format("no .ppm images under '{}'", dir.string()));
  return out;
}

int run_quantize(const QuantizeArgs& a) {
  QuantScheme scheme;
  scheme.weight_bits = a.bits_w;
  scheme.act_bits = a.bits_a;
  scheme.skip_first_layer = !a.no_skip_first;
  if (a.percentile) {
    scheme.calibration = CalibrationMode::percentile;
    scheme.percentile = *a.percentile;
  }
  scheme.validate();

  const auto model = load_model_dir(a.model);
  const std::size_t t = model.config().input_h;
  auto images = calibration_images(a.calib);
  if (a.limit && *a.limit < images.size()) images.resize(*a.limit);
  std::vector<Tensor> tiles;
  for (const auto& path : images) {
    const auto img = read_ppm(path);
    const auto grid = plan(img.dim(2), img.dim(3), t, t);
    for (std::size_t i = 0; i < grid.count(); ++i) tiles.push_back(crop_tile(img, grid, i));
  }
  const auto q = quantize_model(model, calibrate(model, tiles, scheme), scheme);
  save_model_dir(a.out, q, scheme);
  fmt::print("calibrated on {} tiles from {} images; W{}A{} {} ({} bytes of weights) -> {}\n", tiles.size(),
             images.size(), scheme.weight_bits, scheme.act_bits,
             uses_integer_kernels(scheme) ? "integer" : "emulated", quantized_size(q), a.out);
  return 0;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string model, data, out;
  std::optional<std::size_t> limit;
  TileArgs tiling;
};

int run_eval(const EvalArgs& a, const Global& g) {
  const auto model = load_model_dir(a.model, a.tiling.quantized, a.tiling.tile);
  const auto index = index_dataset(a.data, a.limit);
  if (index.size() == 0) throw Error(ErrorKind::io, fmt::format("no images in '{}'", a.data));
  metrics::Confusion conf;
  for (const auto& pair : index.pairs) {
    const auto img = read_ppm(pair.image);
    const auto gt = read_pgm(pair.mask);
    const auto grid = plan(img.dim(2), img.dim(3), a.tiling.tile, a.tiling.stride);
    conf = metrics::update(conf, segment_image(model, img, grid, a.tiling.threshold, worker_count(g)), gt);
  }
  emit(metrics::eval_csv(index.size(), conf), a.out);
  return 0;
}

// ---------------------------------------------------------------------------

struct BenchArgs {
  std::string model, out;
  std::vector<std::size_t> batches{1, 8, 16, 32};
  std::size_t warmup = 5;
  std::size_t iters = 50;
  std::optional<double> power;
  bool quantized = false;
};

int run_bench(const BenchArgs& a, const Global& g) {
  const auto model = load_model_dir(a.model, a.quantized);
  bench::BenchOptions opt;
  opt.warmup = a.warmup;
  opt.iters = a.iters;
  opt.power_w = a.power;
  opt.seed = g.seed;
  const auto reports = bench::batch_sweep(model, a.batches, opt);
  for (const auto& r : reports) r.check();
  emit(bench::bench_csv(reports), a.out);
  return 0;
}

// ---------------------------------------------------------------------------

struct EstimateArgs {
  std::string model, folding, out, write_folding;
  double clock_mhz = 100.0;
  std::optional<double> target_ms;
  std::optional<double> power;
};

int run_estimate(const EstimateArgs& a) {
  if (a.folding.empty() == !a.target_ms) throw Error(ErrorKind::usage, "give exactly one of --folding or --target-ms");
  if (!(a.clock_mhz > 0.0)) throw Error(ErrorKind::usage, "--clock-mhz must be positive");
  const auto cfg = read_model_config(a.model).arch;
  cfg.validate();
  const auto layers = layer_plan(cfg);
  const auto clock = static_cast<std::uint64_t>(std::llround(a.clock_mhz * 1e6));
  dataflow::FoldingConfig folding;
  if (a.target_ms) {
    folding = dataflow::target_latency_fold(layers, clock, *a.target_ms / 1000.0);
  } else {
    const auto bytes = read_file_bytes(a.folding);
    folding = dataflow::parse_folding_json(std::string(bytes.begin(), bytes.end()));
  }
  folding.clock_hz = clock;
  if (!a.write_folding.empty()) emit(dataflow::folding_json(folding), a.write_folding);
  emit(dataflow::report_csv(dataflow::estimate(layers, folding, a.power)), a.out);
  return 0;
}

void add_tile_flags(CLI::App* cmd, TileArgs& t) {
  cmd->add_option("--tile", t.tile, "Tile side in pixels")->capture_default_str()->check(CLI::PositiveNumber);
  cmd->add_option("--stride", t.stride, "Tile stride in pixels")->capture_default_str()->check(CLI::PositiveNumber);
  cmd->add_option("--threshold", t.threshold, "Probability threshold (>= is building)")->capture_default_str();
  cmd->add_flag("--quantized", t.quantized, "Run the quantized model stored in the directory");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"unetlite: U-Net inference, quantization and deployment analysis"};
  app.require_subcommand(1);
  Global g;
  app.add_option("--seed", g.seed, "Seed for every randomized input")->capture_default_str();
  app.add_option("--workers", g.workers, "Tile worker threads (0 = all cores)")->capture_default_str();

  AnalyzeArgs analyze;
  auto* c_analyze = app.add_subcommand("analyze", "Parameter and MAC counts per layer and path");
  c_analyze->add_option("--blocks", analyze.blocks, "Encoder blocks")->capture_default_str();
  c_analyze->add_option("--base", analyze.base, "Channels of the first block")->capture_default_str();
  c_analyze->add_option("--upsample", analyze.upsample, "tconv or nn_upsample_conv")->capture_default_str();
  c_analyze->add_option("--input", analyze.input, "Square input side")->capture_default_str();
  c_analyze->add_flag("--sweep", analyze.sweep, "Blocks 1..4 x base 2..32 sweep as CSV");
  c_analyze->add_option("--out", analyze.out, "CSV output path");

  InitArgs init;
  auto* c_init = app.add_subcommand("init", "Write a model directory with random weights");
  c_init->add_option("--blocks", init.blocks, "Encoder blocks")->capture_default_str();
  c_init->add_option("--base", init.base, "Channels of the first block")->capture_default_str();
  c_init->add_option("--upsample", init.upsample, "tconv or nn_upsample_conv")->capture_default_str();
  c_init->add_option("--input", init.input, "Square input side")->capture_default_str();
  c_init->add_option("--out", init.out, "Model directory")->required();

  InferArgs infer;
  auto* c_infer = app.add_subcommand("infer", "Segment one PPM image into a PGM mask");
  c_infer->add_option("--model", infer.model, "Model directory")->required();
  c_infer->add_option("--image", infer.image, "Input P6 image")->required();
  c_infer->add_option("--out", infer.out, "Output P5 mask")->required();
  add_tile_flags(c_infer, infer.tiling);

  QuantizeArgs quant;
  auto* c_quant = app.add_subcommand("quantize", "Post-training quantization from calibration images");
  c_quant->add_option("--model", quant.model, "Float model directory")->required();
  c_quant->add_option("--calib", quant.calib, "Directory of calibration PPM images")->required();
  c_quant->add_option("--out", quant.out, "Output model directory")->required();
  c_quant->add_option("--bits-w", quant.bits_w, "Weight bits")->capture_default_str();
  c_quant->add_option("--bits-a", quant.bits_a, "Activation bits")->capture_default_str();
  c_quant->add_flag("--no-skip-first", quant.no_skip_first, "Quantize the first convolution too");
  c_quant->add_option("--percentile", quant.percentile, "Clip activations at this percentile");
  c_quant->add_option("--limit", quant.limit, "Use at most N calibration images");

  EvalArgs eval;
  auto* c_eval = app.add_subcommand("eval", "Dataset-level IoU and accuracy");
  c_eval->add_option("--model", eval.model, "Model directory")->required();
  c_eval->add_option("--data", eval.data, "Directory with images/ and gt/")->required();
  c_eval->add_option("--limit", eval.limit, "Evaluate the first N pairs");
  c_eval->add_option("--out", eval.out, "CSV output path (stdout if omitted)");
  add_tile_flags(c_eval, eval.tiling);

  BenchArgs bench;
  auto* c_bench = app.add_subcommand("bench", "Latency, throughput, memory and energy per batch size");
  c_bench->add_option("--model", bench.model, "Model directory")->required();
  c_bench->add_option("--batch", bench.batches, "Batch sizes")->delimiter(',')->capture_default_str();
  c_bench->add_option("--warmup", bench.warmup, "Untimed warm-up runs")->capture_default_str();
  c_bench->add_option("--iters", bench.iters, "Timed runs")->capture_default_str()->check(CLI::PositiveNumber);
  c_bench->add_option("--power", bench.power, "Board power in watts for the energy column");
  c_bench->add_flag("--quantized", bench.quantized, "Run the quantized model stored in the directory");
  c_bench->add_option("--out", bench.out, "CSV output path (stdout if omitted)");

  EstimateArgs est;
  auto* c_est = app.add_subcommand("estimate", "Dataflow accelerator II, latency and fps");
  c_est->add_option("--model", est.model, "Model directory (only config.json is read)")->required();
  c_est->add_option("--clock-mhz", est.clock_mhz, "Accelerator clock")->capture_default_str();
  auto* o_fold = c_est->add_option("--folding", est.folding, "Folding JSON");
  auto* o_target = c_est->add_option("--target-ms", est.target_ms, "Derive the cheapest folding meeting this latency");
  o_fold->excludes(o_target);
  c_est->add_option("--power", est.power, "Board power in watts for the energy cell");
  c_est->add_option("--write-folding", est.write_folding, "Save the folding used");
  c_est->add_option("--out", est.out, "CSV output path (stdout if omitted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (c_analyze->parsed()) return run_analyze(analyze);
    if (c_init->parsed()) return run_init(init, g);
    if (c_infer->parsed()) return run_infer(infer, g);
    if (c_quant->parsed()) return run_quantize(quant);
    if (c_eval->parsed()) return run_eval(eval, g);
    if (c_bench->parsed()) return run_bench(bench, g);
    if (c_est->parsed()) return run_estimate(est);
  } catch (const Error& e) {
    std::cerr << to_string(e.kind()) << ": " << e.what() << "\n";
    return exit_code_for(e.kind());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
