#include <doctest.h>

#include <filesystem>

#include "unetlite/errors.hpp"
#include "unetlite/model_dir.hpp"
#include "unetlite/storage.hpp"

using namespace unetlite;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("unetlite_modeldir_" + name);
  fs::remove_all(dir);
  return dir;
}

ErrorKind kind_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an Error");
  return ErrorKind::usage;
}

}  // namespace

TEST_CASE("exit codes") {
  CHECK(exit_code_for(ErrorKind::usage) == 1);
  for (auto k : {ErrorKind::io, ErrorKind::format, ErrorKind::integrity, ErrorKind::undefined_metric})
    CHECK(exit_code_for(k) == 2);
  for (auto k : {ErrorKind::config, ErrorKind::shape, ErrorKind::binding, ErrorKind::calibration, ErrorKind::numeric})
    CHECK(exit_code_for(k) == 3);
}

TEST_CASE("config json") {
  const auto c = parse_model_config(
      R"({"blocks":4,"base_channels":16,"in_channels":3,"out_channels":1,"upsample":"tconv"})");
  CHECK(c.arch == UNetConfig{});
  CHECK_FALSE(c.quant);

  ModelDirConfig q;
  q.arch.blocks = 2;
  q.arch.upsample = UpsampleMode::nn_upsample_conv;
  q.arch.input_h = 64;
  q.arch.input_w = 128;
  q.quant = QuantScheme::w1a4();
  q.quant->overrides["final.conv"] = {8, 8};
  const auto back = parse_model_config(model_config_json(q));
  CHECK(back.arch == q.arch);
  REQUIRE(back.quant);
  CHECK(back.quant->weight_bits == 1);
  CHECK(back.quant->act_bits == 4);
  CHECK_FALSE(back.quant->skip_first_layer);
  CHECK(back.quant->overrides.at("final.conv").weight_bits == 8);

  CHECK(kind_of([] { parse_model_config(R"({"blocks":5})"); }) == ErrorKind::config);
  CHECK(kind_of([] { parse_model_config(R"({"blocks":"four"})"); }) == ErrorKind::config);
  CHECK(kind_of([] { parse_model_config("[1,2]"); }) == ErrorKind::config);
  CHECK(kind_of([] { parse_model_config(R"({"upsample":"bicubic"})"); }) == ErrorKind::config);
}

TEST_CASE("save and load a model directory") {
  UNetConfig c;
  c.blocks = 2;
  c.base_channels = 2;
  c.input_h = c.input_w = 16;
  const auto m = bind_weights(build(c), random_weights(c, 1));
  const auto dir = scratch("float");
  save_model_dir(dir, m);
  CHECK(fs::exists(dir / kConfigFile));
  CHECK(fs::exists(dir / kWeightsFile));
  const auto loaded = load_model_dir(dir);
  const Tensor x = random_tensor({1, 3, 16, 16}, 2);
  CHECK(forward(loaded, x) == forward(m, x));
  CHECK(kind_of([&] { load_model_dir(dir, true); }) == ErrorKind::config);

  fs::remove(dir / kWeightsFile);
  try {
    load_model_dir(dir);
    FAIL("missing weights accepted");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::io);
    CHECK(std::string(e.what()).find(kWeightsFile) != std::string::npos);
  }
}

TEST_CASE("quantized model directory round trip") {
  UNetConfig c;
  c.blocks = 2;
  c.base_channels = 4;
  c.input_h = c.input_w = 16;
  const auto m = bind_weights(build(c), random_weights(c, 3));
  const std::vector<Tensor> calib{random_tensor({2, 3, 16, 16}, 4)};
  const auto scheme = QuantScheme::int8();
  const auto q = quantize_model(m, calibrate(m, calib, scheme), scheme);
  const auto dir = scratch("int8");
  save_model_dir(dir, q, scheme);
  const auto loaded = load_model_dir(dir, true);
  const Tensor x = random_tensor({1, 3, 16, 16}, 5);
  CHECK(forward(loaded, x) == forward(q, x));
  CHECK(read_store(dir / kWeightsFile).calibration == q.quant()->calibration);
}

TEST_CASE("input size override") {
  UNetConfig c;
  c.blocks = 2;
  c.base_channels = 2;
  c.input_h = c.input_w = 16;
  const auto m = bind_weights(build(c), random_weights(c, 7));
  const auto dir = scratch("resize");
  save_model_dir(dir, m);
  const auto big = load_model_dir(dir, false, 32);
  CHECK(big.config().input_h == 32);
  CHECK(export_weights(big) == export_weights(m));
  CHECK(kind_of([&] { load_model_dir(dir, false, 30); }) == ErrorKind::config);
}
