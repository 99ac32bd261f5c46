#include <doctest.h>

#include <filesystem>
#include <string>

#include "gen.hpp"
#include "unetlite/errors.hpp"
#include "unetlite/storage.hpp"

using namespace unetlite;
namespace fs = std::filesystem;

namespace {

std::vector<std::uint8_t> bytes_of(const std::string& s) { return {s.begin(), s.end()}; }

FormatFault fault_of(auto&& fn) {
  try {
    fn();
  } catch (const FormatError& e) {
    return e.fault();
  }
  FAIL("expected a FormatError");
  return FormatFault::bad_header;
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

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("unetlite_storage_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

WeightStore random_store(gen::Gen& g) {
  WeightStore s;
  const std::size_t n = g.size(0, 6);
  for (std::size_t i = 0; i < n; ++i) {
    Tensor::Shape shape;
    for (std::size_t d = g.size(1, 4); d > 0; --d) shape.push_back(g.size(1, 5));
    const auto name = "t" + std::to_string(i) + ".weight";
    switch (g.integer(0, 2)) {
      case 0:
        s.add(name, g.tensor(shape, -5.0, 5.0));
        break;
      case 1:
        s.add(name, quantize(g.tensor(shape), QuantParams::affine_for(-1.0f, 1.0f, g.integer(2, 8))));
        break;
      default: {
        std::vector<std::int32_t> v(shape_volume(shape));
        for (auto& x : v) x = g.integer(-100000, 100000);
        QuantParams p;
        p.bits = 32;
        p.scale = 0.001f;
        s.add(name, Tensor(shape, std::move(v), p));
      }
    }
  }
  if (g.coin()) s.calibration["enc0.conv0"] = {-0.5f, 2.0f};
  return s;
}

}  // namespace

TEST_CASE("empty store is a 10-byte file") {
  const auto bytes = encode_store(WeightStore{});
  CHECK(bytes.size() == 10);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "UNW1");
  CHECK(bytes[4] == 1);
  CHECK(bytes[5] == 0);
  CHECK(decode_store(bytes).size() == 0);
}

TEST_CASE("single f32 record layout") {
  WeightStore s;
  s.add("a", Tensor({2}, {1.0f, -2.0f}));
  const auto b = encode_store(s);
  // header 10 + name len 2 + name 1 + dtype 1 + ndim 1 + dims 4 + payload 8
  CHECK(b.size() == 27);
  CHECK(b[6] == 1);   // count
  CHECK(b[10] == 1);  // name length
  CHECK(b[12] == 'a');
  CHECK(b[13] == 0);  // dtype f32
  CHECK(b[14] == 1);  // ndim
  CHECK(b[15] == 2);  // dim
  CHECK(b[26] == 0xC0);  // -2.0f high byte, little-endian
}

TEST_CASE("property: write then read is bitwise") {
  gen::Gen g(31);
  const auto dir = scratch("roundtrip");
  for (int trial = 0; trial < 50; ++trial) {
    const auto s = random_store(g);
    write_store(dir / "w.unw", s);
    const auto back = read_store(dir / "w.unw");
    CHECK(back == s);
    CHECK(encode_store(back) == encode_store(s));
  }
}

TEST_CASE("store errors are distinct") {
  WeightStore s;
  s.add("x", Tensor({3}, {1.0f, 2.0f, 3.0f}));
  const auto good = encode_store(s);

  auto bad_magic = good;
  bad_magic[0] = 'X';
  CHECK(fault_of([&] { decode_store(bad_magic); }) == FormatFault::bad_magic);

  auto truncated = good;
  truncated.resize(truncated.size() - 1);
  CHECK(fault_of([&] { decode_store(truncated); }) == FormatFault::truncated);

  auto unknown = good;
  unknown[13] = 9;
  CHECK(fault_of([&] { decode_store(unknown); }) == FormatFault::unknown_dtype);

  auto version = good;
  version[4] = 7;
  CHECK(fault_of([&] { decode_store(version); }) == FormatFault::bad_version);

  // Two records with the same name: duplicate the record and bump the count.
  std::vector<std::uint8_t> dup(good.begin(), good.end());
  dup.insert(dup.end(), good.begin() + 10, good.end());
  dup[6] = 2;
  CHECK(fault_of([&] { decode_store(dup); }) == FormatFault::duplicate_name);

  CHECK(fault_of([&] { s.add("x", Tensor({1}, {0.0f})); }) == FormatFault::duplicate_name);
  CHECK(kind_of([] { read_store("/nonexistent/dir/w.unw"); }) == ErrorKind::io);
}

TEST_CASE("property: decoding random corruptions never crashes") {
  gen::Gen g(32);
  const auto base = encode_store(random_store(g));
  for (int trial = 0; trial < 500; ++trial) {
    auto b = base;
    if (b.empty()) break;
    const std::size_t flips = g.size(1, 4);
    for (std::size_t i = 0; i < flips; ++i) b[g.size(0, b.size() - 1)] = static_cast<std::uint8_t>(g.size(0, 255));
    if (g.coin()) b.resize(g.size(0, b.size()));
    try {
      decode_store(b);
    } catch (const Error&) {
      // typed errors are the expected outcome
    }
  }
  for (int trial = 0; trial < 200; ++trial) {
    const auto junk = g.bytes(g.size(0, 64));
    try {
      decode_store(junk);
    } catch (const Error&) {
    }
  }
  CHECK(true);
}

TEST_CASE("ppm decoding") {
  auto white = bytes_of("P6\n1 1\n255\n");
  white.insert(white.end(), {255, 255, 255});
  const Tensor t = decode_ppm(white);
  CHECK(t.shape() == Tensor::Shape{1, 3, 1, 1});
  for (float v : t.f32()) CHECK(v == 1.0f);

  auto commented = bytes_of("P6 # comment\n2 1 # more\n255\n");
  commented.insert(commented.end(), {0, 51, 255, 255, 0, 0});
  const Tensor c = decode_ppm(commented);
  CHECK(c.f32()[0] == 0.0f);        // R of pixel 0
  CHECK(c.f32()[1] == 1.0f);        // R of pixel 1
  CHECK(c.f32()[2] == 51.0f / 255.0f);  // G of pixel 0

  auto deep = bytes_of("P6\n1 1\n65535\n");
  deep.insert(deep.end(), 6, 0);
  CHECK(fault_of([&] { decode_ppm(deep); }) == FormatFault::bad_header);
  CHECK(fault_of([&] { decode_ppm(bytes_of("P3\n1 1\n255\n1 1 1")); }) == FormatFault::bad_magic);
  CHECK(fault_of([&] { decode_ppm(bytes_of("P6\n99999 99999\n255\n")); }) == FormatFault::bad_header);
  CHECK(fault_of([&] { decode_ppm(bytes_of("P6\n4 4\n255\n")); }) == FormatFault::truncated);
}

TEST_CASE("property: ppm write then read recovers byte levels") {
  gen::Gen g(33);
  const auto dir = scratch("ppm");
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t h = g.size(1, 9), w = g.size(1, 9);
    std::vector<float> v(3 * h * w);
    for (auto& x : v) x = static_cast<float>(g.size(0, 255)) / 255.0f;
    const Tensor img({1, 3, h, w}, v);
    write_ppm(dir / "a.ppm", img);
    CHECK(read_ppm(dir / "a.ppm") == img);
  }
}

TEST_CASE("property: mask round trip is bitwise") {
  gen::Gen g(34);
  const auto dir = scratch("pgm");
  for (int trial = 0; trial < 30; ++trial) {
    const Mask m = g.mask(g.size(1, 40), g.size(1, 40));
    write_pgm(dir / "m.pgm", m);
    const auto bytes = read_file_bytes(dir / "m.pgm");
    CHECK(read_pgm(dir / "m.pgm") == m);
    CHECK(encode_pgm(decode_pgm(bytes)) == bytes);
  }
  auto gray = bytes_of("P5\n1 1\n255\n");
  gray.push_back(128);
  CHECK(fault_of([&] { decode_pgm(gray); }) == FormatFault::bad_header);
}

TEST_CASE("dataset indexing") {
  const auto dir = scratch("dataset");
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "gt");
  const Tensor img = Tensor::zeros({1, 3, 2, 2});
  for (const char* stem : {"c", "a", "b"}) {
    write_ppm(dir / "images" / (std::string(stem) + ".ppm"), img);
    write_pgm(dir / "gt" / (std::string(stem) + ".pgm"), Mask(2, 2));
  }
  const auto idx = index_dataset(dir);
  REQUIRE(idx.size() == 3);
  CHECK(idx.pairs[0].stem == "a");
  CHECK(idx.pairs[1].stem == "b");
  CHECK(idx.pairs[2].stem == "c");

  const auto limited = index_dataset(dir, 2);
  REQUIRE(limited.size() == 2);
  CHECK(limited.pairs[1].stem == "b");

  write_pgm(dir / "gt" / "zz.pgm", Mask(2, 2));
  try {
    index_dataset(dir);
    FAIL("orphan mask accepted");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::integrity);
    CHECK(std::string(e.what()).find("zz") != std::string::npos);
  }
  CHECK(kind_of([&] { index_dataset(dir / "missing"); }) == ErrorKind::io);
}
