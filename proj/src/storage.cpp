#include "unetlite/storage.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "unetlite/errors.hpp"

namespace unetlite {

namespace {

constexpr std::string_view kMagic = "UNW1";
constexpr std::string_view kScaleSuffix = ".scale";
constexpr std::string_view kZeroPointSuffix = ".zero_point";
constexpr std::string_view kQconfSuffix = ".qconf";
constexpr std::string_view kCalibMinSuffix = ".calib.min";
constexpr std::string_view kCalibMaxSuffix = ".calib.max";

bool ends_with(std::string_view s, std::string_view suffix) {
  return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

class ByteWriter {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void bytes(std::string_view s) { out_.insert(out_.end(), s.begin(), s.end()); }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    if (n > bytes_.size() - pos_) {
      throw FormatError(FormatFault::truncated,
                        fmt::format("truncated container: need {} bytes for {} at offset {}", n, what, pos_));
    }
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }
  std::uint8_t u8(const char* what) { return take(1, what)[0]; }
  std::uint16_t u16(const char* what) {
    auto s = take(2, what);
    return static_cast<std::uint16_t>(s[0] | (s[1] << 8));
  }
  std::uint32_t u32(const char* what) {
    auto s = take(4, what);
    return static_cast<std::uint32_t>(s[0]) | (static_cast<std::uint32_t>(s[1]) << 8) |
           (static_cast<std::uint32_t>(s[2]) << 16) | (static_cast<std::uint32_t>(s[3]) << 24);
  }
  bool done() const noexcept { return pos_ == bytes_.size(); }
  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

struct Record {
  std::string name;
  DType dtype = DType::f32;
  Tensor::Shape dims;
  std::vector<std::uint8_t> payload;
};

std::size_t element_size(DType dtype) { return dtype == DType::i8 ? 1 : 4; }

void write_record_header(ByteWriter& w, const std::string& name, DType dtype, const Tensor::Shape& dims) {
  if (name.size() > std::numeric_limits<std::uint16_t>::max()) {
    throw Error(ErrorKind::usage, fmt::format("tensor name too long ({} bytes)", name.size()));
  }
  w.u16(static_cast<std::uint16_t>(name.size()));
  w.bytes(name);
  w.u8(static_cast<std::uint8_t>(dtype));
  w.u8(static_cast<std::uint8_t>(dims.size()));
  for (auto d : dims) {
    if (d > std::numeric_limits<std::uint32_t>::max()) {
      throw Error(ErrorKind::usage, fmt::format("dimension {} of {} exceeds u32", d, name));
    }
    w.u32(static_cast<std::uint32_t>(d));
  }
}

void write_f32_record(ByteWriter& w, const std::string& name, const Tensor::Shape& dims, std::span<const float> v) {
  write_record_header(w, name, DType::f32, dims);
  for (float f : v) w.u32(std::bit_cast<std::uint32_t>(f));
}

void write_i32_record(ByteWriter& w, const std::string& name, const Tensor::Shape& dims,
                      std::span<const std::int32_t> v) {
  write_record_header(w, name, DType::i32, dims);
  for (auto x : v) w.u32(static_cast<std::uint32_t>(x));
}

void write_tensor(ByteWriter& w, const std::string& name, const Tensor& t) {
  switch (t.dtype()) {
    case DType::f32:
      write_f32_record(w, name, t.shape(), t.f32());
      return;
    case DType::i8:
      write_record_header(w, name, DType::i8, t.shape());
      for (auto x : t.i8()) w.u8(static_cast<std::uint8_t>(x));
      break;
    case DType::i32:
      write_i32_record(w, name, t.shape(), t.i32());
      break;
  }
  const auto& q = *t.quant();
  const float scale = q.scale;
  const std::int32_t zp = q.zero_point;
  const std::int32_t conf[3] = {q.bits, q.is_signed ? 1 : 0, q.symmetric ? 1 : 0};
  write_f32_record(w, name + std::string(kScaleSuffix), {1}, std::span(&scale, 1));
  write_i32_record(w, name + std::string(kZeroPointSuffix), {1}, std::span(&zp, 1));
  write_i32_record(w, name + std::string(kQconfSuffix), {3}, conf);
}

Record read_record(ByteReader& r) {
  Record rec;
  const auto name_len = r.u16("name length");
  auto name_bytes = r.take(name_len, "name");
  rec.name.assign(name_bytes.begin(), name_bytes.end());
  const auto dtype = r.u8("dtype");
  if (dtype > 2) {
    throw FormatError(FormatFault::unknown_dtype, fmt::format("unknown dtype {} for tensor '{}'", dtype, rec.name));
  }
  rec.dtype = static_cast<DType>(dtype);
  const auto ndim = r.u8("ndim");
  if (ndim == 0) throw FormatError(FormatFault::bad_header, fmt::format("tensor '{}' has no dimensions", rec.name));
  std::size_t volume = 1;
  for (int i = 0; i < ndim; ++i) {
    const auto d = r.u32("dims");
    if (d == 0) throw FormatError(FormatFault::bad_header, fmt::format("tensor '{}' has a zero dimension", rec.name));
    if (volume > r.remaining() / d) {
      throw FormatError(FormatFault::truncated, fmt::format("tensor '{}' declares more data than the file holds", rec.name));
    }
    volume *= d;
    rec.dims.push_back(d);
  }
  const std::size_t esize = element_size(rec.dtype);
  if (volume > r.remaining() / esize) {
    throw FormatError(FormatFault::truncated, fmt::format("truncated payload for tensor '{}'", rec.name));
  }
  auto payload = r.take(volume * esize, "payload");
  rec.payload.assign(payload.begin(), payload.end());
  return rec;
}

std::uint32_t load_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::vector<float> as_f32(const Record& rec) {
  std::vector<float> v(rec.payload.size() / 4);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::bit_cast<float>(load_u32(&rec.payload[4 * i]));
  return v;
}

std::vector<std::int32_t> as_i32(const Record& rec) {
  std::vector<std::int32_t> v(rec.payload.size() / 4);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<std::int32_t>(load_u32(&rec.payload[4 * i]));
  return v;
}

const Record& companion(const std::map<std::string, Record>& by_name, const std::string& name, DType dtype,
                        std::size_t count) {
  auto it = by_name.find(name);
  if (it == by_name.end()) {
    throw FormatError(FormatFault::bad_header, fmt::format("missing companion tensor '{}'", name));
  }
  if (it->second.dtype != dtype || shape_volume(it->second.dims) != count) {
    throw FormatError(FormatFault::bad_header, fmt::format("companion tensor '{}' has the wrong type or size", name));
  }
  return it->second;
}

float scalar_f32(const std::map<std::string, Record>& by_name, const std::string& name) {
  return as_f32(companion(by_name, name, DType::f32, 1))[0];
}

QuantParams quant_for(const std::map<std::string, Record>& by_name, const std::string& base) {
  QuantParams q;
  q.scale = scalar_f32(by_name, base + std::string(kScaleSuffix));
  q.zero_point = as_i32(companion(by_name, base + std::string(kZeroPointSuffix), DType::i32, 1))[0];
  const auto conf = as_i32(companion(by_name, base + std::string(kQconfSuffix), DType::i32, 3));
  q.bits = conf[0];
  q.is_signed = conf[1] != 0;
  q.symmetric = conf[2] != 0;
  return q;
}

bool is_companion(std::string_view name) {
  return ends_with(name, kScaleSuffix) || ends_with(name, kZeroPointSuffix) || ends_with(name, kQconfSuffix) ||
         ends_with(name, kCalibMinSuffix) || ends_with(name, kCalibMaxSuffix);
}

}  // namespace

void WeightStore::add(std::string name, Tensor tensor) {
  if (find(name)) throw FormatError(FormatFault::duplicate_name, fmt::format("duplicate tensor name '{}'", name));
  tensors.emplace_back(std::move(name), std::move(tensor));
}

const Tensor* WeightStore::find(std::string_view name) const noexcept {
  for (const auto& [n, t] : tensors) {
    if (n == name) return &t;
  }
  return nullptr;
}

std::vector<std::uint8_t> encode_store(const WeightStore& store) {
  std::set<std::string> seen;
  for (const auto& [name, t] : store.tensors) {
    if (!seen.insert(name).second) {
      throw FormatError(FormatFault::duplicate_name, fmt::format("duplicate tensor name '{}'", name));
    }
    if (is_companion(name)) {
      throw Error(ErrorKind::usage, fmt::format("tensor name '{}' uses a reserved suffix", name));
    }
  }
  const std::size_t companions_per_int = 3;
  std::size_t count = store.calibration.size() * 2;
  for (const auto& [name, t] : store.tensors) count += 1 + (t.dtype() == DType::f32 ? 0 : companions_per_int);

  ByteWriter w;
  w.bytes(kMagic);
  w.u16(WeightStore::kVersion);
  w.u32(static_cast<std::uint32_t>(count));
  for (const auto& [name, t] : store.tensors) write_tensor(w, name, t);
  for (const auto& [site, range] : store.calibration) {
    write_f32_record(w, site + std::string(kCalibMinSuffix), {1}, std::span(&range.first, 1));
    write_f32_record(w, site + std::string(kCalibMaxSuffix), {1}, std::span(&range.second, 1));
  }
  return w.take();
}

WeightStore decode_store(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  if (bytes.size() < kMagic.size() ||
      !std::equal(kMagic.begin(), kMagic.end(), bytes.begin(), [](char a, std::uint8_t b) {
        return static_cast<std::uint8_t>(a) == b;
      })) {
    throw FormatError(FormatFault::bad_magic, "bad magic: not a UNW1 weight container");
  }
  r.take(kMagic.size(), "magic");
  const auto version = r.u16("version");
  if (version != WeightStore::kVersion) {
    throw FormatError(FormatFault::bad_version, fmt::format("unsupported container version {}", version));
  }
  const auto count = r.u32("tensor count");

  std::vector<Record> records;
  std::map<std::string, Record> by_name;
  for (std::uint32_t i = 0; i < count; ++i) {
    Record rec = read_record(r);
    if (by_name.count(rec.name)) {
      throw FormatError(FormatFault::duplicate_name, fmt::format("duplicate tensor name '{}'", rec.name));
    }
    by_name.emplace(rec.name, rec);
    records.push_back(std::move(rec));
  }
  if (!r.done()) {
    throw FormatError(FormatFault::bad_header, fmt::format("{} trailing bytes after the last tensor", r.remaining()));
  }

  WeightStore store;
  for (const auto& rec : records) {
    const std::string& name = rec.name;
    if (ends_with(name, kCalibMinSuffix)) {
      const std::string site = name.substr(0, name.size() - kCalibMinSuffix.size());
      const float lo = scalar_f32(by_name, name);
      const float hi = scalar_f32(by_name, site + std::string(kCalibMaxSuffix));
      store.calibration[site] = {lo, hi};
      continue;
    }
    if (ends_with(name, kCalibMaxSuffix)) {
      companion(by_name, name.substr(0, name.size() - kCalibMaxSuffix.size()) + std::string(kCalibMinSuffix),
                DType::f32, 1);
      continue;
    }
    if (ends_with(name, kScaleSuffix) || ends_with(name, kZeroPointSuffix) || ends_with(name, kQconfSuffix)) {
      continue;
    }
    try {
      switch (rec.dtype) {
        case DType::f32:
          store.tensors.emplace_back(name, Tensor(rec.dims, as_f32(rec)));
          break;
        case DType::i8:
          store.tensors.emplace_back(
              name, Tensor(rec.dims, std::vector<std::int8_t>(rec.payload.begin(), rec.payload.end()),
                           quant_for(by_name, name)));
          break;
        case DType::i32:
          store.tensors.emplace_back(name, Tensor(rec.dims, as_i32(rec), quant_for(by_name, name)));
          break;
      }
    } catch (const FormatError&) {
      throw;
    } catch (const Error& e) {
      throw FormatError(FormatFault::bad_header, fmt::format("tensor '{}': {}", name, e.what()));
    }
  }
  return store;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, fmt::format("cannot open '{}'", path.string()));
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw Error(ErrorKind::io, fmt::format("error reading '{}'", path.string()));
  return bytes;
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::io, fmt::format("cannot write '{}'", path.string()));
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::io, fmt::format("error writing '{}'", path.string()));
}

void write_store(const std::filesystem::path& path, const WeightStore& store) {
  write_file_bytes(path, encode_store(store));
}

WeightStore read_store(const std::filesystem::path& path) { return decode_store(read_file_bytes(path)); }

// ---------------------------------------------------------------------------
// Netpbm

namespace {

constexpr std::size_t kMaxPixels = std::size_t{1} << 30;

struct PnmHeader {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t data_offset = 0;
};

PnmHeader parse_pnm_header(std::span<const std::uint8_t> bytes, std::string_view magic) {
  if (bytes.size() < 2 || bytes[0] != static_cast<std::uint8_t>(magic[0]) ||
      bytes[1] != static_cast<std::uint8_t>(magic[1])) {
    throw FormatError(FormatFault::bad_magic, fmt::format("unsupported image format: expected {} magic", magic));
  }
  std::size_t pos = 2;
  auto next_number = [&](const char* what) -> std::size_t {
    for (;;) {
      if (pos >= bytes.size()) throw FormatError(FormatFault::truncated, fmt::format("truncated header ({})", what));
      const auto c = bytes[pos];
      if (c == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(c)) {
        ++pos;
      } else {
        break;
      }
    }
    std::size_t value = 0;
    std::size_t digits = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      if (++digits > 9) throw FormatError(FormatFault::bad_header, fmt::format("{} overflows", what));
      value = value * 10 + (bytes[pos] - '0');
      ++pos;
    }
    if (digits == 0) throw FormatError(FormatFault::bad_header, fmt::format("malformed {}", what));
    return value;
  };
  PnmHeader h;
  h.width = next_number("width");
  h.height = next_number("height");
  const auto maxval = next_number("maxval");
  if (h.width == 0 || h.height == 0) throw FormatError(FormatFault::bad_header, "image has a zero dimension");
  if (h.width * h.height > kMaxPixels) {
    throw FormatError(FormatFault::bad_header, fmt::format("image dimensions {}x{} overflow", h.width, h.height));
  }
  if (maxval != 255) {
    throw FormatError(FormatFault::bad_header, fmt::format("unsupported maxval {} (only 255)", maxval));
  }
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) {
    throw FormatError(FormatFault::truncated, "missing separator before pixel data");
  }
  h.data_offset = pos + 1;
  return h;
}

std::uint8_t to_byte(float v) {
  const double scaled = std::clamp(static_cast<double>(v), 0.0, 1.0) * 255.0;
  return static_cast<std::uint8_t>(round_half_even(scaled));
}

}  // namespace

Tensor decode_ppm(std::span<const std::uint8_t> bytes) {
  const auto h = parse_pnm_header(bytes, "P6");
  const std::size_t plane = h.width * h.height;
  if (bytes.size() - h.data_offset < plane * 3) throw FormatError(FormatFault::truncated, "truncated P6 pixel data");
  std::vector<float> out(3 * plane);
  const auto* px = bytes.data() + h.data_offset;
  for (std::size_t i = 0; i < plane; ++i) {
    for (std::size_t c = 0; c < 3; ++c) out[c * plane + i] = static_cast<float>(px[3 * i + c]) / 255.0f;
  }
  return Tensor({1, 3, h.height, h.width}, std::move(out));
}

Tensor read_ppm(const std::filesystem::path& path) {
  try {
    return decode_ppm(read_file_bytes(path));
  } catch (const FormatError& e) {
    throw FormatError(e.fault(), fmt::format("{}: {}", path.string(), e.what()));
  }
}

void write_ppm(const std::filesystem::path& path, const Tensor& rgb) {
  if (rgb.rank() != 4 || rgb.dim(0) != 1 || rgb.dim(1) != 3) {
    throw Error(ErrorKind::shape, fmt::format("write_ppm expects (1,3,H,W), got {}", shape_string(rgb.shape())));
  }
  const std::size_t hgt = rgb.dim(2), wid = rgb.dim(3), plane = hgt * wid;
  const auto header = fmt::format("P6\n{} {}\n255\n", wid, hgt);
  std::vector<std::uint8_t> bytes(header.begin(), header.end());
  bytes.reserve(bytes.size() + 3 * plane);
  const auto v = rgb.f32();
  for (std::size_t i = 0; i < plane; ++i) {
    for (std::size_t c = 0; c < 3; ++c) bytes.push_back(to_byte(v[c * plane + i]));
  }
  write_file_bytes(path, bytes);
}

Mask decode_pgm(std::span<const std::uint8_t> bytes) {
  const auto h = parse_pnm_header(bytes, "P5");
  const std::size_t n = h.width * h.height;
  if (bytes.size() - h.data_offset < n) throw FormatError(FormatFault::truncated, "truncated P5 pixel data");
  Mask mask(h.height, h.width);
  for (std::size_t i = 0; i < n; ++i) {
    const auto v = bytes[h.data_offset + i];
    if (v != 0 && v != 255) {
      throw FormatError(FormatFault::bad_header, fmt::format("mask value {} at pixel {} is not 0 or 255", v, i));
    }
    mask.values[i] = v == 255 ? 1 : 0;
  }
  return mask;
}

Mask read_pgm(const std::filesystem::path& path) {
  try {
    return decode_pgm(read_file_bytes(path));
  } catch (const FormatError& e) {
    throw FormatError(e.fault(), fmt::format("{}: {}", path.string(), e.what()));
  }
}

std::vector<std::uint8_t> encode_pgm(const Mask& mask) {
  const auto header = fmt::format("P5\n{} {}\n255\n", mask.width, mask.height);
  std::vector<std::uint8_t> bytes(header.begin(), header.end());
  for (auto v : mask.values) bytes.push_back(v ? 255 : 0);
  return bytes;
}

void write_pgm(const std::filesystem::path& path, const Mask& mask) { write_file_bytes(path, encode_pgm(mask)); }

// ---------------------------------------------------------------------------
// Dataset

namespace {

std::map<std::string, std::filesystem::path> list_by_stem(const std::filesystem::path& dir, std::string_view ext) {
  std::map<std::string, std::filesystem::path> out;
  std::error_code ec;
  if (!std::filesystem::is_directory(dir, ec)) {
    throw Error(ErrorKind::io, fmt::format("missing dataset directory '{}'", dir.string()));
  }
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ext) out[entry.path().stem().string()] = entry.path();
  }
  return out;
}

}  // namespace

DatasetIndex index_dataset(const std::filesystem::path& dir, std::optional<std::size_t> limit) {
  const auto images = list_by_stem(dir / "images", ".ppm");
  const auto masks = list_by_stem(dir / "gt", ".pgm");
  std::vector<std::string> orphan_images, orphan_masks;
  for (const auto& [stem, p] : images) {
    if (!masks.count(stem)) orphan_images.push_back(stem);
  }
  for (const auto& [stem, p] : masks) {
    if (!images.count(stem)) orphan_masks.push_back(stem);
  }
  if (!orphan_images.empty() || !orphan_masks.empty()) {
    throw Error(ErrorKind::integrity,
                fmt::format("dataset integrity: images without mask [{}]; masks without image [{}]",
                            fmt::join(orphan_images, ", "), fmt::join(orphan_masks, ", ")));
  }
  DatasetIndex index;
  for (const auto& [stem, p] : images) {
    if (limit && index.pairs.size() >= *limit) break;
    index.pairs.push_back({stem, p, masks.at(stem)});
  }
  return index;
}

}  // namespace unetlite
