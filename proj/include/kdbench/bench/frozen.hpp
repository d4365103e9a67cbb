#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Core>
#include <zlib.h>

#include "kdbench/data/io.hpp"
#include "kdbench/models/model.hpp"
#include "kdbench/models/spec_json.hpp"

namespace kdb {

enum class Precision : std::uint8_t { f32 = 0, f16 = 1, int8 = 2 };

inline const char* precision_name(Precision p) {
  switch (p) {
    case Precision::f32: return "f32";
    case Precision::f16: return "f16";
    case Precision::int8: return "int8";
  }
  return "?";
}

inline Precision parse_precision(const std::string& s) {
  if (s == "f32") return Precision::f32;
  if (s == "f16") return Precision::f16;
  if (s == "int8") return Precision::int8;
  throw ParameterError("unknown precision '" + s + "' (expected f32, f16 or int8)");
}

inline constexpr char kFrozenMagic[4] = {'K', 'D', 'F', 'Z'};
inline constexpr std::uint32_t kFrozenVersion = 1;

// One named weight tensor. `values` holds the weights as stored, dequantized.
struct FrozenBlob {
  std::string name;
  Precision dtype = Precision::f32;
  Shape shape;
  float scale = 0.0f;  // int8 only
  std::vector<float> values;
};

struct FrozenModel {
  ModelSpec spec;
  std::vector<FrozenBlob> blobs;
  std::uint32_t checksum = 0;

  ModelFamily family() const { return family_of(spec); }
  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& b : blobs) n += b.values.size();
    return n;
  }
};

namespace detail {

class ByteWriter {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    out_.insert(out_.end(), c, c + n);
  }
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) out_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<unsigned char>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  std::vector<unsigned char>& data() { return out_; }

 private:
  std::vector<unsigned char> out_;
};

class ByteReader {
 public:
  ByteReader(const unsigned char* p, std::size_t n) : p_(p), n_(n) {}

  void need(std::size_t k, const char* field) const {
    if (n_ - pos_ < k) throw FormatError(std::string("frozen model truncated while reading ") + field);
  }
  const unsigned char* take(std::size_t k, const char* field) {
    need(k, field);
    const unsigned char* at = p_ + pos_;
    pos_ += k;
    return at;
  }
  std::uint8_t u8(const char* field) { return *take(1, field); }
  std::uint16_t u16(const char* field) {
    const auto* b = take(2, field);
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
  }
  std::uint32_t u32(const char* field) {
    const auto* b = take(4, field);
    return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
           (std::uint32_t(b[3]) << 24);
  }
  float f32(const char* field) { return std::bit_cast<float>(u32(field)); }
  std::size_t remaining() const { return n_ - pos_; }

 private:
  const unsigned char* p_;
  std::size_t n_;
  std::size_t pos_ = 0;
};

inline std::uint32_t crc32_of(const unsigned char* p, std::size_t n) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  while (n > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = ::crc32(crc, p, chunk);
    p += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

inline std::int8_t quantize_int8(float w, float scale) {
  if (scale == 0.0f) return 0;
  const float q = std::nearbyint(w / scale);
  return static_cast<std::int8_t>(std::clamp(q, -127.0f, 127.0f));
}

}  // namespace detail

// Converts live weights to stored precision (values are kept dequantized).
inline FrozenModel freeze(const Model& model, Precision precision) {
  FrozenModel fm;
  fm.spec = model.spec;
  for (const auto& p : model.params) {
    FrozenBlob b;
    b.name = p.name;
    b.dtype = precision;
    b.shape = p.value.shape();
    const auto src = p.value.data();
    b.values.assign(src.begin(), src.end());
    if (precision == Precision::f16) {
      for (auto& v : b.values) v = static_cast<float>(Eigen::half(v));
    } else if (precision == Precision::int8) {
      float m = 0.0f;
      for (float v : src) m = std::max(m, std::abs(v));
      b.scale = m / 127.0f;
      for (auto& v : b.values) v = static_cast<float>(detail::quantize_int8(v, b.scale)) * b.scale;
    }
    fm.blobs.push_back(std::move(b));
  }
  return fm;
}

inline std::string frozen_header(const FrozenModel& fm) { return spec_to_json(fm.spec).dump(); }

// Serialises a frozen model; the last four bytes are the CRC32 of everything before.
inline std::vector<unsigned char> serialize_frozen(const FrozenModel& fm) {
  detail::ByteWriter w;
  w.bytes(kFrozenMagic, 4);
  w.u32(kFrozenVersion);
  w.u8(static_cast<std::uint8_t>(fm.family()));
  const std::string header = frozen_header(fm);
  w.u32(static_cast<std::uint32_t>(header.size()));
  w.bytes(header.data(), header.size());
  w.u32(static_cast<std::uint32_t>(fm.blobs.size()));
  for (const auto& b : fm.blobs) {
    if (b.name.size() > 0xFFFF) throw ContractError("blob name too long: " + b.name);
    if (b.shape.size() > 0xFF) throw ContractError("blob rank too large: " + b.name);
    w.u16(static_cast<std::uint16_t>(b.name.size()));
    w.bytes(b.name.data(), b.name.size());
    w.u8(static_cast<std::uint8_t>(b.dtype));
    w.u8(static_cast<std::uint8_t>(b.shape.size()));
    for (auto d : b.shape) w.u32(static_cast<std::uint32_t>(d));
    switch (b.dtype) {
      case Precision::f32:
        for (float v : b.values) w.f32(v);
        break;
      case Precision::f16:
        for (float v : b.values) w.u16(std::bit_cast<std::uint16_t>(Eigen::half(v)));
        break;
      case Precision::int8:
        w.f32(b.scale);
        for (float v : b.values) w.u8(static_cast<std::uint8_t>(detail::quantize_int8(v, b.scale)));
        break;
    }
  }
  auto& bytes = w.data();
  const std::uint32_t crc = detail::crc32_of(bytes.data(), bytes.size());
  w.u32(crc);
  return std::move(bytes);
}

inline std::size_t dtype_bytes(Precision p) {
  return p == Precision::f32 ? 4 : p == Precision::f16 ? 2 : 1;
}

// Exact file size as a function of spec, precision and blob layout.
inline std::size_t frozen_file_size(const FrozenModel& fm) {
  std::size_t n = 4 + 4 + 1 + 4 + frozen_header(fm).size() + 4;
  for (const auto& b : fm.blobs) {
    n += 2 + b.name.size() + 1 + 1 + 4 * b.shape.size() + dtype_bytes(b.dtype) * b.values.size();
    if (b.dtype == Precision::int8) n += 4;
  }
  return n + 4;
}

inline FrozenModel parse_frozen(std::span<const unsigned char> bytes) {
  detail::ByteReader r(bytes.data(), bytes.size());
  const auto* magic = r.take(4, "magic");
  if (std::memcmp(magic, kFrozenMagic, 4) != 0) throw FormatError("frozen model: bad magic (expected KDFZ)");
  const std::uint32_t version = r.u32("version");
  if (version != kFrozenVersion) {
    throw FormatError("frozen model: unsupported version " + std::to_string(version));
  }
  if (bytes.size() < 4 + 4 + 4) throw FormatError("frozen model truncated while reading checksum");
  const std::size_t body = bytes.size() - 4;
  detail::ByteReader tail(bytes.data() + body, 4);
  FrozenModel fm;
  fm.checksum = tail.u32("checksum");
  if (detail::crc32_of(bytes.data(), body) != fm.checksum) {
    throw FormatError("frozen model: checksum mismatch (file corrupted or truncated)");
  }
  r = detail::ByteReader(bytes.data(), body);
  r.take(8, "magic");
  const std::uint8_t type = r.u8("model type");
  const std::uint32_t header_len = r.u32("header length");
  const auto* header = r.take(header_len, "header");
  try {
    fm.spec = spec_from_json(Json::parse(header, header + header_len));
    validate(fm.spec);
  } catch (const std::exception& e) {
    throw FormatError(std::string("frozen model: invalid header: ") + e.what());
  }
  if (type != static_cast<std::uint8_t>(fm.family())) throw FormatError("frozen model: model type byte disagrees with header");
  const std::uint32_t count = r.u32("blob count");
  for (std::uint32_t k = 0; k < count; ++k) {
    FrozenBlob b;
    const std::uint16_t len = r.u16("blob name length");
    const auto* name = r.take(len, "blob name");
    b.name.assign(reinterpret_cast<const char*>(name), len);
    const std::uint8_t dt = r.u8("blob dtype");
    if (dt > static_cast<std::uint8_t>(Precision::int8)) throw FormatError("frozen model: bad dtype for blob " + b.name);
    b.dtype = static_cast<Precision>(dt);
    const std::uint8_t ndim = r.u8("blob ndim");
    std::size_t n = 1;
    for (std::uint8_t d = 0; d < ndim; ++d) {
      b.shape.push_back(r.u32("blob dims"));
      n *= b.shape.back();
    }
    if (b.dtype == Precision::int8) b.scale = r.f32("blob scale");
    r.need(n * dtype_bytes(b.dtype), "blob data");
    b.values.resize(n);
    for (auto& v : b.values) {
      switch (b.dtype) {
        case Precision::f32: v = r.f32("blob data"); break;
        case Precision::f16: v = static_cast<float>(std::bit_cast<Eigen::half>(r.u16("blob data"))); break;
        case Precision::int8: v = static_cast<float>(static_cast<std::int8_t>(r.u8("blob data"))) * b.scale; break;
      }
    }
    fm.blobs.push_back(std::move(b));
  }
  if (r.remaining() != 0) throw FormatError("frozen model: trailing bytes after blobs");
  return fm;
}

inline FrozenModel export_frozen(const Model& model, const std::filesystem::path& path, Precision precision) {
  FrozenModel fm = freeze(model, precision);
  const auto bytes = serialize_frozen(fm);
  fm.checksum = detail::ByteReader(bytes.data() + bytes.size() - 4, 4).u32("checksum");
  write_file(path, std::string_view(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
  return fm;
}

inline FrozenModel load_frozen(const std::filesystem::path& path) {
  const std::string s = read_file(path);
  return parse_frozen({reinterpret_cast<const unsigned char*>(s.data()), s.size()});
}

// Rebuilds a model whose weights are the frozen (dequantized) values.
inline Model thaw(const FrozenModel& fm) {
  Model m = build_model(fm.spec, 0);
  if (m.params.size() != fm.blobs.size()) throw FormatError("frozen model: blob count does not match the spec");
  for (std::size_t i = 0; i < fm.blobs.size(); ++i) {
    const auto& b = fm.blobs[i];
    auto* p = m.params.find(b.name);
    if (!p) throw FormatError("frozen model: unexpected blob " + b.name);
    if (p->value.shape() != b.shape) throw FormatError("frozen model: shape mismatch for blob " + b.name);
    p->value = Tensor(b.shape, b.values);
  }
  return m;
}

// Tape-free inference with scratch buffers reused across calls. Not thread safe;
// give each thread its own session.
class FrozenSession {
 public:
  explicit FrozenSession(const FrozenModel& fm) : model_(thaw(fm)), graph_(Graph::Mode::inference) {}
  explicit FrozenSession(Model model) : model_(std::move(model)), graph_(Graph::Mode::inference) {}

  const Tensor& infer(std::span<const std::size_t> ids, std::span<const float> mask = {}) {
    graph_.reset();
    return forward(model_, graph_, ids, mask).value();
  }

  const Model& model() const noexcept { return model_; }

 private:
  Model model_;
  Graph graph_;
};

}  // namespace kdb
