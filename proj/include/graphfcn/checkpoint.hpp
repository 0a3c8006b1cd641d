#pragma once

// Checkpoint layout (all integers little-endian):
//   "GFCN" | u32 version | u32 tensor count |
//   per tensor: u32 name length | UTF-8 name | u32 rank | u64 dims[rank] |
//               f64 values (row-major)

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "graphfcn/errors.hpp"
#include "graphfcn/params.hpp"

namespace gfcn {

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

class ByteWriter {
 public:
  template <typename T>
  void put(T v) {
    auto bits = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    if constexpr (std::endian::native == std::endian::big) std::reverse(bits.begin(), bits.end());
    buf_.insert(buf_.end(), bits.begin(), bits.end());
  }
  void put_bytes(const std::string& s) { buf_.insert(buf_.end(), s.begin(), s.end()); }
  std::vector<unsigned char>& bytes() { return buf_; }

 private:
  std::vector<unsigned char> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(const std::vector<unsigned char>& b) : buf_(b) {}

  template <typename T>
  T get(const char* what) {
    need(sizeof(T), what);
    std::array<unsigned char, sizeof(T)> bits;
    std::memcpy(bits.data(), buf_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bits.begin(), bits.end());
    pos_ += sizeof(T);
    return std::bit_cast<T>(bits);
  }

  std::string get_string(std::size_t n, const char* what) {
    need(n, what);
    std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
    pos_ += n;
    return s;
  }

  std::size_t pos() const noexcept { return pos_; }
  bool done() const noexcept { return pos_ == buf_.size(); }

 private:
  void need(std::size_t n, const char* what) {
    if (buf_.size() - pos_ < n) throw FormatError(std::string("checkpoint truncated while reading ") + what, pos_);
  }

  const std::vector<unsigned char>& buf_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<unsigned char> serialize_checkpoint(const ModelParams& params) {
  detail::ByteWriter w;
  w.put_bytes("GFCN");
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(params.size()));
  for (const auto& e : params.entries()) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(e.name.size()));
    w.put_bytes(e.name);
    const auto& t = e.var.value();
    w.put<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) w.put<std::uint64_t>(d);
    for (double v : t.data()) w.put<double>(v);
  }
  return std::move(w.bytes());
}

inline ModelParams deserialize_checkpoint(const std::vector<unsigned char>& bytes) {
  detail::ByteReader r(bytes);
  if (r.get_string(4, "magic") != "GFCN") throw FormatError("bad checkpoint magic", 0);
  const auto version = r.get<std::uint32_t>("version");
  if (version != kCheckpointVersion) {
    throw UnsupportedVersionError("unsupported checkpoint version " + std::to_string(version) + " (expected " +
                                  std::to_string(kCheckpointVersion) + ")");
  }
  const auto count = r.get<std::uint32_t>("tensor count");
  ModelParams params;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.get<std::uint32_t>("name length");
    std::string name = r.get_string(name_len, "name");
    const std::size_t rank_at = r.pos();
    const auto rank = r.get<std::uint32_t>("rank");
    if (rank == 0 || rank > 8) throw FormatError("implausible tensor rank " + std::to_string(rank), rank_at);
    Shape shape;
    for (std::uint32_t k = 0; k < rank; ++k) {
      const std::size_t at = r.pos();
      const auto d = r.get<std::uint64_t>("dimension");
      if (d == 0 || d > (std::uint64_t{1} << 32)) throw FormatError("implausible dimension", at);
      shape.push_back(static_cast<std::size_t>(d));
    }
    std::vector<double> values(shape_numel(shape));
    for (auto& v : values) v = r.get<double>("values");
    const std::size_t name_at = r.pos();
    try {
      params.add(std::move(name), Tensor(std::move(shape), std::move(values)));
    } catch (const ValidationError& e) {
      throw FormatError(e.what(), name_at);
    }
  }
  if (!r.done()) throw FormatError("trailing bytes after checkpoint", r.pos());
  return params;
}

inline void save_checkpoint(const ModelParams& params, const std::filesystem::path& path) {
  const auto bytes = serialize_checkpoint(params);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write checkpoint '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write failed for checkpoint '" + path.string() + "'");
}

inline ModelParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint '" + path.string() + "'");
  std::vector<unsigned char> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return deserialize_checkpoint(bytes);
}

}  // namespace gfcn
