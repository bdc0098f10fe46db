#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "fedstlf/core/tensor.hpp"
#include "fedstlf/error.hpp"

namespace fedstlf {

struct ParameterEntry {
  std::string name;
  Shape shape;
  std::vector<double> values;

  bool operator==(const ParameterEntry&) const = default;
};

/// Ordered, named, flat arrays holding every weight of one model: the unit
/// of federated exchange and checkpointing.
struct ParameterSet {
  std::vector<ParameterEntry> entries;

  std::size_t total_size() const {
    std::size_t n = 0;
    for (const auto& e : entries) n += e.values.size();
    return n;
  }

  /// Same names, order and shapes.
  bool same_manifest(const ParameterSet& other) const {
    if (entries.size() != other.entries.size()) return false;
    for (std::size_t i = 0; i < entries.size(); ++i)
      if (entries[i].name != other.entries[i].name || entries[i].shape != other.entries[i].shape) return false;
    return true;
  }

  /// Name of the first entry that differs from `other`, or empty.
  std::string first_mismatch(const ParameterSet& other) const {
    const std::size_t n = std::max(entries.size(), other.entries.size());
    for (std::size_t i = 0; i < n; ++i) {
      if (i >= entries.size()) return other.entries[i].name;
      if (i >= other.entries.size()) return entries[i].name;
      if (entries[i].name != other.entries[i].name || entries[i].shape != other.entries[i].shape)
        return entries[i].name;
    }
    return {};
  }

  /// Bitwise equality of every value (NaN payloads included).
  bool bitwise_equal(const ParameterSet& other) const {
    if (!same_manifest(other)) return false;
    for (std::size_t i = 0; i < entries.size(); ++i) {
      const auto& a = entries[i].values;
      const auto& b = other.entries[i].values;
      if (std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) != 0) return false;
    }
    return true;
  }

  bool operator==(const ParameterSet&) const = default;
};

// Binary layout ("FCP1"):
//   magic "FCP1"
//   per entry: u32 name length, UTF-8 name bytes, u32 rank, rank x u32 dims,
//              prod(dims) x f64 values
// All integers and floats little-endian.
inline constexpr char kParameterMagic[4] = {'F', 'C', 'P', '1'};

namespace detail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline void put_f64(std::vector<std::uint8_t>& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  bool done() const { return pos_ == bytes_.size(); }

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }

  double f64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return std::bit_cast<double>(v);
  }

  std::string text(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) {
      throw TransportError("truncated parameter data at byte " + std::to_string(pos_));
    }
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<std::uint8_t> encode_parameters(const ParameterSet& p) {
  std::vector<std::uint8_t> out(std::begin(kParameterMagic), std::end(kParameterMagic));
  out.reserve(4 + p.total_size() * 8 + p.entries.size() * 64);
  for (const auto& e : p.entries) {
    detail::put_u32(out, static_cast<std::uint32_t>(e.name.size()));
    out.insert(out.end(), e.name.begin(), e.name.end());
    detail::put_u32(out, static_cast<std::uint32_t>(e.shape.size()));
    for (auto d : e.shape) detail::put_u32(out, static_cast<std::uint32_t>(d));
    for (double v : e.values) detail::put_f64(out, v);
  }
  return out;
}

inline ParameterSet decode_parameters(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kParameterMagic, 4) != 0) {
    throw TransportError("parameter data does not start with FCP1 magic");
  }
  detail::ByteReader in(bytes.subspan(4));
  ParameterSet p;
  while (!in.done()) {
    ParameterEntry e;
    e.name = in.text(in.u32());
    const std::uint32_t rank = in.u32();
    if (rank > 8) throw TransportError("entry '" + e.name + "' has implausible rank " + std::to_string(rank));
    std::size_t count = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      e.shape.push_back(in.u32());
      count *= e.shape.back();
    }
    if (count > (bytes.size() / 8)) throw TransportError("entry '" + e.name + "' is larger than the payload");
    e.values.resize(count);
    for (auto& v : e.values) v = in.f64();
    p.entries.push_back(std::move(e));
  }
  return p;
}

inline void save_parameters(const std::filesystem::path& path, const ParameterSet& p) {
  const auto bytes = encode_parameters(p);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

inline ParameterSet load_parameters(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read checkpoint " + path.string());
  const std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_parameters(bytes);
}

}  // namespace fedstlf
