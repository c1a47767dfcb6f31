#pragma once

// Parameter archive: a text manifest followed by little-endian float64
// payloads, one per tensor, in manifest order.
//
//   afa-archive 1
//   meta <key> <value...>
//   tensor <name> <rank> <dim0> <dim1> ...
//   end
//   <raw bytes>
//
// Names and meta keys must not contain whitespace. Values round-trip
// bit-exactly.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "afa/nncore.hpp"

namespace afa {

struct ArchiveError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ArchiveTensor {
  std::string name;
  std::vector<std::size_t> shape;
  Vector values;
};

struct Archive {
  static constexpr int kFormatVersion = 1;

  std::vector<std::pair<std::string, std::string>> meta;
  std::vector<ArchiveTensor> tensors;

  void add_meta(std::string key, std::string value) {
    meta.emplace_back(std::move(key), std::move(value));
  }

  void add_tensor(std::string name, const nn::ParamTensor& t) {
    tensors.push_back({std::move(name), t.shape, t.values});
  }

  void add_tensor(std::string name, std::vector<std::size_t> shape, Vector values) {
    tensors.push_back({std::move(name), std::move(shape), std::move(values)});
  }

  const std::string* find_meta(const std::string& key) const {
    for (auto& [k, v] : meta)
      if (k == key) return &v;
    return nullptr;
  }

  const std::string& require_meta(const std::string& key) const {
    if (auto* v = find_meta(key)) return *v;
    throw ArchiveError("archive is missing meta entry '" + key + "'");
  }

  const ArchiveTensor* find_tensor(const std::string& name) const {
    for (auto& t : tensors)
      if (t.name == name) return &t;
    return nullptr;
  }

  const ArchiveTensor& require_tensor(const std::string& name) const {
    if (auto* t = find_tensor(name)) return *t;
    throw ArchiveError("archive is missing tensor '" + name + "'");
  }

  // Copies a stored tensor into `dst`, which must already have the same shape.
  void restore(const std::string& name, nn::ParamTensor& dst) const {
    const ArchiveTensor& t = require_tensor(name);
    if (t.shape != dst.shape) throw ArchiveError("shape mismatch for tensor '" + name + "'");
    dst.values = t.values;
  }
};

namespace detail {

inline void write_le_doubles(std::ostream& os, const Vector& v) {
  std::vector<char> buf(v.size() * 8);
  for (std::size_t i = 0; i < v.size(); ++i) {
    auto bits = std::bit_cast<std::uint64_t>(v[i]);
    for (int b = 0; b < 8; ++b) buf[i * 8 + b] = static_cast<char>((bits >> (8 * b)) & 0xffu);
  }
  os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

inline Vector read_le_doubles(std::istream& is, std::size_t n) {
  std::vector<unsigned char> buf(n * 8);
  is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (static_cast<std::size_t>(is.gcount()) != buf.size())
    throw ArchiveError("archive payload truncated");
  Vector v(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(buf[i * 8 + b]) << (8 * b);
    v[i] = std::bit_cast<double>(bits);
  }
  return v;
}

inline bool has_space(const std::string& s) {
  return s.empty() || s.find_first_of(" \t\r\n") != std::string::npos;
}

}  // namespace detail

inline void write_archive(std::ostream& os, const Archive& ar) {
  os << "afa-archive " << Archive::kFormatVersion << '\n';
  for (auto& [k, v] : ar.meta) {
    if (detail::has_space(k)) throw ArchiveError("invalid meta key '" + k + "'");
    if (v.find('\n') != std::string::npos) throw ArchiveError("meta value contains newline");
    os << "meta " << k << ' ' << v << '\n';
  }
  for (auto& t : ar.tensors) {
    if (detail::has_space(t.name)) throw ArchiveError("invalid tensor name '" + t.name + "'");
    std::size_t n = 1;
    for (auto d : t.shape) n *= d;
    if (n != t.values.size()) throw ArchiveError("tensor '" + t.name + "' shape/size mismatch");
    os << "tensor " << t.name << ' ' << t.shape.size();
    for (auto d : t.shape) os << ' ' << d;
    os << '\n';
  }
  os << "end\n";
  for (auto& t : ar.tensors) detail::write_le_doubles(os, t.values);
}

inline Archive read_archive(std::istream& is) {
  Archive ar;
  std::string line;
  if (!std::getline(is, line)) throw ArchiveError("empty archive");
  {
    std::istringstream hs(line);
    std::string magic;
    int version = 0;
    hs >> magic >> version;
    if (magic != "afa-archive") throw ArchiveError("not an afa archive");
    if (version != Archive::kFormatVersion)
      throw ArchiveError("unsupported archive version " + std::to_string(version));
  }
  bool ended = false;
  while (std::getline(is, line)) {
    if (line == "end") {
      ended = true;
      break;
    }
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind == "meta") {
      std::string key;
      ls >> key;
      std::string value;
      std::getline(ls, value);
      if (!value.empty() && value.front() == ' ') value.erase(0, 1);
      ar.meta.emplace_back(key, value);
    } else if (kind == "tensor") {
      ArchiveTensor t;
      std::size_t rank = 0;
      if (!(ls >> t.name >> rank)) throw ArchiveError("malformed tensor line: " + line);
      t.shape.resize(rank);
      for (auto& d : t.shape)
        if (!(ls >> d)) throw ArchiveError("malformed tensor shape: " + line);
      ar.tensors.push_back(std::move(t));
    } else {
      throw ArchiveError("unexpected manifest line: " + line);
    }
  }
  if (!ended) throw ArchiveError("archive manifest has no 'end' marker");
  for (auto& t : ar.tensors) {
    std::size_t n = 1;
    for (auto d : t.shape) n *= d;
    t.values = detail::read_le_doubles(is, n);
  }
  return ar;
}

inline void save_archive(const std::string& path, const Archive& ar) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ArchiveError("cannot open '" + path + "' for writing");
  write_archive(os, ar);
  if (!os) throw ArchiveError("write failed for '" + path + "'");
}

inline Archive load_archive(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ArchiveError("cannot open '" + path + "'");
  return read_archive(is);
}

}  // namespace afa
