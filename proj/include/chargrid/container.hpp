#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "chargrid/tensor.hpp"

namespace chargrid {

// Flat binary container for named tensors ("CHGT" format, version 1).
// Layout, all integers little-endian:
//   magic "CHGT" | u32 version | u32 entry count
//   per entry: u32 name length | name bytes | u32 dtype | u32 ndim |
//              i64 dims[ndim] | raw values (row-major, native byte order)
// Dtype codes: 0=f32 1=f64 2=i32 3=u8 4=i64. Save/loadround-trips are
// bit-exact; entry order is preserved.

namespace dtype {
constexpr std::uint32_t f32 = 0;
constexpr std::uint32_t f64 = 1;
constexpr std::uint32_t i32 = 2;
constexpr std::uint32_t u8 = 3;
constexpr std::uint32_t i64 = 4;
}  // namespace dtype

template <typename T>
constexpr std::uint32_t dtype_of();
template <>
constexpr std::uint32_t dtype_of<float>() { return dtype::f32; }
template <>
constexpr std::uint32_t dtype_of<double>() { return dtype::f64; }
template <>
constexpr std::uint32_t dtype_of<std::int32_t>() { return dtype::i32; }
template <>
constexpr std::uint32_t dtype_of<std::uint8_t>() { return dtype::u8; }
template <>
constexpr std::uint32_t dtype_of<std::int64_t>() { return dtype::i64; }

class TensorFile {
 public:
  static constexpr std::uint32_t kVersion = 1;

  struct Entry {
    std::string name;
    std::uint32_t dtype = 0;
    std::vector<int> dims;
    std::vector<char> raw;
  };

  template <typename T>
  void add(const std::string& name, const Tensor<T>& t) {
    check(index_.find(name) == index_.end(), "TensorFile: duplicate entry " + name);
    Entry e;
    e.name = name;
    e.dtype = dtype_of<T>();
    e.dims = t.shape;
    e.raw.resize(t.data.size() * sizeof(T));
    if (!t.data.empty()) std::memcpy(e.raw.data(), t.data.data(), e.raw.size());
    index_[name] = entries_.size();
    entries_.push_back(std::move(e));
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  template <typename T>
  Tensor<T> get(const std::string& name) const {
    auto it = index_.find(name);
    check(it != index_.end(), "TensorFile: missing entry " + name);
    const Entry& e = entries_[it->second];
    check(e.dtype == dtype_of<T>(), "TensorFile: dtype mismatch for " + name);
    Tensor<T> t(e.dims);
    check(e.raw.size() == t.data.size() * sizeof(T), "TensorFile: size mismatch for " + name);
    if (!e.raw.empty()) std::memcpy(t.data.data(), e.raw.data(), e.raw.size());
    return t;
  }

  const std::vector<Entry>& entries() const { return entries_; }

  void save(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    check(f.good(), "cannot open for write: " + path);
    f.write("CHGT", 4);
    write_u32(f, kVersion);
    write_u32(f, static_cast<std::uint32_t>(entries_.size()));
    for (const Entry& e : entries_) {
      write_u32(f, static_cast<std::uint32_t>(e.name.size()));
      f.write(e.name.data(), static_cast<std::streamsize>(e.name.size()));
      write_u32(f, e.dtype);
      write_u32(f, static_cast<std::uint32_t>(e.dims.size()));
      for (int d : e.dims) write_i64(f, d);
      f.write(e.raw.data(), static_cast<std::streamsize>(e.raw.size()));
    }
    check(f.good(), "write failed: " + path);
  }

  static TensorFile load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    check(f.good(), "cannot open: " + path);
    char magic[4];
    f.read(magic, 4);
    check(f.good() && std::memcmp(magic, "CHGT", 4) == 0, "not a CHGT container: " + path);
    const std::uint32_t version = read_u32(f, path);
    check(version == kVersion, "unsupported CHGT version " + std::to_string(version) + " in " + path);
    const std::uint32_t n = read_u32(f, path);
    TensorFile tf;
    for (std::uint32_t i = 0; i < n; ++i) {
      Entry e;
      const std::uint32_t name_len = read_u32(f, path);
      e.name.resize(name_len);
      f.read(e.name.data(), name_len);
      e.dtype = read_u32(f, path);
      const std::uint32_t ndim = read_u32(f, path);
      std::size_t numel = 1;
      for (std::uint32_t k = 0; k < ndim; ++k) {
        const std::int64_t d = read_i64(f, path);
        check(d >= 0, "corrupt dims in " + path);
        e.dims.push_back(static_cast<int>(d));
        numel *= static_cast<std::size_t>(d);
      }
      e.raw.resize(numel * elem_size(e.dtype, path));
      f.read(e.raw.data(), static_cast<std::streamsize>(e.raw.size()));
      check(f.good(), "truncated container: " + path);
      tf.index_[e.name] = tf.entries_.size();
      tf.entries_.push_back(std::move(e));
    }
    return tf;
  }

 private:
  static std::size_t elem_size(std::uint32_t dt, const std::string& path) {
    switch (dt) {
      case dtype::f32:
      case dtype::i32:
        return 4;
      case dtype::f64:
      case dtype::i64:
        return 8;
      case dtype::u8:
        return 1;
      default:
        fail("unknown dtype in " + path);
    }
  }

  static void write_u32(std::ofstream& f, std::uint32_t v) {
    f.write(reinterpret_cast<const char*>(&v), sizeof(v));
  }
  static void write_i64(std::ofstream& f, std::int64_t v) {
    f.write(reinterpret_cast<const char*>(&v), sizeof(v));
  }
  static std::uint32_t read_u32(std::ifstream& f, const std::string& path) {
    std::uint32_t v = 0;
    f.read(reinterpret_cast<char*>(&v), sizeof(v));
    check(f.good(), "truncated container: " + path);
    return v;
  }
  static std::int64_t read_i64(std::ifstream& f, const std::string& path) {
    std::int64_t v = 0;
    f.read(reinterpret_cast<char*>(&v), sizeof(v));
    check(f.good(), "truncated container: " + path);
    return v;
  }

  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

}  // namespace chargrid
