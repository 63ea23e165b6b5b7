#pragma once

#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "chargrid/common.hpp"

namespace chargrid {

// Dense n-d array, row-major, last axis fastest. Feature maps use NHWC.
template <typename T>
struct Tensor {
  std::vector<int> shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)), data(count(shape)) {}
  Tensor(std::vector<int> s, T fill) : shape(std::move(s)), data(count(shape), fill) {}

  static std::size_t count(const std::vector<int>& s) {
    std::size_t n = 1;
    for (int d : s) {
      check(d >= 0, "tensor dims must be non-negative");
      n *= static_cast<std::size_t>(d);
    }
    return n;
  }

  static Tensor zeros(std::vector<int> s) { return Tensor(std::move(s)); }
  static Tensor full(std::vector<int> s, T v) { return Tensor(std::move(s), v); }

  std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
  int ndim() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }
  bool empty() const { return data.empty(); }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }

  T& operator[](std::int64_t i) { return data[static_cast<std::size_t>(i)]; }
  const T& operator[](std::int64_t i) const { return data[static_cast<std::size_t>(i)]; }

  T& at(int i, int j) { return data[static_cast<std::size_t>(i) * shape[1] + j]; }
  const T& at(int i, int j) const { return data[static_cast<std::size_t>(i) * shape[1] + j]; }

  T& at(int i, int j, int k) {
    return data[(static_cast<std::size_t>(i) * shape[1] + j) * shape[2] + k];
  }
  const T& at(int i, int j, int k) const {
    return data[(static_cast<std::size_t>(i) * shape[1] + j) * shape[2] + k];
  }

  T& at(int n, int i, int j, int k) {
    return data[((static_cast<std::size_t>(n) * shape[1] + i) * shape[2] + j) * shape[3] + k];
  }
  const T& at(int n, int i, int j, int k) const {
    return data[((static_cast<std::size_t>(n) * shape[1] + i) * shape[2] + j) * shape[3] + k];
  }

  void fill(T v) { std::fill(data.begin(), data.end(), v); }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape);
    for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
    return out;
  }
};

template <typename T>
bool operator==(const Tensor<T>& a, const Tensor<T>& b) {
  return a.shape == b.shape && a.data == b.data;
}

template <typename T>
std::string shape_str(const Tensor<T>& t) {
  std::string s = "(";
  for (int i = 0; i < t.ndim(); ++i) {
    if (i) s += ",";
    s += std::to_string(t.dim(i));
  }
  return s + ")";
}

// argmax over the trailing (channel) axis of an (H,W,C) tensor.
template <typename T>
Tensor<int> argmax_channels(const Tensor<T>& t) {
  check(t.ndim() == 3, "argmax_channels expects (H,W,C)");
  const int h = t.dim(0), w = t.dim(1), c = t.dim(2);
  Tensor<int> out({h, w});
  for (int i = 0; i < h; ++i) {
    for (int j = 0; j < w; ++j) {
      const T* row = t.ptr() + (static_cast<std::size_t>(i) * w + j) * c;
      int best = 0;
      for (int k = 1; k < c; ++k) {
        if (row[k] > row[best]) best = k;
      }
      out.at(i, j) = best;
    }
  }
  return out;
}

}  // namespace chargrid
