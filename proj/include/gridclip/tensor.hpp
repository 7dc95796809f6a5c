#pragma once

#include <cassert>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "gridclip/rng.hpp"

namespace gridclip {

/// Dense row-major tensor. Shapes are small (rank <= 4) and known at
/// runtime; all layout arithmetic is explicit.
template <typename S>
struct Tensor {
  std::vector<int> shape;
  std::vector<S> data;

  Tensor() = default;

  explicit Tensor(std::vector<int> shp) : shape(std::move(shp)), data(numel_of(shape), S(0)) {}

  Tensor(std::vector<int> shp, std::vector<S> values) : shape(std::move(shp)), data(std::move(values)) {
    if (static_cast<std::size_t>(numel_of(shape)) != data.size())
      throw std::invalid_argument("tensor shape does not match value count");
  }

  static std::size_t numel_of(const std::vector<int>& shp) {
    std::size_t n = 1;
    for (int d : shp) {
      if (d < 0) throw std::invalid_argument("negative tensor dimension");
      n *= static_cast<std::size_t>(d);
    }
    return n;
  }

  std::size_t numel() const { return data.size(); }
  int dim(int i) const { return shape[static_cast<std::size_t>(i)]; }
  int rank() const { return static_cast<int>(shape.size()); }

  S& operator[](std::size_t i) { return data[i]; }
  const S& operator[](std::size_t i) const { return data[i]; }

  S& at3(int c, int y, int x) {
    return data[(static_cast<std::size_t>(c) * shape[1] + y) * shape[2] + x];
  }
  const S& at3(int c, int y, int x) const {
    return data[(static_cast<std::size_t>(c) * shape[1] + y) * shape[2] + x];
  }
  S& at2(int r, int c) { return data[static_cast<std::size_t>(r) * shape[1] + c]; }
  const S& at2(int r, int c) const { return data[static_cast<std::size_t>(r) * shape[1] + c]; }

  void fill(S v) { std::fill(data.begin(), data.end(), v); }

  static Tensor zeros(std::vector<int> shp) { return Tensor(std::move(shp)); }

  static Tensor full(std::vector<int> shp, S v) {
    Tensor t(std::move(shp));
    t.fill(v);
    return t;
  }

  static Tensor randn(std::vector<int> shp, Rng& rng, S stddev = S(1)) {
    Tensor t(std::move(shp));
    for (auto& v : t.data) v = static_cast<S>(rng.normal()) * stddev;
    return t;
  }

  template <typename T>
  Tensor<T> cast() const {
    Tensor<T> out;
    out.shape = shape;
    out.data.resize(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<T>(data[i]);
    return out;
  }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }
};

template <typename S>
inline S l2_norm(const std::vector<S>& v) {
  long double acc = 0;
  for (S x : v) acc += static_cast<long double>(x) * static_cast<long double>(x);
  return static_cast<S>(std::sqrt(static_cast<double>(acc)));
}

}  // namespace gridclip
