#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "geopre/util.hpp"

namespace geopre {

// Dense row-major tensor. Shapes follow the NCHW convention for image data;
// 1-D and 2-D tensors are used for per-sample scalars and linear layers.
// float is the training dtype; double is used by the renderer, the metric
// suite and precision-critical internals.
template <typename T>
class BasicTensor {
 public:
  BasicTensor() = default;
  explicit BasicTensor(std::vector<int> shape)
      : shape_(std::move(shape)), v_(checked_numel(shape_), T(0)) {}
  BasicTensor(std::vector<int> shape, T fill)
      : shape_(std::move(shape)), v_(checked_numel(shape_), fill) {}
  BasicTensor(std::vector<int> shape, std::vector<T> values)
      : shape_(std::move(shape)), v_(std::move(values)) {
    check_arg(static_cast<std::int64_t>(v_.size()) == checked_numel(shape_),
              "tensor: value count does not match shape");
  }

  static BasicTensor zeros(std::vector<int> shape) { return BasicTensor(std::move(shape)); }
  static BasicTensor full(std::vector<int> shape, T v) { return BasicTensor(std::move(shape), v); }
  static BasicTensor scalar(T v) { return BasicTensor({1}, std::vector<T>{v}); }

  bool empty() const { return v_.empty(); }
  int ndim() const { return static_cast<int>(shape_.size()); }
  int dim(int i) const { return shape_[static_cast<std::size_t>(i)]; }
  const std::vector<int>& shape() const { return shape_; }
  std::int64_t numel() const { return static_cast<std::int64_t>(v_.size()); }

  T* data() { return v_.data(); }
  const T* data() const { return v_.data(); }
  std::vector<T>& vec() { return v_; }
  const std::vector<T>& vec() const { return v_; }

  T& operator[](std::int64_t i) { return v_[static_cast<std::size_t>(i)]; }
  const T& operator[](std::int64_t i) const { return v_[static_cast<std::size_t>(i)]; }

  // 4-D NCHW accessor.
  T& at(int n, int c, int h, int w) {
    return v_[((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  const T& at(int n, int c, int h, int w) const {
    return v_[((static_cast<std::size_t>(n) * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  // 2-D accessor.
  T& at(int i, int j) { return v_[static_cast<std::size_t>(i) * shape_[1] + j]; }
  const T& at(int i, int j) const { return v_[static_cast<std::size_t>(i) * shape_[1] + j]; }

  void fill(T v) { std::fill(v_.begin(), v_.end(), v); }
  void release() {
    shape_.clear();
    v_.clear();
    v_.shrink_to_fit();
  }

  bool same_shape(const BasicTensor& o) const { return shape_ == o.shape_; }

  template <typename U>
  BasicTensor<U> cast() const {
    BasicTensor<U> out(shape_);
    for (std::int64_t i = 0; i < numel(); ++i) out[i] = static_cast<U>(v_[i]);
    return out;
  }

  static std::string shape_str(const std::vector<int>& s) {
    std::string r = "(";
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (i) r += ",";
      r += std::to_string(s[i]);
    }
    return r + ")";
  }

 private:
  static std::int64_t checked_numel(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int d : shape) {
      check_arg(d >= 0, "tensor: negative dimension");
      n *= d;
    }
    return n;
  }

  std::vector<int> shape_;
  std::vector<T> v_;
};

using Tensor = BasicTensor<float>;
using DTensor = BasicTensor<double>;

template <typename T>
bool all_finite(const BasicTensor<T>& t) {
  for (std::int64_t i = 0; i < t.numel(); ++i) {
    if (!std::isfinite(t[i])) return false;
  }
  return true;
}

}  // namespace geopre
