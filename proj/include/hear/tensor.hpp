// Dense row-major n-dimensional tensor over a floating scalar type.
// The scalar is a template parameter: double drives the gradient-check
// mode, float the training mode.
#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "hear/errors.hpp"
#include "hear/rng.hpp"

namespace hear {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << "]";
  return os.str();
}

template <typename T>
class Tensor {
public:
  Tensor() = default;
  explicit Tensor(Shape shape)
      : shape_(std::move(shape)), data_(shape_numel(shape_), T(0)) {}
  Tensor(Shape shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_numel(shape_)) {
      throw ShapeMismatch("tensor data does not match shape " +
                          shape_str(shape_));
    }
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor full(Shape shape, T v) {
    Tensor t(std::move(shape));
    for (auto& x : t.data_) x = v;
    return t;
  }

  static Tensor scalar(T v) { return Tensor({1}, {v}); }

  static Tensor randn(Shape shape, Rng& rng, T stddev = T(1)) {
    Tensor t(std::move(shape));
    for (auto& x : t.data_) x = static_cast<T>(rng.next_normal()) * stddev;
    return t;
  }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_[i]; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& vec() { return data_; }
  const std::vector<T>& vec() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& at(std::initializer_list<std::size_t> idx) {
    return data_[flat_index(idx)];
  }
  const T& at(std::initializer_list<std::size_t> idx) const {
    return data_[flat_index(idx)];
  }

  bool same_shape(const Tensor& other) const {
    return shape_ == other.shape_;
  }

  bool all_finite() const {
    for (const T& x : data_) {
      if (!std::isfinite(static_cast<double>(x))) return false;
    }
    return true;
  }

  void fill(T v) {
    for (auto& x : data_) x = v;
  }

  // Last-dimension length, treating a scalar as length 1.
  std::size_t last_dim() const {
    return shape_.empty() ? 1 : shape_.back();
  }

  // Number of rows when the tensor is viewed as [rows, last_dim].
  std::size_t rows() const {
    return shape_.empty() ? 1 : size() / last_dim();
  }

private:
  std::size_t flat_index(std::initializer_list<std::size_t> idx) const {
    std::size_t flat = 0;
    std::size_t i = 0;
    for (std::size_t v : idx) {
      flat = flat * shape_[i] + v;
      ++i;
    }
    return flat;
  }

  Shape shape_;
  std::vector<T> data_;
};

template <typename T, typename U>
Tensor<U> tensor_cast(const Tensor<T>& t) {
  Tensor<U> out(t.shape());
  for (std::size_t i = 0; i < t.size(); ++i) {
    out[i] = static_cast<U>(t[i]);
  }
  return out;
}

// Largest elementwise relative difference, with an absolute floor so
// near-zero pairs compare on absolute terms.
template <typename T>
double max_rel_diff(const Tensor<T>& a, const Tensor<T>& b,
                    double floor = 1e-8) {
  if (!a.same_shape(b)) {
    throw ShapeMismatch("max_rel_diff: " + shape_str(a.shape()) + " vs " +
                        shape_str(b.shape()));
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    double x = static_cast<double>(a[i]);
    double y = static_cast<double>(b[i]);
    double denom = std::max(floor, std::abs(x) + std::abs(y));
    worst = std::max(worst, std::abs(x - y) / denom);
  }
  return worst;
}

}  // namespace hear
