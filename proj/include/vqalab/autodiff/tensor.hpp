#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

#include "vqalab/error.hpp"

namespace vqalab::ad {

/// Tensor shape of rank 0 (scalar), 1 (vector) or 2 (row-major matrix).
class Shape {
 public:
  constexpr Shape() = default;
  constexpr explicit Shape(std::size_t n) : dims_{n, 1}, rank_(1) {}
  constexpr Shape(std::size_t rows, std::size_t cols) : dims_{rows, cols}, rank_(2) {}

  static constexpr Shape scalar() { return Shape(); }

  constexpr std::size_t rank() const { return rank_; }
  constexpr std::size_t operator[](std::size_t axis) const { return dims_[axis]; }
  constexpr std::size_t rows() const { return rank_ == 0 ? 1 : dims_[0]; }
  constexpr std::size_t cols() const { return rank_ == 2 ? dims_[1] : 1; }
  constexpr std::size_t size() const {
    return rank_ == 0 ? 1 : (rank_ == 1 ? dims_[0] : dims_[0] * dims_[1]);
  }

  friend constexpr bool operator==(const Shape& a, const Shape& b) {
    if (a.rank_ != b.rank_) return false;
    for (std::size_t i = 0; i < a.rank_; ++i)
      if (a.dims_[i] != b.dims_[i]) return false;
    return true;
  }

  std::string str() const {
    if (rank_ == 0) return "[]";
    if (rank_ == 1) return "[" + std::to_string(dims_[0]) + "]";
    return "[" + std::to_string(dims_[0]) + "," + std::to_string(dims_[1]) + "]";
  }

 private:
  std::array<std::size_t, 2> dims_{1, 1};
  std::uint8_t rank_ = 0;
};

/// Dense tensor of 64-bit reals.
class Tensor {
 public:
  Tensor() : data_(1, 0.0) {}
  explicit Tensor(Shape shape, double fill = 0.0) : shape_(shape), data_(shape.size(), fill) {}
  Tensor(Shape shape, std::vector<double> data) : shape_(shape), data_(std::move(data)) {
    require(data_.size() == shape_.size(), ErrorKind::shape,
            "tensor data size " + std::to_string(data_.size()) + " does not match shape " +
                shape_.str());
  }

  static Tensor scalar(double v) { return Tensor(Shape::scalar(), std::vector<double>{v}); }
  static Tensor vector(std::vector<double> v) {
    const Shape s(v.size());
    return Tensor(s, std::move(v));
  }
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> v) {
    return Tensor(Shape(rows, cols), std::move(v));
  }

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * shape_.cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * shape_.cols() + c]; }

  double item() const {
    require(data_.size() == 1, ErrorKind::rank, "item() on non-scalar tensor " + shape_.str());
    return data_[0];
  }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// Pure tensor kernels. Graph evaluation and the detached backward pass both
/// call these, so attached and detached gradients agree bit for bit.
namespace kernels {

inline void same_shape(const Tensor& a, const Tensor& b, const char* op) {
  require(a.shape() == b.shape(), ErrorKind::shape,
          std::string(op) + ": shape mismatch " + a.shape().str() + " vs " + b.shape().str());
}

template <class F>
Tensor map(const Tensor& a, F&& f) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i]);
  return out;
}

template <class F>
Tensor zip(const Tensor& a, const Tensor& b, F&& f) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[i]);
  return out;
}

inline Tensor add(const Tensor& a, const Tensor& b) {
  return zip(a, b, [](double x, double y) { return x + y; });
}
inline Tensor sub(const Tensor& a, const Tensor& b) {
  return zip(a, b, [](double x, double y) { return x - y; });
}
inline Tensor mul(const Tensor& a, const Tensor& b) {
  return zip(a, b, [](double x, double y) { return x * y; });
}
inline Tensor affine(const Tensor& a, double scale, double shift) {
  return map(a, [=](double x) { return scale * x + shift; });
}

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}
inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

inline Tensor sigmoid(const Tensor& a) { return map(a, [](double x) { return sigmoid(x); }); }
inline Tensor softplus(const Tensor& a) { return map(a, [](double x) { return softplus(x); }); }
inline Tensor relu(const Tensor& a) { return map(a, [](double x) { return x > 0 ? x : 0.0; }); }
// Derivative of relu; zero at the kink.
inline Tensor step(const Tensor& a) { return map(a, [](double x) { return x > 0 ? 1.0 : 0.0; }); }
inline Tensor log(const Tensor& a) { return map(a, [](double x) { return std::log(x); }); }
inline Tensor sqrt(const Tensor& a) { return map(a, [](double x) { return std::sqrt(x); }); }
inline Tensor reciprocal(const Tensor& a) { return map(a, [](double x) { return 1.0 / x; }); }
inline Tensor clamp(const Tensor& a, double lo, double hi) {
  return map(a, [=](double x) { return std::clamp(x, lo, hi); });
}
inline Tensor in_range(const Tensor& a, double lo, double hi) {
  return map(a, [=](double x) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

inline Tensor softmax(const Tensor& a) {
  Tensor out(a.shape());
  const double hi = *std::max_element(a.data().begin(), a.data().end());
  double total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    out[i] = std::exp(a[i] - hi);
    total += out[i];
  }
  for (std::size_t i = 0; i < a.size(); ++i) out[i] /= total;
  return out;
}

inline Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double x : a.data()) total += x;
  return Tensor::scalar(total);
}

inline Tensor broadcast(const Tensor& scalar, Shape shape) { return Tensor(shape, scalar.item()); }

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  Tensor out(Shape(m, n));
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  double* po = out.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = pa[i * k + p];
      const double* brow = pb + p * n;
      double* orow = po + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

inline Tensor transpose(const Tensor& a) {
  const std::size_t m = a.shape()[0], n = a.shape()[1];
  Tensor out(Shape(n, m));
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(j, i) = a.at(i, j);
  return out;
}

inline Tensor reshape(const Tensor& a, Shape shape) { return Tensor(shape, a.data()); }

inline Tensor index(const Tensor& a, std::size_t i) { return Tensor::scalar(a[i]); }

inline Tensor scatter(const Tensor& scalar, std::size_t i, std::size_t n) {
  Tensor out{Shape(n)};
  out[i] = scalar.item();
  return out;
}

}  // namespace kernels
}  // namespace vqalab::ad
