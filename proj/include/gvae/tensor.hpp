// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gvae/error.hpp"

namespace gvae {

using Shape = std::vector<std::size_t>;

inline std::string shape_string(const Shape &shape) {
  std::string out = "[";
  for (std::size_t k = 0; k < shape.size(); ++k) {
    if (k) out += "x";
    out += std::to_string(shape[k]);
  }
  return out + "]";
}

inline std::size_t shape_size(const Shape &shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

/// Dense row-major array of doubles. Every dimension is positive and the
/// element count always equals the product of the shape.
class Tensor {
public:
  Tensor() : shape_{1}, data_(1, 0.0) {}

  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)) {
    check_shape(shape_);
    data_.assign(shape_size(shape_), fill);
  }

  Tensor(Shape shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape(shape_);
    if (data_.size() != shape_size(shape_)) {
      throw Error(ErrorCode::ShapeMismatch,
                  "data length " + std::to_string(data_.size()) +
                      " does not match shape " + shape_string(shape_));
    }
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0) {
    return Tensor({rows, cols}, fill);
  }

  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<double> data;
    data.reserve(r * c);
    for (const auto &row : rows) {
      if (row.size() != c) {
        throw Error(ErrorCode::ShapeMismatch, "ragged matrix literal");
      }
      data.insert(data.end(), row.begin(), row.end());
    }
    return Tensor({r, c}, std::move(data));
  }

  static Tensor scalar(double value) { return Tensor({1, 1}, value); }

  static Tensor identity(std::size_t n) {
    Tensor t = matrix(n, n);
    for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0;
    return t;
  }

  const Shape &shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t rows() const { return dim(0); }
  std::size_t cols() const { return dim(1); }

  std::size_t dim(std::size_t axis) const {
    if (axis >= shape_.size()) {
      throw Error(ErrorCode::ShapeMismatch,
                  "axis " + std::to_string(axis) + " out of range for " +
                      shape_string(shape_));
    }
    return shape_[axis];
  }

  bool is_matrix() const noexcept { return shape_.size() == 2; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::vector<double> &values() noexcept { return data_; }
  const std::vector<double> &values() const noexcept { return data_; }

  double &operator[](std::size_t k) { return data_[k]; }
  double operator[](std::size_t k) const { return data_[k]; }

  double &operator()(std::size_t i, std::size_t j) {
    return data_[i * shape_[1] + j];
  }
  double operator()(std::size_t i, std::size_t j) const {
    return data_[i * shape_[1] + j];
  }

  double item() const {
    if (data_.size() != 1) {
      throw Error(ErrorCode::NotScalar,
                  "tensor of shape " + shape_string(shape_) + " is not a scalar");
    }
    return data_[0];
  }

  bool all_finite() const noexcept {
    for (double v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  friend bool operator==(const Tensor &a, const Tensor &b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

private:
  static void check_shape(const Shape &shape) {
    if (shape.empty()) {
      throw Error(ErrorCode::ShapeMismatch, "tensor shape must be non-empty");
    }
    for (std::size_t d : shape) {
      if (d == 0) {
        throw Error(ErrorCode::ShapeMismatch,
                    "tensor dimensions must be positive, got " +
                        shape_string(shape));
      }
    }
  }

  Shape shape_;
  std::vector<double> data_;
};

} // namespace gvae
