#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "iskd/errors.hpp"

namespace iskd {

using Shape = std::vector<std::size_t>;

std::size_t shape_product(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major array. `float` is the working precision; `double` exists
/// for the gradient-check harness.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() = default;

  explicit BasicTensor(Shape shape, T fill = T{0}) : shape_(std::move(shape)) {
    check_shape(shape_);
    data_.assign(shape_product(shape_), fill);
  }

  BasicTensor(Shape shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape(shape_);
    if (shape_product(shape_) != data_.size()) {
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_string(shape_));
    }
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  T* raw() noexcept { return data_.data(); }
  const T* raw() const noexcept { return data_.data(); }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  /// Element (i, j) of a rank-2 tensor.
  T& at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
  const T& at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

  /// Row `i` of the tensor viewed as shape[0] x (size / shape[0]).
  std::span<T> row(std::size_t i) {
    const std::size_t stride = data_.size() / shape_[0];
    return std::span<T>(data_).subspan(i * stride, stride);
  }
  std::span<const T> row(std::size_t i) const {
    const std::size_t stride = data_.size() / shape_[0];
    return std::span<const T>(data_).subspan(i * stride, stride);
  }

  void reshape(Shape shape) {
    check_shape(shape);
    if (shape_product(shape) != data_.size()) {
      throw DimensionError("cannot reshape " + shape_string(shape_) + " to " +
                           shape_string(shape));
    }
    shape_ = std::move(shape);
  }

  void fill(T value) { std::fill(data_.begin(), data_.end(), value); }

  bool all_finite() const noexcept {
    for (T v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  template <typename U>
  BasicTensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return BasicTensor<U>(shape_, std::move(out));
  }

  friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  static void check_shape(const Shape& shape) {
    if (shape.empty()) throw DimensionError("tensor shape must have at least one dimension");
    for (std::size_t d : shape) {
      if (d == 0) throw DimensionError("tensor dimensions must be positive, got " + shape_string(shape));
    }
  }

  Shape shape_;
  std::vector<T> data_;
};

/// Same shape and identical bit patterns (distinguishes -0 from +0).
template <typename T>
bool bitwise_equal(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  return a.shape() == b.shape() &&
         std::memcmp(a.raw(), b.raw(), a.size() * sizeof(T)) == 0;
}

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

}  // namespace iskd
