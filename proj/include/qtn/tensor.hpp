#ifndef QTN_TENSOR_HPP
#define QTN_TENSOR_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "qtn/errors.hpp"

namespace qtn {

/// NCHW extents. Vectors (bias, norm scale/shift) use (1, c, 1, 1).
struct Shape {
  std::size_t n = 0;
  std::size_t c = 0;
  std::size_t h = 0;
  std::size_t w = 0;

  std::size_t numel() const { return n * c * h * w; }
  std::size_t plane() const { return h * w; }
  std::array<std::size_t, 4> dims() const { return {n, c, h, w}; }

  friend bool operator==(const Shape&, const Shape&) = default;
};

std::string to_string(const Shape& s);

/// Dense row-major 4-D array. Value type; copies are deep.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T(0)) : shape_(shape), data_(shape.numel(), fill) {}
  Tensor(std::size_t n, std::size_t c, std::size_t h, std::size_t w, T fill = T(0))
      : Tensor(Shape{n, c, h, w}, fill) {}
  Tensor(Shape shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
    if (data_.size() != shape_.numel()) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + to_string(shape_));
    }
  }

  static Tensor vector(std::size_t c, T fill = T(0)) { return Tensor(Shape{1, c, 1, 1}, fill); }

  const Shape& shape() const { return shape_; }
  std::size_t n() const { return shape_.n; }
  std::size_t c() const { return shape_.c; }
  std::size_t h() const { return shape_.h; }
  std::size_t w() const { return shape_.w; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> span() { return data_; }
  std::span<const T> span() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::size_t index(std::size_t in, std::size_t ic, std::size_t iy, std::size_t ix) const {
    return ((in * shape_.c + ic) * shape_.h + iy) * shape_.w + ix;
  }
  T& at(std::size_t in, std::size_t ic, std::size_t iy, std::size_t ix) {
    return data_[index(in, ic, iy, ix)];
  }
  const T& at(std::size_t in, std::size_t ic, std::size_t iy, std::size_t ix) const {
    return data_[index(in, ic, iy, ix)];
  }

  /// Pointer to the (h, w) plane of sample `in`, channel `ic`.
  T* plane(std::size_t in, std::size_t ic) { return data_.data() + (in * shape_.c + ic) * shape_.plane(); }
  const T* plane(std::size_t in, std::size_t ic) const {
    return data_.data() + (in * shape_.c + ic) * shape_.plane();
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out(shape_);
    std::transform(data_.begin(), data_.end(), out.data(), [](T v) { return static_cast<U>(v); });
    return out;
  }

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_{};
  std::vector<T> data_;
};

inline std::string to_string(const Shape& s) {
  return "(" + std::to_string(s.n) + "," + std::to_string(s.c) + "," + std::to_string(s.h) + "," +
         std::to_string(s.w) + ")";
}

}  // namespace qtn

#endif  // QTN_TENSOR_HPP
