#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <vector>

#include "scrl/errors.hpp"

namespace scrl {

// Dense row-major tensor. Rank-2 tensors are used as [batch, features]
// matrices throughout; image features are flattened in HWC order.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(std::vector<size_t> shape, T fill = T(0))
      : shape_(std::move(shape)), data_(count(shape_), fill) {}
  Tensor(std::initializer_list<size_t> shape) : Tensor(std::vector<size_t>(shape)) {}
  Tensor(std::vector<size_t> shape, std::vector<T> values)
      : shape_(std::move(shape)), data_(std::move(values)) {
    if (data_.size() != count(shape_)) {
      throw InvalidArgument("tensor: value count does not match shape");
    }
  }

  static Tensor matrix(size_t rows, size_t cols, T fill = T(0)) {
    return Tensor({rows, cols}, fill);
  }

  const std::vector<size_t>& shape() const { return shape_; }
  size_t rank() const { return shape_.size(); }
  size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  size_t rows() const { return shape_.empty() ? 0 : shape_[0]; }
  size_t cols() const { return shape_.size() < 2 ? 1 : data_.size() / shape_[0]; }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  std::span<T> row(size_t r) { return {data_.data() + r * cols(), cols()}; }
  std::span<const T> row(size_t r) const { return {data_.data() + r * cols(), cols()}; }

  T& operator()(size_t r, size_t c) { return data_[r * cols() + c]; }
  const T& operator()(size_t r, size_t c) const { return data_[r * cols() + c]; }
  T& operator[](size_t i) { return data_[i]; }
  const T& operator[](size_t i) const { return data_[i]; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  template <class U>
  Tensor<U> cast() const {
    return Tensor<U>(shape_, std::vector<U>(data_.begin(), data_.end()));
  }

  bool operator==(const Tensor&) const = default;

 private:
  static size_t count(const std::vector<size_t>& s) {
    return std::accumulate(s.begin(), s.end(), size_t{1}, std::multiplies<>());
  }

  std::vector<size_t> shape_;
  std::vector<T> data_;
};

using Matrix = Tensor<float>;

}  // namespace scrl
