#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <ostream>
#include <span>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "kdbench/core/error.hpp"

namespace kdb {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

// Dense row-major array. Plain value type; gradient bookkeeping lives in Graph.
// Models train and run in f32; the f64 instantiation exists for gradient checks.
template <class T>
class BasicTensor {
 public:
  BasicTensor() = default;

  explicit BasicTensor(Shape shape, T fill = T(0)) : shape_(std::move(shape)) {
    validate_shape();
    data_.assign(shape_size(shape_), fill);
  }

  BasicTensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape();
    if (shape_size(shape_) != data_.size()) {
      throw DimensionError("tensor data size " + std::to_string(data_.size()) +
                           " does not match shape " + shape_str(shape_));
    }
  }

  static BasicTensor vector(std::initializer_list<T> values) {
    return BasicTensor({values.size()}, std::vector<T>(values));
  }

  static BasicTensor matrix(std::initializer_list<std::initializer_list<T>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<T> data;
    data.reserve(r * c);
    for (const auto& row : rows) {
      if (row.size() != c) throw DimensionError("ragged matrix literal");
      data.insert(data.end(), row.begin(), row.end());
    }
    return BasicTensor({r, c}, std::move(data));
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  // 2-D views; a 1-D tensor is treated as a single row.
  std::size_t rows() const noexcept { return rank() >= 2 ? shape_[0] : 1; }
  std::size_t cols() const noexcept { return shape_.empty() ? 0 : shape_.back(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  std::vector<T>& storage() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  T operator[](std::size_t i) const { return data_[i]; }
  T& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  T at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  std::span<T> row(std::size_t r) { return std::span<T>(data_).subspan(r * cols(), cols()); }
  std::span<const T> row(std::size_t r) const {
    return std::span<const T>(data_).subspan(r * cols(), cols());
  }

  // Reuses existing capacity; contents are unspecified unless `fill` is given.
  void resize(const Shape& shape) {
    shape_ = shape;
    data_.resize(shape_size(shape_));
  }
  void resize(const Shape& shape, T fill) {
    shape_ = shape;
    data_.assign(shape_size(shape_), fill);
  }

  BasicTensor reshaped(Shape shape) const { return BasicTensor(std::move(shape), data_); }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

  friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  void validate_shape() const {
    for (auto d : shape_) {
      if (d == 0) throw DimensionError("tensor dims must be positive, got " + shape_str(shape_));
    }
  }

  Shape shape_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<float>;

template <class To, class From>
BasicTensor<To> tensor_cast(const BasicTensor<From>& t) {
  std::vector<To> out(t.data().begin(), t.data().end());
  return BasicTensor<To>(t.shape(), std::move(out));
}

template <class T>
std::ostream& operator<<(std::ostream& os, const BasicTensor<T>& t) {
  os << "Tensor" << shape_str(t.shape()) << "{";
  for (std::size_t i = 0; i < t.size() && i < 16; ++i) os << (i ? ", " : "") << t[i];
  if (t.size() > 16) os << ", ...";
  return os << "}";
}

template <class T>
T max_abs_diff(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.shape() != b.shape()) throw DimensionError("max_abs_diff shape mismatch");
  T m = T(0);
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

// Index of the largest element; ties go to the lowest index.
template <class Range>
std::size_t argmax(const Range& values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

// Row-wise softmax of z / T. With T == 1 no division is applied, so the result
// is bit-identical to plain softmax.
template <class T>
BasicTensor<T> softmax_with_temperature(const BasicTensor<T>& logits, std::type_identity_t<T> temperature) {
  if (!(temperature > T(0)) || !std::isfinite(temperature)) {
    throw ParameterError("temperature must be positive and finite");
  }
  BasicTensor<T> out = logits;
  const std::size_t n = out.cols();
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    if (temperature != T(1)) {
      for (auto& v : row) v /= temperature;
    }
    const T mx = *std::max_element(row.begin(), row.end());
    T total = T(0);
    for (auto& v : row) {
      v = std::exp(v - mx);
      total += v;
    }
    for (std::size_t i = 0; i < n; ++i) row[i] /= total;
  }
  if (!out.all_finite()) throw NumericError("softmax produced non-finite values");
  return out;
}

template <class T>
BasicTensor<T> softmax(const BasicTensor<T>& logits) {
  return softmax_with_temperature(logits, T(1));
}

}  // namespace kdb
