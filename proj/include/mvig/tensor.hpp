#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "mvig/error.hpp"

namespace mvig {

struct Shape4 {
  std::size_t n = 1, c = 1, h = 1, w = 1;

  std::size_t numel() const { return n * c * h * w; }
  std::size_t plane() const { return h * w; }
  bool operator==(const Shape4&) const = default;

  std::string str() const {
    std::ostringstream os;
    os << "(" << n << ", " << c << ", " << h << ", " << w << ")";
    return os.str();
  }
};

/// Dense NCHW feature map. Storage is row-major in (n, c, h, w).
template <typename T>
class Tensor4 {
 public:
  using value_type = T;

  Tensor4() = default;
  explicit Tensor4(Shape4 shape, T fill = T(0)) : shape_(shape) {
    if (shape.n == 0 || shape.c == 0 || shape.h == 0 || shape.w == 0) {
      throw ConfigError("Tensor4: all dimensions must be >= 1, got " + shape.str());
    }
    data_.assign(shape.numel(), fill);
  }
  Tensor4(std::size_t n, std::size_t c, std::size_t h, std::size_t w, T fill = T(0))
      : Tensor4(Shape4{n, c, h, w}, fill) {}
  Tensor4(Shape4 shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
    if (shape.n == 0 || shape.c == 0 || shape.h == 0 || shape.w == 0) {
      throw ConfigError("Tensor4: all dimensions must be >= 1, got " + shape.str());
    }
    if (data_.size() != shape.numel()) {
      throw ConfigError("Tensor4: data length does not match shape " + shape.str());
    }
  }

  const Shape4& shape() const { return shape_; }
  std::size_t n() const { return shape_.n; }
  std::size_t c() const { return shape_.c; }
  std::size_t h() const { return shape_.h; }
  std::size_t w() const { return shape_.w; }
  std::size_t size() const { return data_.size(); }

  std::size_t index(std::size_t n, std::size_t c, std::size_t i, std::size_t j) const {
    return ((n * shape_.c + c) * shape_.h + i) * shape_.w + j;
  }
  T& at(std::size_t n, std::size_t c, std::size_t i, std::size_t j) { return data_[index(n, c, i, j)]; }
  const T& at(std::size_t n, std::size_t c, std::size_t i, std::size_t j) const {
    return data_[index(n, c, i, j)];
  }

  /// Contiguous h*w plane of channel c in batch element n.
  std::span<T> plane(std::size_t n, std::size_t c) {
    return {data_.data() + index(n, c, 0, 0), shape_.plane()};
  }
  std::span<const T> plane(std::size_t n, std::size_t c) const {
    return {data_.data() + index(n, c, 0, 0), shape_.plane()};
  }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  bool operator==(const Tensor4& o) const { return shape_ == o.shape_ && data_ == o.data_; }

 private:
  Shape4 shape_{};
  std::vector<T> data_;
};

/// Dense (batch, features) matrix, row-major.
template <typename T>
class Tensor2 {
 public:
  using value_type = T;

  Tensor2() = default;
  Tensor2(std::size_t n, std::size_t c, T fill = T(0)) : n_(n), c_(c) {
    if (n == 0 || c == 0) throw ConfigError("Tensor2: dimensions must be >= 1");
    data_.assign(n * c, fill);
  }
  Tensor2(std::size_t n, std::size_t c, std::vector<T> data) : n_(n), c_(c), data_(std::move(data)) {
    if (n == 0 || c == 0) throw ConfigError("Tensor2: dimensions must be >= 1");
    if (data_.size() != n * c) throw ConfigError("Tensor2: data length does not match shape");
  }

  std::size_t n() const { return n_; }
  std::size_t c() const { return c_; }
  std::size_t size() const { return data_.size(); }

  T& at(std::size_t i, std::size_t j) { return data_[i * c_ + j]; }
  const T& at(std::size_t i, std::size_t j) const { return data_[i * c_ + j]; }
  std::span<T> row(std::size_t i) { return {data_.data() + i * c_, c_}; }
  std::span<const T> row(std::size_t i) const { return {data_.data() + i * c_, c_}; }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }

  bool operator==(const Tensor2&) const = default;

 private:
  std::size_t n_ = 0, c_ = 0;
  std::vector<T> data_;
};

/// Copies batch element b of x into a (1, c, h, w) tensor.
template <typename T>
Tensor4<T> batch_slice(const Tensor4<T>& x, std::size_t b) {
  if (b >= x.n()) throw ConfigError("batch_slice: index out of range");
  Shape4 s = x.shape();
  s.n = 1;
  const std::size_t per = s.numel();
  std::vector<T> out(x.storage().begin() + static_cast<std::ptrdiff_t>(b * per),
                     x.storage().begin() + static_cast<std::ptrdiff_t>((b + 1) * per));
  return Tensor4<T>(s, std::move(out));
}

/// Concatenates tensors along the batch axis.
template <typename T>
Tensor4<T> stack_batch(std::span<const Tensor4<T>> parts) {
  if (parts.empty()) throw ConfigError("stack_batch: no inputs");
  Shape4 s = parts.front().shape();
  s.n = 0;
  std::vector<T> out;
  for (const auto& p : parts) {
    if (p.c() != s.c || p.h() != s.h || p.w() != s.w) {
      throw ConfigError("stack_batch: mismatched shapes " + p.shape().str());
    }
    s.n += p.n();
    out.insert(out.end(), p.storage().begin(), p.storage().end());
  }
  return Tensor4<T>(s, std::move(out));
}

template <typename To, typename From>
Tensor4<To> tensor_cast(const Tensor4<From>& x) {
  std::vector<To> out(x.size());
  std::transform(x.data().begin(), x.data().end(), out.begin(), [](From v) { return static_cast<To>(v); });
  return Tensor4<To>(x.shape(), std::move(out));
}

}  // namespace mvig
