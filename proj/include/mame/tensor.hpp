#pragma once

#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace mame {

// Dense row-major tensor. Rank 1-3 is all this project needs.
template <typename T>
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape, T fill = T(0))
      : shape_(std::move(shape)) {
    std::size_t n = 1;
    for (std::size_t d : shape_) {
      if (d == 0) throw std::invalid_argument("shape: zero dimension");
      n *= d;
    }
    data_.assign(n, fill);
  }

  static Tensor vec(std::vector<T> v) {
    Tensor t;
    t.shape_ = {v.size()};
    t.data_ = std::move(v);
    return t;
  }

  static Tensor matrix(std::size_t r, std::size_t c, std::vector<T> v) {
    if (v.size() != r * c) throw std::invalid_argument("shape: matrix data size");
    Tensor t;
    t.shape_ = {r, c};
    t.data_ = std::move(v);
    return t;
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::size_t rows() const { return shape_.at(0); }
  std::size_t cols() const { return shape_.at(1); }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  T& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  const T& at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  T& at(std::size_t i, std::size_t j, std::size_t k) {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }
  const T& at(std::size_t i, std::size_t j, std::size_t k) const {
    return data_[(i * shape_[1] + j) * shape_[2] + k];
  }

  std::vector<T>& data() { return data_; }
  const std::vector<T>& data() const { return data_; }

  const T* row_ptr(std::size_t r) const { return data_.data() + r * shape_[1]; }
  T* row_ptr(std::size_t r) { return data_.data() + r * shape_[1]; }

  bool all_finite() const {
    for (T v : data_)
      if (!std::isfinite(static_cast<double>(v))) return false;
    return true;
  }

  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out = Tensor<U>(shape_);
    for (std::size_t i = 0; i < data_.size(); ++i)
      out[i] = static_cast<U>(data_[i]);
    return out;
  }

 private:
  std::vector<std::size_t> shape_;
  std::vector<T> data_;
};

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows())
    throw std::invalid_argument("shape: matmul inner dims");
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Tensor<T> out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    T* orow = out.row_ptr(i);
    const T* arow = a.row_ptr(i);
    for (std::size_t p = 0; p < k; ++p) {
      const T av = arow[p];
      if (av == T(0)) continue;
      const T* brow = b.row_ptr(p);
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& a) {
  Tensor<T> out({a.cols(), a.rows()});
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) out.at(j, i) = a.at(i, j);
  return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("shape: add");
  Tensor<T> out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i];
  return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("shape: sub");
  Tensor<T> out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b[i];
  return out;
}

template <typename T>
Tensor<T> hadamard(const Tensor<T>& a, const Tensor<T>& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("shape: hadamard");
  Tensor<T> out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b[i];
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  Tensor<T> out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= s;
  return out;
}

// Stable softplus: max(x,0) + log1p(exp(-|x|)).
template <typename T>
T softplus_scalar(T x) {
  const T ax = std::abs(x);
  const T base = x > T(0) ? x : T(0);
  return base + std::log1p(std::exp(-ax));
}

template <typename T>
Tensor<T> softplus(const Tensor<T>& a) {
  Tensor<T> out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = softplus_scalar(out[i]);
  return out;
}

template <typename T>
T dot_rows(const Tensor<T>& m, std::size_t i, std::size_t j) {
  const T* a = m.row_ptr(i);
  const T* b = m.row_ptr(j);
  T s = 0;
  for (std::size_t c = 0; c < m.cols(); ++c) s += a[c] * b[c];
  return s;
}

}  // namespace mame
