#pragma once

// Dense row-major 2-D arrays and the handful of kernels the rest of the
// library is built from. All reductions walk their input in ascending
// row-major order, and matmul accumulates each output element over the inner
// index in ascending order, so results are reproducible bit for bit and can be
// compared exactly against naive loop oracles.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "bitnet/error.hpp"

namespace bitnet {

template <typename T>
class BasicMatrix {
 public:
  using value_type = T;

  BasicMatrix() = default;

  BasicMatrix(std::size_t rows, std::size_t cols, T fill = T{})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  BasicMatrix(std::size_t rows, std::size_t cols, std::vector<T> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw ShapeError("data length " + std::to_string(data_.size()) +
                       " != " + std::to_string(rows_) + "x" +
                       std::to_string(cols_));
    }
  }

  BasicMatrix(std::initializer_list<std::initializer_list<T>> rows) {
    rows_ = rows.size();
    cols_ = rows_ == 0 ? 0 : rows.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& r : rows) {
      if (r.size() != cols_) throw ShapeError("ragged initializer");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  T& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  const T& operator()(std::size_t i, std::size_t j) const {
    return data_[i * cols_ + j];
  }

  std::span<T> row(std::size_t i) {
    return {data_.data() + i * cols_, cols_};
  }
  std::span<const T> row(std::size_t i) const {
    return {data_.data() + i * cols_, cols_};
  }

  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  const std::vector<T>& data() const { return data_; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  // Copy of rows [begin, begin + count).
  BasicMatrix slice_rows(std::size_t begin, std::size_t count) const {
    if (begin + count > rows_) throw ShapeError("row slice out of range");
    return BasicMatrix(
        count, cols_,
        std::vector<T>(data_.begin() + begin * cols_,
                       data_.begin() + (begin + count) * cols_));
  }

  bool operator==(const BasicMatrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

using Matrix = BasicMatrix<float>;
using IntMatrix = BasicMatrix<std::int32_t>;

inline std::string shape_str(std::size_t r, std::size_t c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

template <typename A, typename B>
void require_same_shape(const BasicMatrix<A>& a, const BasicMatrix<B>& b,
                        const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(what) + ": " + shape_str(a.rows(), a.cols()) +
                     " vs " + shape_str(b.rows(), b.cols()));
  }
}

template <typename U, typename T>
BasicMatrix<U> cast(const BasicMatrix<T>& m) {
  std::vector<U> out(m.size());
  std::transform(m.values().begin(), m.values().end(), out.begin(),
                 [](T v) { return static_cast<U>(v); });
  return BasicMatrix<U>(m.rows(), m.cols(), std::move(out));
}

template <typename T>
BasicMatrix<T> transpose(const BasicMatrix<T>& a) {
  BasicMatrix<T> t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

// c = a·b. Each c[i][j] is accumulated over t = 0..k-1 in order, starting
// from zero, which is exactly the naive triple loop.
template <typename T>
BasicMatrix<T> matmul(const BasicMatrix<T>& a, const BasicMatrix<T>& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul " + shape_str(a.rows(), a.cols()) + " * " +
                     shape_str(b.rows(), b.cols()));
  }
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  BasicMatrix<T> c(n, m);
  for (std::size_t i = 0; i < n; ++i) {
    T* crow = c.row(i).data();
    const T* arow = a.row(i).data();
    for (std::size_t t = 0; t < k; ++t) {
      const T av = arow[t];
      const T* brow = b.row(t).data();
      for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
  return c;
}

// a·bᵀ
template <typename T>
BasicMatrix<T> matmul_nt(const BasicMatrix<T>& a, const BasicMatrix<T>& b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_nt " + shape_str(a.rows(), a.cols()) + " * (" +
                     shape_str(b.rows(), b.cols()) + ")^T");
  }
  return matmul(a, transpose(b));
}

// aᵀ·b
template <typename T>
BasicMatrix<T> matmul_tn(const BasicMatrix<T>& a, const BasicMatrix<T>& b) {
  if (a.rows() != b.rows()) {
    throw ShapeError("matmul_tn (" + shape_str(a.rows(), a.cols()) + ")^T * " +
                     shape_str(b.rows(), b.cols()));
  }
  return matmul(transpose(a), b);
}

template <typename T>
void add_inplace(BasicMatrix<T>& acc, const BasicMatrix<T>& x) {
  require_same_shape(acc, x, "add");
  auto a = acc.values();
  auto b = x.values();
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

template <typename T>
BasicMatrix<T> add(BasicMatrix<T> a, const BasicMatrix<T>& b) {
  add_inplace(a, b);
  return a;
}

template <typename T>
void scale_inplace(BasicMatrix<T>& a, T s) {
  for (auto& v : a.values()) v *= s;
}

// Stack matrices vertically (all must share the column count).
template <typename T>
BasicMatrix<T> vstack(std::span<const BasicMatrix<T>> parts) {
  if (parts.empty()) return {};
  const std::size_t cols = parts.front().cols();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) throw ShapeError("vstack column mismatch");
    rows += p.rows();
  }
  std::vector<T> data;
  data.reserve(rows * cols);
  for (const auto& p : parts)
    data.insert(data.end(), p.values().begin(), p.values().end());
  return BasicMatrix<T>(rows, cols, std::move(data));
}

// Concatenate matrices side by side (all must share the row count).
template <typename T>
BasicMatrix<T> hstack(std::span<const BasicMatrix<T>> parts) {
  if (parts.empty()) return {};
  const std::size_t rows = parts.front().rows();
  std::size_t cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != rows) throw ShapeError("hstack row mismatch");
    cols += p.cols();
  }
  BasicMatrix<T> out(rows, cols);
  std::size_t off = 0;
  for (const auto& p : parts) {
    for (std::size_t i = 0; i < rows; ++i)
      std::copy(p.row(i).begin(), p.row(i).end(), out.row(i).begin() + off);
    off += p.cols();
  }
  return out;
}

// Reductions. Accumulation is in double, in ascending element order.
template <typename T>
double sum(std::span<const T> v) {
  double s = 0.0;
  for (T x : v) s += static_cast<double>(x);
  return s;
}

template <typename T>
double sum(const BasicMatrix<T>& m) {
  return sum(m.values());
}

template <typename T>
double mean(const BasicMatrix<T>& m) {
  if (m.empty()) throw ShapeError("mean of empty matrix");
  return sum(m) / static_cast<double>(m.size());
}

template <typename T>
T max_abs(std::span<const T> v) {
  T best{};
  for (T x : v) best = std::max(best, static_cast<T>(std::abs(x)));
  return best;
}

template <typename T>
T max_abs(const BasicMatrix<T>& m) {
  return max_abs(m.values());
}

template <typename T>
T min_value(std::span<const T> v) {
  if (v.empty()) throw ShapeError("min of empty range");
  T best = v.front();
  for (T x : v) best = std::min(best, x);
  return best;
}

template <typename T>
T min_value(const BasicMatrix<T>& m) {
  return min_value(m.values());
}

template <typename T>
bool all_finite(const BasicMatrix<T>& m) {
  if constexpr (std::is_floating_point_v<T>) {
    for (T x : m.values())
      if (!std::isfinite(x)) return false;
  }
  return true;
}

}  // namespace bitnet
