#pragma once

// Weight binarization, absmax activation quantization and grouped layer
// normalization.
//
// Grouping is always along rows: with G groups over an n-row matrix, group g
// owns rows [g*n/G, (g+1)*n/G). Every per-group statistic is computed from
// that row block alone, so computing with G groups is exactly the same as
// running the G = 1 routine on each row block and stacking the results.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "bitnet/error.hpp"
#include "bitnet/tensor.hpp"

namespace bitnet {

inline std::size_t group_rows(std::size_t rows, std::size_t groups,
                              const char* what) {
  if (groups == 0 || rows % groups != 0) {
    throw PartitionError(std::string(what) + ": " + std::to_string(groups) +
                         " groups do not divide " + std::to_string(rows) +
                         " rows");
  }
  return rows / groups;
}

// ---------------------------------------------------------------------------
// Weights

// Sign bits packed row-major, LSB first within a byte; each row starts on a
// byte boundary. Bit 1 encodes +1, bit 0 encodes -1.
inline std::size_t packed_row_bytes(std::size_t cols) { return (cols + 7) / 8; }

template <typename T>
std::vector<std::uint8_t> pack_signs(const BasicMatrix<T>& signs) {
  const std::size_t rb = packed_row_bytes(signs.cols());
  std::vector<std::uint8_t> out(signs.rows() * rb, 0);
  for (std::size_t i = 0; i < signs.rows(); ++i)
    for (std::size_t j = 0; j < signs.cols(); ++j)
      if (signs(i, j) > T{0})
        out[i * rb + j / 8] |= static_cast<std::uint8_t>(1u << (j % 8));
  return out;
}

template <typename T>
struct BinarizedWeight {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t groups = 1;
  std::vector<std::uint8_t> packed;
  std::vector<T> alpha;  // per-group mean removed before taking signs
  std::vector<T> beta;   // per-group mean |W|

  std::size_t row_bytes() const { return packed_row_bytes(cols); }
  std::size_t rows_per_group() const { return rows / groups; }
  std::size_t group_of_row(std::size_t i) const { return i / rows_per_group(); }

  bool bit(std::size_t i, std::size_t j) const {
    return (packed[i * row_bytes() + j / 8] >> (j % 8)) & 1u;
  }
  int sign(std::size_t i, std::size_t j) const { return bit(i, j) ? 1 : -1; }

  // ±1 matrix.
  BasicMatrix<T> unpack() const {
    BasicMatrix<T> s(rows, cols);
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j)
        s(i, j) = static_cast<T>(sign(i, j));
    return s;
  }

  // β_g · sign, the weight the packed kernel effectively applies.
  BasicMatrix<T> effective() const {
    BasicMatrix<T> s(rows, cols);
    for (std::size_t i = 0; i < rows; ++i) {
      const T b = beta[group_of_row(i)];
      for (std::size_t j = 0; j < cols; ++j) s(i, j) = bit(i, j) ? b : -b;
    }
    return s;
  }

  void validate() const {
    group_rows(rows, groups, "BinarizedWeight");
    if (packed.size() != rows * row_bytes())
      throw FormatError("packed sign buffer has wrong length");
    if (alpha.size() != groups || beta.size() != groups)
      throw FormatError("alpha/beta length != groups");
    for (T b : beta)
      if (!(b >= T{0})) throw FormatError("negative beta");
  }

  bool operator==(const BinarizedWeight&) const = default;
};

template <typename T>
BinarizedWeight<T> binarize_weight(const BasicMatrix<T>& w,
                                   std::size_t groups) {
  const std::size_t per = group_rows(w.rows(), groups, "binarize_weight");
  BinarizedWeight<T> out;
  out.rows = w.rows();
  out.cols = w.cols();
  out.groups = groups;
  out.packed.assign(w.rows() * out.row_bytes(), 0);
  out.alpha.resize(groups);
  out.beta.resize(groups);
  const double count = static_cast<double>(per * w.cols());
  const std::size_t rb = out.row_bytes();
  for (std::size_t g = 0; g < groups; ++g) {
    double s = 0.0, l1 = 0.0;
    for (std::size_t i = g * per; i < (g + 1) * per; ++i)
      for (T v : w.row(i)) {
        s += static_cast<double>(v);
        l1 += std::abs(static_cast<double>(v));
      }
    const T alpha = static_cast<T>(s / count);
    out.alpha[g] = alpha;
    out.beta[g] = static_cast<T>(l1 / count);
    // Sign(0) = -1: only strictly positive centered values get a set bit.
    for (std::size_t i = g * per; i < (g + 1) * per; ++i)
      for (std::size_t j = 0; j < w.cols(); ++j)
        if (w(i, j) - alpha > T{0})
          out.packed[i * rb + j / 8] |= static_cast<std::uint8_t>(1u << (j % 8));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Activations

enum class ActMode { Signed, Nonnegative };

inline const char* to_string(ActMode m) {
  return m == ActMode::Signed ? "signed" : "nonnegative";
}

inline int quant_range(int bits) {
  if (bits < 2 || bits > 8)
    throw ContractError("activation bits must be in [2, 8], got " +
                        std::to_string(bits));
  return 1 << (bits - 1);
}

template <typename T>
struct QuantizedActivation {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t groups = 1;
  int bits = 8;
  ActMode mode = ActMode::Signed;
  std::vector<std::int8_t> codes;  // row-major
  std::vector<T> gamma;            // per-group absmax (1 for an all-zero group)
  std::vector<T> eta;              // per-group minimum, nonnegative mode only

  int q() const { return 1 << (bits - 1); }
  std::size_t rows_per_group() const { return rows / groups; }
  std::size_t group_of_row(std::size_t i) const { return i / rows_per_group(); }
  std::int8_t code(std::size_t i, std::size_t j) const {
    return codes[i * cols + j];
  }
  const std::int8_t* row_codes(std::size_t i) const {
    return codes.data() + i * cols;
  }

  bool operator==(const QuantizedActivation&) const = default;
};

namespace detail {

template <typename T>
QuantizedActivation<T> quantize_impl(const BasicMatrix<T>& x, int bits,
                                     std::size_t groups, ActMode mode) {
  const int qb = quant_range(bits);
  const std::size_t per = group_rows(x.rows(), groups, "quantize");
  QuantizedActivation<T> out;
  out.rows = x.rows();
  out.cols = x.cols();
  out.groups = groups;
  out.bits = bits;
  out.mode = mode;
  out.codes.assign(x.size(), 0);
  out.gamma.resize(groups);
  if (mode == ActMode::Nonnegative) out.eta.resize(groups);

  const double hi = qb - 1;
  const double lo = mode == ActMode::Signed ? -(qb - 1) : 0;
  const auto all = x.values();
  for (std::size_t g = 0; g < groups; ++g) {
    const auto block = all.subspan(g * per * x.cols(), per * x.cols());
    const T gamma = max_abs(block);
    const T eta = mode == ActMode::Nonnegative ? min_value(block) : T{0};
    if (mode == ActMode::Nonnegative) out.eta[g] = eta;
    if (gamma == T{0}) {
      out.gamma[g] = T{1};
      continue;  // all-zero group: codes stay 0
    }
    out.gamma[g] = gamma;
    const double scale = static_cast<double>(qb);
    const double denom = static_cast<double>(gamma);
    const double shift = static_cast<double>(eta);
    std::int8_t* codes = out.codes.data() + g * per * x.cols();
    for (std::size_t k = 0; k < block.size(); ++k) {
      // nearbyint under the default rounding mode rounds half to even.
      double c = std::nearbyint((static_cast<double>(block[k]) - shift) *
                                scale / denom);
      c = std::min(hi, std::max(lo, c));
      codes[k] = static_cast<std::int8_t>(c);
    }
  }
  return out;
}

}  // namespace detail

// Symmetric absmax quantization into [-(Q_b-1), Q_b-1], Q_b = 2^(bits-1).
template <typename T>
QuantizedActivation<T> quantize_signed(const BasicMatrix<T>& x, int bits,
                                       std::size_t groups) {
  return detail::quantize_impl(x, bits, groups, ActMode::Signed);
}

// Min-shifted absmax quantization into [0, Q_b-1]. The scale is still the
// absmax of x itself, not of x - η.
template <typename T>
QuantizedActivation<T> quantize_nonneg(const BasicMatrix<T>& x, int bits,
                                       std::size_t groups) {
  return detail::quantize_impl(x, bits, groups, ActMode::Nonnegative);
}

template <typename T>
QuantizedActivation<T> quantize(const BasicMatrix<T>& x, int bits,
                                std::size_t groups, ActMode mode) {
  return detail::quantize_impl(x, bits, groups, mode);
}

template <typename T>
BasicMatrix<T> dequantize(const QuantizedActivation<T>& q) {
  BasicMatrix<T> x(q.rows, q.cols);
  const T qb = static_cast<T>(q.q());
  for (std::size_t i = 0; i < q.rows; ++i) {
    const std::size_t g = q.group_of_row(i);
    const T gamma = q.gamma[g];
    const T eta = q.mode == ActMode::Nonnegative ? q.eta[g] : T{0};
    for (std::size_t j = 0; j < q.cols; ++j)
      x(i, j) = static_cast<T>(q.code(i, j)) * gamma / qb + eta;
  }
  return x;
}

// ---------------------------------------------------------------------------
// Grouped layer normalization (no affine parameters).

template <typename T>
struct NormStats {
  std::size_t groups = 0;
  std::vector<T> mean;
  std::vector<T> rstd;  // 1 / sqrt(var + eps)
};

template <typename T>
BasicMatrix<T> group_layernorm(const BasicMatrix<T>& x, std::size_t groups,
                               double eps, NormStats<T>* stats = nullptr) {
  const std::size_t per = group_rows(x.rows(), groups, "group_layernorm");
  const std::size_t n = per * x.cols();
  if (n < 2)
    throw ContractError("group_layernorm: a group needs at least 2 elements");
  BasicMatrix<T> y(x.rows(), x.cols());
  if (stats) {
    stats->groups = groups;
    stats->mean.resize(groups);
    stats->rstd.resize(groups);
  }
  const auto in = x.values();
  auto out = y.values();
  for (std::size_t g = 0; g < groups; ++g) {
    const std::size_t off = g * n;
    double s = 0.0;
    for (std::size_t k = 0; k < n; ++k) s += static_cast<double>(in[off + k]);
    const double mu = s / static_cast<double>(n);
    double ss = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      const double d = static_cast<double>(in[off + k]) - mu;
      ss += d * d;
    }
    const double var = ss / static_cast<double>(n);
    const T mean_t = static_cast<T>(mu);
    const T rstd_t = static_cast<T>(1.0 / std::sqrt(var + eps));
    for (std::size_t k = 0; k < n; ++k)
      out[off + k] = (in[off + k] - mean_t) * rstd_t;
    if (stats) {
      stats->mean[g] = mean_t;
      stats->rstd[g] = rstd_t;
    }
  }
  return y;
}

// Gradient of group_layernorm given its output `normalized` and the stats
// recorded by the forward call.
template <typename T>
BasicMatrix<T> group_layernorm_backward(const BasicMatrix<T>& dy,
                                        const BasicMatrix<T>& normalized,
                                        const NormStats<T>& stats) {
  require_same_shape(dy, normalized, "group_layernorm_backward");
  const std::size_t per =
      group_rows(dy.rows(), stats.groups, "group_layernorm_backward");
  const std::size_t n = per * dy.cols();
  BasicMatrix<T> dx(dy.rows(), dy.cols());
  const auto g_in = dy.values();
  const auto xh = normalized.values();
  auto out = dx.values();
  for (std::size_t g = 0; g < stats.groups; ++g) {
    const std::size_t off = g * n;
    double sdy = 0.0, sdyx = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      sdy += static_cast<double>(g_in[off + k]);
      sdyx += static_cast<double>(g_in[off + k]) *
              static_cast<double>(xh[off + k]);
    }
    const T mdy = static_cast<T>(sdy / static_cast<double>(n));
    const T mdyx = static_cast<T>(sdyx / static_cast<double>(n));
    const T r = stats.rstd[g];
    for (std::size_t k = 0; k < n; ++k)
      out[off + k] = r * (g_in[off + k] - mdy - xh[off + k] * mdyx);
  }
  return dx;
}

}  // namespace bitnet
