#pragma once

// Independent reference implementations used by the tests. Each is written
// directly from the defining formula with plain loops and shares no code with
// the library beyond the matrix container.

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "bitnet/rng.hpp"
#include "bitnet/tensor.hpp"

namespace oracle {

using bitnet::BasicMatrix;
using bitnet::Matrix;

template <typename T>
BasicMatrix<T> naive_matmul(const BasicMatrix<T>& a, const BasicMatrix<T>& b) {
  BasicMatrix<T> c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      T s = 0;
      for (std::size_t t = 0; t < a.cols(); ++t) s += a(i, t) * b(t, j);
      c(i, j) = s;
    }
  return c;
}

template <typename T = float>
BasicMatrix<T> uniform(std::size_t rows, std::size_t cols, double lo, double hi,
                       bitnet::Rng& rng) {
  BasicMatrix<T> m(rows, cols);
  for (auto& v : m.values()) v = static_cast<T>(lo + (hi - lo) * rng.uniform());
  return m;
}

struct Binarized {
  std::vector<double> alpha, beta;
  std::vector<std::vector<int>> signs;
};

inline Binarized binarize(const Matrix& w, std::size_t groups) {
  Binarized out;
  const std::size_t per = w.rows() / groups;
  out.signs.assign(w.rows(), std::vector<int>(w.cols()));
  for (std::size_t g = 0; g < groups; ++g) {
    double s = 0, l1 = 0;
    for (std::size_t i = g * per; i < (g + 1) * per; ++i)
      for (std::size_t j = 0; j < w.cols(); ++j) {
        s += w(i, j);
        l1 += std::fabs(static_cast<double>(w(i, j)));
      }
    const double n = static_cast<double>(per * w.cols());
    const float alpha = static_cast<float>(s / n);
    out.alpha.push_back(alpha);
    out.beta.push_back(static_cast<float>(l1 / n));
    for (std::size_t i = g * per; i < (g + 1) * per; ++i)
      for (std::size_t j = 0; j < w.cols(); ++j)
        out.signs[i][j] = (w(i, j) - alpha > 0.0f) ? 1 : -1;
  }
  return out;
}

// Round half to even, written out rather than delegated to nearbyint.
inline double round_half_even(double v) {
  const double f = std::floor(v);
  const double frac = v - f;
  if (frac > 0.5) return f + 1;
  if (frac < 0.5) return f;
  return std::fmod(f, 2.0) == 0.0 ? f : f + 1;
}

struct Quantized {
  std::vector<std::vector<int>> codes;
  std::vector<double> gamma, eta;
};

inline Quantized quantize(const Matrix& x, int bits, std::size_t groups,
                          bool nonneg) {
  const int q = 1 << (bits - 1);
  const std::size_t per = x.rows() / groups;
  Quantized out;
  out.codes.assign(x.rows(), std::vector<int>(x.cols(), 0));
  for (std::size_t g = 0; g < groups; ++g) {
    float gamma = 0, eta = 0;
    bool first = true;
    for (std::size_t i = g * per; i < (g + 1) * per; ++i)
      for (std::size_t j = 0; j < x.cols(); ++j) {
        gamma = std::max(gamma, std::fabs(x(i, j)));
        eta = first ? x(i, j) : std::min(eta, x(i, j));
        first = false;
      }
    if (!nonneg) eta = 0;
    out.eta.push_back(eta);
    if (gamma == 0) {
      out.gamma.push_back(1.0);
      continue;
    }
    out.gamma.push_back(gamma);
    for (std::size_t i = g * per; i < (g + 1) * per; ++i)
      for (std::size_t j = 0; j < x.cols(); ++j) {
        double c = round_half_even((static_cast<double>(x(i, j)) - eta) * q /
                                   static_cast<double>(gamma));
        const double lo = nonneg ? 0 : -(q - 1);
        c = std::min<double>(q - 1, std::max(lo, c));
        out.codes[i][j] = static_cast<int>(c);
      }
  }
  return out;
}

// Layer norm over each group of rows, in double.
inline BasicMatrix<double> layernorm(const BasicMatrix<double>& x,
                                     std::size_t groups, double eps) {
  const std::size_t per = x.rows() / groups;
  BasicMatrix<double> y(x.rows(), x.cols());
  for (std::size_t g = 0; g < groups; ++g) {
    double s = 0, n = 0;
    for (std::size_t i = g * per; i < (g + 1) * per; ++i)
      for (std::size_t j = 0; j < x.cols(); ++j) {
        s += x(i, j);
        n += 1;
      }
    const double mu = s / n;
    double v = 0;
    for (std::size_t i = g * per; i < (g + 1) * per; ++i)
      for (std::size_t j = 0; j < x.cols(); ++j)
        v += (x(i, j) - mu) * (x(i, j) - mu);
    v /= n;
    for (std::size_t i = g * per; i < (g + 1) * per; ++i)
      for (std::size_t j = 0; j < x.cols(); ++j)
        y(i, j) = (x(i, j) - mu) / std::sqrt(v + eps);
  }
  return y;
}

// Central finite difference of f with respect to *p.
inline double central_difference(const std::function<double()>& f, double* p,
                                 double h) {
  const double orig = *p;
  *p = orig + h;
  const double up = f();
  *p = orig - h;
  const double down = f();
  *p = orig;
  return (up - down) / (2 * h);
}

inline double rel_error(double a, double b, double floor = 1e-8) {
  return std::fabs(a - b) / std::max({std::fabs(a), std::fabs(b), floor});
}

}  // namespace oracle
