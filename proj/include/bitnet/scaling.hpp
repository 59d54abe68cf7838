#pragma once

// Power law with an irreducible term, L(N) = a·N^b + c, fitted by least
// squares on log L.
//
// c is seeded from a 64-point grid over [0, 0.999·min L]; for each seed,
// (log a, b) come from ordinary least squares of log(L − c) on log N. The
// seed with the smallest log-space residual is then refined jointly in
// (log a, b, c) by Levenberg-Marquardt.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "bitnet/energy.hpp"
#include "bitnet/error.hpp"

namespace bitnet {

struct ScalingPoint {
  double n = 0.0;     // parameter count
  double loss = 0.0;  // nats
};

struct ScalingFit {
  double a = 0.0;
  double b = 0.0;
  double c = 0.0;
  double residual = 0.0;  // Σ (log(a·N^b + c) − log L)²
  std::size_t n_points = 0;
};

inline double predict(const ScalingFit& fit, double n) {
  if (!(n > 0.0)) throw ContractError("predict: N must be > 0");
  return fit.a * std::pow(n, fit.b) + fit.c;
}

namespace detail {

// Parameterization used during fitting: L = exp(la + b·(x − x0)) + c with
// x = log N, so la is log a at the centered abscissa.
struct PowerLawParams {
  double la = 0.0, b = 0.0, c = 0.0;
};

inline double log_residual_sum(const PowerLawParams& p,
                               std::span<const double> x,
                               std::span<const double> logl, double x0) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double pred = std::exp(p.la + p.b * (x[i] - x0)) + p.c;
    if (!(pred > 0.0)) return std::numeric_limits<double>::infinity();
    const double r = std::log(pred) - logl[i];
    s += r * r;
  }
  return s;
}

// Solves the 3×3 system a·x = rhs by Gaussian elimination with partial
// pivoting. Returns false when singular.
inline bool solve3(std::array<std::array<double, 3>, 3> a,
                   std::array<double, 3> rhs, std::array<double, 3>& x) {
  for (int col = 0; col < 3; ++col) {
    int piv = col;
    for (int r = col + 1; r < 3; ++r)
      if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
    if (std::abs(a[piv][col]) < 1e-300) return false;
    std::swap(a[col], a[piv]);
    std::swap(rhs[col], rhs[piv]);
    for (int r = col + 1; r < 3; ++r) {
      const double f = a[r][col] / a[col][col];
      for (int k = col; k < 3; ++k) a[r][k] -= f * a[col][k];
      rhs[r] -= f * rhs[col];
    }
  }
  for (int r = 2; r >= 0; --r) {
    double s = rhs[r];
    for (int k = r + 1; k < 3; ++k) s -= a[r][k] * x[k];
    x[r] = s / a[r][r];
  }
  return true;
}

inline PowerLawParams levenberg_marquardt(PowerLawParams p,
                                          std::span<const double> x,
                                          std::span<const double> logl,
                                          double x0, double c_max) {
  double cost = log_residual_sum(p, x, logl, x0);
  double lambda = 1e-3;
  for (int iter = 0; iter < 500; ++iter) {
    std::array<std::array<double, 3>, 3> jtj{};
    std::array<double, 3> jtr{};
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double f = std::exp(p.la + p.b * (x[i] - x0));
      const double g = f + p.c;
      const double r = std::log(g) - logl[i];
      const std::array<double, 3> j = {f / g, f * (x[i] - x0) / g, 1.0 / g};
      for (int u = 0; u < 3; ++u) {
        jtr[u] += j[u] * r;
        for (int v = 0; v < 3; ++v) jtj[u][v] += j[u] * j[v];
      }
    }
    bool improved = false;
    while (lambda < 1e12) {
      auto damped = jtj;
      for (int u = 0; u < 3; ++u)
        damped[u][u] += lambda * std::max(jtj[u][u], 1e-30);
      std::array<double, 3> step{};
      if (!solve3(damped, {-jtr[0], -jtr[1], -jtr[2]}, step)) {
        lambda *= 10.0;
        continue;
      }
      PowerLawParams trial{p.la + step[0], p.b + step[1],
                           std::clamp(p.c + step[2], 0.0, c_max)};
      const double trial_cost = log_residual_sum(trial, x, logl, x0);
      if (trial_cost < cost) {
        const double gain = cost - trial_cost;
        p = trial;
        cost = trial_cost;
        lambda = std::max(lambda * 0.1, 1e-15);
        improved = true;
        if (gain <= 1e-15 * std::max(cost, 1e-300) && gain < 1e-32) return p;
        break;
      }
      lambda *= 10.0;
    }
    if (!improved) break;
  }
  return p;
}

}  // namespace detail

inline ScalingFit fit_power_law(std::span<const ScalingPoint> points) {
  if (points.size() < 4)
    throw FitError("need at least 4 points, got " +
                   std::to_string(points.size()));
  std::vector<double> x, logl;
  double min_loss = std::numeric_limits<double>::infinity();
  for (const auto& pt : points) {
    if (!(pt.n > 0.0) || !std::isfinite(pt.n))
      throw FitError("parameter counts must be positive and finite");
    if (!(pt.loss > 0.0) || !std::isfinite(pt.loss))
      throw FitError("losses must be positive and finite");
    x.push_back(std::log(pt.n));
    logl.push_back(std::log(pt.loss));
    min_loss = std::min(min_loss, pt.loss);
  }
  {
    std::vector<double> sorted = x;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
      throw FitError("parameter counts must be distinct");
  }
  double x0 = 0.0;
  for (double v : x) x0 += v;
  x0 /= static_cast<double>(x.size());

  constexpr int kGrid = 64;
  const double c_hi = 0.999 * min_loss;
  detail::PowerLawParams best;
  double best_cost = std::numeric_limits<double>::infinity();
  for (int k = 0; k < kGrid; ++k) {
    const double c = c_hi * static_cast<double>(k) / (kGrid - 1);
    double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double xi = x[i] - x0;
      const double yi = std::log(points[i].loss - c);
      sx += xi;
      sy += yi;
      sxx += xi * xi;
      sxy += xi * yi;
    }
    const double nn = static_cast<double>(x.size());
    const double b = (nn * sxy - sx * sy) / (nn * sxx - sx * sx);
    const double la = (sy - b * sx) / nn;
    const detail::PowerLawParams p{la, b, c};
    const double cost = detail::log_residual_sum(p, x, logl, x0);
    if (cost < best_cost) {
      best_cost = cost;
      best = p;
    }
  }
  // c may not reach min L: the power term must stay positive.
  const double c_max = min_loss * (1.0 - 1e-12);
  best = detail::levenberg_marquardt(best, x, logl, x0, c_max);

  ScalingFit fit;
  fit.b = best.b;
  fit.c = best.c;
  fit.a = std::exp(best.la - best.b * x0);
  fit.n_points = points.size();
  fit.residual = 0.0;
  for (const auto& pt : points) {
    const double r = std::log(predict(fit, pt.n)) - std::log(pt.loss);
    fit.residual += r * r;
  }
  if (!(fit.a > 0.0) || !std::isfinite(fit.a))
    throw FitError("fitted coefficient a is not positive");
  if (!(fit.b < -1e-9))
    throw FitError("fitted exponent b = " + std::to_string(fit.b) +
                   " is not negative; the losses do not follow a decaying "
                   "power law");
  if (!(fit.c >= 0.0)) throw FitError("fitted irreducible loss is negative");
  return fit;
}

// ---------------------------------------------------------------------------
// Loss against inference energy

struct CurvePoint {
  std::string mode;
  std::string label;
  double energy_j = 0.0;  // add + mul for one forward pass
  double loss = 0.0;
};

inline std::vector<CurvePoint> loss_vs_energy_curve(
    std::span<const ModelDims> configs, std::span<const double> losses,
    EnergyMode mode, ProcessNode node, std::size_t seq_len = 512,
    const EnergyProfile& profile = EnergyProfile::standard(),
    std::span<const std::string> labels = {}) {
  if (configs.size() != losses.size())
    throw ContractError("configs and losses differ in length");
  if (!labels.empty() && labels.size() != configs.size())
    throw ContractError("labels and configs differ in length");
  std::vector<CurvePoint> out;
  for (std::size_t i = 0; i < configs.size(); ++i) {
    const auto r = model_energy(configs[i], seq_len, mode, node, profile);
    out.push_back({to_string(mode),
                   labels.empty() ? std::to_string(i) : labels[i],
                   r.total_add_j + r.total_mul_j, losses[i]});
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const CurvePoint& a, const CurvePoint& b) {
                     return a.energy_j < b.energy_j;
                   });
  return out;
}

// mode,label,energy_j,loss with one row per point.
inline std::string curve_csv(std::span<const CurvePoint> points) {
  std::string out = "mode,label,energy_j,loss\n";
  char buf[64];
  for (const auto& p : points) {
    out += p.mode + "," + p.label + ",";
    std::snprintf(buf, sizeof buf, "%.9g,%.9g\n", p.energy_j, p.loss);
    out += buf;
  }
  return out;
}

}  // namespace bitnet
