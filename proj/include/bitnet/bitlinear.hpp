#pragma once

// BitLinear: y = Sign(W - α) · Quant(LN(x)) · βγ/Q_b.
//
// Activations are token-major: x is batch × in_features and y is
// batch × out_features, so y = x̃ · W̃ᵀ row by row. The forward path runs on
// packed sign bits and int8 codes with an integer accumulator; the backward
// path uses the straight-through estimator, treating Sign, rounding and
// clipping as identity maps and β, γ, η as constants.

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <future>
#include <optional>
#include <utility>
#include <vector>

#include "bitnet/error.hpp"
#include "bitnet/quant.hpp"
#include "bitnet/rng.hpp"
#include "bitnet/tensor.hpp"

namespace bitnet {

// out[b][i] = Σ_t sign[i][t] · code[b][t], computed with adds only: the sum
// over +1 weights is gathered through a byte mask and the result is
// 2·positive − total.
template <typename T>
IntMatrix packed_matmul(const BinarizedWeight<T>& w,
                        const QuantizedActivation<T>& x) {
  if (w.cols != x.cols) {
    throw ShapeError("packed_matmul: weight " + shape_str(w.rows, w.cols) +
                     " vs activation " + shape_str(x.rows, x.cols));
  }
  const std::size_t n = w.cols;
  std::vector<std::int8_t> mask(w.rows * n);
  for (std::size_t i = 0; i < w.rows; ++i)
    for (std::size_t t = 0; t < n; ++t)
      mask[i * n + t] = w.bit(i, t) ? std::int8_t{-1} : std::int8_t{0};

  IntMatrix out(x.rows, w.rows);
  for (std::size_t b = 0; b < x.rows; ++b) {
    const std::int8_t* c = x.row_codes(b);
    std::int32_t total = 0;
    for (std::size_t t = 0; t < n; ++t) total += c[t];
    std::int32_t* orow = out.row(b).data();
    for (std::size_t i = 0; i < w.rows; ++i) {
      const std::int8_t* m = mask.data() + i * n;
      std::int32_t pos = 0;
      for (std::size_t t = 0; t < n; ++t)
        pos += static_cast<std::int8_t>(c[t] & m[t]);
      orow[i] = pos + pos - total;
    }
  }
  return out;
}

struct BitLinearConfig {
  std::size_t in_features = 0;
  std::size_t out_features = 0;
  std::size_t weight_groups = 1;  // along out_features
  std::size_t act_groups = 0;     // along batch rows; 0 = one group per row
  int bits = 8;
  ActMode mode = ActMode::Signed;
  double ln_eps = 1e-5;
  bool subln = true;     // normalize the input inside the layer
  bool quantize = true;  // false: y = LN(x)·Wᵀ with the latent weight

  std::size_t act_groups_for(std::size_t batch) const {
    return act_groups == 0 ? batch : act_groups;
  }

  void validate() const {
    if (in_features == 0 || out_features == 0)
      throw ConfigError("BitLinear dimensions must be >= 1");
    if (weight_groups == 0 || out_features % weight_groups != 0)
      throw PartitionError("weight_groups " + std::to_string(weight_groups) +
                           " does not divide out_features " +
                           std::to_string(out_features));
    quant_range(bits);
  }
};

// Everything backward needs from one forward call.
template <typename T>
struct ForwardTrace {
  std::uint64_t layer_uid = 0;
  std::uint64_t layer_version = 0;
  BasicMatrix<T> normalized;  // LN output (the raw input when subln is off)
  NormStats<T> ln;
  std::optional<QuantizedActivation<T>> act;
  std::optional<BinarizedWeight<T>> weight;
  BasicMatrix<T> xhat;   // activations the matmul consumed (dequantized)
  BasicMatrix<T> w_eff;  // weight the matmul applied (β·sign or latent)
};

template <typename T>
struct BitLinearGrads {
  BasicMatrix<T> dx;
  BasicMatrix<T> dw;  // empty for a frozen layer
};

template <typename T>
class BitLinear {
 public:
  BitLinear(BitLinearConfig cfg, BasicMatrix<T> latent)
      : cfg_(cfg), latent_(std::move(latent)), uid_(next_uid()) {
    cfg_.validate();
    if (latent_->rows() != cfg_.out_features ||
        latent_->cols() != cfg_.in_features)
      throw ShapeError("latent weight " +
                       shape_str(latent_->rows(), latent_->cols()) +
                       " does not match layer " +
                       shape_str(cfg_.out_features, cfg_.in_features));
  }

  // Inference layer backed only by packed weights.
  BitLinear(BitLinearConfig cfg, BinarizedWeight<T> frozen)
      : cfg_(cfg), frozen_(std::move(frozen)), uid_(next_uid()) {
    cfg_.validate();
    frozen_->validate();
    if (!cfg_.quantize)
      throw ContractError("an unquantized layer cannot hold packed weights");
    if (frozen_->rows != cfg_.out_features || frozen_->cols != cfg_.in_features ||
        frozen_->groups != cfg_.weight_groups)
      throw ShapeError("packed weight does not match layer config");
  }

  static BitLinear kaiming(BitLinearConfig cfg, Rng& rng) {
    return BitLinear(cfg, gaussian_init<T>(cfg.out_features, cfg.in_features,
                                           cfg.in_features, rng));
  }

  const BitLinearConfig& config() const { return cfg_; }
  bool has_latent() const { return latent_.has_value(); }
  std::uint64_t uid() const { return uid_; }
  std::uint64_t version() const { return version_; }

  const BasicMatrix<T>& latent() const {
    if (!latent_) throw ContractError("layer has no latent weight (exported)");
    return *latent_;
  }

  // Mutable access invalidates outstanding traces.
  BasicMatrix<T>& latent_mut() {
    if (!latent_) throw ContractError("layer has no latent weight (exported)");
    ++version_;
    return *latent_;
  }

  BinarizedWeight<T> binarized() const {
    if (frozen_) return *frozen_;
    return binarize_weight(*latent_, cfg_.weight_groups);
  }

  // Drop the latent weight, keeping only the packed form.
  BitLinear frozen() const {
    if (!cfg_.quantize)
      throw ContractError("cannot export an unquantized layer");
    return BitLinear(cfg_, binarized());
  }

  std::pair<BasicMatrix<T>, ForwardTrace<T>> forward(
      const BasicMatrix<T>& x) const {
    if (x.cols() != cfg_.in_features)
      throw ShapeError("BitLinear input has " + std::to_string(x.cols()) +
                       " columns, layer expects " +
                       std::to_string(cfg_.in_features));
    const std::size_t batch = x.rows();
    const std::size_t ag = cfg_.act_groups_for(batch);
    ForwardTrace<T> tr;
    tr.layer_uid = uid_;
    tr.layer_version = version_;
    if (cfg_.subln) {
      tr.normalized = group_layernorm(x, ag, cfg_.ln_eps, &tr.ln);
    } else {
      group_rows(batch, ag, "BitLinear activation groups");
      tr.normalized = x;
    }

    if (!cfg_.quantize) {
      BasicMatrix<T> y = matmul_nt(tr.normalized, *latent_);
      tr.xhat = tr.normalized;
      tr.w_eff = *latent_;
      return {std::move(y), std::move(tr)};
    }

    auto act = quantize(tr.normalized, cfg_.bits, ag, cfg_.mode);
    auto w = binarized();
    const IntMatrix acc = packed_matmul(w, act);
    const T qb = static_cast<T>(act.q());
    const bool shifted = cfg_.mode == ActMode::Nonnegative;
    std::vector<std::int32_t> sign_sums;
    if (shifted) {
      // Σ_t sign[i][t], needed to add back the η shift: W̃·(c·γ/Q + η).
      sign_sums.resize(w.rows);
      for (std::size_t i = 0; i < w.rows; ++i) {
        std::int32_t s = 0;
        for (std::size_t t = 0; t < w.cols; ++t) s += w.bit(i, t) ? 1 : -1;
        sign_sums[i] = s;
      }
    }
    BasicMatrix<T> y(batch, cfg_.out_features);
    for (std::size_t b = 0; b < batch; ++b) {
      const std::size_t ga = act.group_of_row(b);
      const T gamma = act.gamma[ga];
      const T eta = shifted ? act.eta[ga] : T{0};
      for (std::size_t i = 0; i < cfg_.out_features; ++i) {
        const T beta = w.beta[w.group_of_row(i)];
        T v = static_cast<T>(acc(b, i)) * (beta * gamma / qb);
        if (shifted) v += beta * eta * static_cast<T>(sign_sums[i]);
        y(b, i) = v;
      }
    }
    tr.xhat = dequantize(act);
    tr.w_eff = w.effective();
    tr.act = std::move(act);
    tr.weight = std::move(w);
    return {std::move(y), std::move(tr)};
  }

  BitLinearGrads<T> backward(const ForwardTrace<T>& tr,
                             const BasicMatrix<T>& dy) const {
    if (tr.layer_uid != uid_ || tr.layer_version != version_)
      throw ContractError("trace is stale or belongs to another layer");
    if (dy.rows() != tr.xhat.rows() || dy.cols() != cfg_.out_features)
      throw ShapeError("BitLinear backward: dy " +
                       shape_str(dy.rows(), dy.cols()) + " vs trace " +
                       shape_str(tr.xhat.rows(), cfg_.out_features));
    BitLinearGrads<T> g;
    BasicMatrix<T> dxhat = matmul(dy, tr.w_eff);
    if (latent_) {
      g.dw = matmul_tn(dy, tr.xhat);
      if (cfg_.quantize) {
        // d(β·sign)/dW taken as β (sign passes gradients straight through).
        const auto& w = *tr.weight;
        for (std::size_t i = 0; i < g.dw.rows(); ++i) {
          const T beta = w.beta[w.group_of_row(i)];
          for (T& v : g.dw.row(i)) v *= beta;
        }
      }
    }
    g.dx = cfg_.subln ? group_layernorm_backward(dxhat, tr.normalized, tr.ln)
                      : std::move(dxhat);
    return g;
  }

 private:
  static std::uint64_t next_uid() {
    static std::atomic<std::uint64_t> counter{1};
    return counter.fetch_add(1);
  }

  BitLinearConfig cfg_;
  std::optional<BasicMatrix<T>> latent_;
  std::optional<BinarizedWeight<T>> frozen_;
  std::uint64_t uid_;
  std::uint64_t version_ = 0;
};

// Rows [begin, begin + count) of a packed weight, keeping its group layout.
template <typename T>
BinarizedWeight<T> slice_rows(const BinarizedWeight<T>& w, std::size_t begin,
                              std::size_t count) {
  const std::size_t per = w.rows_per_group();
  if (begin % per != 0 || count % per != 0 || begin + count > w.rows)
    throw PartitionError("packed weight slice is not group aligned");
  BinarizedWeight<T> out;
  out.rows = count;
  out.cols = w.cols;
  out.groups = count / per;
  const std::size_t rb = w.row_bytes();
  out.packed.assign(w.packed.begin() + begin * rb,
                    w.packed.begin() + (begin + count) * rb);
  out.alpha.assign(w.alpha.begin() + begin / per,
                   w.alpha.begin() + (begin + count) / per);
  out.beta.assign(w.beta.begin() + begin / per,
                  w.beta.begin() + (begin + count) / per);
  return out;
}

// Tensor-parallel forward simulated in process: the weight is split row-wise
// into `devices` shards, each shard runs a complete BitLinear forward on the
// replicated input using only its own weight groups, and the outputs are
// concatenated. No statistic crosses a shard boundary.
template <typename T>
BasicMatrix<T> partitioned_forward(const BitLinear<T>& layer,
                                   const BasicMatrix<T>& x,
                                   std::size_t devices) {
  const auto& cfg = layer.config();
  if (devices == 0 || cfg.out_features % devices != 0)
    throw PartitionError(std::to_string(devices) +
                         " devices do not divide out_features " +
                         std::to_string(cfg.out_features));
  if (cfg.weight_groups % devices != 0)
    throw PartitionError("weight_groups " + std::to_string(cfg.weight_groups) +
                         " is not aligned with " + std::to_string(devices) +
                         " devices");
  const std::size_t rows = cfg.out_features / devices;
  BitLinearConfig shard_cfg = cfg;
  shard_cfg.out_features = rows;
  shard_cfg.weight_groups = cfg.weight_groups / devices;

  std::vector<BitLinear<T>> shards;
  shards.reserve(devices);
  for (std::size_t d = 0; d < devices; ++d) {
    if (layer.has_latent())
      shards.emplace_back(shard_cfg, layer.latent().slice_rows(d * rows, rows));
    else
      shards.emplace_back(shard_cfg,
                          slice_rows(layer.binarized(), d * rows, rows));
  }
  std::vector<std::future<BasicMatrix<T>>> jobs;
  jobs.reserve(devices);
  for (const auto& s : shards)
    jobs.push_back(std::async(std::launch::async,
                              [&s, &x] { return s.forward(x).first; }));
  std::vector<BasicMatrix<T>> outs;
  outs.reserve(devices);
  for (auto& j : jobs) outs.push_back(j.get());
  return hstack<T>(outs);
}

}  // namespace bitnet
