#pragma once

// Decoder-only byte-level language model whose Q/K/V/O and FFN projections
// are BitLinear layers. Embeddings, attention score/value products and the
// output head stay in full precision. Backpropagation is written by hand.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>
#include <string_view>
#include <tuple>
#include <array>
#include <span>
#include <type_traits>
#include <vector>

#include "bitnet/bitlinear.hpp"
#include "bitnet/error.hpp"
#include "bitnet/quant.hpp"
#include "bitnet/rng.hpp"
#include "bitnet/tensor.hpp"

namespace bitnet {

inline constexpr int kBosToken = 256;
inline constexpr int kEosToken = 257;
inline constexpr int kPadToken = 258;
inline constexpr std::size_t kByteVocab = 259;

inline std::vector<int> bytes_to_tokens(std::string_view text) {
  std::vector<int> out(text.size());
  for (std::size_t i = 0; i < text.size(); ++i)
    out[i] = static_cast<unsigned char>(text[i]);
  return out;
}

enum class Arch { SubLN, PreLN };

inline const char* to_string(Arch a) {
  return a == Arch::SubLN ? "subln" : "preln";
}

struct ModelConfig {
  std::size_t vocab = kByteVocab;
  std::size_t d_model = 128;
  std::size_t n_layers = 4;
  std::size_t n_heads = 4;
  std::size_t d_ff = 512;
  std::size_t seq_len = 128;
  Arch arch = Arch::SubLN;
  std::size_t weight_groups = 1;
  std::size_t act_groups = 0;  // 0: per-token statistics
  int activation_bits = 8;
  bool quantized = true;  // false: the full-precision baseline
  bool tie_embeddings = false;
  double ln_eps = 1e-5;

  void validate() const {
    if (vocab == 0 || d_model == 0 || n_layers == 0 || n_heads == 0 ||
        d_ff == 0 || seq_len == 0)
      throw ConfigError("model dimensions must all be >= 1");
    if (d_model < 2) throw ConfigError("d_model must be >= 2");
    if (d_model % n_heads != 0)
      throw ConfigError("n_heads " + std::to_string(n_heads) +
                        " does not divide d_model " + std::to_string(d_model));
    if (weight_groups == 0 || d_model % weight_groups != 0 ||
        d_ff % weight_groups != 0)
      throw ConfigError("weight_groups must divide d_model and d_ff");
    if (activation_bits < 2 || activation_bits > 8)
      throw ConfigError("activation_bits must be in [2, 8]");
    if (!(ln_eps >= 0.0)) throw ConfigError("ln_eps must be >= 0");
  }

  BitLinearConfig linear(std::size_t in, std::size_t out,
                         ActMode mode = ActMode::Signed) const {
    BitLinearConfig c;
    c.in_features = in;
    c.out_features = out;
    c.weight_groups = weight_groups;
    c.act_groups = act_groups;
    c.bits = activation_bits;
    c.mode = mode;
    c.ln_eps = ln_eps;
    c.subln = arch == Arch::SubLN;
    c.quantize = quantized;
    return c;
  }

  bool operator==(const ModelConfig&) const = default;
};

template <typename T>
struct Block {
  BitLinear<T> q, k, v, o, up, down;
};

inline constexpr const char* kBlockLayerNames[6] = {"q",  "k",  "v",
                                                    "o",  "up", "down"};

template <typename L, typename F>
void for_each_layer(L& block, F&& fn) {
  fn(kBlockLayerNames[0], block.q);
  fn(kBlockLayerNames[1], block.k);
  fn(kBlockLayerNames[2], block.v);
  fn(kBlockLayerNames[3], block.o);
  fn(kBlockLayerNames[4], block.up);
  fn(kBlockLayerNames[5], block.down);
}

template <typename T>
struct Model {
  ModelConfig cfg;
  BasicMatrix<T> tok_emb;    // vocab × d_model
  BasicMatrix<T> pos_emb;    // seq_len × d_model
  BasicMatrix<T> head;       // vocab × d_model, empty when tied
  BasicMatrix<T> head_bias;  // 1 × vocab
  std::vector<Block<T>> blocks;

  const BasicMatrix<T>& head_weight() const {
    return cfg.tie_embeddings ? tok_emb : head;
  }
};

template <typename T = float>
Model<T> build_model(const ModelConfig& cfg, const Rng& rng) {
  cfg.validate();
  const std::size_t d = cfg.d_model;
  Model<T> m{cfg, {}, {}, {}, {}, {}};
  Rng r_tok = rng.split(0), r_pos = rng.split(1), r_head = rng.split(2);
  m.tok_emb = gaussian<T>(cfg.vocab, d, 0.02, r_tok);
  m.pos_emb = gaussian<T>(cfg.seq_len, d, 0.02, r_pos);
  if (!cfg.tie_embeddings) m.head = gaussian<T>(cfg.vocab, d, 0.02, r_head);
  m.head_bias = BasicMatrix<T>(1, cfg.vocab);
  m.blocks.reserve(cfg.n_layers);
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    auto lin = [&](std::size_t idx, std::size_t in, std::size_t out,
                   ActMode mode) {
      Rng r = rng.split(100 + 6 * l + idx);
      return BitLinear<T>::kaiming(cfg.linear(in, out, mode), r);
    };
    m.blocks.push_back(Block<T>{
        lin(0, d, d, ActMode::Signed), lin(1, d, d, ActMode::Signed),
        lin(2, d, d, ActMode::Signed), lin(3, d, d, ActMode::Signed),
        // The up-projection's output feeds the ReLU.
        lin(4, d, cfg.d_ff, ActMode::Nonnegative),
        lin(5, cfg.d_ff, d, ActMode::Signed)});
  }
  return m;
}

template <typename T>
bool is_frozen(const Model<T>& m) {
  for (const auto& b : m.blocks)
    if (!b.q.has_latent()) return true;
  return false;
}

// Inference copy: every BitLinear keeps only packed signs and α/β.
template <typename T>
Model<T> freeze(const Model<T>& m) {
  if (is_frozen(m)) throw ContractError("model is already exported");
  if (!m.cfg.quantized)
    throw ContractError("cannot export a full-precision (fp mode) model");
  Model<T> out{m.cfg, m.tok_emb, m.pos_emb, m.head, m.head_bias, {}};
  for (const auto& b : m.blocks)
    out.blocks.push_back(Block<T>{b.q.frozen(), b.k.frozen(), b.v.frozen(),
                                  b.o.frozen(), b.up.frozen(),
                                  b.down.frozen()});
  return out;
}

// Visits trainable matrices in a fixed order:
//   tok_emb, pos_emb, blocks.{l}.{q,k,v,o,up,down}, head (untied), head_bias.
// fn(name, matrix, decay). On a non-const model latent weights are reached
// through latent_mut(), which invalidates outstanding traces.
template <typename M, typename F>
void visit_parameters(M& model, F&& fn) {
  fn(std::string("tok_emb"), model.tok_emb, true);
  fn(std::string("pos_emb"), model.pos_emb, true);
  for (std::size_t l = 0; l < model.blocks.size(); ++l) {
    for_each_layer(model.blocks[l], [&](const char* name, auto& layer) {
      if (!layer.has_latent()) return;
      const std::string full = "blocks." + std::to_string(l) + "." + name;
      if constexpr (std::is_const_v<M>)
        fn(full, layer.latent(), true);
      else
        fn(full, layer.latent_mut(), true);
    });
  }
  if (!model.cfg.tie_embeddings) fn(std::string("head"), model.head, true);
  fn(std::string("head_bias"), model.head_bias, false);
}

template <typename T>
std::size_t parameter_count(const Model<T>& m) {
  std::size_t n = 0;
  visit_parameters(m, [&](const std::string&, const BasicMatrix<T>& p, bool) {
    n += p.size();
  });
  return n;
}

// ---------------------------------------------------------------------------
// Forward / backward

// batch sequences of equal length, row-major.
struct LmBatch {
  std::size_t batch = 0;
  std::size_t seq = 0;
  std::vector<int> inputs;
  std::vector<int> targets;  // empty: logits only
};

template <typename T>
struct LmOutput {
  BasicMatrix<T> logits;  // (batch·seq) × vocab
  T loss = std::numeric_limits<T>::quiet_NaN();
};

template <typename T>
struct BlockTape {
  BasicMatrix<T> ln1_out, ln2_out;  // pre-LN arch only
  NormStats<T> ln1, ln2;
  ForwardTrace<T> q, k, v, o, up, down;
  BasicMatrix<T> qm, km, vm;
  std::vector<BasicMatrix<T>> probs;  // per (sequence, head), seq × seq
  BasicMatrix<T> up_out;              // pre-ReLU
};

template <typename T>
struct LmTape {
  std::size_t batch = 0, seq = 0;
  std::vector<int> inputs, targets;
  std::vector<BlockTape<T>> blocks;
  BasicMatrix<T> final_out;
  NormStats<T> final_ln;
  BasicMatrix<T> probs;  // softmax(logits)
};

namespace detail {

template <typename T>
BasicMatrix<T> causal_attention(const BasicMatrix<T>& q,
                                const BasicMatrix<T>& k,
                                const BasicMatrix<T>& v, std::size_t batch,
                                std::size_t seq, std::size_t heads,
                                std::vector<BasicMatrix<T>>* probs) {
  const std::size_t d = q.cols(), hd = d / heads;
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(hd)));
  BasicMatrix<T> out(q.rows(), d);
  if (probs) probs->assign(batch * heads, BasicMatrix<T>(seq, seq));
  std::vector<T> p(seq);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t c0 = h * hd;
      for (std::size_t i = 0; i < seq; ++i) {
        const T* qi = q.row(b * seq + i).data() + c0;
        T mx = -std::numeric_limits<T>::infinity();
        for (std::size_t j = 0; j <= i; ++j) {
          const T* kj = k.row(b * seq + j).data() + c0;
          T s{};
          for (std::size_t e = 0; e < hd; ++e) s += qi[e] * kj[e];
          p[j] = s * scale;
          mx = std::max(mx, p[j]);
        }
        T z{};
        for (std::size_t j = 0; j <= i; ++j) {
          p[j] = std::exp(p[j] - mx);
          z += p[j];
        }
        T* oi = out.row(b * seq + i).data() + c0;
        for (std::size_t j = 0; j <= i; ++j) {
          p[j] /= z;
          const T* vj = v.row(b * seq + j).data() + c0;
          for (std::size_t e = 0; e < hd; ++e) oi[e] += p[j] * vj[e];
        }
        if (probs) {
          auto prow = (*probs)[b * heads + h].row(i);
          std::copy(p.begin(), p.begin() + static_cast<std::ptrdiff_t>(i + 1),
                    prow.begin());
        }
      }
    }
  }
  return out;
}

template <typename T>
void causal_attention_backward(const BasicMatrix<T>& dout,
                               const BasicMatrix<T>& q,
                               const BasicMatrix<T>& k,
                               const BasicMatrix<T>& v,
                               const std::vector<BasicMatrix<T>>& probs,
                               std::size_t batch, std::size_t seq,
                               std::size_t heads, BasicMatrix<T>& dq,
                               BasicMatrix<T>& dk, BasicMatrix<T>& dv) {
  const std::size_t d = q.cols(), hd = d / heads;
  const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(hd)));
  dq = BasicMatrix<T>(q.rows(), d);
  dk = BasicMatrix<T>(q.rows(), d);
  dv = BasicMatrix<T>(q.rows(), d);
  std::vector<T> dp(seq);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t c0 = h * hd;
      const auto& P = probs[b * heads + h];
      for (std::size_t i = 0; i < seq; ++i) {
        const std::size_t ri = b * seq + i;
        const T* doi = dout.row(ri).data() + c0;
        T rowdot{};
        for (std::size_t j = 0; j <= i; ++j) {
          const std::size_t rj = b * seq + j;
          const T* vj = v.row(rj).data() + c0;
          T* dvj = dv.row(rj).data() + c0;
          const T pij = P(i, j);
          T s{};
          for (std::size_t e = 0; e < hd; ++e) {
            s += doi[e] * vj[e];
            dvj[e] += pij * doi[e];
          }
          dp[j] = s;
          rowdot += pij * s;
        }
        const T* qi = q.row(ri).data() + c0;
        T* dqi = dq.row(ri).data() + c0;
        for (std::size_t j = 0; j <= i; ++j) {
          const std::size_t rj = b * seq + j;
          const T ds = P(i, j) * (dp[j] - rowdot) * scale;
          const T* kj = k.row(rj).data() + c0;
          T* dkj = dk.row(rj).data() + c0;
          for (std::size_t e = 0; e < hd; ++e) {
            dqi[e] += ds * kj[e];
            dkj[e] += ds * qi[e];
          }
        }
      }
    }
  }
}

inline void check_batch(const ModelConfig& cfg, const LmBatch& batch) {
  if (batch.batch == 0 || batch.seq == 0)
    throw ContractError("empty token batch");
  if (batch.seq > cfg.seq_len)
    throw ContractError("sequence length " + std::to_string(batch.seq) +
                        " exceeds model context " +
                        std::to_string(cfg.seq_len));
  if (batch.inputs.size() != batch.batch * batch.seq)
    throw ShapeError("token batch has wrong length");
  if (!batch.targets.empty() && batch.targets.size() != batch.inputs.size())
    throw ShapeError("targets length differs from inputs");
  auto check = [&](const std::vector<int>& v) {
    for (int t : v)
      if (t < 0 || static_cast<std::size_t>(t) >= cfg.vocab)
        throw ContractError("token " + std::to_string(t) +
                            " outside vocabulary");
  };
  check(batch.inputs);
  check(batch.targets);
}

template <typename T>
BasicMatrix<T> relu(const BasicMatrix<T>& x) {
  BasicMatrix<T> y = x;
  for (T& v : y.values()) v = v > T{0} ? v : T{0};
  return y;
}

}  // namespace detail

template <typename T>
LmOutput<T> forward_lm(const Model<T>& model, const LmBatch& batch,
                       LmTape<T>* tape = nullptr) {
  const ModelConfig& cfg = model.cfg;
  detail::check_batch(cfg, batch);
  const std::size_t rows = batch.batch * batch.seq, d = cfg.d_model;
  BasicMatrix<T> x(rows, d);
  for (std::size_t r = 0; r < rows; ++r) {
    const auto te = model.tok_emb.row(static_cast<std::size_t>(batch.inputs[r]));
    const auto pe = model.pos_emb.row(r % batch.seq);
    auto xr = x.row(r);
    for (std::size_t e = 0; e < d; ++e) xr[e] = te[e] + pe[e];
  }
  if (tape) {
    tape->batch = batch.batch;
    tape->seq = batch.seq;
    tape->inputs = batch.inputs;
    tape->targets = batch.targets;
    tape->blocks.assign(model.blocks.size(), BlockTape<T>{});
  }

  const bool preln = cfg.arch == Arch::PreLN;
  for (std::size_t l = 0; l < model.blocks.size(); ++l) {
    const Block<T>& blk = model.blocks[l];
    BlockTape<T> local;
    BlockTape<T>& bt = tape ? tape->blocks[l] : local;

    const BasicMatrix<T>* attn_in = &x;
    if (preln) {
      bt.ln1_out = group_layernorm(x, rows, cfg.ln_eps, &bt.ln1);
      attn_in = &bt.ln1_out;
    }
    std::tie(bt.qm, bt.q) = blk.q.forward(*attn_in);
    std::tie(bt.km, bt.k) = blk.k.forward(*attn_in);
    std::tie(bt.vm, bt.v) = blk.v.forward(*attn_in);
    BasicMatrix<T> att = detail::causal_attention(
        bt.qm, bt.km, bt.vm, batch.batch, batch.seq, cfg.n_heads,
        tape ? &bt.probs : nullptr);
    auto [o, o_tr] = blk.o.forward(att);
    bt.o = std::move(o_tr);
    add_inplace(x, o);  // x is now h = x + attn

    const BasicMatrix<T>* ffn_in = &x;
    if (preln) {
      bt.ln2_out = group_layernorm(x, rows, cfg.ln_eps, &bt.ln2);
      ffn_in = &bt.ln2_out;
    }
    std::tie(bt.up_out, bt.up) = blk.up.forward(*ffn_in);
    auto [dn, dn_tr] = blk.down.forward(detail::relu(bt.up_out));
    bt.down = std::move(dn_tr);
    add_inplace(x, dn);
    if (!tape) {
      // Keep memory flat when no backward pass is coming.
      local = BlockTape<T>{};
    }
  }

  LmOutput<T> out;
  NormStats<T> fstats;
  BasicMatrix<T> fin = group_layernorm(x, rows, cfg.ln_eps, &fstats);
  out.logits = matmul_nt(fin, model.head_weight());
  for (std::size_t r = 0; r < rows; ++r) {
    auto lr = out.logits.row(r);
    for (std::size_t c = 0; c < cfg.vocab; ++c) lr[c] += model.head_bias(0, c);
  }
  if (!batch.targets.empty()) {
    BasicMatrix<T> probs(rows, cfg.vocab);
    double total = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
      const auto lr = out.logits.row(r);
      const T mx = *std::max_element(lr.begin(), lr.end());
      double z = 0.0;
      for (T v : lr) z += std::exp(static_cast<double>(v - mx));
      const double lse = static_cast<double>(mx) + std::log(z);
      total += lse - static_cast<double>(
                         lr[static_cast<std::size_t>(batch.targets[r])]);
      auto pr = probs.row(r);
      for (std::size_t c = 0; c < cfg.vocab; ++c)
        pr[c] = static_cast<T>(std::exp(static_cast<double>(lr[c]) - lse));
    }
    out.loss = static_cast<T>(total / static_cast<double>(rows));
    if (tape) tape->probs = std::move(probs);
  }
  if (tape) {
    tape->final_out = std::move(fin);
    tape->final_ln = std::move(fstats);
  }
  return out;
}

// Gradients in visit_parameters order.
template <typename T>
std::vector<BasicMatrix<T>> backward_lm(const Model<T>& model,
                                        const LmTape<T>& tape) {
  const ModelConfig& cfg = model.cfg;
  if (tape.targets.empty())
    throw ContractError("backward_lm needs a forward pass with targets");
  if (tape.blocks.size() != model.blocks.size())
    throw ContractError("tape does not match model depth");
  const std::size_t rows = tape.batch * tape.seq;
  const bool preln = cfg.arch == Arch::PreLN;

  // dL/dlogits for mean cross-entropy.
  BasicMatrix<T> dlogits = tape.probs;
  const T inv = static_cast<T>(1.0 / static_cast<double>(rows));
  for (std::size_t r = 0; r < rows; ++r) {
    auto dr = dlogits.row(r);
    dr[static_cast<std::size_t>(tape.targets[r])] -= T{1};
    for (T& v : dr) v *= inv;
  }
  BasicMatrix<T> d_head = matmul_tn(dlogits, tape.final_out);
  BasicMatrix<T> d_bias(1, cfg.vocab);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cfg.vocab; ++c) d_bias(0, c) += dlogits(r, c);
  BasicMatrix<T> dx = group_layernorm_backward(
      matmul(dlogits, model.head_weight()), tape.final_out, tape.final_ln);

  std::vector<std::array<BasicMatrix<T>, 6>> d_layers(model.blocks.size());
  for (std::size_t li = model.blocks.size(); li-- > 0;) {
    const Block<T>& blk = model.blocks[li];
    const BlockTape<T>& bt = tape.blocks[li];
    auto& dl = d_layers[li];

    // FFN: x_out = h + down(relu(up(ffn_in)))
    auto g_down = blk.down.backward(bt.down, dx);
    dl[5] = std::move(g_down.dw);
    BasicMatrix<T> du = std::move(g_down.dx);
    for (std::size_t i = 0; i < du.size(); ++i)
      if (!(bt.up_out.values()[i] > T{0})) du.values()[i] = T{0};
    auto g_up = blk.up.backward(bt.up, du);
    dl[4] = std::move(g_up.dw);
    if (preln)
      add_inplace(dx, group_layernorm_backward(g_up.dx, bt.ln2_out, bt.ln2));
    else
      add_inplace(dx, g_up.dx);

    // Attention: h = x + o(attn(q(a), k(a), v(a)))
    auto g_o = blk.o.backward(bt.o, dx);
    dl[3] = std::move(g_o.dw);
    BasicMatrix<T> dq, dk, dv;
    detail::causal_attention_backward(g_o.dx, bt.qm, bt.km, bt.vm, bt.probs,
                                      tape.batch, tape.seq, cfg.n_heads, dq,
                                      dk, dv);
    auto g_q = blk.q.backward(bt.q, dq);
    auto g_k = blk.k.backward(bt.k, dk);
    auto g_v = blk.v.backward(bt.v, dv);
    dl[0] = std::move(g_q.dw);
    dl[1] = std::move(g_k.dw);
    dl[2] = std::move(g_v.dw);
    BasicMatrix<T> da = std::move(g_q.dx);
    add_inplace(da, g_k.dx);
    add_inplace(da, g_v.dx);
    if (preln)
      add_inplace(dx, group_layernorm_backward(da, bt.ln1_out, bt.ln1));
    else
      add_inplace(dx, da);
  }

  BasicMatrix<T> d_tok(cfg.vocab, cfg.d_model);
  BasicMatrix<T> d_pos(cfg.seq_len, cfg.d_model);
  for (std::size_t r = 0; r < rows; ++r) {
    auto dt = d_tok.row(static_cast<std::size_t>(tape.inputs[r]));
    auto dp = d_pos.row(r % tape.seq);
    const auto g = dx.row(r);
    for (std::size_t e = 0; e < cfg.d_model; ++e) {
      dt[e] += g[e];
      dp[e] += g[e];
    }
  }
  if (cfg.tie_embeddings) add_inplace(d_tok, d_head);

  std::vector<BasicMatrix<T>> grads;
  grads.push_back(std::move(d_tok));
  grads.push_back(std::move(d_pos));
  for (std::size_t l = 0; l < model.blocks.size(); ++l) {
    if (!model.blocks[l].q.has_latent()) continue;
    for (auto& g : d_layers[l]) grads.push_back(std::move(g));
  }
  if (!cfg.tie_embeddings) grads.push_back(std::move(d_head));
  grads.push_back(std::move(d_bias));
  return grads;
}

// Per-position next-token loss in nats from a logits matrix.
template <typename T>
std::vector<double> token_losses(const BasicMatrix<T>& logits,
                                 std::span<const int> targets) {
  if (targets.size() != logits.rows())
    throw ShapeError("token_losses: targets/logits row mismatch");
  std::vector<double> out(logits.rows());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const auto lr = logits.row(r);
    const T mx = *std::max_element(lr.begin(), lr.end());
    double z = 0.0;
    for (T v : lr) z += std::exp(static_cast<double>(v - mx));
    out[r] = static_cast<double>(mx) + std::log(z) -
             static_cast<double>(lr[static_cast<std::size_t>(targets[r])]);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  double peak_lr = 1e-3;
  std::size_t warmup_updates = 750;
  std::size_t total_updates = 40000;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.98;
  double adam_eps = 1e-8;
  double weight_decay = 0.01;
  std::size_t batch_tokens = 1024;
  std::uint64_t seed = 1;
  std::size_t checkpoint_every = 0;  // 0: final checkpoint only

  void validate() const {
    if (!(peak_lr >= 0.0) || !std::isfinite(peak_lr))
      throw ConfigError("peak_lr must be finite and >= 0");
    if (total_updates == 0) throw ConfigError("total_updates must be >= 1");
    if (warmup_updates >= total_updates)
      throw ConfigError("warmup_updates must be < total_updates");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) ||
        !(adam_beta2 >= 0.0 && adam_beta2 < 1.0))
      throw ConfigError("Adam betas must lie in [0, 1)");
    if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be > 0");
    if (!(weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
    if (batch_tokens == 0) throw ConfigError("batch_tokens must be >= 1");
  }

  bool operator==(const TrainConfig&) const = default;
};

// Linear warmup to peak_lr, then linear decay to 0 at total_updates.
inline double learning_rate(const TrainConfig& cfg, std::size_t step) {
  if (step >= cfg.total_updates) return 0.0;
  if (step < cfg.warmup_updates)
    return cfg.peak_lr * static_cast<double>(step) /
           static_cast<double>(cfg.warmup_updates);
  const double span =
      static_cast<double>(cfg.total_updates - cfg.warmup_updates);
  return cfg.peak_lr *
         (1.0 - static_cast<double>(step - cfg.warmup_updates) / span);
}

template <typename T>
struct OptimizerState {
  std::vector<BasicMatrix<T>> m, v;
  std::uint64_t step = 0;

  bool operator==(const OptimizerState&) const = default;
};

template <typename T>
OptimizerState<T> make_optimizer(const Model<T>& model) {
  OptimizerState<T> s;
  visit_parameters(model,
                   [&](const std::string&, const BasicMatrix<T>& p, bool) {
                     s.m.emplace_back(p.rows(), p.cols());
                     s.v.emplace_back(p.rows(), p.cols());
                   });
  return s;
}

// Adam with bias correction and decoupled weight decay, applied in place to
// the latent (high precision) parameters.
template <typename T>
void adam_update(Model<T>& model, OptimizerState<T>& opt,
                 const std::vector<BasicMatrix<T>>& grads, double lr,
                 const TrainConfig& cfg) {
  ++opt.step;
  const double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(opt.step));
  const double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(opt.step));
  const T b1 = static_cast<T>(cfg.adam_beta1), b2 = static_cast<T>(cfg.adam_beta2);
  const T step_size = static_cast<T>(lr / bc1);
  const T inv_bc2 = static_cast<T>(1.0 / bc2);
  const T eps = static_cast<T>(cfg.adam_eps);
  const T decay = static_cast<T>(lr * cfg.weight_decay);
  std::size_t idx = 0;
  visit_parameters(model, [&](const std::string& name, BasicMatrix<T>& p,
                              bool use_decay) {
    if (idx >= grads.size() || idx >= opt.m.size())
      throw ContractError("optimizer state does not match model");
    const auto& g = grads[idx];
    auto& m = opt.m[idx];
    auto& v = opt.v[idx];
    require_same_shape(p, g, name.c_str());
    auto pv = p.values();
    auto gv = g.values();
    auto mv = m.values();
    auto vv = v.values();
    for (std::size_t i = 0; i < pv.size(); ++i) {
      mv[i] = b1 * mv[i] + (T{1} - b1) * gv[i];
      vv[i] = b2 * vv[i] + (T{1} - b2) * gv[i] * gv[i];
      if (use_decay) pv[i] -= decay * pv[i];
      pv[i] -= step_size * mv[i] / (std::sqrt(vv[i] * inv_bc2) + eps);
    }
    ++idx;
  });
}

template <typename T>
T train_step(Model<T>& model, OptimizerState<T>& opt, const LmBatch& batch,
             std::size_t step, const TrainConfig& cfg) {
  if (step >= cfg.total_updates)
    throw ContractError("step " + std::to_string(step) +
                        " is past total_updates");
  LmTape<T> tape;
  const LmOutput<T> out = forward_lm(model, batch, &tape);
  if (!std::isfinite(out.loss))
    throw DivergenceError("non-finite loss at step " + std::to_string(step) +
                          " (lr " + std::to_string(learning_rate(cfg, step)) +
                          ")");
  const auto grads = backward_lm(model, tape);
  adam_update(model, opt, grads, learning_rate(cfg, step), cfg);
  return out.loss;
}

// Random contiguous windows of seq+1 tokens: inputs are the first seq tokens,
// targets the last seq.
inline LmBatch sample_batch(std::span<const int> corpus, std::size_t seq,
                            std::size_t n_seqs, Rng rng) {
  if (corpus.size() < seq + 1)
    throw ContractError("corpus shorter than one training window");
  LmBatch b;
  b.batch = n_seqs;
  b.seq = seq;
  b.inputs.reserve(n_seqs * seq);
  b.targets.reserve(n_seqs * seq);
  const std::uint64_t span = corpus.size() - seq;
  for (std::size_t s = 0; s < n_seqs; ++s) {
    const std::size_t off = static_cast<std::size_t>(rng.below(span));
    for (std::size_t t = 0; t < seq; ++t) {
      b.inputs.push_back(corpus[off + t]);
      b.targets.push_back(corpus[off + t + 1]);
    }
  }
  return b;
}

// Batch for a given step; derived from (seed, step) only, so training can
// resume from a checkpoint and see the same data.
inline LmBatch batch_for_step(std::span<const int> corpus,
                              const ModelConfig& mcfg, const TrainConfig& tcfg,
                              std::size_t step) {
  const std::size_t seq = std::min(mcfg.seq_len, corpus.size() - 1);
  const std::size_t n_seqs = std::max<std::size_t>(1, tcfg.batch_tokens / seq);
  return sample_batch(corpus, seq, n_seqs,
                      Rng(tcfg.seed).split((std::uint64_t{1} << 32) + step));
}

struct TrainRecord {
  std::size_t step = 0;
  double lr = 0.0;
  double loss = 0.0;
  std::size_t tokens_seen = 0;
};

struct EvalResult {
  double mean_loss = 0.0;
  double perplexity = 0.0;
  std::size_t tokens_scored = 0;
};

// Perplexity over a token stream. Windows of seq_len tokens advance by half a
// window; every target is scored exactly once, and after the first window
// each scored position sees at least half a window of context.
template <typename T>
EvalResult evaluate(const Model<T>& model, std::span<const int> tokens) {
  if (tokens.size() < 2)
    throw ContractError("evaluation needs at least 2 tokens");
  const std::size_t n = tokens.size();
  const std::size_t len = std::min(model.cfg.seq_len, n - 1);
  const std::size_t stride = std::max<std::size_t>(1, len / 2);
  double total = 0.0;
  std::size_t scored = 0;
  std::size_t next_target = 1;
  std::size_t s = 0;
  while (true) {
    LmBatch b;
    b.batch = 1;
    b.seq = len;
    b.inputs.assign(tokens.begin() + static_cast<std::ptrdiff_t>(s),
                    tokens.begin() + static_cast<std::ptrdiff_t>(s + len));
    b.targets.assign(tokens.begin() + static_cast<std::ptrdiff_t>(s + 1),
                     tokens.begin() + static_cast<std::ptrdiff_t>(s + len + 1));
    const auto out = forward_lm(model, b);
    const auto losses = token_losses(out.logits, b.targets);
    const std::size_t last = s + len;  // index of the last target
    for (std::size_t j = std::max(next_target, s + 1); j <= last; ++j) {
      total += losses[j - s - 1];
      ++scored;
    }
    next_target = last + 1;
    if (last == n - 1) break;
    s = std::min(s + stride, n - 1 - len);
  }
  EvalResult r;
  r.tokens_scored = scored;
  r.mean_loss = total / static_cast<double>(scored);
  r.perplexity = std::exp(r.mean_loss);
  return r;
}

// ---------------------------------------------------------------------------
// Learning-rate stability sweep

struct StabilityPoint {
  std::string mode;  // "bitnet" or "fp"
  std::uint64_t seed = 0;
  double lr = 0.0;
  std::size_t step = 0;
  double loss = 0.0;
  bool diverged = false;
};

struct StabilityRun {
  std::string mode;
  std::uint64_t seed = 0;
  double lr = 0.0;
  double initial_loss = 0.0;
  double final_loss = 0.0;
  bool diverged = false;
  std::size_t steps_run = 0;
};

struct StabilityReport {
  std::vector<StabilityPoint> trajectory;
  std::vector<StabilityRun> runs;
};

// Trains a fresh model per (mode, seed, lr) for `steps` updates with peak
// learning rate lr and records the training loss at every step. A run
// diverges when the loss becomes non-finite or exceeds twice its first value;
// the run stops at that step.
template <typename T = float>
StabilityReport stability_probe(const ModelConfig& model_cfg,
                                const TrainConfig& base,
                                std::span<const int> corpus,
                                std::span<const double> lrs,
                                std::span<const std::uint64_t> seeds,
                                std::size_t steps,
                                std::span<const bool> quantized_modes) {
  StabilityReport report;
  for (bool quantized : quantized_modes) {
    ModelConfig mc = model_cfg;
    mc.quantized = quantized;
    const std::string mode = quantized ? "bitnet" : "fp";
    for (std::uint64_t seed : seeds) {
      for (double lr : lrs) {
        TrainConfig tc = base;
        tc.peak_lr = lr;
        tc.seed = seed;
        tc.total_updates = steps;
        tc.warmup_updates = std::min(base.warmup_updates, steps - 1);
        tc.validate();
        Model<T> model = build_model<T>(mc, Rng(seed));
        auto opt = make_optimizer(model);
        StabilityRun run{mode, seed, lr, 0.0, 0.0, false, 0};
        for (std::size_t step = 0; step < steps; ++step) {
          double loss;
          try {
            loss = static_cast<double>(train_step(
                model, opt, batch_for_step(corpus, mc, tc, step), step, tc));
          } catch (const DivergenceError&) {
            loss = std::numeric_limits<double>::quiet_NaN();
          }
          if (step == 0) run.initial_loss = loss;
          const bool bad = !std::isfinite(loss) || loss > 2.0 * run.initial_loss;
          report.trajectory.push_back({mode, seed, lr, step, loss, bad});
          run.final_loss = loss;
          run.steps_run = step + 1;
          if (bad) {
            run.diverged = true;
            break;
          }
        }
        report.runs.push_back(run);
      }
    }
  }
  return report;
}

}  // namespace bitnet
