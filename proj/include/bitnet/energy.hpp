#pragma once

// Arithmetic energy model for matrix multiplications.
//
// A dense m×n by n×p product costs m·(n−1)·p additions and m·n·p
// multiplications. With 1-bit weights the products disappear; what remains are
// the additions plus the output rescale by β and γ/Q_b, counted as
// (m·p + m·n) multiplications.
//
// Per-operation constants are in picojoules; whole-model reports are in joules.

#include <cstddef>
#include <map>
#include <string>
#include <tuple>
#include <vector>

#include "bitnet/error.hpp"

namespace bitnet {

enum class Precision { FP32, FP16, INT8 };
enum class ProcessNode { nm45, nm7 };
enum class ArithOp { Add, Mul };

inline const char* to_string(Precision p) {
  switch (p) {
    case Precision::FP32: return "fp32";
    case Precision::FP16: return "fp16";
    case Precision::INT8: return "int8";
  }
  return "?";
}

inline const char* to_string(ProcessNode n) {
  return n == ProcessNode::nm45 ? "45nm" : "7nm";
}

inline Precision parse_precision(const std::string& s) {
  if (s == "fp32") return Precision::FP32;
  if (s == "fp16") return Precision::FP16;
  if (s == "int8") return Precision::INT8;
  throw ConfigError("unknown precision '" + s + "'");
}

inline ProcessNode parse_node(const std::string& s) {
  if (s == "45nm") return ProcessNode::nm45;
  if (s == "7nm") return ProcessNode::nm7;
  throw ConfigError("unknown process node '" + s + "'");
}

class EnergyProfile {
 public:
  // ADD / MUL energy per operation (pJ) at 45nm and 7nm.
  static EnergyProfile standard() {
    EnergyProfile p;
    using P = Precision;
    using N = ProcessNode;
    using O = ArithOp;
    p.set(P::FP32, N::nm45, O::Add, 0.9);
    p.set(P::FP32, N::nm7, O::Add, 0.38);
    p.set(P::FP32, N::nm45, O::Mul, 3.7);
    p.set(P::FP32, N::nm7, O::Mul, 1.31);
    p.set(P::FP16, N::nm45, O::Add, 0.4);
    p.set(P::FP16, N::nm7, O::Add, 0.16);
    p.set(P::FP16, N::nm45, O::Mul, 1.1);
    p.set(P::FP16, N::nm7, O::Mul, 0.34);
    p.set(P::INT8, N::nm45, O::Add, 0.03);
    p.set(P::INT8, N::nm7, O::Add, 0.007);
    p.set(P::INT8, N::nm45, O::Mul, 0.2);
    p.set(P::INT8, N::nm7, O::Mul, 0.07);
    return p;
  }

  void set(Precision p, ProcessNode n, ArithOp op, double picojoules) {
    if (!(picojoules > 0.0))
      throw ConfigError("energy constants must be positive");
    table_[{p, n, op}] = picojoules;
  }

  double get(Precision p, ProcessNode n, ArithOp op) const {
    auto it = table_.find({p, n, op});
    if (it == table_.end())
      throw ConfigError(std::string("no energy constant for ") + to_string(p) +
                        " at " + to_string(n));
    return it->second;
  }

  std::size_t size() const { return table_.size(); }

 private:
  std::map<std::tuple<Precision, ProcessNode, ArithOp>, double> table_;
};

struct OpEnergy {
  double add_pj = 0.0;
  double mul_pj = 0.0;
};

inline void check_dims(std::size_t m, std::size_t n, std::size_t p) {
  if (m == 0 || n == 0 || p == 0)
    throw ConfigError("matmul dimensions must be >= 1");
}

inline OpEnergy matmul_energy_dense(std::size_t m, std::size_t n,
                                    std::size_t p, Precision bits,
                                    ProcessNode node,
                                    const EnergyProfile& profile) {
  check_dims(m, n, p);
  const double md = static_cast<double>(m), nd = static_cast<double>(n),
               pd = static_cast<double>(p);
  return {md * (nd - 1.0) * pd * profile.get(bits, node, ArithOp::Add),
          md * nd * pd * profile.get(bits, node, ArithOp::Mul)};
}

// Precisions assumed for the 1-bit weight path.
struct BitnetPrecision {
  Precision accumulate = Precision::INT8;  // additions of 8-bit activations
  Precision rescale = Precision::FP16;     // β and γ/Q_b multiplies
};

inline OpEnergy matmul_energy_bitnet(std::size_t m, std::size_t n,
                                     std::size_t p, ProcessNode node,
                                     const EnergyProfile& profile,
                                     BitnetPrecision prec = {}) {
  check_dims(m, n, p);
  const double md = static_cast<double>(m), nd = static_cast<double>(n),
               pd = static_cast<double>(p);
  return {md * (nd - 1.0) * pd * profile.get(prec.accumulate, node, ArithOp::Add),
          (md * pd + md * nd) * profile.get(prec.rescale, node, ArithOp::Mul)};
}

// ---------------------------------------------------------------------------
// Whole-model accounting

struct ModelDims {
  std::size_t d_model = 0;
  std::size_t n_layers = 0;
  std::size_t d_ff = 0;  // 0: 4·d_model
  std::size_t ffn() const { return d_ff == 0 ? 4 * d_model : d_ff; }
};

struct ModelPreset {
  std::string name;
  ModelDims dims;
  std::size_t n_heads = 0;
  double learning_rate = 0.0;
};

// Model shapes of the scaling series; the FFN width is 4× hidden.
inline const std::vector<ModelPreset>& model_presets() {
  static const std::vector<ModelPreset> presets = {
      {"125M", {768, 12, 0}, 12, 2.4e-3},  {"350M", {1024, 24, 0}, 16, 1.2e-3},
      {"760M", {1536, 24, 0}, 16, 1e-3},   {"1.3B", {2048, 24, 0}, 32, 8e-4},
      {"2.7B", {2560, 32, 0}, 32, 6.4e-4}, {"6.7B", {4096, 32, 0}, 32, 4.8e-4},
      {"13B", {5120, 40, 0}, 40, 4e-4},    {"30B", {7168, 48, 0}, 56, 4e-4},
  };
  return presets;
}

inline const ModelPreset& find_preset(const std::string& name) {
  for (const auto& p : model_presets())
    if (p.name == name) return p;
  throw ConfigError("unknown model preset '" + name + "'");
}

enum class EnergyMode { FP32, FP16, BitNet };

inline const char* to_string(EnergyMode m) {
  switch (m) {
    case EnergyMode::FP32: return "fp32";
    case EnergyMode::FP16: return "fp16";
    case EnergyMode::BitNet: return "bitnet";
  }
  return "?";
}

inline EnergyMode parse_energy_mode(const std::string& s) {
  if (s == "fp32") return EnergyMode::FP32;
  if (s == "fp16") return EnergyMode::FP16;
  if (s == "bitnet" || s == "w1a8") return EnergyMode::BitNet;
  throw ConfigError("unknown energy mode '" + s + "'");
}

struct ProjectionEnergy {
  std::size_t layer = 0;
  std::string name;  // q, k, v, o, ffn_up, ffn_down
  std::size_t m = 0, n = 0, p = 0;
  double add_j = 0.0;
  double mul_j = 0.0;
};

struct EnergyAssumptions {
  std::size_t seq_len = 0;
  std::string counted = "q,k,v,o,ffn_up,ffn_down projections per layer";
  std::string excluded =
      "attention QK^T and AV products, softmax, layer norm, residual adds, "
      "embeddings and output head";
  std::string weight_precision;
  std::string add_precision;
  std::string mul_precision;
};

struct ModelEnergyReport {
  EnergyMode mode = EnergyMode::FP16;
  ProcessNode node = ProcessNode::nm7;
  ModelDims dims;
  std::vector<ProjectionEnergy> projections;
  double total_add_j = 0.0;
  double total_mul_j = 0.0;
  EnergyAssumptions assumptions;
  std::vector<std::string> notes;
};

inline constexpr double kPicoToJoule = 1e-12;

inline ModelEnergyReport model_energy(const ModelDims& dims,
                                      std::size_t seq_len, EnergyMode mode,
                                      ProcessNode node,
                                      const EnergyProfile& profile,
                                      BitnetPrecision bitnet_prec = {}) {
  if (dims.d_model == 0 || dims.n_layers == 0 || seq_len == 0)
    throw ConfigError("model dims and seq_len must be >= 1");
  ModelEnergyReport r;
  r.mode = mode;
  r.node = node;
  r.dims = dims;
  r.assumptions.seq_len = seq_len;
  switch (mode) {
    case EnergyMode::FP32:
      r.assumptions.weight_precision = "fp32";
      r.assumptions.add_precision = r.assumptions.mul_precision = "fp32";
      break;
    case EnergyMode::FP16:
      r.assumptions.weight_precision = "fp16";
      r.assumptions.add_precision = r.assumptions.mul_precision = "fp16";
      break;
    case EnergyMode::BitNet:
      r.assumptions.weight_precision = "1-bit weights, 8-bit activations";
      r.assumptions.add_precision = to_string(bitnet_prec.accumulate);
      r.assumptions.mul_precision = to_string(bitnet_prec.rescale);
      r.notes.push_back(
          "1-bit rows count only the beta/gamma rescale multiplies "
          "(m*p + m*n per matmul) plus integer accumulation; published W1 "
          "figures are 10-100x above this accounting and cannot be matched by "
          "a single choice of precisions, so they are reproduced to order of "
          "magnitude only");
      break;
  }
  const std::size_t d = dims.d_model, f = dims.ffn();
  const struct {
    const char* name;
    std::size_t n, p;
  } shapes[] = {{"q", d, d},      {"k", d, d},          {"v", d, d},
                {"o", d, d},      {"ffn_up", d, f},     {"ffn_down", f, d}};
  for (std::size_t l = 0; l < dims.n_layers; ++l) {
    for (const auto& s : shapes) {
      OpEnergy e;
      if (mode == EnergyMode::BitNet)
        e = matmul_energy_bitnet(seq_len, s.n, s.p, node, profile, bitnet_prec);
      else
        e = matmul_energy_dense(
            seq_len, s.n, s.p,
            mode == EnergyMode::FP32 ? Precision::FP32 : Precision::FP16, node,
            profile);
      r.projections.push_back({l, s.name, seq_len, s.n, s.p,
                               e.add_pj * kPicoToJoule,
                               e.mul_pj * kPicoToJoule});
    }
  }
  for (const auto& pe : r.projections) {
    r.total_add_j += pe.add_j;
    r.total_mul_j += pe.mul_j;
  }
  return r;
}

// One row of a size × weight-bits energy table (both process nodes).
struct EnergyTableRow {
  std::string model;  // "Transformer" or "BitNet"
  std::string size;
  int weight_bits = 16;
  double mul_7nm_j = 0.0, add_7nm_j = 0.0;
  double mul_45nm_j = 0.0, add_45nm_j = 0.0;
};

inline std::vector<EnergyTableRow> energy_table(
    const std::vector<std::string>& sizes, std::size_t seq_len,
    const EnergyProfile& profile, BitnetPrecision prec = {}) {
  std::vector<EnergyTableRow> rows;
  for (const auto& size : sizes) {
    const ModelDims dims = find_preset(size).dims;
    for (EnergyMode mode :
         {EnergyMode::FP32, EnergyMode::FP16, EnergyMode::BitNet}) {
      const auto r7 =
          model_energy(dims, seq_len, mode, ProcessNode::nm7, profile, prec);
      const auto r45 =
          model_energy(dims, seq_len, mode, ProcessNode::nm45, profile, prec);
      rows.push_back({mode == EnergyMode::BitNet ? "BitNet" : "Transformer",
                      size,
                      mode == EnergyMode::FP32   ? 32
                      : mode == EnergyMode::FP16 ? 16
                                                 : 1,
                      r7.total_mul_j, r7.total_add_j, r45.total_mul_j,
                      r45.total_add_j});
    }
  }
  return rows;
}

}  // namespace bitnet
