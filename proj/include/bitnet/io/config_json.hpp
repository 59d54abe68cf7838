#pragma once

// JSON form of ModelConfig / TrainConfig. Parsing is strict: unknown keys and
// wrongly typed values are configuration errors; missing keys take defaults.
//
//   {
//     "model": { "d_model": 128, "n_layers": 4, "arch": "subln", ... },
//     "train": { "peak_lr": 1e-3, "warmup_updates": 750, ... }
//   }

#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "bitnet/error.hpp"
#include "bitnet/model.hpp"

namespace bitnet {

using json = nlohmann::json;

namespace detail {

inline void reject_unknown(const json& j, const std::set<std::string>& known,
                           const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key()))
      throw ConfigError("unknown key '" + where + "." + it.key() + "'");
}

template <typename V>
void read_field(const json& j, const char* key, V& out,
                const std::string& where) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  const std::string path = where + "." + key;
  if constexpr (std::is_same_v<V, bool>) {
    if (!v.is_boolean()) throw ConfigError(path + " must be a boolean");
    out = v.get<bool>();
  } else if constexpr (std::is_integral_v<V>) {
    if (!v.is_number_integer())
      throw ConfigError(path + " must be an integer");
    if constexpr (std::is_unsigned_v<V>) {
      if (v.is_number_integer() && !v.is_number_unsigned() &&
          v.get<std::int64_t>() < 0)
        throw ConfigError(path + " must be >= 0");
    }
    out = v.get<V>();
  } else if constexpr (std::is_floating_point_v<V>) {
    if (!v.is_number()) throw ConfigError(path + " must be a number");
    out = v.get<V>();
  } else {
    if (!v.is_string()) throw ConfigError(path + " must be a string");
    out = v.get<std::string>();
  }
}

}  // namespace detail

inline json to_json(const ModelConfig& c) {
  return json{{"vocab", c.vocab},
              {"d_model", c.d_model},
              {"n_layers", c.n_layers},
              {"n_heads", c.n_heads},
              {"d_ff", c.d_ff},
              {"seq_len", c.seq_len},
              {"arch", to_string(c.arch)},
              {"weight_groups", c.weight_groups},
              {"act_groups", c.act_groups},
              {"activation_bits", c.activation_bits},
              {"quantized", c.quantized},
              {"tie_embeddings", c.tie_embeddings},
              {"ln_eps", c.ln_eps}};
}

inline ModelConfig model_config_from_json(const json& j) {
  const std::string w = "model";
  detail::reject_unknown(
      j,
      {"vocab", "d_model", "n_layers", "n_heads", "d_ff", "seq_len", "arch",
       "weight_groups", "act_groups", "activation_bits", "quantized",
       "tie_embeddings", "ln_eps"},
      w);
  ModelConfig c;
  detail::read_field(j, "vocab", c.vocab, w);
  detail::read_field(j, "d_model", c.d_model, w);
  detail::read_field(j, "n_layers", c.n_layers, w);
  detail::read_field(j, "n_heads", c.n_heads, w);
  detail::read_field(j, "d_ff", c.d_ff, w);
  detail::read_field(j, "seq_len", c.seq_len, w);
  std::string arch = to_string(c.arch);
  detail::read_field(j, "arch", arch, w);
  if (arch == "subln")
    c.arch = Arch::SubLN;
  else if (arch == "preln")
    c.arch = Arch::PreLN;
  else
    throw ConfigError("model.arch must be 'subln' or 'preln', got '" + arch +
                      "'");
  detail::read_field(j, "weight_groups", c.weight_groups, w);
  detail::read_field(j, "act_groups", c.act_groups, w);
  detail::read_field(j, "activation_bits", c.activation_bits, w);
  detail::read_field(j, "quantized", c.quantized, w);
  detail::read_field(j, "tie_embeddings", c.tie_embeddings, w);
  detail::read_field(j, "ln_eps", c.ln_eps, w);
  if (c.vocab < kByteVocab)
    throw ConfigError("model.vocab must be >= " + std::to_string(kByteVocab) +
                      " for the byte tokenizer");
  c.validate();
  return c;
}

inline json to_json(const TrainConfig& c) {
  return json{{"peak_lr", c.peak_lr},
              {"warmup_updates", c.warmup_updates},
              {"total_updates", c.total_updates},
              {"adam_beta1", c.adam_beta1},
              {"adam_beta2", c.adam_beta2},
              {"adam_eps", c.adam_eps},
              {"weight_decay", c.weight_decay},
              {"batch_tokens", c.batch_tokens},
              {"seed", c.seed},
              {"checkpoint_every", c.checkpoint_every}};
}

inline TrainConfig train_config_from_json(const json& j) {
  const std::string w = "train";
  detail::reject_unknown(
      j,
      {"peak_lr", "warmup_updates", "total_updates", "adam_beta1",
       "adam_beta2", "adam_eps", "weight_decay", "batch_tokens", "seed",
       "checkpoint_every"},
      w);
  TrainConfig c;
  detail::read_field(j, "peak_lr", c.peak_lr, w);
  detail::read_field(j, "warmup_updates", c.warmup_updates, w);
  detail::read_field(j, "total_updates", c.total_updates, w);
  detail::read_field(j, "adam_beta1", c.adam_beta1, w);
  detail::read_field(j, "adam_beta2", c.adam_beta2, w);
  detail::read_field(j, "adam_eps", c.adam_eps, w);
  detail::read_field(j, "weight_decay", c.weight_decay, w);
  detail::read_field(j, "batch_tokens", c.batch_tokens, w);
  detail::read_field(j, "seed", c.seed, w);
  detail::read_field(j, "checkpoint_every", c.checkpoint_every, w);
  c.validate();
  return c;
}

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
};

inline RunConfig run_config_from_json(const json& j) {
  detail::reject_unknown(j, {"model", "train"}, "config");
  RunConfig rc;
  rc.model = model_config_from_json(j.value("model", json::object()));
  rc.train = train_config_from_json(j.value("train", json::object()));
  return rc;
}

inline json to_json(const RunConfig& rc) {
  return json{{"model", to_json(rc.model)}, {"train", to_json(rc.train)}};
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline RunConfig load_run_config(const std::string& path) {
  const std::string text = read_text_file(path);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("'" + path + "' is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

}  // namespace bitnet
