#pragma once

// Binary checkpoint format, version 1. All integers and floats are
// little-endian; floats are IEEE-754 binary32.
//
//   magic          8 bytes  "BITNETCK"
//   version        u32      1
//   flavor         u32      0 = training (latent weights), 1 = inference
//   section_count  u32
//   section*       tag (4 ASCII bytes), u64 payload length, payload
//
// Sections, in this order:
//   "CONF"  model config as UTF-8 JSON (required)
//   "TENS"  u32 count, then count tensor records (required)
//   "OPTM"  u64 step, u32 count, then count × (dense m, dense v) (optional)
//   "MANI"  run manifest as UTF-8 JSON (optional)
//
// Tensor record: u16 name length, name bytes, u8 kind, body.
//   kind 0 (dense):  u32 rows, u32 cols, f32[rows·cols] row-major
//   kind 1 (packed): u32 rows, u32 cols, u32 groups, f32 alpha[groups],
//                    f32 beta[groups], u8 bits[rows·ceil(cols/8)]
// Packed sign bits are row-major, least significant bit first, each row
// padded to a byte boundary; bit 1 means +1, bit 0 means −1.
//
// Tensor order: tok_emb, pos_emb, blocks.<l>.{q,k,v,o,up,down} for every
// layer, head (absent when tied), head_bias. Training checkpoints store the
// BitLinear tensors as kind 0 latent weights, inference checkpoints as kind 1.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "bitnet/error.hpp"
#include "bitnet/io/config_json.hpp"
#include "bitnet/model.hpp"

namespace bitnet {

inline constexpr char kCheckpointMagic[8] = {'B', 'I', 'T', 'N',
                                             'E', 'T', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class CheckpointFlavor : std::uint32_t { Training = 0, Inference = 1 };

// FNV-1a, 64 bit. Identifies configs and corpora in run manifests.
inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[static_cast<std::size_t>(i)] = digits[v & 0xF];
  return s;
}

inline constexpr const char* kCodeVersion = "bitnet-qat 0.1.0";

struct RunManifest {
  std::uint64_t seed = 0;
  std::string config_hash;
  std::string corpus_hash;
  std::string code_version = kCodeVersion;
  std::string command_line;
  std::vector<std::string> artifacts;

  bool operator==(const RunManifest&) const = default;
};

inline json to_json(const RunManifest& m) {
  return json{{"seed", m.seed},
              {"config_hash", m.config_hash},
              {"corpus_hash", m.corpus_hash},
              {"code_version", m.code_version},
              {"command_line", m.command_line},
              {"artifacts", m.artifacts}};
}

inline RunManifest manifest_from_json(const json& j) {
  RunManifest m;
  try {
    m.seed = j.at("seed").get<std::uint64_t>();
    m.config_hash = j.at("config_hash").get<std::string>();
    m.corpus_hash = j.at("corpus_hash").get<std::string>();
    m.code_version = j.at("code_version").get<std::string>();
    m.command_line = j.at("command_line").get<std::string>();
    m.artifacts = j.value("artifacts", std::vector<std::string>{});
  } catch (const json::exception& e) {
    throw FormatError(std::string("bad manifest: ") + e.what());
  }
  return m;
}

struct Checkpoint {
  CheckpointFlavor flavor = CheckpointFlavor::Training;
  Model<float> model;
  std::optional<OptimizerState<float>> optimizer;
  std::optional<RunManifest> manifest;
};

struct TensorRecordInfo {
  std::string name;
  std::uint8_t kind = 0;
  std::size_t bytes = 0;  // whole record, header included
};

namespace detail {

class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void bytes(std::string_view s) { buf_.append(s); }
  void bytes(const std::vector<std::uint8_t>& v) {
    buf_.append(reinterpret_cast<const char*>(v.data()), v.size());
  }
  std::string& str() { return buf_; }

 private:
  std::string buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::string_view data) : data_(data) {}

  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(data_[pos_++]);
  }
  std::uint16_t u16() {
    std::uint16_t v = 0;
    for (int i = 0; i < 2; ++i) v |= static_cast<std::uint16_t>(u8()) << (8 * i);
    return v;
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(u8()) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(u8()) << (8 * i);
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::string_view bytes(std::size_t n) {
    need(n);
    auto s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ == data_.size(); }

 private:
  void need(std::size_t n) const {
    if (data_.size() - pos_ < n) throw FormatError("truncated checkpoint");
  }
  std::string_view data_;
  std::size_t pos_ = 0;
};

inline void write_dense_body(ByteWriter& w, const Matrix& m) {
  w.u32(static_cast<std::uint32_t>(m.rows()));
  w.u32(static_cast<std::uint32_t>(m.cols()));
  for (float v : m.values()) w.f32(v);
}

inline Matrix read_dense_body(ByteReader& r) {
  const std::size_t rows = r.u32(), cols = r.u32();
  std::vector<float> data(rows * cols);
  for (auto& v : data) v = r.f32();
  return Matrix(rows, cols, std::move(data));
}

inline void write_name(ByteWriter& w, const std::string& name, std::uint8_t kind) {
  w.u16(static_cast<std::uint16_t>(name.size()));
  w.bytes(name);
  w.u8(kind);
}

inline void write_packed_body(ByteWriter& w, const BinarizedWeight<float>& b) {
  w.u32(static_cast<std::uint32_t>(b.rows));
  w.u32(static_cast<std::uint32_t>(b.cols));
  w.u32(static_cast<std::uint32_t>(b.groups));
  for (float a : b.alpha) w.f32(a);
  for (float a : b.beta) w.f32(a);
  w.bytes(b.packed);
}

inline BinarizedWeight<float> read_packed_body(ByteReader& r) {
  BinarizedWeight<float> b;
  b.rows = r.u32();
  b.cols = r.u32();
  b.groups = r.u32();
  if (b.groups == 0 || b.rows % b.groups != 0)
    throw FormatError("packed tensor has invalid group count");
  b.alpha.resize(b.groups);
  b.beta.resize(b.groups);
  for (auto& a : b.alpha) a = r.f32();
  for (auto& a : b.beta) a = r.f32();
  const auto bits = r.bytes(b.rows * b.row_bytes());
  b.packed.assign(bits.begin(), bits.end());
  b.validate();
  return b;
}

inline void section(ByteWriter& out, const char tag[4], const std::string& payload) {
  out.bytes(std::string_view(tag, 4));
  out.u64(payload.size());
  out.bytes(payload);
}

struct RawTensor {
  std::string name;
  std::uint8_t kind = 0;
  Matrix dense;
  BinarizedWeight<float> packed;
  std::size_t bytes = 0;
};

struct RawCheckpoint {
  CheckpointFlavor flavor;
  json config;
  std::vector<RawTensor> tensors;
  std::optional<OptimizerState<float>> optimizer;
  std::optional<RunManifest> manifest;
};

inline json parse_json_section(std::string_view s, const char* what) {
  try {
    return json::parse(s);
  } catch (const json::parse_error& e) {
    throw FormatError(std::string(what) + " section is not valid JSON: " +
                      e.what());
  }
}

inline RawCheckpoint parse_raw(std::string_view bytes) {
  ByteReader r(bytes);
  if (r.bytes(8) != std::string_view(kCheckpointMagic, 8))
    throw FormatError("bad magic; not a checkpoint");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " +
                      std::to_string(version));
  const std::uint32_t flavor = r.u32();
  if (flavor > 1) throw FormatError("unknown checkpoint flavor");
  RawCheckpoint raw{static_cast<CheckpointFlavor>(flavor), {}, {}, {}, {}};
  const std::uint32_t n_sections = r.u32();
  bool have_conf = false, have_tens = false;
  for (std::uint32_t s = 0; s < n_sections; ++s) {
    const std::string tag(r.bytes(4));
    const std::uint64_t len = r.u64();
    ByteReader body(r.bytes(static_cast<std::size_t>(len)));
    if (tag == "CONF") {
      raw.config = parse_json_section(body.bytes(len), "CONF");
      have_conf = true;
    } else if (tag == "TENS") {
      const std::uint32_t count = body.u32();
      for (std::uint32_t i = 0; i < count; ++i) {
        const std::size_t start = body.pos();
        RawTensor t;
        t.name = std::string(body.bytes(body.u16()));
        t.kind = body.u8();
        if (t.kind == 0)
          t.dense = read_dense_body(body);
        else if (t.kind == 1)
          t.packed = read_packed_body(body);
        else
          throw FormatError("unknown tensor kind " + std::to_string(t.kind));
        t.bytes = body.pos() - start;
        raw.tensors.push_back(std::move(t));
      }
      have_tens = true;
    } else if (tag == "OPTM") {
      OptimizerState<float> opt;
      opt.step = body.u64();
      const std::uint32_t count = body.u32();
      for (std::uint32_t i = 0; i < count; ++i) {
        opt.m.push_back(read_dense_body(body));
        opt.v.push_back(read_dense_body(body));
      }
      raw.optimizer = std::move(opt);
    } else if (tag == "MANI") {
      raw.manifest =
          manifest_from_json(parse_json_section(body.bytes(len), "MANI"));
    } else {
      throw FormatError("unknown section '" + tag + "'");
    }
    if (!body.done()) throw FormatError("trailing bytes in section " + tag);
  }
  if (!r.done()) throw FormatError("trailing bytes after last section");
  if (!have_conf || !have_tens)
    throw FormatError("checkpoint is missing CONF or TENS");
  return raw;
}

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& ck) {
  const Model<float>& m = ck.model;
  const bool inference = ck.flavor == CheckpointFlavor::Inference;
  if (inference != is_frozen(m))
    throw ContractError(inference
                            ? "inference checkpoint needs an exported model"
                            : "training checkpoint needs latent weights");

  detail::ByteWriter tens;
  std::uint32_t count = 0;
  detail::ByteWriter records;
  auto dense = [&](const std::string& name, const Matrix& x) {
    detail::write_name(records, name, 0);
    detail::write_dense_body(records, x);
    ++count;
  };
  dense("tok_emb", m.tok_emb);
  dense("pos_emb", m.pos_emb);
  for (std::size_t l = 0; l < m.blocks.size(); ++l) {
    for_each_layer(m.blocks[l], [&](const char* lname, const BitLinear<float>& layer) {
      const std::string name = "blocks." + std::to_string(l) + "." + lname;
      if (inference) {
        detail::write_name(records, name, 1);
        detail::write_packed_body(records, layer.binarized());
        ++count;
      } else {
        dense(name, layer.latent());
      }
    });
  }
  if (!m.cfg.tie_embeddings) dense("head", m.head);
  dense("head_bias", m.head_bias);
  tens.u32(count);
  tens.bytes(records.str());

  detail::ByteWriter out;
  out.bytes(std::string_view(kCheckpointMagic, 8));
  out.u32(kCheckpointVersion);
  out.u32(static_cast<std::uint32_t>(ck.flavor));
  const std::uint32_t n_sections =
      2 + (ck.optimizer ? 1u : 0u) + (ck.manifest ? 1u : 0u);
  out.u32(n_sections);
  detail::section(out, "CONF", to_json(m.cfg).dump());
  detail::section(out, "TENS", tens.str());
  if (ck.optimizer) {
    detail::ByteWriter o;
    o.u64(ck.optimizer->step);
    o.u32(static_cast<std::uint32_t>(ck.optimizer->m.size()));
    for (std::size_t i = 0; i < ck.optimizer->m.size(); ++i) {
      detail::write_dense_body(o, ck.optimizer->m[i]);
      detail::write_dense_body(o, ck.optimizer->v[i]);
    }
    detail::section(out, "OPTM", o.str());
  }
  if (ck.manifest) detail::section(out, "MANI", to_json(*ck.manifest).dump());
  return std::move(out.str());
}

inline Checkpoint deserialize_checkpoint(std::string_view bytes) {
  auto raw = detail::parse_raw(bytes);
  Checkpoint ck;
  ck.flavor = raw.flavor;
  ck.manifest = raw.manifest;
  ModelConfig cfg;
  try {
    cfg = model_config_from_json(raw.config);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint config: ") + e.what());
  }
  const bool inference = raw.flavor == CheckpointFlavor::Inference;
  std::size_t idx = 0;
  auto next = [&](const std::string& name, std::uint8_t kind) -> detail::RawTensor& {
    if (idx >= raw.tensors.size())
      throw FormatError("missing tensor '" + name + "'");
    auto& t = raw.tensors[idx++];
    if (t.name != name)
      throw FormatError("expected tensor '" + name + "', found '" + t.name + "'");
    if (t.kind != kind)
      throw FormatError("tensor '" + name + "' has the wrong kind");
    return t;
  };
  auto dense = [&](const std::string& name, std::size_t rows, std::size_t cols) {
    Matrix x = std::move(next(name, 0).dense);
    if (x.rows() != rows || x.cols() != cols)
      throw FormatError("tensor '" + name + "' has shape " +
                        shape_str(x.rows(), x.cols()) + ", expected " +
                        shape_str(rows, cols));
    return x;
  };

  Model<float>& m = ck.model;
  m.cfg = cfg;
  m.tok_emb = dense("tok_emb", cfg.vocab, cfg.d_model);
  m.pos_emb = dense("pos_emb", cfg.seq_len, cfg.d_model);
  const std::size_t d = cfg.d_model;
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const std::string p = "blocks." + std::to_string(l) + ".";
    auto layer = [&](const char* name, std::size_t in, std::size_t out, ActMode mode) {
      const BitLinearConfig lc = cfg.linear(in, out, mode);
      if (inference)
        return BitLinear<float>(lc, std::move(next(p + name, 1).packed));
      return BitLinear<float>(lc, dense(p + name, out, in));
    };
    // Sequenced explicitly: tensors are consumed in file order.
    auto q = layer("q", d, d, ActMode::Signed);
    auto k = layer("k", d, d, ActMode::Signed);
    auto v = layer("v", d, d, ActMode::Signed);
    auto o = layer("o", d, d, ActMode::Signed);
    auto up = layer("up", d, cfg.d_ff, ActMode::Nonnegative);
    auto down = layer("down", cfg.d_ff, d, ActMode::Signed);
    m.blocks.push_back(Block<float>{std::move(q), std::move(k), std::move(v),
                                    std::move(o), std::move(up),
                                    std::move(down)});
  }
  if (!cfg.tie_embeddings) m.head = dense("head", cfg.vocab, cfg.d_model);
  m.head_bias = dense("head_bias", 1, cfg.vocab);
  if (idx != raw.tensors.size()) throw FormatError("unexpected extra tensors");

  if (raw.optimizer) {
    if (inference)
      throw FormatError("inference checkpoint carries optimizer state");
    std::size_t i = 0;
    bool ok = true;
    visit_parameters(m, [&](const std::string&, const Matrix& p, bool) {
      if (i >= raw.optimizer->m.size() ||
          raw.optimizer->m[i].rows() != p.rows() ||
          raw.optimizer->m[i].cols() != p.cols() ||
          raw.optimizer->v[i].rows() != p.rows() ||
          raw.optimizer->v[i].cols() != p.cols())
        ok = false;
      ++i;
    });
    if (!ok || i != raw.optimizer->m.size())
      throw FormatError("optimizer state does not match the model");
    ck.optimizer = std::move(raw.optimizer);
  }
  return ck;
}

inline std::vector<TensorRecordInfo> checkpoint_tensor_sizes(std::string_view bytes) {
  auto raw = detail::parse_raw(bytes);
  std::vector<TensorRecordInfo> out;
  for (const auto& t : raw.tensors) out.push_back({t.name, t.kind, t.bytes});
  return out;
}

inline void write_file(const std::string& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to '" + path + "'");
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  write_file(path, serialize_checkpoint(ck));
}

inline Checkpoint load_checkpoint(const std::string& path) {
  return deserialize_checkpoint(read_text_file(path));
}

}  // namespace bitnet
