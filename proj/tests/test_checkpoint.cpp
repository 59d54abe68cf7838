#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>

#include "bitnet/io/checkpoint.hpp"
#include "oracles.hpp"

using namespace bitnet;

namespace {

ModelConfig small_cfg() {
  ModelConfig c;
  c.d_model = 32;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_ff = 64;
  c.seq_len = 16;
  c.weight_groups = 2;
  return c;
}

LmBatch probe_batch(const ModelConfig& cfg) {
  LmBatch b;
  b.batch = 2;
  b.seq = cfg.seq_len;
  Rng rng(99);
  for (std::size_t i = 0; i < b.batch * b.seq; ++i)
    b.inputs.push_back(static_cast<int>(rng.below(cfg.vocab)));
  return b;
}

Checkpoint trained_checkpoint(bool tied = false) {
  auto cfg = small_cfg();
  cfg.tie_embeddings = tied;
  Checkpoint ck;
  ck.model = build_model<float>(cfg, Rng(7));
  auto opt = make_optimizer(ck.model);
  TrainConfig tc;
  tc.warmup_updates = 1;
  tc.total_updates = 3;
  tc.batch_tokens = 64;
  LmBatch b = probe_batch(cfg);
  b.targets = b.inputs;
  std::rotate(b.targets.begin(), b.targets.begin() + 1, b.targets.end());
  for (std::size_t s = 0; s < 3; ++s) train_step(ck.model, opt, b, s, tc);
  ck.optimizer = opt;
  ck.manifest = RunManifest{7, "abc", "def", kCodeVersion, "bitnet train", {"x"}};
  return ck;
}

std::vector<Matrix> parameters(const Model<float>& m) {
  std::vector<Matrix> out;
  visit_parameters(m, [&](const std::string&, const Matrix& p, bool) {
    out.push_back(p);
  });
  return out;
}

std::uint32_t read_u32(const std::string& s, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(s[at + i]);
  return v;
}

}  // namespace

TEST(Checkpoint, TrainingRoundTripIsExact) {
  for (bool tied : {false, true}) {
    const auto ck = trained_checkpoint(tied);
    const std::string bytes = serialize_checkpoint(ck);
    const auto back = deserialize_checkpoint(bytes);
    EXPECT_EQ(back.flavor, CheckpointFlavor::Training);
    EXPECT_EQ(back.model.cfg, ck.model.cfg);
    EXPECT_EQ(parameters(back.model), parameters(ck.model));
    ASSERT_TRUE(back.optimizer);
    EXPECT_EQ(*back.optimizer, *ck.optimizer);
    ASSERT_TRUE(back.manifest);
    EXPECT_EQ(*back.manifest, *ck.manifest);
    EXPECT_EQ(serialize_checkpoint(back), bytes);
    const auto b = probe_batch(ck.model.cfg);
    EXPECT_EQ(forward_lm(back.model, b).logits, forward_lm(ck.model, b).logits);
  }
}

TEST(Checkpoint, OptionalSectionsMayBeAbsent) {
  Checkpoint ck;
  ck.model = build_model<float>(small_cfg(), Rng(3));
  const auto back = deserialize_checkpoint(serialize_checkpoint(ck));
  EXPECT_FALSE(back.optimizer);
  EXPECT_FALSE(back.manifest);
  EXPECT_EQ(parameters(back.model), parameters(ck.model));
}

TEST(Checkpoint, FullPrecisionModelRoundTrips) {
  auto cfg = small_cfg();
  cfg.quantized = false;
  Checkpoint ck;
  ck.model = build_model<float>(cfg, Rng(4));
  const auto back = deserialize_checkpoint(serialize_checkpoint(ck));
  EXPECT_FALSE(back.model.cfg.quantized);
  const auto b = probe_batch(cfg);
  EXPECT_EQ(forward_lm(back.model, b).logits, forward_lm(ck.model, b).logits);
}

TEST(Checkpoint, HeaderLayout) {
  const std::string bytes = serialize_checkpoint(trained_checkpoint());
  EXPECT_EQ(bytes.substr(0, 8), "BITNETCK");
  EXPECT_EQ(read_u32(bytes, 8), 1u);
  EXPECT_EQ(read_u32(bytes, 12), 0u);
  EXPECT_EQ(read_u32(bytes, 16), 4u);
  EXPECT_EQ(bytes.substr(20, 4), "CONF");
}

TEST(Checkpoint, RejectsCorruptInput) {
  const std::string good = serialize_checkpoint(trained_checkpoint());
  std::string bad = good;
  bad[0] = 'X';
  EXPECT_THROW(deserialize_checkpoint(bad), FormatError);
  bad = good;
  bad[8] = 2;
  EXPECT_THROW(deserialize_checkpoint(bad), FormatError);
  bad = good;
  bad[12] = 9;
  EXPECT_THROW(deserialize_checkpoint(bad), FormatError);
  for (std::size_t cut : {0ul, 5ul, 19ul, 30ul, good.size() / 2, good.size() - 1})
    EXPECT_THROW(deserialize_checkpoint(good.substr(0, cut)), FormatError) << cut;
  EXPECT_THROW(deserialize_checkpoint(good + "x"), FormatError);
}

TEST(Checkpoint, LoadMissingFileIsIoError) {
  EXPECT_THROW(load_checkpoint("/nonexistent/dir/ck.bin"), IoError);
}

TEST(Checkpoint, FileRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "bitnet_ck_test";
  std::filesystem::create_directories(dir);
  const auto ck = trained_checkpoint();
  const std::string path = (dir / "a.bin").string();
  save_checkpoint(path, ck);
  const auto back = load_checkpoint(path);
  EXPECT_EQ(serialize_checkpoint(back), serialize_checkpoint(ck));
  std::filesystem::remove_all(dir);
}

TEST(InferenceExport, DropsLatentWeightsAndKeepsLogits) {
  auto ck = trained_checkpoint();
  Checkpoint inf;
  inf.flavor = CheckpointFlavor::Inference;
  inf.model = freeze(ck.model);
  const std::string bytes = serialize_checkpoint(inf);
  const auto back = deserialize_checkpoint(bytes);
  EXPECT_EQ(back.flavor, CheckpointFlavor::Inference);
  EXPECT_TRUE(is_frozen(back.model));
  for (const auto& blk : back.model.blocks)
    for_each_layer(blk, [](const char*, const auto& l) { EXPECT_FALSE(l.has_latent()); });
  for (const auto& rec : checkpoint_tensor_sizes(bytes))
    if (rec.name.rfind("blocks.", 0) == 0) EXPECT_EQ(rec.kind, 1) << rec.name;
  const auto b = probe_batch(ck.model.cfg);
  EXPECT_EQ(forward_lm(back.model, b).logits, forward_lm(ck.model, b).logits);
}

TEST(InferenceExport, FlavorMustMatchModel) {
  auto ck = trained_checkpoint();
  ck.flavor = CheckpointFlavor::Inference;
  EXPECT_THROW(serialize_checkpoint(ck), ContractError);
  Checkpoint inf;
  inf.model = freeze(trained_checkpoint().model);
  EXPECT_THROW(serialize_checkpoint(inf), ContractError);
}

TEST(InferenceExport, BitLinearPayloadShrinksAboutThirtyTwoFold) {
  ModelConfig cfg;  // desk scale: 128 wide, 4 layers
  Checkpoint train;
  train.model = build_model<float>(cfg, Rng(1));
  Checkpoint inf;
  inf.flavor = CheckpointFlavor::Inference;
  inf.model = freeze(train.model);
  auto blocks_bytes = [](const std::string& bytes) {
    std::size_t n = 0;
    for (const auto& r : checkpoint_tensor_sizes(bytes))
      if (r.name.rfind("blocks.", 0) == 0) n += r.bytes;
    return n;
  };
  const double ratio = static_cast<double>(blocks_bytes(serialize_checkpoint(train))) /
                       static_cast<double>(blocks_bytes(serialize_checkpoint(inf)));
  EXPECT_NEAR(ratio, 32.0, 0.2 * 32.0);
}

TEST(InferenceExport, PackedBitsAreLsbFirstInFile) {
  auto cfg = small_cfg();
  cfg.d_model = 12;  // 12 columns: the second byte of each row is padded
  cfg.d_ff = 48;
  cfg.n_heads = 3;
  cfg.weight_groups = 3;
  auto model = build_model<float>(cfg, Rng(5));
  const Matrix w = model.blocks[0].q.latent();
  Checkpoint inf;
  inf.flavor = CheckpointFlavor::Inference;
  inf.model = freeze(model);
  const std::string bytes = serialize_checkpoint(inf);

  const std::string name = "blocks.0.q";
  const auto at = bytes.find(name);
  ASSERT_NE(at, std::string::npos);
  std::size_t p = at + name.size();
  EXPECT_EQ(bytes[p], 1);  // packed kind
  ++p;
  EXPECT_EQ(read_u32(bytes, p), 12u);
  EXPECT_EQ(read_u32(bytes, p + 4), 12u);
  EXPECT_EQ(read_u32(bytes, p + 8), 3u);
  p += 12;
  const auto ref = oracle::binarize(w, 3);
  for (std::size_t g = 0; g < 3; ++g) {
    float alpha, beta;
    std::memcpy(&alpha, bytes.data() + p + 4 * g, 4);
    std::memcpy(&beta, bytes.data() + p + 12 + 4 * g, 4);
    EXPECT_EQ(alpha, static_cast<float>(ref.alpha[g]));
    EXPECT_EQ(beta, static_cast<float>(ref.beta[g]));
  }
  p += 24;
  for (std::size_t i = 0; i < 12; ++i)
    for (std::size_t byte = 0; byte < 2; ++byte) {
      unsigned expected = 0;
      for (std::size_t k = 0; k < 8; ++k) {
        const std::size_t j = byte * 8 + k;
        if (j < 12 && ref.signs[i][j] > 0) expected |= 1u << k;
      }
      ASSERT_EQ(static_cast<unsigned char>(bytes[p + 2 * i + byte]), expected)
          << "row " << i << " byte " << byte;
    }
}

TEST(Manifest, JsonRoundTripAndHash) {
  RunManifest m{42, "h1", "h2", kCodeVersion, "bitnet train --seed 42", {"a.csv", "b.bin"}};
  EXPECT_EQ(manifest_from_json(to_json(m)), m);
  EXPECT_THROW(manifest_from_json(json{{"seed", 1}}), FormatError);
  EXPECT_EQ(fnv1a64(""), 0xcbf29ce484222325ULL);
  EXPECT_EQ(fnv1a64("a"), 0xaf63dc4c8601ec8cULL);
  EXPECT_EQ(hex64(0xabcULL), "0000000000000abc");
}

TEST(RunConfigJson, RoundTripAndErrors) {
  RunConfig rc;
  rc.model = small_cfg();
  rc.model.arch = Arch::PreLN;
  rc.train.peak_lr = 3e-3;
  rc.train.seed = 11;
  const auto back = run_config_from_json(to_json(rc));
  EXPECT_EQ(back.model, rc.model);
  EXPECT_EQ(back.train, rc.train);
  json bad = to_json(rc);
  bad["model"]["n_heads"] = 5;
  EXPECT_THROW(run_config_from_json(bad), ConfigError);
  bad = to_json(rc);
  bad["model"]["arch"] = "postln";
  EXPECT_THROW(run_config_from_json(bad), ConfigError);
}
