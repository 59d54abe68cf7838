#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "cli_app.hpp"

using namespace bitnet;
namespace fs = std::filesystem;

namespace {

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("bitnet_cli_" + std::string(::testing::UnitTest::GetInstance()
                                            ->current_test_info()
                                            ->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    RunConfig rc;
    rc.model.d_model = 16;
    rc.model.n_layers = 1;
    rc.model.n_heads = 2;
    rc.model.d_ff = 32;
    rc.model.seq_len = 16;
    rc.train.peak_lr = 3e-3;
    rc.train.warmup_updates = 2;
    rc.train.total_updates = 6;
    rc.train.batch_tokens = 64;
    rc.train.checkpoint_every = 3;
    write(config(), to_json(rc).dump(2));
  }
  void TearDown() override { fs::remove_all(dir_); }

  std::string path(const std::string& name) const { return (dir_ / name).string(); }
  std::string config() const { return path("config.json"); }
  static std::string corpus() {
    return std::string(BITNET_TEST_DATA) + "/corpus_4k.txt";
  }
  static void write(const std::string& p, const std::string& text) {
    std::ofstream(p, std::ios::binary) << text;
  }
  static std::string read(const std::string& p) { return read_text_file(p); }

  int run(std::vector<std::string> args) {
    args.insert(args.begin(), "bitnet");
    out_.str("");
    return cli::run_cli(args, out_);
  }
  json out_json() const { return json::parse(out_.str()); }

  fs::path dir_;
  std::ostringstream out_;
};

}  // namespace

TEST_F(Cli, TrainWritesArtifacts) {
  ASSERT_EQ(run({"train", "--config", config(), "--corpus", corpus(), "--out",
                 path("run")}),
            0);
  for (const char* f : {"loss.csv", "manifest.json", "checkpoint_final.bin",
                        "checkpoint_step_3.bin"})
    EXPECT_TRUE(fs::exists(path("run") + "/" + f)) << f;
  const std::string csv = read(path("run/loss.csv"));
  EXPECT_EQ(csv.rfind("# manifest: manifest.json\nstep,lr,loss,tokens_seen\n0,0,", 0), 0u);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 8);
  const auto manifest = json::parse(read(path("run/manifest.json")));
  EXPECT_EQ(manifest["seed"], 1);
  EXPECT_EQ(manifest["corpus_hash"], hex64(fnv1a64(read(corpus()))));
  EXPECT_EQ(manifest["code_version"], kCodeVersion);
  EXPECT_EQ(out_json()["steps"], 6);
}

TEST_F(Cli, TrainIsByteReproducible) {
  for (const char* d : {"a", "b"})
    ASSERT_EQ(run({"train", "--config", config(), "--corpus", corpus(), "--out",
                   path(d), "--seed", "5"}),
              0);
  EXPECT_EQ(read(path("a/loss.csv")), read(path("b/loss.csv")));
  EXPECT_EQ(read(path("a/checkpoint_final.bin")).size(),
            read(path("b/checkpoint_final.bin")).size());
  const auto ca = load_checkpoint(path("a/checkpoint_final.bin"));
  const auto cb = load_checkpoint(path("b/checkpoint_final.bin"));
  EXPECT_EQ(*ca.optimizer, *cb.optimizer);
  ASSERT_EQ(run({"train", "--config", config(), "--corpus", corpus(), "--out",
                 path("c"), "--seed", "6"}),
            0);
  EXPECT_NE(read(path("a/loss.csv")), read(path("c/loss.csv")));
}

TEST_F(Cli, TrainFullPrecisionMode) {
  ASSERT_EQ(run({"train", "--config", config(), "--corpus", corpus(), "--out",
                 path("fp"), "--mode", "fp", "--steps", "3"}),
            0);
  const auto ck = load_checkpoint(path("fp/checkpoint_final.bin"));
  EXPECT_FALSE(ck.model.cfg.quantized);
  EXPECT_EQ(ck.optimizer->step, 3u);
}

TEST_F(Cli, EvalExportEvalAgree) {
  ASSERT_EQ(run({"train", "--config", config(), "--corpus", corpus(), "--out",
                 path("run")}),
            0);
  ASSERT_EQ(run({"eval", "--ckpt", path("run/checkpoint_final.bin"), "--corpus",
                 corpus()}),
            0);
  const auto e1 = out_json();
  EXPECT_EQ(e1["tokens_scored"], 4095);
  EXPECT_EQ(e1["flavor"], "training");
  EXPECT_GT(e1["perplexity"].get<double>(), 1.0);

  ASSERT_EQ(run({"export", "--ckpt", path("run/checkpoint_final.bin"), "--out",
                 path("inf.bin")}),
            0);
  const auto x = out_json();
  EXPECT_DOUBLE_EQ(x["bitlinear_ratio"].get<double>(),
                   x["bitlinear_latent_bytes"].get<double>() /
                       x["bitlinear_packed_bytes"].get<double>());
  EXPECT_GT(x["bitlinear_ratio"].get<double>(), 10.0);
  EXPECT_EQ(x["output_bytes"], fs::file_size(path("inf.bin")));

  ASSERT_EQ(run({"eval", "--ckpt", path("inf.bin"), "--corpus", corpus()}), 0);
  const auto e2 = out_json();
  EXPECT_EQ(e2["flavor"], "inference");
  EXPECT_EQ(e2["perplexity"], e1["perplexity"]);

  EXPECT_EQ(run({"export", "--ckpt", path("inf.bin"), "--out", path("again.bin")}), 2);
}

TEST_F(Cli, ExitCodes) {
  EXPECT_EQ(run({}), 2);
  EXPECT_EQ(run({"frobnicate"}), 2);
  EXPECT_EQ(run({"train", "--config", config()}), 2);
  EXPECT_EQ(run({"train", "--config", path("missing.json"), "--corpus", corpus(),
                 "--out", path("o")}),
            3);
  write(path("bad.json"), "{not json");
  EXPECT_EQ(run({"train", "--config", path("bad.json"), "--corpus", corpus(),
                 "--out", path("o")}),
            2);
  write(path("empty.txt"), "");
  EXPECT_EQ(run({"train", "--config", config(), "--corpus", path("empty.txt"),
                 "--out", path("o")}),
            2);
  write(path("garbage.bin"), "definitely not a checkpoint");
  EXPECT_EQ(run({"eval", "--ckpt", path("garbage.bin"), "--corpus", corpus()}), 3);
  EXPECT_EQ(run({"energy", "--preset", "9B"}), 2);
  EXPECT_EQ(run({"energy", "--mode", "int4"}), 2);
}

TEST_F(Cli, DivergenceExitCode) {
  auto rc = load_run_config(config());
  rc.train.peak_lr = 1e30;
  rc.train.warmup_updates = 0;
  write(config(), to_json(rc).dump());
  EXPECT_EQ(run({"train", "--config", config(), "--corpus", corpus(), "--out",
                 path("boom")}),
            4);
  EXPECT_TRUE(fs::exists(path("boom/loss.csv")));
}

TEST_F(Cli, EnergyReport) {
  ASSERT_EQ(run({"energy", "--preset", "6.7B", "--mode", "fp16", "--node", "7nm"}), 0);
  const auto j = out_json();
  EXPECT_NEAR(j["total_mul_j"].get<double>(), 1.14, 0.15 * 1.14);
  EXPECT_NEAR(j["total_add_j"].get<double>(), 0.54, 0.15 * 0.54);
  EXPECT_EQ(j["assumptions"]["seq_len"], 512);

  ASSERT_EQ(run({"energy", "--preset", "custom", "--d-model", "128", "--n-layers",
                 "4", "--mode", "bitnet", "--seq-len", "64"}),
            0);
  const auto r = model_energy({128, 4, 0}, 64, EnergyMode::BitNet, ProcessNode::nm7,
                              EnergyProfile::standard());
  EXPECT_DOUBLE_EQ(out_json()["total_mul_j"].get<double>(), r.total_mul_j);

  ASSERT_EQ(run({"energy", "--table", "--format", "csv"}), 0);
  const std::string csv = out_.str();
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 10);
  EXPECT_NE(csv.find("BitNet,30B,1,"), std::string::npos);
}

TEST_F(Cli, ScalingFitFromCsv) {
  std::string csv = "# synthetic\nn,loss\n";
  for (double n : {1e8, 3e8, 1e9, 3e9, 1e10})
    csv += cli::format_double(n) + "," + cli::format_double(10 * std::pow(n, -0.1) + 1.5) + "\n";
  write(path("pts.csv"), csv);
  ASSERT_EQ(run({"scaling", "fit", "--points", path("pts.csv"), "--predict", "1e11"}), 0);
  const auto j = out_json();
  EXPECT_NEAR(j["a"].get<double>(), 10, 0.1);
  EXPECT_NEAR(j["b"].get<double>(), -0.1, 0.001);
  EXPECT_NEAR(j["c"].get<double>(), 1.5, 0.015);
  EXPECT_EQ(j["predictions"].size(), 6u);

  write(path("few.csv"), "1e8,3\n1e9,2.5\n");
  EXPECT_EQ(run({"scaling", "fit", "--points", path("few.csv")}), 5);
  write(path("junk.csv"), "1e8,abc\n1e9,2.5\n");
  EXPECT_EQ(run({"scaling", "fit", "--points", path("junk.csv")}), 3);
}

TEST_F(Cli, ScalingCurve) {
  ASSERT_EQ(run({"scaling", "curve", "--models", "1.3B,125M", "--losses", "2.5,3.1"}), 0);
  const std::string csv = out_.str();
  EXPECT_EQ(csv.rfind("mode,label,energy_j,loss\nfp16,125M,", 0), 0u);
  EXPECT_NE(csv.find("\nbitnet,125M,"), std::string::npos);
  EXPECT_EQ(run({"scaling", "curve", "--models", "125M", "--losses", "2.5,3.1"}), 2);
}

TEST_F(Cli, SweepWritesCsvAndSummary) {
  ASSERT_EQ(run({"sweep-lr", "--config", config(), "--lrs", "1e-3,1e-2", "--corpus",
                 corpus(), "--seeds", "1,2", "--steps", "4", "--out", path("sw")}),
            0);
  const std::string csv = read(path("sw/stability.csv"));
  EXPECT_EQ(csv.rfind("# manifest: manifest.json\nmode,seed,lr,step,loss,diverged\n", 0), 0u);
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 2 + 2 * 2 * 2 * 4);
  EXPECT_TRUE(fs::exists(path("sw/summary.json")));
  EXPECT_TRUE(fs::exists(path("sw/manifest.json")));
  ASSERT_EQ(run({"sweep-lr", "--config", config(), "--lrs", "1e-3", "--corpus",
                 corpus(), "--seeds", "1", "--steps", "3"}),
            0);
  EXPECT_EQ(out_.str().rfind("mode,seed,lr,step,loss,diverged\n", 0), 0u);
  EXPECT_EQ(run({"sweep-lr", "--config", config(), "--lrs", "-1", "--corpus",
                 corpus()}),
            2);
}
