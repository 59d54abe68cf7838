#pragma once

// The bitnet command-line application. main() forwards to run_cli; tests call
// it in-process.
//
// Exit codes: 0 success, 1 internal error, 2 invalid config or arguments,
// 3 I/O or file format error, 4 training divergence, 5 scaling fit failure.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_sinks.h>
#include <spdlog/spdlog.h>

#include "bitnet/energy.hpp"
#include "bitnet/error.hpp"
#include "bitnet/io/checkpoint.hpp"
#include "bitnet/io/config_json.hpp"
#include "bitnet/model.hpp"
#include "bitnet/scaling.hpp"

namespace bitnet::cli {

enum ExitCode : int {
  kOk = 0,
  kInternal = 1,
  kConfig = 2,
  kIo = 3,
  kDivergence = 4,
  kFit = 5,
};

inline constexpr std::size_t kMinCorpusBytes = 1024;

// BITNET_LOG selects the stderr log level: trace, debug, info (default),
// warn, error, off.
inline std::shared_ptr<spdlog::logger> logger() {
  static std::shared_ptr<spdlog::logger> log = [] {
    auto l = spdlog::get("bitnet");
    if (!l) l = spdlog::stderr_logger_mt("bitnet");
    const char* env = std::getenv("BITNET_LOG");
    l->set_level(env ? spdlog::level::from_str(env) : spdlog::level::info);
    l->set_pattern("[%l] %v");
    return l;
  }();
  return log;
}

inline std::string format_double(double v, int digits = 17) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*g", digits, v);
  return buf;
}

inline std::string join_args(const std::vector<std::string>& args) {
  std::string s;
  for (const auto& a : args) {
    if (!s.empty()) s += ' ';
    s += a;
  }
  return s;
}

inline std::string read_corpus(const std::string& path, std::size_t min_bytes) {
  std::string text = read_text_file(path);
  if (text.size() < min_bytes)
    throw ConfigError("corpus '" + path + "' has " +
                      std::to_string(text.size()) + " bytes, need at least " +
                      std::to_string(min_bytes));
  return text;
}

inline void write_text(const std::filesystem::path& p, const std::string& s) {
  write_file(p.string(), s);
}

inline void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec || !std::filesystem::is_directory(dir))
    throw IoError("cannot create directory '" + dir.string() + "'");
}

inline std::string config_hash(const RunConfig& rc) {
  return hex64(fnv1a64(to_json(rc).dump()));
}

// ---------------------------------------------------------------------------
// train

struct TrainOptions {
  std::string config, corpus, out, mode = "bitnet";
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> steps;
};

inline std::string loss_csv(const std::vector<TrainRecord>& recs,
                            const std::string& manifest_ref) {
  std::string s = "# manifest: " + manifest_ref + "\nstep,lr,loss,tokens_seen\n";
  for (const auto& r : recs)
    s += std::to_string(r.step) + "," + format_double(r.lr) + "," +
         format_double(r.loss, 9) + "," + std::to_string(r.tokens_seen) + "\n";
  return s;
}

inline int cmd_train(const TrainOptions& o, const std::string& command_line,
                     std::ostream& out) {
  namespace fs = std::filesystem;
  RunConfig rc = load_run_config(o.config);
  if (o.mode == "fp")
    rc.model.quantized = false;
  else if (o.mode == "bitnet")
    rc.model.quantized = true;
  else
    throw ConfigError("--mode must be 'fp' or 'bitnet'");
  if (o.seed) rc.train.seed = *o.seed;
  if (o.steps) rc.train.total_updates = *o.steps;
  rc.train.validate();
  const std::string text = read_corpus(o.corpus, kMinCorpusBytes);
  const auto corpus = bytes_to_tokens(text);
  const fs::path dir(o.out);
  ensure_dir(dir);

  RunManifest manifest;
  manifest.seed = rc.train.seed;
  manifest.config_hash = config_hash(rc);
  manifest.corpus_hash = hex64(fnv1a64(text));
  manifest.command_line = command_line;

  auto log = logger();
  log->info("train: mode={} seed={} steps={} corpus={} bytes",
            o.mode, rc.train.seed, rc.train.total_updates, text.size());

  Model<float> model = build_model<float>(rc.model, Rng(rc.train.seed));
  auto opt = make_optimizer(model);
  std::vector<TrainRecord> records;
  std::size_t tokens_seen = 0;

  auto save = [&](const std::string& name) {
    manifest.artifacts.push_back(name);
    save_checkpoint((dir / name).string(),
                    Checkpoint{CheckpointFlavor::Training, model, opt, manifest});
  };
  auto finish = [&]() {
    manifest.artifacts.push_back("loss.csv");
    write_text(dir / "loss.csv", loss_csv(records, "manifest.json"));
    write_text(dir / "manifest.json", to_json(manifest).dump(2) + "\n");
  };

  const std::size_t total = rc.train.total_updates;
  for (std::size_t step = 0; step < total; ++step) {
    const LmBatch batch = batch_for_step(corpus, rc.model, rc.train, step);
    double loss;
    try {
      loss = train_step(model, opt, batch, step, rc.train);
    } catch (const DivergenceError&) {
      finish();
      throw;
    }
    tokens_seen += batch.batch * batch.seq;
    records.push_back({step, learning_rate(rc.train, step), loss, tokens_seen});
    if (step % 50 == 0 || step + 1 == total)
      log->info("step {} lr {:.3g} loss {:.4f}", step,
                learning_rate(rc.train, step), loss);
    const std::size_t k = rc.train.checkpoint_every;
    if (k > 0 && (step + 1) % k == 0 && step + 1 != total)
      save("checkpoint_step_" + std::to_string(step + 1) + ".bin");
  }
  save("checkpoint_final.bin");
  finish();

  json summary{{"steps", total},
               {"initial_loss", records.front().loss},
               {"final_loss", records.back().loss},
               {"tokens_seen", tokens_seen},
               {"checkpoint", (dir / "checkpoint_final.bin").string()},
               {"loss_csv", (dir / "loss.csv").string()},
               {"manifest", (dir / "manifest.json").string()}};
  out << summary.dump(2) << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// eval / export

inline int cmd_eval(const std::string& ckpt_path, const std::string& corpus_path,
                    std::ostream& out) {
  const Checkpoint ck = load_checkpoint(ckpt_path);
  const std::string text = read_text_file(corpus_path);
  if (text.size() < 2)
    throw ConfigError("corpus '" + corpus_path + "' needs at least 2 bytes");
  const auto tokens = bytes_to_tokens(text);
  const EvalResult r = evaluate(ck.model, tokens);
  json j{{"perplexity", r.perplexity},
         {"mean_loss", r.mean_loss},
         {"tokens_scored", r.tokens_scored},
         {"flavor", ck.flavor == CheckpointFlavor::Training ? "training"
                                                             : "inference"},
         {"corpus_hash", hex64(fnv1a64(text))}};
  if (ck.manifest) j["manifest"] = to_json(*ck.manifest);
  out << j.dump(2) << "\n";
  return kOk;
}

struct PayloadSizes {
  std::size_t total = 0;
  std::size_t bitlinear = 0;
};

inline PayloadSizes payload_sizes(std::string_view bytes) {
  PayloadSizes s{bytes.size(), 0};
  for (const auto& t : checkpoint_tensor_sizes(bytes))
    if (t.name.rfind("blocks.", 0) == 0) s.bitlinear += t.bytes;
  return s;
}

inline int cmd_export(const std::string& ckpt_path, const std::string& out_path,
                      std::ostream& out) {
  const std::string in_bytes = read_text_file(ckpt_path);
  Checkpoint ck = deserialize_checkpoint(in_bytes);
  if (ck.flavor == CheckpointFlavor::Inference)
    throw ContractError("'" + ckpt_path + "' is already an exported checkpoint");
  Checkpoint exported{CheckpointFlavor::Inference, freeze(ck.model),
                      std::nullopt, ck.manifest};
  if (exported.manifest)
    exported.manifest->artifacts.push_back(
        std::filesystem::path(out_path).filename().string());
  const std::string out_bytes = serialize_checkpoint(exported);
  write_file(out_path, out_bytes);
  const PayloadSizes a = payload_sizes(in_bytes), b = payload_sizes(out_bytes);
  json j{{"input_bytes", a.total},
         {"output_bytes", b.total},
         {"bitlinear_latent_bytes", a.bitlinear},
         {"bitlinear_packed_bytes", b.bitlinear},
         {"bitlinear_ratio",
          static_cast<double>(a.bitlinear) / static_cast<double>(b.bitlinear)},
         {"output", out_path}};
  out << j.dump(2) << "\n";
  return kOk;
}

// ---------------------------------------------------------------------------
// energy

struct EnergyOptions {
  std::string preset = "6.7B";
  std::size_t d_model = 0, n_layers = 0, d_ff = 0;
  std::string mode = "fp16", node = "7nm", format = "json";
  std::size_t seq_len = 512;
  bool table = false;
};

inline json to_json(const ModelEnergyReport& r) {
  json projections = json::array();
  for (const auto& p : r.projections)
    projections.push_back({{"layer", p.layer},
                           {"name", p.name},
                           {"m", p.m},
                           {"n", p.n},
                           {"p", p.p},
                           {"add_j", p.add_j},
                           {"mul_j", p.mul_j}});
  return json{{"mode", to_string(r.mode)},
              {"node", to_string(r.node)},
              {"d_model", r.dims.d_model},
              {"n_layers", r.dims.n_layers},
              {"d_ff", r.dims.ffn()},
              {"seq_len", r.assumptions.seq_len},
              {"total_add_j", r.total_add_j},
              {"total_mul_j", r.total_mul_j},
              {"total_j", r.total_add_j + r.total_mul_j},
              {"assumptions",
               {{"seq_len", r.assumptions.seq_len},
                {"counted", r.assumptions.counted},
                {"excluded", r.assumptions.excluded},
                {"weight_precision", r.assumptions.weight_precision},
                {"add_precision", r.assumptions.add_precision},
                {"mul_precision", r.assumptions.mul_precision}}},
              {"notes", r.notes},
              {"projections", projections}};
}

inline std::string energy_table_csv(const std::vector<EnergyTableRow>& rows) {
  std::string s = "model,size,weight_bits,mul_7nm_j,add_7nm_j,mul_45nm_j,add_45nm_j\n";
  for (const auto& r : rows)
    s += r.model + "," + r.size + "," + std::to_string(r.weight_bits) + "," +
         format_double(r.mul_7nm_j, 6) + "," + format_double(r.add_7nm_j, 6) +
         "," + format_double(r.mul_45nm_j, 6) + "," +
         format_double(r.add_45nm_j, 6) + "\n";
  return s;
}

inline int cmd_energy(const EnergyOptions& o, std::ostream& out) {
  const EnergyProfile profile = EnergyProfile::standard();
  if (o.table) {
    const auto rows = energy_table({"6.7B", "13B", "30B"}, o.seq_len, profile);
    if (o.format == "csv") {
      out << energy_table_csv(rows);
    } else {
      json arr = json::array();
      for (const auto& r : rows)
        arr.push_back({{"model", r.model},
                       {"size", r.size},
                       {"weight_bits", r.weight_bits},
                       {"mul_7nm_j", r.mul_7nm_j},
                       {"add_7nm_j", r.add_7nm_j},
                       {"mul_45nm_j", r.mul_45nm_j},
                       {"add_45nm_j", r.add_45nm_j}});
      out << json{{"seq_len", o.seq_len}, {"rows", arr}}.dump(2) << "\n";
    }
    return kOk;
  }
  ModelDims dims;
  if (o.preset == "custom") {
    dims = {o.d_model, o.n_layers, o.d_ff};
  } else {
    dims = find_preset(o.preset).dims;
  }
  const auto r = model_energy(dims, o.seq_len, parse_energy_mode(o.mode),
                              parse_node(o.node), profile);
  if (o.format == "csv") {
    out << "layer,name,m,n,p,add_j,mul_j\n";
    for (const auto& p : r.projections)
      out << p.layer << "," << p.name << "," << p.m << "," << p.n << "," << p.p
          << "," << format_double(p.add_j) << "," << format_double(p.mul_j)
          << "\n";
  } else {
    json j = to_json(r);
    j["preset"] = o.preset;
    out << j.dump(2) << "\n";
  }
  return kOk;
}

// ---------------------------------------------------------------------------
// sweep-lr

struct SweepOptions {
  std::string config, corpus, out;
  std::vector<double> lrs;
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  std::size_t steps = 200;
};

inline std::string stability_csv(const StabilityReport& r) {
  std::string s = "mode,seed,lr,step,loss,diverged\n";
  for (const auto& p : r.trajectory)
    s += p.mode + "," + std::to_string(p.seed) + "," + format_double(p.lr) +
         "," + std::to_string(p.step) + "," + format_double(p.loss, 9) + "," +
         (p.diverged ? "1" : "0") + "\n";
  return s;
}

inline std::string stability_runs_csv(const StabilityReport& r) {
  std::string s = "mode,seed,lr,initial_loss,final_loss,steps_run,diverged\n";
  for (const auto& p : r.runs)
    s += p.mode + "," + std::to_string(p.seed) + "," + format_double(p.lr) +
         "," + format_double(p.initial_loss, 9) + "," +
         format_double(p.final_loss, 9) + "," + std::to_string(p.steps_run) +
         "," + (p.diverged ? "1" : "0") + "\n";
  return s;
}

// Smallest lr at which any seed of the given mode diverged; +inf when none did.
inline double divergence_threshold(const StabilityReport& r,
                                   const std::string& mode) {
  double t = std::numeric_limits<double>::infinity();
  for (const auto& run : r.runs)
    if (run.mode == mode && run.diverged) t = std::min(t, run.lr);
  return t;
}

inline json stability_summary(const StabilityReport& r) {
  json lrs = json::array();
  std::vector<double> seen;
  for (const auto& run : r.runs)
    if (std::find(seen.begin(), seen.end(), run.lr) == seen.end())
      seen.push_back(run.lr);
  std::vector<double> separating;
  for (double lr : seen) {
    std::size_t fp_div = 0, bn_div = 0, fp_n = 0, bn_n = 0;
    for (const auto& run : r.runs) {
      if (run.lr != lr) continue;
      if (run.mode == "fp") {
        ++fp_n;
        fp_div += run.diverged;
      } else {
        ++bn_n;
        bn_div += run.diverged;
      }
    }
    lrs.push_back({{"lr", lr},
                   {"fp_diverged", fp_div},
                   {"fp_runs", fp_n},
                   {"bitnet_diverged", bn_div},
                   {"bitnet_runs", bn_n}});
    if (fp_n > 0 && bn_n > 0 && fp_div == fp_n && bn_div == 0)
      separating.push_back(lr);
  }
  auto thr = [](double v) -> json {
    if (std::isinf(v)) return nullptr;
    return v;
  };
  return json{{"per_lr", lrs},
              {"fp_divergence_lr", thr(divergence_threshold(r, "fp"))},
              {"bitnet_divergence_lr", thr(divergence_threshold(r, "bitnet"))},
              {"separating_lrs", separating}};
}

inline int cmd_sweep(const SweepOptions& o, const std::string& command_line,
                     std::ostream& out) {
  namespace fs = std::filesystem;
  const RunConfig rc = load_run_config(o.config);
  if (o.lrs.empty()) throw ConfigError("--lrs needs at least one value");
  for (double lr : o.lrs)
    if (!(lr >= 0.0) || !std::isfinite(lr))
      throw ConfigError("learning rates must be finite and >= 0");
  if (o.steps < 2) throw ConfigError("--steps must be >= 2");
  const std::string text = read_corpus(o.corpus, kMinCorpusBytes);
  const auto corpus = bytes_to_tokens(text);
  const bool modes[] = {false, true};
  logger()->info("sweep-lr: {} lrs x {} seeds x 2 modes, {} steps",
                 o.lrs.size(), o.seeds.size(), o.steps);
  const auto report = stability_probe<float>(rc.model, rc.train, corpus, o.lrs,
                                             o.seeds, o.steps, modes);
  json summary = stability_summary(report);
  if (!o.out.empty()) {
    const fs::path dir(o.out);
    ensure_dir(dir);
    RunManifest m;
    m.seed = o.seeds.empty() ? 0 : o.seeds.front();
    m.config_hash = config_hash(rc);
    m.corpus_hash = hex64(fnv1a64(text));
    m.command_line = command_line;
    m.artifacts = {"stability.csv", "stability_runs.csv", "summary.json"};
    write_text(dir / "stability.csv",
               "# manifest: manifest.json\n" + stability_csv(report));
    write_text(dir / "stability_runs.csv",
               "# manifest: manifest.json\n" + stability_runs_csv(report));
    summary["manifest"] = "manifest.json";
    write_text(dir / "summary.json", summary.dump(2) + "\n");
    write_text(dir / "manifest.json", to_json(m).dump(2) + "\n");
    out << summary.dump(2) << "\n";
  } else {
    out << stability_csv(report);
  }
  return kOk;
}

// ---------------------------------------------------------------------------
// scaling fit

// CSV with columns n,loss (header optional; '#' lines ignored).
inline std::vector<ScalingPoint> read_points_csv(const std::string& path) {
  std::istringstream in(read_text_file(path));
  std::vector<ScalingPoint> pts;
  std::string line;
  int n_col = 0, loss_col = 1;
  std::size_t lineno = 0;
  bool first_row = true;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (cells.size() < 2)
      throw FormatError(path + ":" + std::to_string(lineno) +
                        ": expected at least two columns");
    const bool header = first_row && !cells[0].empty() &&
                        std::isalpha(static_cast<unsigned char>(cells[0][0]));
    first_row = false;
    if (header) {
      n_col = loss_col = -1;
      for (int i = 0; i < static_cast<int>(cells.size()); ++i) {
        if (cells[i] == "n" || cells[i] == "params") n_col = i;
        if (cells[i] == "loss") loss_col = i;
      }
      if (n_col < 0 || loss_col < 0)
        throw FormatError(path + ": header needs 'n' and 'loss' columns");
      continue;
    }
    try {
      std::size_t used = 0;
      ScalingPoint p;
      p.n = std::stod(cells.at(n_col), &used);
      p.loss = std::stod(cells.at(loss_col), &used);
      pts.push_back(p);
    } catch (const std::exception&) {
      throw FormatError(path + ":" + std::to_string(lineno) +
                        ": not a number");
    }
  }
  return pts;
}

inline int cmd_scaling_fit(const std::string& points_path,
                           const std::vector<double>& predict_at,
                           std::ostream& out) {
  const auto pts = read_points_csv(points_path);
  const ScalingFit fit = fit_power_law(pts);
  json table = json::array();
  auto row = [&](double n, std::optional<double> observed) {
    json r{{"n", n}, {"predicted_loss", predict(fit, n)}};
    if (observed) r["observed_loss"] = *observed;
    table.push_back(r);
  };
  for (const auto& p : pts) row(p.n, p.loss);
  for (double n : predict_at) row(n, std::nullopt);
  json j{{"a", fit.a},
         {"b", fit.b},
         {"c", fit.c},
         {"log_residual", fit.residual},
         {"n_points", fit.n_points},
         {"model", "L(N) = a * N^b + c"},
         {"predictions", table}};
  out << j.dump(2) << "\n";
  return kOk;
}

inline int cmd_scaling_curve(const std::vector<std::string>& presets,
                             const std::vector<double>& losses,
                             const std::vector<std::string>& modes,
                             const std::string& node, std::size_t seq_len,
                             std::ostream& out) {
  if (presets.size() != losses.size())
    throw ConfigError("--models and --losses differ in length");
  std::vector<ModelDims> dims;
  for (const auto& name : presets) dims.push_back(find_preset(name).dims);
  std::vector<CurvePoint> all;
  for (const auto& m : modes) {
    const auto series = loss_vs_energy_curve(dims, losses, parse_energy_mode(m),
                                             parse_node(node), seq_len,
                                             EnergyProfile::standard(), presets);
    all.insert(all.end(), series.begin(), series.end());
  }
  out << curve_csv(all);
  return kOk;
}

// ---------------------------------------------------------------------------

inline int run_cli(const std::vector<std::string>& args, std::ostream& out) {
  CLI::App app{"1-bit transformer training, export and analysis"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kCodeVersion);

  TrainOptions train;
  auto* c_train = app.add_subcommand("train", "train a model on a byte corpus");
  c_train->add_option("--config", train.config, "JSON run config")->required();
  c_train->add_option("--corpus", train.corpus, "training corpus")->required();
  c_train->add_option("--out", train.out, "output directory")->required();
  c_train->add_option("--mode", train.mode, "fp or bitnet")
      ->check(CLI::IsMember({"fp", "bitnet"}));
  c_train->add_option("--seed", train.seed, "override train.seed");
  c_train->add_option("--steps", train.steps, "override train.total_updates");

  std::string ckpt, corpus, out_path;
  auto* c_eval = app.add_subcommand("eval", "perplexity of a checkpoint");
  c_eval->add_option("--ckpt", ckpt)->required();
  c_eval->add_option("--corpus", corpus)->required();

  auto* c_export =
      app.add_subcommand("export", "write a packed inference checkpoint");
  c_export->add_option("--ckpt", ckpt)->required();
  c_export->add_option("--out", out_path)->required();

  EnergyOptions energy;
  auto* c_energy = app.add_subcommand("energy", "arithmetic energy report");
  c_energy->add_option("--preset", energy.preset, "125M..30B or custom");
  c_energy->add_option("--d-model", energy.d_model);
  c_energy->add_option("--n-layers", energy.n_layers);
  c_energy->add_option("--d-ff", energy.d_ff, "0: 4 x d_model");
  c_energy->add_option("--mode", energy.mode)
      ->check(CLI::IsMember({"fp32", "fp16", "bitnet"}));
  c_energy->add_option("--node", energy.node)
      ->check(CLI::IsMember({"45nm", "7nm"}));
  c_energy->add_option("--seq-len", energy.seq_len);
  c_energy->add_option("--format", energy.format)
      ->check(CLI::IsMember({"json", "csv"}));
  c_energy->add_flag("--table", energy.table,
                     "6.7B/13B/30B table over all modes and nodes");

  SweepOptions sweep;
  auto* c_sweep = app.add_subcommand("sweep-lr", "learning-rate stability sweep");
  c_sweep->add_option("--config", sweep.config)->required();
  c_sweep->add_option("--lrs", sweep.lrs, "comma separated")
      ->required()
      ->delimiter(',');
  c_sweep->add_option("--corpus", sweep.corpus)->required();
  c_sweep->add_option("--seeds", sweep.seeds)->delimiter(',');
  c_sweep->add_option("--steps", sweep.steps);
  c_sweep->add_option("--out", sweep.out, "output directory");

  std::string points;
  std::vector<double> predict_at;
  auto* c_scaling = app.add_subcommand("scaling", "scaling-law tools");
  c_scaling->require_subcommand(1);
  auto* c_fit = c_scaling->add_subcommand("fit", "fit L(N) = a N^b + c");
  c_fit->add_option("--points", points, "CSV with n,loss")->required();
  c_fit->add_option("--predict", predict_at, "extra N values")->delimiter(',');

  std::vector<std::string> curve_models, curve_modes{"fp16", "bitnet"};
  std::vector<double> curve_losses;
  std::string curve_node = "7nm";
  std::size_t curve_seq = 512;
  auto* c_curve =
      c_scaling->add_subcommand("curve", "loss against inference energy (CSV)");
  c_curve->add_option("--models", curve_models, "presets, comma separated")
      ->required()
      ->delimiter(',');
  c_curve->add_option("--losses", curve_losses, "one loss per model")
      ->required()
      ->delimiter(',');
  c_curve->add_option("--modes", curve_modes)->delimiter(',');
  c_curve->add_option("--node", curve_node)->check(CLI::IsMember({"45nm", "7nm"}));
  c_curve->add_option("--seq-len", curve_seq);

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  const std::string command_line = join_args(args);
  auto log = logger();
  try {
    if (*c_train) return cmd_train(train, command_line, out);
    if (*c_eval) return cmd_eval(ckpt, corpus, out);
    if (*c_export) return cmd_export(ckpt, out_path, out);
    if (*c_energy) return cmd_energy(energy, out);
    if (*c_sweep) return cmd_sweep(sweep, command_line, out);
    if (*c_fit) return cmd_scaling_fit(points, predict_at, out);
    if (*c_curve)
      return cmd_scaling_curve(curve_models, curve_losses, curve_modes,
                               curve_node, curve_seq, out);
  } catch (const DivergenceError& e) {
    log->error("{}", e.what());
    return kDivergence;
  } catch (const ConfigError& e) {
    log->error("{}", e.what());
    return kConfig;
  } catch (const ContractError& e) {
    log->error("{}", e.what());
    return kConfig;
  } catch (const IoError& e) {
    log->error("{}", e.what());
    return kIo;
  } catch (const FormatError& e) {
    log->error("{}", e.what());
    return kIo;
  } catch (const FitError& e) {
    log->error("{}", e.what());
    return kFit;
  } catch (const std::exception& e) {
    log->error("internal error: {}", e.what());
    return kInternal;
  }
  return kInternal;
}

}  // namespace bitnet::cli
