#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>

#include "drformer/bias_analysis.hpp"
#include "drformer/checkpoint.hpp"
#include "drformer/config.hpp"
#include "drformer/errors.hpp"
#include "drformer/experiments.hpp"
#include "drformer/train.hpp"

namespace drformer {

namespace fs = std::filesystem;

namespace {

struct GlobalOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string profile;
  std::string out = "out";
};

RunConfig resolve_config(const GlobalOptions& g) {
  RunConfig cfg = g.config.empty() ? profile_config(g.profile) : load_config(g.config, g.profile);
  if (g.seed) cfg.seed = *g.seed;
  cfg.validate(true);
  return cfg;
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  return os;
}

// Model for commands that read a trained state; a missing checkpoint means
// the seed-initialized model.
std::unique_ptr<DRFormer> model_for(const RunConfig& cfg, const Dataset& data, const std::string& checkpoint,
                                    std::ostream& err) {
  auto model = std::make_unique<DRFormer>(build_model_config(cfg, data), model_init_seed(cfg.seed));
  if (checkpoint.empty()) {
    err << "note: no checkpoint given, using the seed-initialized model\n";
  } else {
    load_checkpoint(checkpoint, *model);
  }
  return model;
}

int cmd_train(const GlobalOptions& g, const std::string& resume, std::size_t steps, std::ostream& out) {
  RunConfig cfg = resolve_config(g);
  if (steps) {
    cfg.steps = steps;
    cfg.epochs = 0;
  }
  const fs::path dir = g.out;
  fs::create_directories(dir);
  {
    auto os = open_out(dir / "config.ini");
    write_config(os, cfg);
  }
  auto data = std::make_shared<const Dataset>(load_dataset(cfg));
  Trainer trainer(cfg, data);
  const auto mode = resume.empty() ? std::ios::trunc : std::ios::app;
  if (!resume.empty()) trainer.restore(resume);
  std::ofstream step_log(dir / "train_log.tsv", std::ios::out | mode);
  std::ofstream epoch_log(dir / "epoch_log.tsv", std::ios::out | mode);
  trainer.run({&step_log, &epoch_log}, 0, dir);

  const auto metrics = evaluate_model(trainer.model(), *data, cfg.normalize_features);
  {
    auto os = open_out(dir / "metrics.txt");
    write_metrics(os, metrics);
  }
  const auto& last = trainer.history().empty() ? StepRecord{} : trainer.history().back();
  out << "trained " << trainer.step() << " steps, final loss " << last.loss.total << "\n";
  if (!trainer.epochs().empty()) {
    const auto& e = trainer.epochs().back().accuracy;
    out << "acc_D=" << e.dino << " acc_C=" << e.clip << " gap=" << e.gap() << "\n";
  }
  write_metrics(out, metrics, 5);
  out << "checkpoint: " << (dir / "model.ckpt").string() << "\n";
  return 0;
}

int cmd_eval(GlobalOptions g, const std::string& checkpoint, const std::string& features, const std::string& logits,
             bool train_split, bool normalize, std::ostream& out, std::ostream& err) {
  RunConfig cfg = resolve_config(g);
  if (!features.empty()) {
    cfg.source = DataSource::features;
    cfg.features_path = features;
    cfg.validate(true);
  }
  const auto data = load_dataset(cfg);
  auto model = model_for(cfg, data, checkpoint, err);
  normalize = normalize || cfg.normalize_features;
  const auto split = retrieval_records(data, train_split);
  const auto dm = retrieval_distances(*model, data, split, normalize);
  const auto metrics = evaluate(dm);
  const fs::path dir = g.out;
  {
    auto os = open_out(dir / "metrics.txt");
    write_metrics(os, metrics);
  }
  write_metrics(out, metrics);
  out << "random_baseline_mAP=" << random_ranking_map(dm, 100, cfg.seed) << "\n";
  if (!logits.empty()) {
    auto os = open_out(logits);
    write_branch_logits(os, dump_branch_logits(*model, data, cfg.loss.label_smoothing_eps));
    out << "branch logits: " << logits << "\n";
  }
  return 0;
}

int cmd_ablate(const GlobalOptions& g, std::size_t steps, std::ostream& out) {
  RunConfig cfg = resolve_config(g);
  if (steps) {
    cfg.steps = steps;
    cfg.epochs = 0;
  }
  const auto rows = ablate(cfg, &out);
  auto os = open_out(fs::path(g.out) / "ablation.txt");
  write_ablation_table(os, rows);
  write_ablation_summary(os, rows);
  write_ablation_table(out, rows);
  write_ablation_summary(out, rows);
  return 0;
}

int cmd_analyze_bias(const GlobalOptions& g, const std::string& logits, double noise_var, std::ostream& out) {
  std::ifstream in(logits);
  if (!in) throw ConfigError("cannot open branch-logit dump " + logits);
  const auto dump = read_branch_logits(in);
  const auto samples = dump.samples();
  const auto report = analyze_bias(samples, noise_var);
  write_report(out, report);
  if (!g.out.empty()) {
    auto os = open_out(fs::path(g.out) / "bias_report.txt");
    write_report(os, report);
  }
  return 0;
}

int cmd_dump_attention(const GlobalOptions& g, const std::string& checkpoint, std::size_t sample, std::ostream& out,
                       std::ostream& err) {
  const RunConfig cfg = resolve_config(g);
  const auto data = load_dataset(cfg);
  auto model = model_for(cfg, data, checkpoint, err);
  const auto maps = attention_maps(*model, data, sample);
  auto os = open_out(fs::path(g.out) / "attention.txt");
  write_attention(os, maps);
  write_attention(out, maps);
  return 0;
}

int cmd_gen_data(const GlobalOptions& g, bool ppm, std::ostream& out) {
  const RunConfig cfg = resolve_config(g);
  if (cfg.source != DataSource::synthetic) throw ConfigError("gen-data needs data.source = synthetic");
  auto m = generate_synthetic(cfg.synthetic);
  const fs::path dir = g.out;
  fs::create_directories(dir);
  if (ppm) {
    fs::create_directories(dir / "images");
    for (std::size_t i = 0; i < m.records.size(); ++i) {
      const fs::path rel = fs::path("images") / ("img_" + std::to_string(i) + ".ppm");
      write_ppm(dir / rel, load_sample(m, i).image);
      m.records[i].payload = rel.string();
    }
  }
  auto os = open_out(dir / "manifest.txt");
  write_manifest(os, m);
  out << "wrote " << m.records.size() << " records to " << (dir / "manifest.txt").string() << "\n";
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"DRFormer person re-identification: training, evaluation and analysis", "drformer"};
  app.require_subcommand(1);
  GlobalOptions g;
  std::uint64_t seed = 0;
  auto* seed_opt = app.add_option("--seed", seed, "Run seed (overrides the config)");
  app.add_option("--config", g.config, "Config file ([section] key = value)")->check(CLI::ExistingFile);
  app.add_option("--profile", g.profile, "Base profile")->check(CLI::IsMember({"desk", "paper"}));
  app.add_option("--out", g.out, "Output directory");
  app.fallthrough();

  std::string checkpoint, resume, features, logits;
  std::size_t steps = 0, sample = 0;
  double noise_var = 0.0;
  bool train_split = false, normalize = false, ppm = false;

  auto* train = app.add_subcommand("train", "Train a model and write logs, checkpoint and metrics");
  train->add_option("--resume", resume, "Continue from a checkpoint")->check(CLI::ExistingFile);
  train->add_option("--steps", steps, "Override the number of training steps");

  auto* eval = app.add_subcommand("eval", "Evaluate retrieval on the query/gallery split");
  eval->add_option("--checkpoint", checkpoint, "Model checkpoint")->check(CLI::ExistingFile);
  eval->add_option("--features", features, "Feature file standing in for the encoders")->check(CLI::ExistingFile);
  eval->add_option("--logits", logits, "Also write the per-sample branch-logit dump here");
  eval->add_flag("--train-split", train_split, "Score a retrieval split of the training records");
  eval->add_flag("--normalize", normalize, "L2-normalize features before ranking");

  auto* abl = app.add_subcommand("ablate", "Run the 12-run ablation grid and print the table");
  abl->add_option("--steps", steps, "Override the number of training steps per run");

  auto* bias = app.add_subcommand("analyze-bias", "Bias-variance analysis of a branch-logit dump");
  bias->add_option("--logits", logits, "Branch-logit dump from eval --logits")->required()->check(CLI::ExistingFile);
  bias->add_option("--noise-var", noise_var, "Irreducible noise variance");

  auto* attn = app.add_subcommand("dump-attention", "Write head-averaged attention matrices of one sample");
  attn->add_option("--checkpoint", checkpoint, "Model checkpoint")->check(CLI::ExistingFile);
  attn->add_option("--sample", sample, "Manifest record index");

  auto* gen = app.add_subcommand("gen-data", "Write the synthetic corpus as a manifest");
  gen->add_flag("--ppm", ppm, "Render images to PPM files referenced by the manifest");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }
  if (*seed_opt) g.seed = seed;

  try {
    if (*train) return cmd_train(g, resume, steps, out);
    if (*eval) return cmd_eval(g, checkpoint, features, logits, train_split, normalize, out, err);
    if (*abl) return cmd_ablate(g, steps, out);
    if (*bias) return cmd_analyze_bias(g, logits, noise_var, out);
    if (*attn) return cmd_dump_attention(g, checkpoint, sample, out, err);
    if (*gen) return cmd_gen_data(g, ppm, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace drformer
