#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "drformer/checkpoint.hpp"
#include "drformer/config.hpp"
#include "drformer/errors.hpp"
#include "drformer/grad_check.hpp"
#include "drformer/model.hpp"
#include "drformer/ops.hpp"
#include "drformer/optim.hpp"
#include "drformer/train.hpp"
#include "fixtures.hpp"
#include "probes.hpp"

using namespace drformer;

namespace {

struct TinySetup {
  RunConfig cfg = fixture::tiny_config();
  std::shared_ptr<Dataset> data = std::make_shared<Dataset>(load_dataset(cfg));
};

std::string log_of(Trainer& t, std::size_t until) {
  std::ostringstream steps, epochs;
  t.run({&steps, &epochs}, until);
  return steps.str() + "--\n" + epochs.str();
}

}  // namespace

// -- model ----------------------------------------------------------------

TEST(Model, ForwardShapes) {
  TinySetup s;
  DRFormer m(build_model_config(s.cfg, *s.data), 1);
  const auto out = forward_record(m, *s.data, 0);
  EXPECT_EQ(out.dino.token_features.shape(), (Shape{2, 8}));
  EXPECT_EQ(out.dino.patch_features.shape(), (Shape{2, 8}));
  EXPECT_EQ(out.fused.h_dc.shape(), (Shape{2, 8}));
  EXPECT_EQ(out.pooled.z_cd.shape(), (Shape{8}));
  const std::vector<std::size_t> recs = {0, 1, 2};
  const auto batch = forward_records(m, *s.data, recs);
  EXPECT_EQ(batch.logits.shape(), (Shape{3, 3}));
  EXPECT_EQ(retrieval_features(m, *s.data, recs).shape(), (Shape{3, 16}));
}

TEST(Model, BatchRowsMatchSingleForwards) {
  TinySetup s;
  DRFormer m(build_model_config(s.cfg, *s.data), 2);
  const std::vector<std::size_t> recs = {4, 0, 9};
  const auto batch = forward_records(m, *s.data, recs);
  const Tensor feats = retrieval_features(m, *s.data, recs);
  for (std::size_t i = 0; i < recs.size(); ++i) {
    const auto one = forward_record(m, *s.data, recs[i]);
    const Tensor logits = classify(one.pooled.z_dc, one.pooled.z_cd, m.classifier());
    for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(batch.logits.at(i, j), logits[j]);
    for (std::size_t j = 0; j < 8; ++j) {
      EXPECT_EQ(feats.at(i, j), one.pooled.z_dc[j]);
      EXPECT_EQ(feats.at(i, 8 + j), one.pooled.z_cd[j]);
    }
  }
}

TEST(Model, SameSeedSameWeightsDifferentSeedDifferent) {
  TinySetup s;
  const auto mc = build_model_config(s.cfg, *s.data);
  DRFormer a(mc, 5), b(mc, 5), c(mc, 6);
  EXPECT_EQ(parameter_checksum(a), parameter_checksum(b));
  EXPECT_NE(parameter_checksum(a), parameter_checksum(c));
}

TEST(Model, StateNamesAreUnique) {
  TinySetup s;
  DRFormer m(build_model_config(s.cfg, *s.data), 1);
  std::set<std::string> names;
  for (const auto& p : m.state()) EXPECT_TRUE(names.insert(p.name).second) << p.name;
  EXPECT_GT(names.size(), 20u);
}

TEST(Model, FrozenEncodersDropOutOfTrainingAndStayFixed) {
  TinySetup s;
  s.cfg.model.freeze_encoders = true;
  Trainer t(s.cfg, s.data);
  for (const auto& p : t.model().trainable()) {
    EXPECT_NE(p.name.rfind("dino", 0), 0u) << p.name;
    EXPECT_NE(p.name.rfind("clip", 0), 0u) << p.name;
  }
  const std::vector<double> before(t.model().dino().tokens().values.data().begin(),
                                   t.model().dino().tokens().values.data().end());
  const std::vector<double> clf_before(t.model().classifier().weight.data().begin(),
                                       t.model().classifier().weight.data().end());
  t.train_step();
  const auto after = t.model().dino().tokens().values.data();
  EXPECT_TRUE(std::equal(before.begin(), before.end(), after.begin()));
  const auto clf_after = t.model().classifier().weight.data();
  EXPECT_FALSE(std::equal(clf_before.begin(), clf_before.end(), clf_after.begin()));
}

TEST(Model, ConfigRejectsMismatchedTokenCounts) {
  TinySetup s;
  auto mc = build_model_config(s.cfg, *s.data);
  mc.clip.n_learnable_tokens = 3;
  EXPECT_THROW(DRFormer(mc, 0), ConfigError);
}

TEST(Model, ZeroWeightRegularizersAreReportedButNotRecorded) {
  TinySetup s;
  DRFormer m(build_model_config(s.cfg, *s.data), 3);
  const auto batch = pk_sample(s.data->manifest, 3, 2, 7);
  const auto classes = s.data->class_of_pid();
  std::vector<std::size_t> labels;
  for (auto pid : batch.pids) labels.push_back(classes[pid]);

  auto run = [&](const LossWeights& w, LossBreakdown& out) {
    Tape tape;
    RecordingGuard guard(tape);
    const auto fwd = forward_records(m, *s.data, batch.indices);
    out = total_loss(batch_loss_parts(fwd, m.classifier(), labels, w), w).breakdown;
    return tape.count_scope("intra_loss") + tape.count_scope("inter_loss");
  };
  LossWeights on, off;
  off.lambda1 = off.lambda2 = 0.0;
  LossBreakdown b_on, b_off;
  EXPECT_GT(run(on, b_on), 0u);
  EXPECT_EQ(run(off, b_off), 0u);
  EXPECT_EQ(b_on.intra_loss, b_off.intra_loss);
  EXPECT_EQ(b_on.inter_loss, b_off.inter_loss);
  EXPECT_NE(b_off.intra_loss, 0.0);
  EXPECT_EQ(b_off.total, b_off.id_loss + b_off.triplet_loss);
}

TEST(Model, EndToEndGradientMatchesFiniteDifferences) {
  TinySetup s;
  s.cfg.synthetic.num_ids = 4;
  s.cfg.synthetic.train_ids = 2;
  s.cfg.synthetic.per_id = 4;
  s.data = std::make_shared<Dataset>(load_dataset(s.cfg));
  DRFormer m(build_model_config(s.cfg, *s.data), 4);
  const auto batch = pk_sample(s.data->manifest, 2, 2, 1);
  const auto classes = s.data->class_of_pid();
  std::vector<std::size_t> labels;
  for (auto pid : batch.pids) labels.push_back(classes[pid]);
  const LossWeights w;
  auto params = m.trainable();
  std::vector<Tensor> leaves;
  for (auto& p : params) leaves.push_back(p.tensor);
  GradCheckOptions opt;
  opt.entries_per_leaf = 3;
  opt.seed = 9;
  const auto report = grad_check(
      [&] {
        const auto fwd = forward_records(m, *s.data, batch.indices);
        return total_loss(batch_loss_parts(fwd, m.classifier(), labels, w), w).total;
      },
      leaves, opt);
  EXPECT_TRUE(report.passed) << report.max_rel_error << " at leaf " << params[report.worst_leaf].name;
}

TEST(BranchAccuracy, CountsArgmaxHitsPerBranch) {
  LinearClassifier clf;
  // K = 2, F = 1: logits = [w_d z_dc + w_c z_cd] with W = [[1, 1], [-1, -1]].
  clf.weight = Tensor({2, 2}, {1.0, 1.0, -1.0, -1.0});
  clf.bias = Tensor::zeros({2});
  Tensor zd({3, 1}, {1.0, 1.0, -1.0});
  Tensor zc({3, 1}, {-1.0, -1.0, -1.0});
  const std::vector<std::size_t> labels = {0, 1, 1};
  const auto acc = branch_accuracy(zd, zc, clf, labels);
  EXPECT_NEAR(acc.dino, 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(acc.clip, 2.0 / 3.0, 1e-15);
  const std::vector<std::size_t> zeros = {0, 0, 0};
  const auto b = branch_accuracy(zd, zc, clf, zeros);
  EXPECT_NEAR(b.dino, 2.0 / 3.0, 1e-15);
  EXPECT_EQ(b.clip, 0.0);
  EXPECT_NEAR(b.gap(), 2.0 / 3.0, 1e-15);
}

// -- optimizer ------------------------------------------------------------

TEST(Adam, TwoStepsMatchHandComputation) {
  Tensor w({2}, {1.0, -2.0}, true);
  AdamConfig c;
  c.lr = 0.1;
  Adam opt({{"w", w}}, c);
  const double g1[] = {0.5, -3.0}, g2[] = {1.0, 1.0};
  double m[2] = {0, 0}, v[2] = {0, 0}, x[2] = {1.0, -2.0};
  for (int step = 1; step <= 2; ++step) {
    const double* g = step == 1 ? g1 : g2;
    opt.zero_grad();
    for (int j = 0; j < 2; ++j) w.mutable_grad()[j] = g[j];
    opt.step();
    for (int j = 0; j < 2; ++j) {
      m[j] = 0.9 * m[j] + 0.1 * g[j];
      v[j] = 0.999 * v[j] + 0.001 * g[j] * g[j];
      const double mh = m[j] / (1 - std::pow(0.9, step)), vh = v[j] / (1 - std::pow(0.999, step));
      x[j] -= 0.1 * mh / (std::sqrt(vh) + 1e-8);
      EXPECT_NEAR(w[j], x[j], 1e-15);
    }
  }
  EXPECT_EQ(opt.steps_taken(), 2u);
}

TEST(Adam, RejectsBadSettings) {
  AdamConfig c;
  c.lr = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.beta1 = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
}

// -- config ---------------------------------------------------------------

TEST(Config, PaperProfileCarriesPublishedSettings) {
  const auto c = profile_config("paper");
  EXPECT_EQ(c.optim.lr, 5e-6);
  EXPECT_EQ(c.epochs, 70u);
  EXPECT_EQ(c.loss.lambda1, 0.5);
  EXPECT_EQ(c.loss.lambda2, 5.0);
  EXPECT_EQ(c.tokens(), 2u);
  EXPECT_EQ(c.model.fusion.cross_layers, 1u);
  EXPECT_EQ(c.model.fusion.self_layers, 2u);
  EXPECT_EQ(c.model.dino.image_height, 252u);
  EXPECT_EQ(c.model.dino.image_width, 126u);
  EXPECT_EQ(c.model.clip.image_height, 256u);
  EXPECT_EQ(c.model.clip.image_width, 128u);
  EXPECT_EQ(c.model.dino.embed_dim, 768u);
  EXPECT_EQ(c.model.clip.depth, 12u);
  EXPECT_NO_THROW(c.validate());
}

TEST(Config, DeskProfileDefaults) {
  const auto c = profile_config("desk");
  EXPECT_EQ(c.optim.lr, 1e-3);
  EXPECT_LE(c.steps, 200u);
  EXPECT_EQ(c.optim.beta1, 0.9);
  EXPECT_EQ(c.optim.beta2, 0.999);
  EXPECT_EQ(c.optim.eps, 1e-8);
  EXPECT_EQ(c.loss.margin_alpha, 0.3);
  EXPECT_EQ(c.loss.label_smoothing_eps, 0.1);
  EXPECT_NO_THROW(c.validate());
  EXPECT_THROW(profile_config("huge"), ConfigError);
}

TEST(Config, ParsesSectionsAndOverridesProfile) {
  std::istringstream in(
      "# comment\n[run]\nprofile = paper\nseed = 42\n\n[loss]\nlambda_inter = 0.25  # trailing\n"
      "[fusion]\npool = first_token\n[ablation]\ndisable_intra = true\n[model]\ntokens = 3\n");
  const auto c = parse_config(in);
  EXPECT_EQ(c.profile, "paper");
  EXPECT_EQ(c.optim.lr, 5e-6);
  EXPECT_EQ(c.seed, 42u);
  EXPECT_EQ(c.loss.lambda1, 0.25);
  EXPECT_EQ(c.model.fusion.pool, PoolMode::first_token);
  EXPECT_EQ(c.effective_loss().lambda2, 0.0);
  EXPECT_EQ(c.model.dino.n_learnable_tokens, 3u);
  EXPECT_EQ(c.model.clip.n_learnable_tokens, 3u);
}

TEST(Config, OverrideProfileWinsOverFile) {
  std::istringstream in("[run]\nprofile = paper\n");
  EXPECT_EQ(parse_config(in, {}, "desk").optim.lr, 1e-3);
}

TEST(Config, ErrorsNameTheLine) {
  auto fails_on = [](const std::string& text) -> std::size_t {
    std::istringstream in(text);
    try {
      parse_config(in);
    } catch (const ParseError& e) {
      return e.line();
    }
    return 0;
  };
  EXPECT_EQ(fails_on("[train]\nsteps = 3\nbogus = 1\n"), 3u);
  EXPECT_EQ(fails_on("steps = 3\n"), 1u);
  EXPECT_EQ(fails_on("[train]\n\nsteps = many\n"), 3u);
  EXPECT_EQ(fails_on("[train\n"), 1u);
  EXPECT_EQ(fails_on("[ablation]\ndisable_fusion = maybe\n"), 2u);
  EXPECT_EQ(fails_on("[data]\nsource = s3\n"), 2u);
  EXPECT_EQ(fails_on("[train]\nsteps\n"), 2u);
}

TEST(Config, WriteParseRoundTrip) {
  RunConfig c = fixture::tiny_config();
  c.loss.lambda1 = 0.123456789012345;
  c.disable_fusion = true;
  c.model.fusion.shared_weights = false;
  std::ostringstream first;
  write_config(first, c);
  std::istringstream in(first.str());
  std::ostringstream second;
  write_config(second, parse_config(in));
  EXPECT_EQ(first.str(), second.str());
  for (const auto& key : config_keys()) {
    if (key == "data.manifest" || key == "data.features") continue;  // unset paths are omitted
    const auto name = key.substr(key.find('.') + 1);
    EXPECT_NE(first.str().find(name + " = "), std::string::npos) << key;
  }
}

TEST(Config, ValidationCatchesBadRanges) {
  RunConfig c = fixture::tiny_config();
  c.p = 1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = fixture::tiny_config();
  c.p = 4;  // only three training identities
  EXPECT_THROW(c.validate(), ConfigError);
  c = fixture::tiny_config();
  c.loss.label_smoothing_eps = 1.5;
  EXPECT_THROW(c.validate(), ConfigError);
  c = fixture::tiny_config();
  c.model.fusion.fusion_dim = 7;  // not divisible by two heads
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Config, LoadResolvesRelativePathsAndChecksExistence) {
  const auto dir = fixture::temp_dir("config_paths");
  {
    std::ofstream(dir / "run.ini") << "[data]\nsource = manifest\nmanifest = data/m.txt\n";
  }
  EXPECT_THROW(load_config(dir / "run.ini"), ConfigError);
  std::filesystem::create_directories(dir / "data");
  std::ofstream(dir / "data" / "m.txt") << "x\n";
  const auto c = load_config(dir / "run.ini");
  EXPECT_EQ(c.manifest_path, dir / "data" / "m.txt");
  EXPECT_THROW(load_config(dir / "missing.ini"), ConfigError);
}

// -- checkpoint -----------------------------------------------------------

TEST(Checkpoint, RoundTripIsBitExact) {
  TinySetup s;
  Trainer a(s.cfg, s.data);
  a.train_step();
  a.train_step();
  const auto dir = fixture::temp_dir("ckpt_roundtrip");
  a.save(dir / "a.ckpt");
  Trainer b(s.cfg, s.data);
  b.restore(dir / "a.ckpt");
  EXPECT_EQ(b.step(), 2u);
  EXPECT_EQ(parameter_checksum(a.model()), parameter_checksum(b.model()));
  EXPECT_EQ(a.optimizer().first_moments(), b.optimizer().first_moments());
  EXPECT_EQ(a.optimizer().second_moments(), b.optimizer().second_moments());
  EXPECT_EQ(b.optimizer().steps_taken(), 2u);
}

TEST(Checkpoint, ShapeMismatchIsACheckpointError) {
  TinySetup s;
  const auto dir = fixture::temp_dir("ckpt_mismatch");
  DRFormer m(build_model_config(s.cfg, *s.data), 1);
  save_checkpoint(dir / "m.ckpt", m, nullptr, {0, 0, false});
  auto wider = build_model_config(s.cfg, *s.data);
  wider.fusion.fusion_dim = 16;
  DRFormer w(wider, 1);
  try {
    load_checkpoint(dir / "m.ckpt", w);
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_NE(std::string(e.what()).find("shape"), std::string::npos) << e.what();
  }
  // A failed load leaves the target untouched.
  DRFormer fresh(wider, 1);
  EXPECT_EQ(parameter_checksum(w), parameter_checksum(fresh));

  auto more_tokens = build_model_config(s.cfg, *s.data);
  more_tokens.dino.n_learnable_tokens = more_tokens.clip.n_learnable_tokens = 3;
  DRFormer t(more_tokens, 1);
  EXPECT_THROW(load_checkpoint(dir / "m.ckpt", t), CheckpointError);

  Adam opt(m.trainable(), {});
  EXPECT_THROW(load_checkpoint(dir / "m.ckpt", m, &opt), CheckpointError);  // saved without optimizer
}

TEST(Checkpoint, CorruptFilesAreRejected) {
  TinySetup s;
  const auto dir = fixture::temp_dir("ckpt_corrupt");
  DRFormer m(build_model_config(s.cfg, *s.data), 1);
  EXPECT_THROW(load_checkpoint(dir / "absent.ckpt", m), CheckpointError);
  std::ofstream(dir / "junk.ckpt") << "not a checkpoint at all";
  EXPECT_THROW(load_checkpoint(dir / "junk.ckpt", m), CheckpointError);
  save_checkpoint(dir / "good.ckpt", m, nullptr, {3, 4, false});
  const auto size = std::filesystem::file_size(dir / "good.ckpt");
  std::filesystem::resize_file(dir / "good.ckpt", size / 2);
  EXPECT_THROW(load_checkpoint(dir / "good.ckpt", m), CheckpointError);
}

TEST(Checkpoint, RestoreRejectsForeignSeed) {
  TinySetup s;
  const auto dir = fixture::temp_dir("ckpt_seed");
  Trainer a(s.cfg, s.data);
  a.save(dir / "a.ckpt");
  RunConfig other = s.cfg;
  other.seed = s.cfg.seed + 1;
  Trainer b(other, s.data);
  EXPECT_THROW(b.restore(dir / "a.ckpt"), CheckpointError);
}

// -- trainer --------------------------------------------------------------

TEST(Trainer, EpochLengthAndTotalSteps) {
  TinySetup s;
  Trainer t(s.cfg, s.data);
  EXPECT_EQ(t.steps_per_epoch(), 3u);  // 18 training records, batches of 6
  EXPECT_EQ(t.total_steps(), 6u);
  s.cfg.epochs = 5;
  EXPECT_EQ(Trainer(s.cfg, s.data).total_steps(), 15u);
}

TEST(Trainer, IdenticalRunsGiveIdenticalLogsAndWeights) {
  TinySetup s;
  Trainer a(s.cfg, s.data), b(s.cfg, s.data);
  const auto la = log_of(a, 0), lb = log_of(b, 0);
  EXPECT_EQ(la, lb);
  EXPECT_EQ(parameter_checksum(a.model()), parameter_checksum(b.model()));
  RunConfig other = s.cfg;
  other.seed = 12;
  Trainer c(other, s.data);
  EXPECT_NE(log_of(c, 0), la);
}

TEST(Trainer, ResumedRunMatchesUninterruptedRun) {
  TinySetup s;
  const auto dir = fixture::temp_dir("trainer_resume");
  Trainer full(s.cfg, s.data);
  std::ostringstream full_log;
  full.run({&full_log, nullptr});

  Trainer first(s.cfg, s.data);
  std::ostringstream resumed_log;
  first.run({&resumed_log, nullptr}, 2);
  first.save(dir / "mid.ckpt");
  Trainer second(s.cfg, s.data);
  second.restore(dir / "mid.ckpt");
  second.run({&resumed_log, nullptr});
  EXPECT_EQ(resumed_log.str(), full_log.str());
  EXPECT_EQ(parameter_checksum(second.model()), parameter_checksum(full.model()));
}

TEST(Trainer, LogsHaveTheDocumentedColumns) {
  TinySetup s;
  Trainer t(s.cfg, s.data);
  std::ostringstream steps, epochs;
  t.run({&steps, &epochs});
  std::istringstream sl(steps.str()), el(epochs.str());
  std::string line;
  std::getline(sl, line);
  EXPECT_EQ(line, "step\tL_ID\tL_Tri\tL_intra\tL_inter\ttotal");
  std::size_t n = 0;
  while (std::getline(sl, line)) {
    ++n;
    const auto cols = std::count(line.begin(), line.end(), '\t');
    EXPECT_EQ(cols, 5);
    EXPECT_EQ(line.substr(0, line.find('\t')), std::to_string(n));
  }
  EXPECT_EQ(n, 6u);
  std::getline(el, line);
  EXPECT_EQ(line, "epoch\tstep\tacc_D\tacc_C\tgap");
  n = 0;
  while (std::getline(el, line)) ++n;
  EXPECT_EQ(n, 2u);
  ASSERT_EQ(t.epochs().size(), 2u);
  for (const auto& e : t.epochs()) {
    EXPECT_GE(e.accuracy.dino, 0.0);
    EXPECT_LE(e.accuracy.clip, 1.0);
    EXPECT_EQ(e.accuracy.gap(), std::abs(e.accuracy.dino - e.accuracy.clip));
  }
  EXPECT_EQ(t.epochs().back().epoch, 2u);
}

TEST(Trainer, TotalMatchesWeightedBreakdown) {
  TinySetup s;
  Trainer t(s.cfg, s.data);
  const auto r = t.train_step().loss;
  const double expected = r.id_loss + r.triplet_loss + 0.5 * r.inter_loss + 5.0 * r.intra_loss;
  EXPECT_NEAR(r.total, expected, 1e-12 * std::abs(expected));
}

TEST(Trainer, ConcatBaselineHasNoRegularizerNodes) {
  TinySetup s;
  s.cfg.disable_fusion = s.cfg.disable_intra = s.cfg.disable_inter = true;
  Trainer t(s.cfg, s.data);
  EXPECT_FALSE(t.model().config().fusion.enabled);
  t.train_step();
  EXPECT_EQ(t.last_regularizer_nodes(), 0u);
  s.cfg.disable_intra = false;
  Trainer u(s.cfg, s.data);
  u.train_step();
  EXPECT_GT(u.last_regularizer_nodes(), 0u);
}

TEST(Trainer, DivergenceKeepsLastGoodCheckpoint) {
  TinySetup s;
  const auto dir = fixture::temp_dir("trainer_diverge");
  Trainer t(s.cfg, s.data);
  t.run({}, 2);
  const auto good = parameter_checksum(t.model());
  // Poison every image so the next step's loss is NaN.
  for (auto& img : s.data->images)
    for (auto& v : img.mutable_data()) v = std::nan("");
  try {
    t.run({}, 4, dir);
    FAIL() << "expected divergence";
  } catch (const TrainingDivergenceError& e) {
    EXPECT_FALSE(e.term().empty());
  }
  EXPECT_EQ(t.step(), 2u);
  EXPECT_EQ(parameter_checksum(t.model()), good);
  ASSERT_TRUE(std::filesystem::exists(dir / "last_good.ckpt"));
  EXPECT_EQ(read_checkpoint_info(dir / "last_good.ckpt").step, 2u);
  DRFormer restored(t.model().config(), 0);
  load_checkpoint(dir / "last_good.ckpt", restored);
  EXPECT_EQ(parameter_checksum(restored), good);
}

TEST(Model, IntraLossAloneSeparatesIdenticallyInitializedTokens) {
  RunConfig cfg = profile_config("desk");
  const auto data = load_dataset(cfg);
  DRFormer m(build_model_config(cfg, data), model_init_seed(cfg.seed));
  const auto train = data.manifest.indices(Split::train);
  const auto r = probe::intra_descent(m, data, {train[0], train[1]}, 50, 1e-3);
  EXPECT_GT(r.before.dino, 0.9);
  EXPECT_GT(r.before.clip, 0.9);
  EXPECT_LT(r.after.dino, 0.5);
  EXPECT_LT(r.after.clip, 0.5);
}
