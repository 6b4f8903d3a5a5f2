#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "drformer/encoder.hpp"
#include "drformer/errors.hpp"
#include "drformer/grad_check.hpp"
#include "drformer/ops.hpp"
#include "oracles.hpp"

using namespace drformer;

namespace {

EncoderConfig tiny_config(std::size_t depth = 2, std::size_t n_tokens = 2) {
  EncoderConfig c;
  c.image_height = 8;
  c.image_width = 4;
  c.channels = 3;
  c.patch_size = 4;
  c.embed_dim = 8;
  c.depth = depth;
  c.heads = 2;
  c.n_learnable_tokens = n_tokens;
  return c;
}

Tensor random_image(const EncoderConfig& c, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> px(c.image_height * c.image_width * c.channels);
  for (auto& v : px) v = u(rng);
  return Tensor({c.image_height, c.image_width, c.channels}, std::move(px));
}

}  // namespace

TEST(EncoderConfig, PaperPatchGrids) {
  EXPECT_EQ(EncoderConfig::paper_dino().num_patches(), 162u);
  EXPECT_EQ(EncoderConfig::paper_clip().num_patches(), 128u);
  EXPECT_EQ(EncoderConfig::desk_dino().num_patches(), 8u);
  EXPECT_EQ(EncoderConfig::desk_clip().num_patches(), 8u);
  EXPECT_NO_THROW(EncoderConfig::paper_dino().validate());
  EXPECT_NO_THROW(EncoderConfig::paper_clip().validate());

  Tensor dino_image = Tensor::zeros({252, 126, 3});
  EXPECT_EQ(extract_patches(dino_image, 14).rows(), 162u);
  Tensor clip_image = Tensor::zeros({256, 128, 3});
  EXPECT_EQ(extract_patches(clip_image, 16).rows(), 128u);
}

TEST(EncoderConfig, RejectsBadGeometry) {
  auto c = tiny_config();
  c.image_height = 9;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny_config();
  c.heads = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  c = tiny_config();
  c.n_learnable_tokens = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(PatchEmbed, ZeroImageGivesPositionalEmbeddings) {
  std::mt19937_64 rng(3);
  VitEncoder enc(tiny_config(), 2, rng);
  Tensor out = enc.patch_embed(Tensor::zeros({8, 4, 3}));
  ASSERT_EQ(out.shape(), (Shape{2, 8}));
  for (std::size_t i = 0; i < out.size(); ++i) EXPECT_EQ(out[i], enc.positional()[i]);
}

TEST(PatchEmbed, RowIsProjectionOfFlattenedPatch) {
  std::mt19937_64 rng(4);
  const auto cfg = tiny_config();
  VitEncoder enc(cfg, 2, rng);
  Tensor img = random_image(cfg, rng);
  Tensor out = enc.patch_embed(img);
  // Patch 1 is the lower 4x4 block; flatten in (dy, dx, c) order.
  std::vector<double> flat;
  for (std::size_t dy = 0; dy < 4; ++dy)
    for (std::size_t dx = 0; dx < 4; ++dx)
      for (std::size_t ch = 0; ch < 3; ++ch) flat.push_back(img[((4 + dy) * 4 + dx) * 3 + ch]);
  for (std::size_t o = 0; o < 8; ++o) {
    double s = enc.projection().bias[o] + enc.positional().at(1, o);
    for (std::size_t i = 0; i < flat.size(); ++i) s += flat[i] * enc.projection().weight.at(i, o);
    EXPECT_NEAR(out.at(1, o), s, 1e-12);
  }
}

TEST(PatchEmbed, DimensionMismatchIsConfigError) {
  std::mt19937_64 rng(5);
  VitEncoder enc(tiny_config(), 2, rng);
  EXPECT_THROW(enc.patch_embed(Tensor::zeros({4, 8, 3})), ConfigError);
  EXPECT_THROW(enc.patch_embed(Tensor::zeros({8, 4, 1})), ConfigError);
}

TEST(InjectSie, ZeroTableIsIdentity) {
  std::mt19937_64 rng(6);
  LearnableTokens tokens{Tensor::randn({3, 5}, rng, 1.0)};
  CameraEmbeddingTable table{Tensor::zeros({4, 5})};
  auto out = inject_sie(tokens, 2, table);
  for (std::size_t i = 0; i < out.values.size(); ++i) EXPECT_EQ(out.values[i], tokens.values[i]);
}

TEST(InjectSie, OnlyFirstRowChanges) {
  std::mt19937_64 rng(7);
  LearnableTokens tokens{Tensor::randn({2, 6}, rng, 1.0)};
  CameraEmbeddingTable table{Tensor::randn({3, 6}, rng, 1.0)};
  auto out = inject_sie(tokens, 1, table);
  for (std::size_t c = 0; c < 6; ++c) {
    EXPECT_EQ(out.values.at(0, c), tokens.values.at(0, c) + table.embeddings.at(1, c));
    EXPECT_EQ(out.values.at(1, c), tokens.values.at(1, c));
  }
}

TEST(InjectSie, OutOfRangeCameraIsLookupError) {
  LearnableTokens tokens{Tensor::zeros({2, 4})};
  CameraEmbeddingTable table{Tensor::zeros({3, 4})};
  EXPECT_THROW(inject_sie(tokens, 3, table), LookupError);
}

TEST(InjectSie, GradientReachesExactlyOneTableRow) {
  std::mt19937_64 rng(8);
  const auto cfg = tiny_config();
  VitEncoder enc(cfg, 3, rng);
  Tensor img = random_image(cfg, rng);
  auto loss_fn = [&] {
    auto out = enc.encode(enc.build_sequence(img, 2));
    return sum(mul(out.token_features, out.token_features));
  };
  {
    Tape tape;
    RecordingGuard guard(tape);
    Tensor loss = loss_fn();
    tape.backward(loss);
  }
  const auto g = enc.cameras().embeddings.grad();
  for (std::size_t r = 0; r < 3; ++r) {
    double norm = 0.0;
    for (std::size_t c = 0; c < cfg.embed_dim; ++c) norm += std::abs(g[r * cfg.embed_dim + c]);
    if (r == 2) {
      EXPECT_GT(norm, 0.0);
    } else {
      EXPECT_EQ(norm, 0.0) << "row " << r;
    }
  }
  Tensor leaves[] = {enc.cameras().embeddings};
  auto report = grad_check(loss_fn, leaves);
  EXPECT_TRUE(report.passed) << report.max_rel_error;
  EXPECT_LT(report.max_rel_error, 1e-5);
}

TEST(Encode, DepthZeroReturnsInputTokens) {
  std::mt19937_64 rng(9);
  const auto cfg = tiny_config(0);
  VitEncoder enc(cfg, 2, rng);
  auto seq = enc.build_sequence(random_image(cfg, rng), 1);
  auto out = enc.encode(seq);
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t c = 0; c < cfg.embed_dim; ++c) EXPECT_EQ(out.token_features.at(r, c), seq.tokens.at(r, c));
}

TEST(Encode, ShapePreservedForEveryDepth) {
  for (std::size_t depth = 0; depth < 4; ++depth) {
    for (std::size_t n = 1; n <= 3; ++n) {
      std::mt19937_64 rng(depth * 10 + n);
      const auto cfg = tiny_config(depth, n);
      VitEncoder enc(cfg, 2, rng);
      auto seq = enc.build_sequence(random_image(cfg, rng), 0);
      auto out = enc.encode(seq);
      EXPECT_EQ(out.token_features.shape(), (Shape{n, cfg.embed_dim}));
      EXPECT_EQ(out.patch_features.shape(), (Shape{cfg.num_patches(), cfg.embed_dim}));
      EXPECT_EQ(out.token_features.rows() + out.patch_features.rows(), seq.tokens.rows());
    }
  }
}

TEST(Encode, PatchPermutationLeavesTokenFeaturesUnchanged) {
  std::mt19937_64 rng(10);
  auto cfg = tiny_config(3);
  cfg.image_height = 16;
  cfg.image_width = 8;  // 8 patches
  VitEncoder enc(cfg, 2, rng);
  Tensor img = random_image(cfg, rng);
  Tensor patches = enc.patch_embed(img);  // projection + positional, row per patch
  auto tokens = inject_sie(enc.tokens(), 1, enc.cameras());
  auto base = enc.encode(TokenSequence::assemble(tokens, patches));

  std::vector<std::size_t> perm(cfg.num_patches());
  std::iota(perm.begin(), perm.end(), 0);
  for (int trial = 0; trial < 5; ++trial) {
    std::shuffle(perm.begin(), perm.end(), rng);
    auto shuffled = enc.encode(TokenSequence::assemble(tokens, gather_rows(patches, perm)));
    for (std::size_t i = 0; i < base.token_features.size(); ++i) {
      EXPECT_NEAR(shuffled.token_features[i], base.token_features[i], 1e-12);
    }
    // Patch outputs are permuted along with their inputs.
    for (std::size_t r = 0; r < perm.size(); ++r)
      for (std::size_t c = 0; c < cfg.embed_dim; ++c)
        EXPECT_NEAR(shuffled.patch_features.at(r, c), base.patch_features.at(perm[r], c), 1e-12);
  }
}

TEST(Encode, LearnableTokenOutputsDistinctAcrossSeeds) {
  const auto cfg = EncoderConfig::desk_dino();
  for (int seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed);
    VitEncoder enc(cfg, 2, rng);
    auto out = enc.encode(enc.build_sequence(random_image(cfg, rng), 0));
    double linf = 0.0;
    for (std::size_t c = 0; c < cfg.embed_dim; ++c)
      linf = std::max(linf, std::abs(out.token_features.at(0, c) - out.token_features.at(1, c)));
    EXPECT_GT(linf, 0.0) << "seed " << seed;
  }
}

TEST(Encode, AttentionRowStochasticInEveryBlock) {
  std::mt19937_64 rng(11);
  const auto cfg = EncoderConfig::desk_clip();
  VitEncoder enc(cfg, 2, rng);
  AttentionTrace trace;
  enc.encode(enc.build_sequence(random_image(cfg, rng), 1), &trace, "clip");
  ASSERT_EQ(trace.records.size(), cfg.depth * cfg.heads);
  for (const auto& rec : trace.records) {
    const auto& w = rec.weights;
    ASSERT_EQ(w.rows(), 10u);
    ASSERT_EQ(w.cols(), 10u);
    for (std::size_t r = 0; r < w.rows(); ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < w.cols(); ++c) {
        EXPECT_GE(w.at(r, c), 0.0);
        s += w.at(r, c);
      }
      EXPECT_NEAR(s, 1.0, 1e-10) << rec.site;
    }
  }
}

TEST(Encode, MatchesNaiveBlockLoop) {
  std::mt19937_64 rng(12);
  const auto cfg = tiny_config(3);
  VitEncoder enc(cfg, 2, rng);
  auto seq = enc.build_sequence(random_image(cfg, rng), 1);
  auto x = oracle::to_matrix(seq.tokens);
  for (const auto& b : enc.blocks()) x = oracle::self_block(x, b);
  auto out = enc.encode(seq);
  oracle::Matrix tokens(x.begin(), x.begin() + 2);
  EXPECT_LT(oracle::max_abs_diff(tokens, out.token_features), 1e-10);
}

TEST(Encode, IllFormedSequenceIsConfigError) {
  std::mt19937_64 rng(13);
  VitEncoder enc(tiny_config(), 2, rng);
  TokenSequence bad{Tensor::zeros({4, 6}), 2, 2};
  EXPECT_THROW(enc.encode(bad), ConfigError);
}

TEST(Encode, GradientsReachEveryParameter) {
  std::mt19937_64 rng(14);
  const auto cfg = tiny_config(2);
  VitEncoder enc(cfg, 2, rng);
  Tensor img = random_image(cfg, rng);
  ParamList params;
  enc.collect(params, "enc");
  auto loss_fn = [&] {
    auto out = enc.encode(enc.build_sequence(img, 0));
    std::mt19937_64 wrng(99);
    Tensor w = Tensor::randn(out.token_features.shape(), wrng, 1.0);
    return sum(mul(out.token_features, w));
  };
  std::vector<Tensor> leaves;
  for (auto& p : params) leaves.push_back(p.tensor);
  GradCheckOptions opts;
  opts.entries_per_leaf = 6;
  opts.seed = 5;
  auto report = grad_check(loss_fn, leaves, opts);
  EXPECT_TRUE(report.passed) << "worst leaf " << params[report.worst_leaf].name << " err " << report.max_rel_error;
}
