#include "drformer/model.hpp"

#include <string>
#include <utility>

#include "drformer/data.hpp"
#include "drformer/errors.hpp"
#include "drformer/ops.hpp"

namespace drformer {

void ModelConfig::validate() const {
  dino.validate();
  clip.validate();
  if (dino.n_learnable_tokens != clip.n_learnable_tokens) {
    throw ConfigError("both encoders need the same number of learnable tokens (" +
                      std::to_string(dino.n_learnable_tokens) + " vs " + std::to_string(clip.n_learnable_tokens) + ")");
  }
  if (num_cameras == 0) throw ConfigError("model needs at least one camera");
  if (num_classes < 2) throw ConfigError("model needs at least two identity classes");
  fusion.validate(dino.embed_dim, clip.embed_dim);
}

namespace {

const ModelConfig& checked(const ModelConfig& c) {
  c.validate();
  return c;
}

}  // namespace

DRFormer::DRFormer(const ModelConfig& config, std::uint64_t seed)
    : config_(checked(config)),
      init_rng_(seed),
      dino_(config_.token_input ? std::nullopt : std::optional<VitEncoder>(std::in_place, config_.dino,
                                                                            config_.num_cameras, init_rng_)),
      clip_(config_.token_input ? std::nullopt : std::optional<VitEncoder>(std::in_place, config_.clip,
                                                                            config_.num_cameras, init_rng_)),
      fusion_(config_.fusion, config_.dino.embed_dim, config_.clip.embed_dim, init_rng_),
      classifier_(config_.num_classes, config_.fusion.fusion_dim, init_rng_) {
  if (config_.freeze_encoders) {
    ParamList enc;
    collect_encoders(enc);
    for (auto& p : enc) p.tensor.set_requires_grad(false);
  }
}

void DRFormer::collect_encoders(ParamList& out) const {
  if (!has_encoders()) return;
  dino_->collect(out, "dino");
  clip_->collect(out, "clip");
}

VitEncoder& DRFormer::dino() { return const_cast<VitEncoder&>(std::as_const(*this).dino()); }
VitEncoder& DRFormer::clip() { return const_cast<VitEncoder&>(std::as_const(*this).clip()); }

const VitEncoder& DRFormer::dino() const {
  if (!dino_) throw ContractError("token-input model has no encoders");
  return *dino_;
}

const VitEncoder& DRFormer::clip() const {
  if (!clip_) throw ContractError("token-input model has no encoders");
  return *clip_;
}

SampleForward DRFormer::forward(const Tensor& image, std::size_t camera_id, AttentionTrace* trace) const {
  if (!has_encoders()) throw ContractError("forward: token-input model needs forward_tokens");
  const auto& d = config_.dino;
  const auto& c = config_.clip;
  SampleForward out;
  {
    TapeScope scope("dino");
    out.dino = dino_->encode(dino_->build_sequence(resample_bilinear(image, d.image_height, d.image_width), camera_id),
                            trace, "dino");
  }
  {
    TapeScope scope("clip");
    out.clip = clip_->encode(clip_->build_sequence(resample_bilinear(image, c.image_height, c.image_width), camera_id),
                            trace, "clip");
  }
  out.fused = fusion_.fuse(out.dino.token_features, out.clip.token_features, trace);
  out.pooled = pool_feature(out.fused, config_.fusion.pool);
  return out;
}

SampleForward DRFormer::forward_tokens(const Tensor& f_d, const Tensor& f_c, AttentionTrace* trace) const {
  SampleForward out;
  out.dino.token_features = f_d;
  out.clip.token_features = f_c;
  out.fused = fusion_.fuse(f_d, f_c, trace);
  out.pooled = pool_feature(out.fused, config_.fusion.pool);
  return out;
}

BatchForward DRFormer::forward_batch(std::span<const Tensor> images, std::span<const std::size_t> camera_ids) const {
  if (images.size() != camera_ids.size()) {
    throw ContractError("forward_batch: " + std::to_string(images.size()) + " images but " +
                        std::to_string(camera_ids.size()) + " camera ids");
  }
  std::vector<SampleForward> samples;
  for (std::size_t i = 0; i < images.size(); ++i) samples.push_back(forward(images[i], camera_ids[i]));
  return collate(samples);
}

BatchForward DRFormer::collate(std::span<const SampleForward> samples) const {
  if (samples.empty()) throw ContractError("collate: empty batch");
  const std::size_t f = config_.fusion.fusion_dim;
  BatchForward out;
  std::vector<Tensor> zdc, zcd;
  for (const auto& s : samples) {
    out.tokens_d.push_back(s.dino.token_features);
    out.tokens_c.push_back(s.clip.token_features);
    zdc.push_back(reshape(s.pooled.z_dc, {1, f}));
    zcd.push_back(reshape(s.pooled.z_cd, {1, f}));
  }
  out.z_dc = concat(zdc, 0);
  out.z_cd = concat(zcd, 0);
  out.logits = classify(out.z_dc, out.z_cd, classifier_);
  return out;
}

Tensor DRFormer::retrieval_feature(const Tensor& image, std::size_t camera_id) const {
  NoGradGuard no_grad;
  auto s = forward(image, camera_id);
  const Tensor parts[] = {s.pooled.z_dc, s.pooled.z_cd};
  return concat(parts, 0);
}

ParamList DRFormer::state() const {
  ParamList out;
  collect_encoders(out);
  fusion_.collect(out, "fusion");
  classifier_.collect(out, "classifier");
  return out;
}

ParamList DRFormer::trainable() const {
  ParamList out;
  if (!config_.freeze_encoders) collect_encoders(out);
  fusion_.collect(out, "fusion");
  classifier_.collect(out, "classifier");
  return out;
}

LossParts batch_loss_parts(const BatchForward& fwd, const LinearClassifier& clf, std::span<const std::size_t> labels,
                           const LossWeights& weights) {
  weights.validate();
  LossParts p;
  p.id = id_loss(fwd.logits, labels, weights.label_smoothing_eps);
  const Tensor feats[] = {fwd.z_dc, fwd.z_cd};
  p.triplet = triplet_loss(concat(feats, 1), labels, weights.margin_alpha);

  auto intra = [&] {
    std::vector<Tensor> terms;
    for (std::size_t i = 0; i < fwd.tokens_d.size(); ++i) terms.push_back(intra_loss(fwd.tokens_d[i], fwd.tokens_c[i]));
    return scale(add_n(terms), 1.0 / static_cast<double>(terms.size()));
  };
  auto inter = [&] { return inter_loss(fwd.z_dc, fwd.z_cd, clf, labels, weights.label_smoothing_eps); };

  if (weights.lambda2 != 0.0) {
    p.intra = intra();
  } else {
    NoGradGuard no_grad;
    p.intra = intra();
  }
  if (weights.lambda1 != 0.0) {
    p.inter = inter();
  } else {
    NoGradGuard no_grad;
    p.inter = inter();
  }
  return p;
}

BranchAccuracy branch_accuracy(const Tensor& z_dc, const Tensor& z_cd, const LinearClassifier& clf,
                               std::span<const std::size_t> labels) {
  NoGradGuard no_grad;
  if (z_dc.rank() != 2 || z_dc.rows() != labels.size() || z_cd.shape() != z_dc.shape()) {
    throw ContractError("branch_accuracy: features " + shape_str(z_dc.shape()) + " / " + shape_str(z_cd.shape()) +
                        " vs " + std::to_string(labels.size()) + " labels");
  }
  auto hits = [&](const Tensor& z) {
    const Tensor logits = branch_logits(z, clf);
    const std::size_t k = logits.cols();
    std::size_t correct = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      std::size_t best = 0;
      for (std::size_t j = 1; j < k; ++j)
        if (logits.at(i, j) > logits.at(i, best)) best = j;
      if (best == labels[i]) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(labels.size());
  };
  return {hits(z_dc), hits(z_cd)};
}

}  // namespace drformer
