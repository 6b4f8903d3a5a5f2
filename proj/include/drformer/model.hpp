#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "drformer/encoder.hpp"
#include "drformer/fusion.hpp"
#include "drformer/layers.hpp"
#include "drformer/losses.hpp"
#include "drformer/tensor.hpp"

namespace drformer {

struct ModelConfig {
  EncoderConfig dino = EncoderConfig::desk_dino();
  EncoderConfig clip = EncoderConfig::desk_clip();
  FusionConfig fusion;
  std::size_t num_cameras = 2;
  std::size_t num_classes = 2;
  // Encoder weights stay fixed; only fusion and classifier train.
  bool freeze_encoders = false;
  // Precomputed token features replace the encoders entirely: only their
  // dims and token count are used, and no encoder weights are built.
  bool token_input = false;

  void validate() const;  // throws ConfigError
};

// Everything one image produces on its way to the classifier.
struct SampleForward {
  EncoderOutput dino, clip;
  FusionOutput fused;
  PooledFeatures pooled;
};

struct BatchForward {
  std::vector<Tensor> tokens_d;  // per sample [N x d_D]
  std::vector<Tensor> tokens_c;  // per sample [N x d_C]
  Tensor z_dc, z_cd;             // [B x F]
  Tensor logits;                 // [B x K]
};

class DRFormer {
 public:
  DRFormer(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }

  // image is the full-resolution sample; each encoder sees it resampled to
  // its own input size.
  SampleForward forward(const Tensor& image, std::size_t camera_id, AttentionTrace* trace = nullptr) const;
  // Precomputed learnable-token features [N x d_D] and [N x d_C] skip the encoders.
  SampleForward forward_tokens(const Tensor& f_d, const Tensor& f_c, AttentionTrace* trace = nullptr) const;

  BatchForward forward_batch(std::span<const Tensor> images, std::span<const std::size_t> camera_ids) const;
  // Stacks per-sample outputs and classifies them.
  BatchForward collate(std::span<const SampleForward> samples) const;

  // [z_dc; z_cd] without gradient tracking, for retrieval.
  Tensor retrieval_feature(const Tensor& image, std::size_t camera_id) const;

  // Every tensor owned by the model, in a fixed order with stable names.
  ParamList state() const;
  // The subset the optimizer updates (encoders dropped when frozen).
  ParamList trainable() const;

  bool has_encoders() const { return dino_.has_value(); }
  // Throw ContractError on a token-input model.
  VitEncoder& dino();
  VitEncoder& clip();
  const VitEncoder& dino() const;
  const VitEncoder& clip() const;
  FusionTransformer& fusion() { return fusion_; }
  const FusionTransformer& fusion() const { return fusion_; }
  LinearClassifier& classifier() { return classifier_; }
  const LinearClassifier& classifier() const { return classifier_; }

 private:
  void collect_encoders(ParamList& out) const;

  ModelConfig config_;
  std::mt19937_64 init_rng_;
  std::optional<VitEncoder> dino_, clip_;
  FusionTransformer fusion_;
  LinearClassifier classifier_;
};

// Loss terms of one batch. A regularizer whose weight is zero is evaluated
// with recording suspended, so it is reported but never joins the graph.
LossParts batch_loss_parts(const BatchForward& fwd, const LinearClassifier& clf, std::span<const std::size_t> labels,
                           const LossWeights& weights);

// Argmax agreement of the duplicated-feature logits of each branch.
struct BranchAccuracy {
  double dino = 0.0;
  double clip = 0.0;
  double gap() const { return dino > clip ? dino - clip : clip - dino; }
};
BranchAccuracy branch_accuracy(const Tensor& z_dc, const Tensor& z_cd, const LinearClassifier& clf,
                               std::span<const std::size_t> labels);

}  // namespace drformer
