#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "drformer/layers.hpp"
#include "drformer/tensor.hpp"

namespace drformer {

enum class PoolMode { mean, first_token };

struct FusionConfig {
  bool enabled = true;  // false: plain concatenation of projected tokens
  std::size_t fusion_dim = 64;
  std::size_t heads = 4;
  std::size_t mlp_ratio = 4;
  std::size_t cross_layers = 1;
  std::size_t self_layers = 2;
  bool shared_weights = true;  // one stack serves both directions
  bool input_projection = true;
  PoolMode pool = PoolMode::mean;

  void validate(std::size_t dim_d, std::size_t dim_c) const;
};

// H_{D->C} (DINO tokens query CLIP) and H_{C->D}.
struct FusionOutput {
  Tensor h_dc;  // [N x fusion_dim]
  Tensor h_cd;  // [N x fusion_dim]
};

struct PooledFeatures {
  Tensor z_dc;  // [fusion_dim]
  Tensor z_cd;  // [fusion_dim]
};

// Cross-attention blocks followed by self-attention blocks.
struct FusionStack {
  std::vector<CrossAttentionBlock> cross;
  std::vector<SelfAttentionBlock> self;

  Tensor forward(const Tensor& query, const Tensor& kv, AttentionTrace* trace, const std::string& site) const;
  void collect(ParamList& out, const std::string& prefix) const;
};

class FusionTransformer {
 public:
  FusionTransformer(const FusionConfig& config, std::size_t dim_d, std::size_t dim_c, std::mt19937_64& rng);

  const FusionConfig& config() const { return config_; }

  // Maps a branch's token features to fusion_dim (identity without projections).
  Tensor project_d(const Tensor& f_d) const;
  Tensor project_c(const Tensor& f_c) const;

  // One direction: Q from query_seq, K and V from kv_seq, both already in
  // fusion_dim. `reverse` selects the C->D stack when weights are not shared.
  Tensor cross_attend(const Tensor& query_seq, const Tensor& kv_seq, bool reverse = false,
                      AttentionTrace* trace = nullptr, const std::string& site = "fusion") const;

  // Both directions on projected inputs.
  FusionOutput fuse_projected(const Tensor& p_d, const Tensor& p_c, AttentionTrace* trace = nullptr) const;
  // Projects the raw encoder token outputs, then fuses. With fusion disabled
  // the projected sequences pass through unchanged.
  FusionOutput fuse(const Tensor& f_d, const Tensor& f_c, AttentionTrace* trace = nullptr) const;

  FusionStack& forward_stack() { return forward_; }
  const FusionStack& forward_stack() const { return forward_; }

  void collect(ParamList& out, const std::string& prefix) const;

 private:
  FusionConfig config_;
  Linear proj_d_, proj_c_;
  FusionStack forward_;
  FusionStack reverse_;  // populated only when weights are not shared
};

PooledFeatures pool_feature(const FusionOutput& out, PoolMode mode = PoolMode::mean);

// logits = W [z_dc; z_cd] + b, W = [W_D | W_C] split at column fusion_dim.
struct LinearClassifier {
  Tensor weight;  // [K x 2F]
  Tensor bias;    // [K]

  LinearClassifier() = default;
  LinearClassifier(std::size_t num_classes, std::size_t fusion_dim, std::mt19937_64& rng);
  std::size_t num_classes() const { return weight.rows(); }
  std::size_t fusion_dim() const { return weight.cols() / 2; }
  Tensor weight_d() const;  // W_D [K x F]
  Tensor weight_c() const;  // W_C [K x F]
  void collect(ParamList& out, const std::string& prefix) const;
};

// z_dc and z_cd are [F] (-> [K]) or batched [B x F] (-> [B x K]).
Tensor classify(const Tensor& z_dc, const Tensor& z_cd, const LinearClassifier& clf);
// Duplicated-feature pass: classify(z, z).
Tensor branch_logits(const Tensor& z, const LinearClassifier& clf);

}  // namespace drformer
