#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "drformer/layers.hpp"
#include "drformer/tensor.hpp"

namespace drformer {

struct EncoderConfig {
  std::size_t image_height = 0;
  std::size_t image_width = 0;
  std::size_t channels = 3;
  std::size_t patch_size = 0;
  std::size_t embed_dim = 0;
  std::size_t depth = 0;
  std::size_t heads = 1;
  std::size_t mlp_ratio = 4;
  std::size_t n_learnable_tokens = 2;

  std::size_t grid_rows() const { return image_height / patch_size; }
  std::size_t grid_cols() const { return image_width / patch_size; }
  std::size_t num_patches() const { return grid_rows() * grid_cols(); }
  std::size_t patch_dim() const { return patch_size * patch_size * channels; }
  void validate() const;  // throws ConfigError

  // Toy defaults: M = 8 patches on both branches.
  static EncoderConfig desk_dino();
  static EncoderConfig desk_clip();
  // ViT-B/14 at 252x126 and ViT-B/16 at 256x128.
  static EncoderConfig paper_dino();
  static EncoderConfig paper_clip();
};

struct LearnableTokens {
  Tensor values;  // [N x d]
  std::size_t count() const { return values.rows(); }
};

struct CameraEmbeddingTable {
  Tensor embeddings;  // [num_cameras x d]
  std::size_t num_cameras() const { return embeddings.rows(); }
};

// Adds E_cam[camera_id] to the first token; the remaining rows are untouched.
LearnableTokens inject_sie(const LearnableTokens& tokens, std::size_t camera_id, const CameraEmbeddingTable& table);

// Learnable-token slots followed by patch tokens.
struct TokenSequence {
  Tensor tokens;  // [(N + M) x d]
  std::size_t n_learnable = 0;
  std::size_t n_patch = 0;

  static TokenSequence assemble(const LearnableTokens& learnable, const Tensor& patches);
};

struct EncoderOutput {
  Tensor token_features;  // f_T [N x d]
  Tensor patch_features;  // f_I [M x d]
};

// Toy ViT: linear patch projection with learned positional embeddings, N
// learnable tokens with camera-embedding injection on the first one, and a
// stack of pre-norm self-attention blocks.
class VitEncoder {
 public:
  VitEncoder(const EncoderConfig& config, std::size_t num_cameras, std::mt19937_64& rng);

  const EncoderConfig& config() const { return config_; }

  // image [H x W x C] -> [M x d]; patches in row-major grid order.
  Tensor patch_embed(const Tensor& image) const;
  TokenSequence build_sequence(const Tensor& image, std::size_t camera_id) const;
  EncoderOutput encode(const TokenSequence& seq, AttentionTrace* trace = nullptr,
                       const std::string& site = "encoder") const;

  LearnableTokens& tokens() { return tokens_; }
  const LearnableTokens& tokens() const { return tokens_; }
  CameraEmbeddingTable& cameras() { return cameras_; }
  const CameraEmbeddingTable& cameras() const { return cameras_; }
  Linear& projection() { return projection_; }
  Tensor& positional() { return positional_; }
  const std::vector<SelfAttentionBlock>& blocks() const { return blocks_; }

  void collect(ParamList& out, const std::string& prefix) const;

 private:
  EncoderConfig config_;
  Linear projection_;
  Tensor positional_;  // [M x d]
  LearnableTokens tokens_;
  CameraEmbeddingTable cameras_;
  std::vector<SelfAttentionBlock> blocks_;
};

// Flattens the patch grid of an [H x W x C] image into [M x p*p*C] rows,
// each row ordered (dy, dx, c).
Tensor extract_patches(const Tensor& image, std::size_t patch_size);

}  // namespace drformer
