#include "drformer/encoder.hpp"

#include "drformer/errors.hpp"
#include "drformer/ops.hpp"

namespace drformer {

void EncoderConfig::validate() const {
  if (patch_size == 0 || image_height == 0 || image_width == 0) {
    throw ConfigError("encoder: image and patch extents must be positive");
  }
  if (image_height % patch_size != 0 || image_width % patch_size != 0) {
    throw ConfigError("encoder: image " + std::to_string(image_height) + "x" + std::to_string(image_width) +
                      " is not divisible into " + std::to_string(patch_size) + "px patches");
  }
  if (embed_dim == 0 || heads == 0 || embed_dim % heads != 0) {
    throw ConfigError("encoder: embed_dim " + std::to_string(embed_dim) + " not divisible by " +
                      std::to_string(heads) + " heads");
  }
  if (n_learnable_tokens < 1) throw ConfigError("encoder: need at least one learnable token");
  if (channels == 0 || mlp_ratio == 0) throw ConfigError("encoder: channels and mlp_ratio must be positive");
}

EncoderConfig EncoderConfig::desk_dino() {
  return {.image_height = 56, .image_width = 28, .patch_size = 14, .embed_dim = 64, .depth = 4, .heads = 4};
}

EncoderConfig EncoderConfig::desk_clip() {
  return {.image_height = 64, .image_width = 32, .patch_size = 16, .embed_dim = 64, .depth = 4, .heads = 4};
}

EncoderConfig EncoderConfig::paper_dino() {
  return {.image_height = 252, .image_width = 126, .patch_size = 14, .embed_dim = 768, .depth = 12, .heads = 12};
}

EncoderConfig EncoderConfig::paper_clip() {
  return {.image_height = 256, .image_width = 128, .patch_size = 16, .embed_dim = 768, .depth = 12, .heads = 12};
}

LearnableTokens inject_sie(const LearnableTokens& tokens, std::size_t camera_id, const CameraEmbeddingTable& table) {
  if (camera_id >= table.num_cameras()) {
    throw LookupError("camera id " + std::to_string(camera_id) + " outside embedding table of " +
                      std::to_string(table.num_cameras()) + " cameras");
  }
  if (table.embeddings.cols() != tokens.values.cols()) {
    throw DimensionError("inject_sie: table " + shape_str(table.embeddings.shape()) + " vs tokens " +
                         shape_str(tokens.values.shape()));
  }
  const std::size_t n = tokens.count();
  Tensor first = add(row(tokens.values, 0), row(table.embeddings, camera_id));
  Tensor first_row = reshape(first, {1, first.size()});
  if (n == 1) return {first_row};
  Tensor parts[] = {first_row, slice(tokens.values, 0, 1, n - 1)};
  return {concat(parts, 0)};
}

TokenSequence TokenSequence::assemble(const LearnableTokens& learnable, const Tensor& patches) {
  if (learnable.values.cols() != patches.cols()) {
    throw DimensionError("token sequence: learnable " + shape_str(learnable.values.shape()) + " vs patches " +
                         shape_str(patches.shape()));
  }
  Tensor parts[] = {learnable.values, patches};
  return {concat(parts, 0), learnable.count(), patches.rows()};
}

Tensor extract_patches(const Tensor& image, std::size_t p) {
  if (image.rank() != 3) throw DimensionError("image must be [H x W x C], got " + shape_str(image.shape()));
  const std::size_t h = image.extent(0), w = image.extent(1), c = image.extent(2);
  if (p == 0 || h % p != 0 || w % p != 0) {
    throw ConfigError("image " + shape_str(image.shape()) + " not divisible into " + std::to_string(p) + "px patches");
  }
  const std::size_t gr = h / p, gc = w / p, pd = p * p * c;
  std::vector<double> out(gr * gc * pd);
  const auto src = image.data();
  for (std::size_t py = 0; py < gr; ++py)
    for (std::size_t px = 0; px < gc; ++px) {
      double* dst = out.data() + (py * gc + px) * pd;
      for (std::size_t dy = 0; dy < p; ++dy)
        for (std::size_t dx = 0; dx < p; ++dx)
          for (std::size_t ch = 0; ch < c; ++ch)
            *dst++ = src[((py * p + dy) * w + (px * p + dx)) * c + ch];
    }
  return Tensor({gr * gc, pd}, std::move(out));
}

VitEncoder::VitEncoder(const EncoderConfig& config, std::size_t num_cameras, std::mt19937_64& rng) : config_(config) {
  config_.validate();
  if (num_cameras == 0) throw ConfigError("encoder: camera table needs at least one camera");
  const std::size_t d = config_.embed_dim;
  projection_ = Linear(config_.patch_dim(), d, rng);
  positional_ = Tensor::randn({config_.num_patches(), d}, rng, 0.02, true);
  tokens_ = {Tensor::randn({config_.n_learnable_tokens, d}, rng, 0.02, true)};
  cameras_ = {Tensor::randn({num_cameras, d}, rng, 0.02, true)};
  for (std::size_t i = 0; i < config_.depth; ++i) blocks_.emplace_back(d, config_.heads, config_.mlp_ratio, rng);
}

Tensor VitEncoder::patch_embed(const Tensor& image) const {
  if (image.rank() != 3 || image.extent(0) != config_.image_height || image.extent(1) != config_.image_width ||
      image.extent(2) != config_.channels) {
    throw ConfigError("patch_embed: image " + shape_str(image.shape()) + " does not match encoder input [" +
                      std::to_string(config_.image_height) + "x" + std::to_string(config_.image_width) + "x" +
                      std::to_string(config_.channels) + "]");
  }
  return add(projection_.forward(extract_patches(image, config_.patch_size)), positional_);
}

TokenSequence VitEncoder::build_sequence(const Tensor& image, std::size_t camera_id) const {
  return TokenSequence::assemble(inject_sie(tokens_, camera_id, cameras_), patch_embed(image));
}

EncoderOutput VitEncoder::encode(const TokenSequence& seq, AttentionTrace* trace, const std::string& site) const {
  if (seq.tokens.rank() != 2 || seq.tokens.cols() != config_.embed_dim ||
      seq.tokens.rows() != seq.n_learnable + seq.n_patch || seq.n_learnable == 0) {
    throw ConfigError("encode: sequence " + shape_str(seq.tokens.shape()) + " is not a well-formed " +
                      std::to_string(seq.n_learnable) + "+" + std::to_string(seq.n_patch) + " token sequence of dim " +
                      std::to_string(config_.embed_dim));
  }
  Tensor x = seq.tokens;
  for (std::size_t i = 0; i < blocks_.size(); ++i) x = blocks_[i].forward(x, trace, site + ".block" + std::to_string(i));
  EncoderOutput out;
  out.token_features = slice(x, 0, 0, seq.n_learnable);
  if (seq.n_patch > 0) out.patch_features = slice(x, 0, seq.n_learnable, seq.n_patch);
  return out;
}

void VitEncoder::collect(ParamList& out, const std::string& prefix) const {
  projection_.collect(out, prefix + ".patch_proj");
  out.push_back({prefix + ".pos_embed", positional_});
  out.push_back({prefix + ".tokens", tokens_.values});
  out.push_back({prefix + ".cam_embed", cameras_.embeddings});
  for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].collect(out, prefix + ".block" + std::to_string(i));
}

}  // namespace drformer
