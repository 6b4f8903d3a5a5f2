#include "drformer/layers.hpp"

#include <cmath>

#include "drformer/errors.hpp"
#include "drformer/ops.hpp"

namespace drformer {

Linear::Linear(std::size_t in, std::size_t out, std::mt19937_64& rng)
    : weight(Tensor::randn({in, out}, rng, 1.0 / std::sqrt(static_cast<double>(in)), true)),
      bias(Tensor::zeros({out}, true)) {}

Tensor Linear::forward(const Tensor& x) const { return add_bias(matmul(x, weight), bias); }

void Linear::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

LayerNorm::LayerNorm(std::size_t dim) : gain(Tensor::full({dim}, 1.0, true)), bias(Tensor::zeros({dim}, true)) {}

Tensor LayerNorm::forward(const Tensor& x) const { return layer_norm(x, gain, bias, eps); }

void LayerNorm::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".gain", gain});
  out.push_back({prefix + ".bias", bias});
}

MultiHeadAttention::MultiHeadAttention(std::size_t dim, std::size_t heads_, std::mt19937_64& rng)
    : heads(heads_), query(dim, dim, rng), key(dim, dim, rng), value(dim, dim, rng), output(dim, dim, rng) {
  if (heads == 0 || dim % heads != 0) {
    throw ConfigError("attention: dim " + std::to_string(dim) + " is not divisible by " + std::to_string(heads) +
                      " heads");
  }
}

Tensor MultiHeadAttention::forward(const Tensor& q_src, const Tensor& kv_src, AttentionTrace* trace,
                                   const std::string& site) const {
  const std::size_t dim = query.weight.rows();
  if (q_src.rank() != 2 || kv_src.rank() != 2 || q_src.cols() != dim || kv_src.cols() != dim) {
    throw DimensionError("attention: inputs " + shape_str(q_src.shape()) + " / " + shape_str(kv_src.shape()) +
                         " do not match model dim " + std::to_string(dim));
  }
  const std::size_t head_dim = dim / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));
  Tensor q = query.forward(q_src);
  Tensor k = key.forward(kv_src);
  Tensor v = value.forward(kv_src);
  std::vector<Tensor> head_out;
  head_out.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    Tensor qh = slice(q, 1, h * head_dim, head_dim);
    Tensor kh = slice(k, 1, h * head_dim, head_dim);
    Tensor vh = slice(v, 1, h * head_dim, head_dim);
    Tensor weights = softmax(scale(matmul(qh, transpose(kh)), inv_sqrt), 1);
    if (trace) trace->records.push_back({site, h, weights.clone()});
    head_out.push_back(matmul(weights, vh));
  }
  return output.forward(heads == 1 ? head_out[0] : concat(head_out, 1));
}

void MultiHeadAttention::collect(ParamList& out, const std::string& prefix) const {
  query.collect(out, prefix + ".query");
  key.collect(out, prefix + ".key");
  value.collect(out, prefix + ".value");
  output.collect(out, prefix + ".output");
}

Mlp::Mlp(std::size_t dim, std::size_t hidden, std::mt19937_64& rng) : fc1(dim, hidden, rng), fc2(hidden, dim, rng) {}

Tensor Mlp::forward(const Tensor& x) const { return fc2.forward(gelu(fc1.forward(x))); }

void Mlp::collect(ParamList& out, const std::string& prefix) const {
  fc1.collect(out, prefix + ".fc1");
  fc2.collect(out, prefix + ".fc2");
}

SelfAttentionBlock::SelfAttentionBlock(std::size_t dim, std::size_t heads, std::size_t mlp_ratio,
                                       std::mt19937_64& rng)
    : norm1(dim), norm2(dim), attn(dim, heads, rng), mlp(dim, dim * mlp_ratio, rng) {}

Tensor SelfAttentionBlock::forward(const Tensor& x, AttentionTrace* trace, const std::string& site) const {
  Tensor h = norm1.forward(x);
  Tensor y = add(x, attn.forward(h, h, trace, site));
  return add(y, mlp.forward(norm2.forward(y)));
}

void SelfAttentionBlock::collect(ParamList& out, const std::string& prefix) const {
  norm1.collect(out, prefix + ".norm1");
  attn.collect(out, prefix + ".attn");
  norm2.collect(out, prefix + ".norm2");
  mlp.collect(out, prefix + ".mlp");
}

CrossAttentionBlock::CrossAttentionBlock(std::size_t dim, std::size_t heads, std::size_t mlp_ratio,
                                         std::mt19937_64& rng)
    : norm_q(dim), norm_kv(dim), norm2(dim), attn(dim, heads, rng), mlp(dim, dim * mlp_ratio, rng) {}

Tensor CrossAttentionBlock::forward(const Tensor& query, const Tensor& kv, AttentionTrace* trace,
                                    const std::string& site) const {
  Tensor y = add(query, attn.forward(norm_q.forward(query), norm_kv.forward(kv), trace, site));
  return add(y, mlp.forward(norm2.forward(y)));
}

void CrossAttentionBlock::collect(ParamList& out, const std::string& prefix) const {
  norm_q.collect(out, prefix + ".norm_q");
  norm_kv.collect(out, prefix + ".norm_kv");
  attn.collect(out, prefix + ".attn");
  norm2.collect(out, prefix + ".norm2");
  mlp.collect(out, prefix + ".mlp");
}

}  // namespace drformer
