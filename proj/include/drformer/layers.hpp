#pragma once

#include <cstddef>
#include <random>
#include <string>
#include <vector>

#include "drformer/tensor.hpp"

namespace drformer {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};
using ParamList = std::vector<NamedTensor>;

// Head-averaging is left to the consumer; every head is recorded separately.
struct AttentionRecord {
  std::string site;
  std::size_t head = 0;
  Tensor weights;  // [queries x keys], rows sum to one
};

struct AttentionTrace {
  std::vector<AttentionRecord> records;
};

// y = x W + b with W stored [in x out].
struct Linear {
  Tensor weight;
  Tensor bias;

  Linear() = default;
  Linear(std::size_t in, std::size_t out, std::mt19937_64& rng);
  Tensor forward(const Tensor& x) const;
  void collect(ParamList& out, const std::string& prefix) const;
};

struct LayerNorm {
  Tensor gain;
  Tensor bias;
  double eps = 1e-5;

  LayerNorm() = default;
  explicit LayerNorm(std::size_t dim);
  Tensor forward(const Tensor& x) const;
  void collect(ParamList& out, const std::string& prefix) const;
};

struct MultiHeadAttention {
  std::size_t heads = 1;
  Linear query, key, value, output;

  MultiHeadAttention() = default;
  MultiHeadAttention(std::size_t dim, std::size_t heads, std::mt19937_64& rng);
  // Queries from q_src [Nq x d], keys and values from kv_src [Nk x d].
  Tensor forward(const Tensor& q_src, const Tensor& kv_src, AttentionTrace* trace = nullptr,
                 const std::string& site = {}) const;
  void collect(ParamList& out, const std::string& prefix) const;
};

struct Mlp {
  Linear fc1, fc2;

  Mlp() = default;
  Mlp(std::size_t dim, std::size_t hidden, std::mt19937_64& rng);
  Tensor forward(const Tensor& x) const;
  void collect(ParamList& out, const std::string& prefix) const;
};

// Pre-norm block: x + Attn(LN(x)), then x + MLP(LN(x)).
struct SelfAttentionBlock {
  LayerNorm norm1, norm2;
  MultiHeadAttention attn;
  Mlp mlp;

  SelfAttentionBlock() = default;
  SelfAttentionBlock(std::size_t dim, std::size_t heads, std::size_t mlp_ratio, std::mt19937_64& rng);
  Tensor forward(const Tensor& x, AttentionTrace* trace = nullptr, const std::string& site = {}) const;
  void collect(ParamList& out, const std::string& prefix) const;
};

// Pre-norm cross block: q + Attn(LN_q(q), LN_kv(kv)), then x + MLP(LN(x)).
struct CrossAttentionBlock {
  LayerNorm norm_q, norm_kv, norm2;
  MultiHeadAttention attn;
  Mlp mlp;

  CrossAttentionBlock() = default;
  CrossAttentionBlock(std::size_t dim, std::size_t heads, std::size_t mlp_ratio, std::mt19937_64& rng);
  Tensor forward(const Tensor& query, const Tensor& kv, AttentionTrace* trace = nullptr,
                 const std::string& site = {}) const;
  void collect(ParamList& out, const std::string& prefix) const;
};

}  // namespace drformer
