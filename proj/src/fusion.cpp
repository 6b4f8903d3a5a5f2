#include "drformer/fusion.hpp"

#include <cmath>

#include "drformer/errors.hpp"
#include "drformer/ops.hpp"

namespace drformer {

void FusionConfig::validate(std::size_t dim_d, std::size_t dim_c) const {
  if (fusion_dim == 0 || heads == 0 || fusion_dim % heads != 0) {
    throw ConfigError("fusion: dim " + std::to_string(fusion_dim) + " not divisible by " + std::to_string(heads) +
                      " heads");
  }
  if (enabled && cross_layers == 0) throw ConfigError("fusion: enabled fusion needs at least one cross layer");
  if (!input_projection && (dim_d != fusion_dim || dim_c != fusion_dim)) {
    throw ConfigError("fusion: without input projections both branch dims must equal fusion_dim");
  }
}

Tensor FusionStack::forward(const Tensor& query, const Tensor& kv, AttentionTrace* trace,
                            const std::string& site) const {
  Tensor x = query;
  for (std::size_t i = 0; i < cross.size(); ++i) x = cross[i].forward(x, kv, trace, site + ".cross" + std::to_string(i));
  for (std::size_t i = 0; i < self.size(); ++i) x = self[i].forward(x, trace, site + ".self" + std::to_string(i));
  return x;
}

void FusionStack::collect(ParamList& out, const std::string& prefix) const {
  for (std::size_t i = 0; i < cross.size(); ++i) cross[i].collect(out, prefix + ".cross" + std::to_string(i));
  for (std::size_t i = 0; i < self.size(); ++i) self[i].collect(out, prefix + ".self" + std::to_string(i));
}

namespace {

FusionStack make_stack(const FusionConfig& c, std::mt19937_64& rng) {
  FusionStack s;
  if (!c.enabled) return s;
  for (std::size_t i = 0; i < c.cross_layers; ++i) s.cross.emplace_back(c.fusion_dim, c.heads, c.mlp_ratio, rng);
  for (std::size_t i = 0; i < c.self_layers; ++i) s.self.emplace_back(c.fusion_dim, c.heads, c.mlp_ratio, rng);
  return s;
}

}  // namespace

FusionTransformer::FusionTransformer(const FusionConfig& config, std::size_t dim_d, std::size_t dim_c,
                                     std::mt19937_64& rng)
    : config_(config) {
  config_.validate(dim_d, dim_c);
  if (config_.input_projection) {
    proj_d_ = Linear(dim_d, config_.fusion_dim, rng);
    proj_c_ = Linear(dim_c, config_.fusion_dim, rng);
  }
  forward_ = make_stack(config_, rng);
  if (!config_.shared_weights) reverse_ = make_stack(config_, rng);
}

Tensor FusionTransformer::project_d(const Tensor& f_d) const {
  return config_.input_projection ? proj_d_.forward(f_d) : f_d;
}

Tensor FusionTransformer::project_c(const Tensor& f_c) const {
  return config_.input_projection ? proj_c_.forward(f_c) : f_c;
}

Tensor FusionTransformer::cross_attend(const Tensor& query_seq, const Tensor& kv_seq, bool reverse,
                                       AttentionTrace* trace, const std::string& site) const {
  if (query_seq.rank() != 2 || kv_seq.rank() != 2 || query_seq.cols() != config_.fusion_dim ||
      kv_seq.cols() != config_.fusion_dim) {
    throw ConfigError("cross_attend: inputs " + shape_str(query_seq.shape()) + " / " + shape_str(kv_seq.shape()) +
                      " are not in fusion dim " + std::to_string(config_.fusion_dim));
  }
  const FusionStack& stack = (reverse && !config_.shared_weights) ? reverse_ : forward_;
  return stack.forward(query_seq, kv_seq, trace, site);
}

FusionOutput FusionTransformer::fuse_projected(const Tensor& p_d, const Tensor& p_c, AttentionTrace* trace) const {
  if (p_d.rank() != 2 || p_c.rank() != 2 || p_d.rows() != p_c.rows()) {
    throw ContractError("fuse: both branches must carry the same number of tokens, got " + shape_str(p_d.shape()) +
                        " and " + shape_str(p_c.shape()));
  }
  if (!config_.enabled) return {p_d, p_c};
  return {cross_attend(p_d, p_c, false, trace, "fusion.d2c"), cross_attend(p_c, p_d, true, trace, "fusion.c2d")};
}

FusionOutput FusionTransformer::fuse(const Tensor& f_d, const Tensor& f_c, AttentionTrace* trace) const {
  if (f_d.rank() != 2 || f_c.rank() != 2 || f_d.rows() != f_c.rows()) {
    throw ContractError("fuse: both branches must carry the same number of tokens, got " + shape_str(f_d.shape()) +
                        " and " + shape_str(f_c.shape()));
  }
  return fuse_projected(project_d(f_d), project_c(f_c), trace);
}

void FusionTransformer::collect(ParamList& out, const std::string& prefix) const {
  if (config_.input_projection) {
    proj_d_.collect(out, prefix + ".proj_d");
    proj_c_.collect(out, prefix + ".proj_c");
  }
  forward_.collect(out, prefix + (config_.shared_weights ? ".shared" : ".d2c"));
  if (!config_.shared_weights) reverse_.collect(out, prefix + ".c2d");
}

PooledFeatures pool_feature(const FusionOutput& out, PoolMode mode) {
  if (mode == PoolMode::first_token) return {row(out.h_dc, 0), row(out.h_cd, 0)};
  return {mean(out.h_dc, 0), mean(out.h_cd, 0)};
}

LinearClassifier::LinearClassifier(std::size_t num_classes, std::size_t fusion_dim, std::mt19937_64& rng)
    : weight(Tensor::randn({num_classes, 2 * fusion_dim}, rng, 1.0 / std::sqrt(2.0 * static_cast<double>(fusion_dim)),
                           true)),
      bias(Tensor::zeros({num_classes}, true)) {
  if (num_classes < 2) throw ConfigError("classifier needs at least two classes");
}

Tensor LinearClassifier::weight_d() const { return slice(weight, 1, 0, fusion_dim()); }
Tensor LinearClassifier::weight_c() const { return slice(weight, 1, fusion_dim(), fusion_dim()); }

void LinearClassifier::collect(ParamList& out, const std::string& prefix) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

Tensor classify(const Tensor& z_dc, const Tensor& z_cd, const LinearClassifier& clf) {
  const std::size_t f = clf.fusion_dim();
  if (z_dc.shape() != z_cd.shape() || z_dc.shape().back() != f || z_dc.rank() > 2) {
    throw ContractError("classify: features " + shape_str(z_dc.shape()) + " / " + shape_str(z_cd.shape()) +
                        " do not match classifier input of 2x" + std::to_string(f));
  }
  const bool single = z_dc.rank() == 1;
  Tensor a = single ? reshape(z_dc, {1, f}) : z_dc;
  Tensor b = single ? reshape(z_cd, {1, f}) : z_cd;
  Tensor parts[] = {a, b};
  Tensor logits = add_bias(matmul(concat(parts, 1), transpose(clf.weight)), clf.bias);
  return single ? reshape(logits, {clf.num_classes()}) : logits;
}

Tensor branch_logits(const Tensor& z, const LinearClassifier& clf) { return classify(z, z, clf); }

}  // namespace drformer
