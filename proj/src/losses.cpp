#include "drformer/losses.hpp"

#include <atomic>
#include <cmath>
#include <iostream>
#include <limits>

#include "drformer/errors.hpp"
#include "drformer/ops.hpp"

namespace drformer {

void LossWeights::validate() const {
  if (!(lambda1 >= 0.0) || !(lambda2 >= 0.0) || !(margin_alpha >= 0.0)) {
    throw ConfigError("loss weights: lambda1, lambda2 and margin must be non-negative");
  }
  if (!(label_smoothing_eps >= 0.0 && label_smoothing_eps < 1.0)) {
    throw ConfigError("loss weights: label smoothing eps must lie in [0, 1)");
  }
}

std::vector<double> smoothed_target(std::size_t label, std::size_t num_classes, double eps) {
  if (num_classes < 2) throw ContractError("smoothed_target: need at least two classes");
  if (label >= num_classes) {
    throw ContractError("label " + std::to_string(label) + " outside [0, " + std::to_string(num_classes) + ")");
  }
  std::vector<double> q(num_classes, eps / static_cast<double>(num_classes - 1));
  q[label] = 1.0 - eps;
  return q;
}

Tensor id_loss(const Tensor& logits, std::span<const std::size_t> labels, double eps) {
  const bool single = logits.rank() == 1;
  if (logits.rank() > 2) throw DimensionError("id_loss: logits must be [B x K] or [K], got " + shape_str(logits.shape()));
  const std::size_t batch = single ? 1 : logits.rows();
  const std::size_t k = logits.shape().back();
  if (labels.size() != batch) {
    throw ContractError("id_loss: " + std::to_string(labels.size()) + " labels for " + std::to_string(batch) + " rows");
  }
  std::vector<double> q;
  q.reserve(batch * k);
  for (auto label : labels) {
    const auto row_q = smoothed_target(label, k, eps);
    q.insert(q.end(), row_q.begin(), row_q.end());
  }
  Tensor target(logits.shape(), std::move(q));
  Tensor logp = log_softmax(logits, logits.rank() - 1);
  return scale(sum(mul(target, logp)), -1.0 / static_cast<double>(batch));
}

Tensor triplet_loss(const Tensor& features, std::span<const std::size_t> labels, double alpha) {
  if (features.rank() != 2) throw DimensionError("triplet_loss: features must be [B x d], got " + shape_str(features.shape()));
  const std::size_t b = features.rows(), d = features.cols();
  if (labels.size() != b) throw ContractError("triplet_loss: label count does not match batch");

  std::vector<double> dist(b * b, 0.0);
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = i + 1; j < b; ++j) {
      double s = 0.0;
      for (std::size_t c = 0; c < d; ++c) {
        const double diff = features[i * d + c] - features[j * d + c];
        s += diff * diff;
      }
      dist[i * b + j] = dist[j * b + i] = std::sqrt(s);
    }

  std::vector<std::size_t> pos(b), neg(b);
  for (std::size_t a = 0; a < b; ++a) {
    double hardest_pos = -1.0, hardest_neg = std::numeric_limits<double>::infinity();
    bool has_pos = false, has_neg = false;
    for (std::size_t j = 0; j < b; ++j) {
      if (j == a) continue;
      const double dj = dist[a * b + j];
      if (labels[j] == labels[a]) {
        if (!has_pos || dj > hardest_pos) {
          hardest_pos = dj;
          pos[a] = j;
          has_pos = true;
        }
      } else if (!has_neg || dj < hardest_neg) {
        hardest_neg = dj;
        neg[a] = j;
        has_neg = true;
      }
    }
    if (!has_neg) throw ContractError("triplet_loss: batch holds a single identity, no negative exists");
    if (!has_pos) {
      throw ContractError("triplet_loss: anchor " + std::to_string(a) + " has no positive in the batch");
    }
  }

  Tensor d_pos = row_norms(sub(features, gather_rows(features, pos)));
  Tensor d_neg = row_norms(sub(features, gather_rows(features, neg)));
  return mean(relu(add_scalar(sub(d_pos, d_neg), alpha)));
}

namespace {

std::atomic<bool> g_warned_single_token{false};

Tensor mean_first_token_cosine(const Tensor& f) {
  const std::size_t n = f.rows();
  Tensor first = row(f, 0);
  std::vector<Tensor> cosines;
  for (std::size_t i = 1; i < n; ++i) cosines.push_back(cosine_similarity(first, row(f, i)));
  return scale(add_n(cosines), 1.0 / static_cast<double>(n - 1));
}

}  // namespace

Tensor intra_loss(const Tensor& f_d, const Tensor& f_c) {
  if (f_d.rank() != 2 || f_c.rank() != 2 || f_d.rows() != f_c.rows()) {
    throw DimensionError("intra_loss: token matrices " + shape_str(f_d.shape()) + " / " + shape_str(f_c.shape()) +
                         " must share N");
  }
  if (f_d.rows() == 1) {
    if (!g_warned_single_token.exchange(true)) {
      std::cerr << "warning: intra-model regularizer needs N >= 2 learnable tokens; using 0\n";
    }
    return Tensor::scalar(0.0);
  }
  TapeScope scope("intra_loss");
  return add(mean_first_token_cosine(f_d), mean_first_token_cosine(f_c));
}

Tensor inter_loss(const Tensor& z_dc, const Tensor& z_cd, const LinearClassifier& clf,
                  std::span<const std::size_t> labels, double eps) {
  TapeScope scope("inter_loss");
  return add(id_loss(branch_logits(z_dc, clf), labels, eps), id_loss(branch_logits(z_cd, clf), labels, eps));
}

TotalLoss total_loss(const LossParts& parts, const LossWeights& weights) {
  weights.validate();
  auto value = [](const Tensor& t) { return t.defined() ? t.item() : 0.0; };
  const std::pair<const char*, const Tensor*> named[] = {
      {"id", &parts.id}, {"triplet", &parts.triplet}, {"intra", &parts.intra}, {"inter", &parts.inter}};
  for (const auto& [name, t] : named) {
    if (t->defined() && !std::isfinite(t->item())) throw TrainingDivergenceError(name, t->item());
  }
  if (!parts.id.defined() || !parts.triplet.defined()) {
    throw ContractError("total_loss: the ID and triplet terms are required");
  }

  std::vector<Tensor> terms = {parts.id, parts.triplet};
  if (weights.lambda1 != 0.0 && parts.inter.defined()) {
    TapeScope scope("inter_loss");
    terms.push_back(scale(parts.inter, weights.lambda1));
  }
  if (weights.lambda2 != 0.0 && parts.intra.defined()) {
    TapeScope scope("intra_loss");
    terms.push_back(scale(parts.intra, weights.lambda2));
  }
  TotalLoss out;
  out.total = add_n(terms);
  out.breakdown = {value(parts.id), value(parts.triplet), value(parts.intra), value(parts.inter), out.total.item()};
  return out;
}

}  // namespace drformer
