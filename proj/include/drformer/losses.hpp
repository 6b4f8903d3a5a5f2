#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "drformer/fusion.hpp"
#include "drformer/tensor.hpp"

namespace drformer {

struct LossWeights {
  double lambda1 = 0.5;  // inter-model bias regularizer
  double lambda2 = 5.0;  // intra-model token diversity regularizer
  double margin_alpha = 0.3;
  double label_smoothing_eps = 0.1;

  void validate() const;  // throws ConfigError
};

// Unweighted terms plus the weighted total of one batch.
struct LossBreakdown {
  double id_loss = 0.0;
  double triplet_loss = 0.0;
  double intra_loss = 0.0;
  double inter_loss = 0.0;
  double total = 0.0;
};

// Smoothed target distribution: 1 - eps on the label, eps / (K - 1) elsewhere.
std::vector<double> smoothed_target(std::size_t label, std::size_t num_classes, double eps);

// Mean over rows of -sum_j q_j log softmax(logits)_j. logits [B x K] or [K].
Tensor id_loss(const Tensor& logits, std::span<const std::size_t> labels, double eps);

// For every anchor: hardest (farthest) positive and hardest (nearest)
// negative by Euclidean distance; mean of max(d_p - d_n + alpha, 0).
Tensor triplet_loss(const Tensor& features, std::span<const std::size_t> labels, double alpha);

// Mean cosine between the first token and each remaining token, summed over
// the two encoders. Returns 0 (with a one-time warning) when N = 1.
Tensor intra_loss(const Tensor& f_d, const Tensor& f_c);

// ID loss of each branch's duplicated feature through the shared classifier.
Tensor inter_loss(const Tensor& z_dc, const Tensor& z_cd, const LinearClassifier& clf,
                  std::span<const std::size_t> labels, double eps);

// A term left undefined is treated as zero and never joins the graph.
struct LossParts {
  Tensor id;
  Tensor triplet;
  Tensor intra;
  Tensor inter;
};

struct TotalLoss {
  Tensor total;
  LossBreakdown breakdown;
};

// L_ID + L_Tri + lambda1 L_inter + lambda2 L_intra. A term with zero weight is
// reported in the breakdown but does not enter the graph. Throws
// TrainingDivergenceError naming the first non-finite term.
TotalLoss total_loss(const LossParts& parts, const LossWeights& weights);

}  // namespace drformer
