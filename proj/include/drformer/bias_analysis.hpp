#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace drformer {

// Which branch bias sits in the numerator of w0. own_bias is
// w0 = B0 / (B0 - B1), w1 = -B1 / (B0 - B1). bias_cancelling assigns the
// biases the other way round, w0 = B1 / (B1 - B0), w1 = -B0 / (B1 - B0), and
// is the one that zeroes the bias of the fused prediction.
enum class WeightConvention { own_bias, bias_cancelling };

struct ContributionWeights {
  double w0 = 0.0;
  double w1 = 0.0;
};

// Throws ContractError when bias_0 == bias_1 (singular denominator).
ContributionWeights closed_form_weights(double bias_0, double bias_1,
                                        WeightConvention convention = WeightConvention::own_bias);

struct SignConflictDiagnosis {
  ContributionWeights weights;
  bool conflict = false;  // some weight < 0: no admissible positive reweighting exists
  bool boundary = false;  // some weight == 0 exactly (non-strict positivity)
  std::string regime;
};

SignConflictDiagnosis sign_conflict_report(double bias_0, double bias_1,
                                           WeightConvention convention = WeightConvention::own_bias);

// Running count / mean / second central moment with a pairwise merge, so
// partial reductions over disjoint chunks combine exactly.
class MomentAccumulator {
 public:
  void add(double x);
  void merge(const MomentAccumulator& other);
  std::size_t count() const { return n_; }
  double mean() const { return mean_; }
  double population_variance() const { return n_ ? m2_ / static_cast<double>(n_) : 0.0; }

 private:
  std::size_t n_ = 0;
  double mean_ = 0.0;
  double m2_ = 0.0;
};

// One sample's branch logits and its target encoding, all of length K.
struct BranchLogitSample {
  std::vector<double> s_d;
  std::vector<double> s_c;
  std::vector<double> target;
};

struct BranchBias {
  double bias_d = 0.0;  // mean of (s^D - y) over samples and classes
  double bias_c = 0.0;
  std::size_t samples = 0;
};

BranchBias empirical_bias(std::span<const BranchLogitSample> stream);

struct DecompositionReport {
  double bias_sq = 0.0;
  double variance = 0.0;
  double noise_var = 0.0;
  double generalization = 0.0;  // bias_sq + variance + noise_var
};

// bias_sq = mean(f - y)^2, variance = population variance of f.
DecompositionReport decompose(std::span<const double> fused, std::span<const double> target, double noise_var = 0.0);

// log of the smoothed target distribution; the logit-space target y.
std::vector<double> log_target_encoding(std::size_t label, std::size_t num_classes, double eps);

// Flattened fused stream w0 s^D + w1 s^C and the matching targets.
void fuse_stream(std::span<const BranchLogitSample> stream, ContributionWeights w, std::vector<double>& fused,
                 std::vector<double>& target);

struct WeightingRow {
  std::string name;
  ContributionWeights weights;
  double fused_bias = 0.0;
  DecompositionReport decomposition;
};

struct BiasAnalysisReport {
  BranchBias bias;
  SignConflictDiagnosis own_bias;
  SignConflictDiagnosis bias_cancelling;
  std::vector<WeightingRow> rows;  // fixed and closed-form weightings
};

BiasAnalysisReport analyze_bias(std::span<const BranchLogitSample> stream, double noise_var = 0.0);
void write_report(std::ostream& os, const BiasAnalysisReport& report);

// Per-sample branch-logit dump consumed by `analyze-bias`:
//   reid-logits v1 k=<K> eps=<eps>
//   pid camid label s_d[0..K) s_c[0..K)
struct BranchLogitRecord {
  std::size_t pid = 0;
  std::size_t camid = 0;
  std::size_t label = 0;
  std::vector<double> s_d;
  std::vector<double> s_c;
};

struct BranchLogitDump {
  std::size_t num_classes = 0;
  double eps = 0.1;
  std::vector<BranchLogitRecord> records;

  std::vector<BranchLogitSample> samples() const;
};

void write_branch_logits(std::ostream& os, const BranchLogitDump& dump);
BranchLogitDump read_branch_logits(std::istream& is);

}  // namespace drformer
