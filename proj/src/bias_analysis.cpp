#include "drformer/bias_analysis.hpp"

#include <cmath>
#include <istream>
#include <ostream>

#include "drformer/errors.hpp"
#include "drformer/losses.hpp"
#include "drformer/text_io.hpp"

namespace drformer {

ContributionWeights closed_form_weights(double bias_0, double bias_1, WeightConvention convention) {
  if (bias_0 == bias_1) throw ContractError("closed_form_weights: equal biases make the denominator vanish");
  if (convention == WeightConvention::own_bias) {
    const double denom = bias_0 - bias_1;
    return {bias_0 / denom, -bias_1 / denom};
  }
  const double denom = bias_1 - bias_0;
  return {bias_1 / denom, -bias_0 / denom};
}

SignConflictDiagnosis sign_conflict_report(double bias_0, double bias_1, WeightConvention convention) {
  SignConflictDiagnosis d;
  d.weights = closed_form_weights(bias_0, bias_1, convention);
  d.conflict = d.weights.w0 < 0.0 || d.weights.w1 < 0.0;
  d.boundary = !d.conflict && (d.weights.w0 == 0.0 || d.weights.w1 == 0.0);
  if (d.conflict) {
    d.regime = "conflict: no positive reweighting; minimize the bias of each branch";
  } else if (d.boundary) {
    d.regime = "boundary: non-strict solution, one branch carries all weight";
  } else {
    d.regime = "admissible: a positive reweighting removes the fused bias";
  }
  return d;
}

void MomentAccumulator::add(double x) {
  ++n_;
  const double delta = x - mean_;
  mean_ += delta / static_cast<double>(n_);
  m2_ += delta * (x - mean_);
}

void MomentAccumulator::merge(const MomentAccumulator& other) {
  if (other.n_ == 0) return;
  if (n_ == 0) {
    *this = other;
    return;
  }
  const double na = static_cast<double>(n_), nb = static_cast<double>(other.n_);
  const double delta = other.mean_ - mean_;
  const double n = na + nb;
  mean_ += delta * nb / n;
  m2_ += other.m2_ + delta * delta * na * nb / n;
  n_ += other.n_;
}

BranchBias empirical_bias(std::span<const BranchLogitSample> stream) {
  if (stream.empty()) throw ContractError("empirical_bias: empty logit stream");
  MomentAccumulator d, c;
  for (const auto& s : stream) {
    if (s.s_d.size() != s.target.size() || s.s_c.size() != s.target.size() || s.target.empty()) {
      throw DimensionError("empirical_bias: sample logits and target differ in length");
    }
    for (std::size_t k = 0; k < s.target.size(); ++k) {
      d.add(s.s_d[k] - s.target[k]);
      c.add(s.s_c[k] - s.target[k]);
    }
  }
  return {d.mean(), c.mean(), stream.size()};
}

DecompositionReport decompose(std::span<const double> fused, std::span<const double> target, double noise_var) {
  if (fused.size() != target.size()) throw DimensionError("decompose: fused and target streams differ in length");
  if (fused.size() < 2) throw ContractError("decompose: need at least two samples");
  if (!(noise_var >= 0.0)) throw ContractError("decompose: noise variance must be non-negative");
  MomentAccumulator f, err;
  for (std::size_t i = 0; i < fused.size(); ++i) {
    f.add(fused[i]);
    err.add(fused[i] - target[i]);
  }
  DecompositionReport r;
  r.bias_sq = err.mean() * err.mean();
  r.variance = f.population_variance();
  r.noise_var = noise_var;
  r.generalization = r.bias_sq + r.variance + r.noise_var;
  return r;
}

std::vector<double> log_target_encoding(std::size_t label, std::size_t num_classes, double eps) {
  if (!(eps > 0.0)) throw ContractError("log_target_encoding: eps must be positive (log of a zero target)");
  auto q = smoothed_target(label, num_classes, eps);
  for (auto& v : q) v = std::log(v);
  return q;
}

void fuse_stream(std::span<const BranchLogitSample> stream, ContributionWeights w, std::vector<double>& fused,
                 std::vector<double>& target) {
  fused.clear();
  target.clear();
  for (const auto& s : stream) {
    for (std::size_t k = 0; k < s.target.size(); ++k) {
      fused.push_back(w.w0 * s.s_d[k] + w.w1 * s.s_c[k]);
      target.push_back(s.target[k]);
    }
  }
}

BiasAnalysisReport analyze_bias(std::span<const BranchLogitSample> stream, double noise_var) {
  BiasAnalysisReport report;
  report.bias = empirical_bias(stream);
  const double b0 = report.bias.bias_d, b1 = report.bias.bias_c;
  std::vector<std::pair<std::string, ContributionWeights>> weightings = {
      {"dino_only", {1.0, 0.0}}, {"clip_only", {0.0, 1.0}}, {"equal", {0.5, 0.5}}};
  if (b0 != b1) {
    report.own_bias = sign_conflict_report(b0, b1, WeightConvention::own_bias);
    report.bias_cancelling = sign_conflict_report(b0, b1, WeightConvention::bias_cancelling);
    weightings.emplace_back("closed_form_own_bias", report.own_bias.weights);
    weightings.emplace_back("closed_form_cancelling", report.bias_cancelling.weights);
  }
  std::vector<double> fused, target;
  for (const auto& [name, w] : weightings) {
    fuse_stream(stream, w, fused, target);
    WeightingRow row{name, w, w.w0 * b0 + w.w1 * b1, {}};
    row.decomposition = decompose(fused, target, noise_var);
    report.rows.push_back(std::move(row));
  }
  return report;
}

void write_report(std::ostream& os, const BiasAnalysisReport& r) {
  using text::number;
  os << "samples=" << r.bias.samples << '\n';
  os << "bias_d=" << number(r.bias.bias_d) << '\n';
  os << "bias_c=" << number(r.bias.bias_c) << '\n';
  if (r.bias.bias_d == r.bias.bias_c) {
    os << "closed_form=undefined (equal branch biases)\n";
  } else {
    os << "own_bias.w0=" << number(r.own_bias.weights.w0) << " own_bias.w1=" << number(r.own_bias.weights.w1)
       << " conflict=" << (r.own_bias.conflict ? "true" : "false") << '\n';
    os << "bias_cancelling.w0=" << number(r.bias_cancelling.weights.w0) << " bias_cancelling.w1=" << number(r.bias_cancelling.weights.w1)
       << " conflict=" << (r.bias_cancelling.conflict ? "true" : "false") << '\n';
    os << "regime=" << r.own_bias.regime << '\n';
  }
  os << "weighting\tw0\tw1\tfused_bias\tbias_sq\tvariance\tnoise_var\tg\n";
  for (const auto& row : r.rows) {
    os << row.name << '\t' << number(row.weights.w0) << '\t' << number(row.weights.w1) << '\t'
       << number(row.fused_bias) << '\t' << number(row.decomposition.bias_sq) << '\t'
       << number(row.decomposition.variance) << '\t' << number(row.decomposition.noise_var) << '\t'
       << number(row.decomposition.generalization) << '\n';
  }
}

std::vector<BranchLogitSample> BranchLogitDump::samples() const {
  std::vector<BranchLogitSample> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back({r.s_d, r.s_c, log_target_encoding(r.label, num_classes, eps)});
  return out;
}

void write_branch_logits(std::ostream& os, const BranchLogitDump& dump) {
  os << "reid-logits v1 k=" << dump.num_classes << " eps=" << text::number(dump.eps) << '\n';
  for (const auto& r : dump.records) {
    os << r.pid << ' ' << r.camid << ' ' << r.label;
    for (double v : r.s_d) os << ' ' << text::number(v);
    for (double v : r.s_c) os << ' ' << text::number(v);
    os << '\n';
  }
}

BranchLogitDump read_branch_logits(std::istream& is) {
  std::string line;
  std::size_t line_no = 1;
  if (!std::getline(is, line)) throw ParseError("empty logit dump", line_no);
  const auto header = text::parse_header(line, "reid-logits", line_no);
  BranchLogitDump dump;
  try {
    dump.num_classes = text::parse_uint(header.at("k"), line_no);
    dump.eps = text::parse_double(header.at("eps"), line_no);
  } catch (const std::out_of_range&) {
    throw ParseError("logit dump header needs k= and eps=", line_no);
  }
  const std::size_t k = dump.num_classes;
  while (std::getline(is, line)) {
    ++line_no;
    auto tok = text::split_ws(line);
    if (tok.empty()) continue;
    if (tok.size() != 3 + 2 * k) {
      throw ParseError("expected " + std::to_string(3 + 2 * k) + " fields, got " + std::to_string(tok.size()), line_no);
    }
    BranchLogitRecord r;
    r.pid = text::parse_uint(tok[0], line_no);
    r.camid = text::parse_uint(tok[1], line_no);
    r.label = text::parse_uint(tok[2], line_no);
    if (r.label >= k) throw ParseError("label outside [0, k)", line_no);
    for (std::size_t i = 0; i < k; ++i) r.s_d.push_back(text::parse_double(tok[3 + i], line_no));
    for (std::size_t i = 0; i < k; ++i) r.s_c.push_back(text::parse_double(tok[3 + k + i], line_no));
    dump.records.push_back(std::move(r));
  }
  return dump;
}

}  // namespace drformer
