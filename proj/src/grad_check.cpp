#include "drformer/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "drformer/errors.hpp"

namespace drformer {
namespace {

std::vector<std::size_t> pick_entries(std::size_t n, std::size_t want, std::mt19937_64& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  if (want == 0 || want >= n) return idx;
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(want);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

GradCheckReport grad_check(const std::function<Tensor()>& loss_fn, std::span<Tensor> leaves,
                           const GradCheckOptions& options) {
  GradCheckReport report;
  for (auto& leaf : leaves) {
    if (!leaf.requires_grad()) throw ContractError("grad_check: every leaf must require a gradient");
    leaf.zero_grad();
  }

  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    Tensor loss;
    {
      RecordingGuard guard(tape);
      loss = loss_fn();
    }
    if (!std::isfinite(loss.item())) {
      report.failure = "non-finite loss at the base point";
      return report;
    }
    tape.backward(loss);
    for (auto& leaf : leaves) {
      const auto g = leaf.grad();
      analytic.emplace_back(g.begin(), g.end());
    }
  }

  std::mt19937_64 rng(options.seed);
  NoGradGuard no_grad;
  for (std::size_t l = 0; l < leaves.size(); ++l) {
    auto values = leaves[l].mutable_data();
    for (std::size_t i : pick_entries(values.size(), options.entries_per_leaf, rng)) {
      const double saved = values[i];
      values[i] = saved + options.eps;
      const double up = loss_fn().item();
      values[i] = saved - options.eps;
      const double down = loss_fn().item();
      values[i] = saved;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        report.failure = "non-finite loss perturbing leaf " + std::to_string(l) + " entry " + std::to_string(i);
        report.worst_leaf = l;
        report.worst_index = i;
        return report;
      }
      const double numeric = (up - down) / (2.0 * options.eps);
      const double a = analytic[l][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), options.floor});
      const double err = std::abs(a - numeric) / denom;
      ++report.entries_checked;
      if (err >= report.max_rel_error) {
        report.max_rel_error = err;
        report.worst_leaf = l;
        report.worst_index = i;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
    }
  }
  report.passed = report.max_rel_error < options.tol;
  return report;
}

GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& point,
                           const GradCheckOptions& options) {
  Tensor leaf = point.clone(true);
  Tensor leaves[] = {leaf};
  return grad_check([&] { return f(leaf); }, leaves, options);
}

}  // namespace drformer
