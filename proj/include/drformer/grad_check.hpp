#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>

#include "drformer/tensor.hpp"

namespace drformer {

struct GradCheckOptions {
  double eps = 1e-5;
  double tol = 1e-4;
  // Denominator floor of the relative error, |a - n| / max(|a|, |n|, floor),
  // so entries whose true gradient is ~0 are judged on absolute error.
  double floor = 1e-4;
  // 0 checks every entry; otherwise this many entries per leaf, drawn with `seed`.
  std::size_t entries_per_leaf = 0;
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  bool passed = false;
  double max_rel_error = 0.0;
  std::size_t entries_checked = 0;
  std::size_t worst_leaf = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::string failure;  // set when a non-finite value was encountered
};

// Compares the tape gradient of `loss_fn` with respect to `leaves` against
// central finite differences. `loss_fn` must rebuild its graph from the
// current leaf values on every call and return a scalar.
GradCheckReport grad_check(const std::function<Tensor()>& loss_fn, std::span<Tensor> leaves,
                           const GradCheckOptions& options = {});

// Single-point form: f(point) -> scalar.
GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& point,
                           const GradCheckOptions& options = {});

}  // namespace drformer
