#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "stretchlab/core/tensor.hpp"

namespace testutil {

using stretchlab::Tensor;

// Central finite differences against an analytic gradient. `f` evaluates the
// scalar function at the current value of *x; `checked` limits how many
// elements per tensor get probed (spread deterministically).
struct GradCheckResult {
  double max_rel_err = 0;
  std::string worst;
};

// Pass when |fd - an| <= atol + rtol * max(|fd|, |an|): the atol floor covers
// finite-difference roundoff on near-zero gradients, everything above it is
// held to the relative tolerance. max_rel_err reports the worst
// (|fd - an| - atol) / max(|fd|, |an|) over the probed elements.
inline GradCheckResult finite_diff_check(
    std::vector<Tensor<double>*> params,
    const std::function<double()>& f,
    const std::function<std::vector<Tensor<double>>()>& analytic_grads,
    double eps = 1e-5, int checked_per_tensor = 0, double atol = 1e-6) {
  std::vector<Tensor<double>> grads = analytic_grads();
  GradCheckResult res;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Tensor<double>& p = *params[pi];
    int64_t n = p.size();
    int64_t step = 1;
    if (checked_per_tensor > 0 && n > checked_per_tensor)
      step = n / checked_per_tensor;
    for (int64_t i = 0; i < n; i += step) {
      double orig = p[i];
      p[i] = orig + eps;
      double fp = f();
      p[i] = orig - eps;
      double fm = f();
      p[i] = orig;
      double fd = (fp - fm) / (2 * eps);
      double an = grads[pi].empty() ? 0.0 : grads[pi][i];
      double diff = std::abs(fd - an);
      if (diff <= atol) continue;
      double e = (diff - atol) / std::max(std::abs(fd), std::abs(an));
      if (e > res.max_rel_err) {
        res.max_rel_err = e;
        res.worst = "param " + std::to_string(pi) + " elem " + std::to_string(i) +
                    " fd=" + std::to_string(fd) + " an=" + std::to_string(an);
      }
    }
  }
  return res;
}

}  // namespace testutil
