#pragma once

// Test-side restatements of the attack objectives, independent of the tape.

#include <cmath>
#include <cstddef>
#include <vector>

#include "seqadv/adam.hpp"
#include "seqadv/attacks.hpp"

namespace seqadv::test_support {

/// Objective value from its ingredients: squared distance d, task loss, eta = (e1, e2).
inline double oracle_objective(attacks::ObjectiveKind kind, bool sequential, double d, double task, double e1,
                               double e2, double lambda, std::size_t n = 2, double c = 0.1) {
  constexpr double frames = 25.0;
  switch (kind) {
    case attacks::ObjectiveKind::basic:
      return task + lambda * d;
    case attacks::ObjectiveKind::adaptive:
      if (!sequential) return std::exp(-e1) * d / 2.0 + std::exp(-e2) * task + e1 + e2;
      return std::exp(-e1) * d + std::exp(-e2) * task + e1 + frames * e2 + std::exp(-e2);
    case attacks::ObjectiveKind::general_n: {
      const double nn = static_cast<double>(n);
      return std::exp(-e1) * d / 2.0 + std::exp(-e2) * task / nn + e1 + frames * e2 +
             std::exp(-e2) * (std::log(nn) - (nn - 1.0) * std::log(c)) / nn;
    }
  }
  return 0.0;
}

/// Minimizes the objective over eta alone with w frozen, decaying the step size.
inline grad::Tensor optimize_eta(const attacks::AttackProblem& p, const grad::Tensor& w) {
  std::vector<grad::Tensor> params{grad::Tensor({2}, 0.0)};
  grad::AdamState adam(grad::AdamConfig{.learning_rate = 0.1}, params);
  for (int i = 0; i < 1600; ++i) {
    if (i > 0 && i % 400 == 0) adam.config.learning_rate /= 10.0;
    auto pt = p.evaluate(w, params[0], 0.0, true);
    std::vector<grad::Tensor> g{pt.grad_eta};
    grad::adam_step(params, g, adam);
  }
  return params[0];
}

}  // namespace seqadv::test_support
