#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "seqadv/tensor.hpp"

namespace seqadv::grad {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Moment estimates for one optimizer run; single owner.
struct AdamState {
  AdamConfig config;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::int64_t t = 0;

  AdamState() = default;
  AdamState(AdamConfig cfg, std::span<const Tensor> params);
};

/// Bias-corrected Adam update in place. Throws ShapeError on mismatched
/// shapes and NumericError on a non-finite gradient, leaving params and
/// state untouched in both cases.
void adam_step(std::span<Tensor> params, std::span<const Tensor> grads, AdamState& state);

}  // namespace seqadv::grad
