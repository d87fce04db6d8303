#include "seqadv/adam.hpp"

#include <cmath>

#include <fmt/format.h>

namespace seqadv::grad {

AdamState::AdamState(AdamConfig cfg, std::span<const Tensor> params) : config(cfg) {
  m.reserve(params.size());
  v.reserve(params.size());
  for (const auto& p : params) {
    m.emplace_back(p.shape());
    v.emplace_back(p.shape());
  }
}

void adam_step(std::span<Tensor> params, std::span<const Tensor> grads, AdamState& state) {
  if (state.t < 0) throw Error("adam: negative step counter");
  if (params.size() != grads.size() || params.size() != state.m.size()) {
    throw ShapeError(fmt::format("adam: {} params, {} grads, {} moment slots", params.size(), grads.size(),
                                 state.m.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].shape() != grads[i].shape() || params[i].shape() != state.m[i].shape()) {
      throw ShapeError(fmt::format("adam: parameter {} has shape {}, gradient {}", i, shape_str(params[i].shape()),
                                   shape_str(grads[i].shape())));
    }
    if (!grads[i].all_finite()) throw NumericError(fmt::format("adam: non-finite gradient for parameter {}", i));
  }

  const auto& c = state.config;
  state.t += 1;
  const double t = static_cast<double>(state.t);
  const double correction1 = 1.0 - std::pow(c.beta1, t);
  const double correction2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].data();
    const auto g = grads[i].data();
    auto m = state.m[i].data();
    auto v = state.v[i].data();
    for (std::size_t k = 0; k < p.size(); ++k) {
      m[k] = c.beta1 * m[k] + (1.0 - c.beta1) * g[k];
      v[k] = c.beta2 * v[k] + (1.0 - c.beta2) * g[k] * g[k];
      const double m_hat = m[k] / correction1;
      const double v_hat = v[k] / correction2;
      p[k] -= c.learning_rate * m_hat / (std::sqrt(v_hat) + c.epsilon);
    }
  }
}

}  // namespace seqadv::grad
