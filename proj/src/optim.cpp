#include "agft/optim.hpp"

#include <cmath>
#include <numbers>

#include <spdlog/spdlog.h>

#include "agft/error.hpp"

namespace agft {

OptimizerState OptimizerState::for_params(std::span<const Tensor> params, double momentum,
                                          double base_lr, std::size_t total_steps) {
  if (momentum < 0.0 || momentum >= 1.0) throw ContractViolation("momentum must lie in [0, 1)");
  if (total_steps == 0) throw ContractViolation("total_steps must be positive");
  OptimizerState state;
  state.momentum = momentum;
  state.base_lr = base_lr;
  state.total_steps = total_steps;
  for (const Tensor& p : params) state.velocity.emplace_back(p.size(), 0.0);
  return state;
}

double cosine_lr(std::size_t step_index, std::size_t total_steps, double base_lr) {
  if (total_steps == 0) throw ContractViolation("cosine_lr: total_steps must be positive");
  if (step_index > total_steps) {
    spdlog::warn("cosine_lr: step {} beyond schedule of {} steps, clamping", step_index,
                 total_steps);
    step_index = total_steps;
  }
  const double frac = static_cast<double>(step_index) / static_cast<double>(total_steps);
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
}

void sgd_momentum_step(std::span<Tensor> params, std::span<const Tensor> grads,
                       OptimizerState& state) {
  sgd_momentum_step(params, grads, state,
                    cosine_lr(state.step_index, state.total_steps, state.base_lr));
}

void sgd_momentum_step(std::span<Tensor> params, std::span<const Tensor> grads,
                       OptimizerState& state, double lr) {
  if (params.size() != grads.size() || params.size() != state.velocity.size()) {
    throw ContractViolation("sgd_momentum_step: parameter, gradient and velocity counts differ");
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (params[k].shape() != grads[k].shape() || params[k].size() != state.velocity[k].size()) {
      throw ContractViolation("sgd_momentum_step: shape mismatch for parameter " +
                              std::to_string(k) + " " + shape_string(params[k].shape()) +
                              " vs gradient " + shape_string(grads[k].shape()));
    }
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    std::vector<double>& v = state.velocity[k];
    std::span<double> p = params[k].data();
    std::span<const double> g = grads[k].data();
    for (std::size_t i = 0; i < p.size(); ++i) {
      v[i] = state.momentum * v[i] + g[i];
      p[i] -= lr * v[i];
    }
  }
  ++state.step_index;
}

}  // namespace agft
