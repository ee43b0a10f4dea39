#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "agft/tensor.hpp"

namespace agft {

// SGD with heavy-ball momentum under a cosine learning-rate schedule.
struct OptimizerState {
  std::vector<std::vector<double>> velocity;
  double momentum = 0.9;
  double base_lr = 1e-2;
  std::size_t step_index = 0;
  std::size_t total_steps = 1;

  // Zero velocity buffers shaped like `params`.
  static OptimizerState for_params(std::span<const Tensor> params, double momentum,
                                   double base_lr, std::size_t total_steps);
};

// base_lr * (1 + cos(pi * step / total)) / 2. Out-of-range steps are clamped
// into [0, total] with a warning.
double cosine_lr(std::size_t step_index, std::size_t total_steps, double base_lr);

// v <- momentum * v + g;  p <- p - lr * v;  step_index += 1.
// The first overload takes lr from cosine_lr at the current step.
void sgd_momentum_step(std::span<Tensor> params, std::span<const Tensor> grads,
                       OptimizerState& state);
void sgd_momentum_step(std::span<Tensor> params, std::span<const Tensor> grads,
                       OptimizerState& state, double lr);

}  // namespace agft
