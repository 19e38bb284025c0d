#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "distill/tensor.hpp"

namespace distill {

struct AdamConfig {
  double learning_rate = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adaptive-moment optimizer state. Moment buffers are created on the first
/// step and keep the shapes of the parameters they track.
struct OptimizerState {
  AdamConfig config;
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  /// Optional per-parameter L2 coefficient added to the gradient (coupled decay).
  std::vector<double> weight_decay;
  std::size_t step = 0;

  explicit OptimizerState(AdamConfig cfg = {}) : config(cfg) {}
};

/// One bias-corrected Adam update, in place. params[i] and grads[i] must
/// share a shape, and the parameter set must not change between steps.
void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, OptimizerState& state);

}  // namespace distill
