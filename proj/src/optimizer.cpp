#include "distill/optimizer.hpp"

#include <cmath>
#include <string>

#include "distill/error.hpp"

namespace distill {

void adam_step(std::span<Tensor* const> params, std::span<const Tensor> grads, OptimizerState& state) {
  const AdamConfig& cfg = state.config;
  if (params.size() != grads.size()) {
    throw DimensionError("adam_step: " + std::to_string(params.size()) + " parameters but " +
                         std::to_string(grads.size()) + " gradients");
  }
  if (!(cfg.learning_rate > 0.0) || !(cfg.beta1 > 0.0 && cfg.beta1 < 1.0) ||
      !(cfg.beta2 > 0.0 && cfg.beta2 < 1.0) || !(cfg.epsilon > 0.0)) {
    throw ContractError("adam_step: invalid hyperparameters");
  }
  if (state.first_moment.empty()) {
    for (Tensor* p : params) {
      state.first_moment.emplace_back(p->shape());
      state.second_moment.emplace_back(p->shape());
    }
  }
  if (state.first_moment.size() != params.size()) {
    throw DimensionError("adam_step: parameter count changed between steps");
  }
  if (!state.weight_decay.empty() && state.weight_decay.size() != params.size()) {
    throw DimensionError("adam_step: weight_decay has wrong length");
  }

  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!params[i]->same_shape(grads[i]) || !params[i]->same_shape(state.first_moment[i])) {
      throw DimensionError("adam_step: parameter " + std::to_string(i) + " shape " +
                           params[i]->shape_string() + " vs gradient " + grads[i].shape_string());
    }
  }

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(cfg.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg.beta2, t);

  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = *params[i];
    Tensor& m = state.first_moment[i];
    Tensor& v = state.second_moment[i];
    const double decay = state.weight_decay.empty() ? 0.0 : state.weight_decay[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double g = grads[i][j] + decay * p[j];
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
      const double m_hat = m[j] / bc1;
      const double v_hat = v[j] / bc2;
      p[j] -= cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon);
    }
  }
}

}  // namespace distill
