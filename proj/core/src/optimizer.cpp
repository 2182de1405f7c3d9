#include "fatsim/optimizer.hpp"

#include "fatsim/errors.hpp"

namespace fatsim {

OptimizerState::OptimizerState(const ParameterSet& params, double lr_, double momentum_)
    : lr(lr_), momentum(momentum_), velocity(params.zeros_like()) {
  if (!(lr >= 0.0)) throw InvalidArgument("learning rate must be non-negative");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw InvalidArgument("momentum must lie in [0, 1)");
}

void sgd_step(ParameterSet& params, const ParameterSet& grads, OptimizerState& state) {
  require_same_layout(params, grads, "sgd_step");
  require_same_layout(params, state.velocity, "sgd_step velocity");
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto theta = params.tensor(i).data();
    auto g = grads.tensor(i).data();
    auto v = state.velocity.tensor(i).data();
    for (std::size_t j = 0; j < theta.size(); ++j) {
      v[j] = state.momentum * v[j] + g[j];
      theta[j] -= state.lr * v[j];
    }
  }
}

double decay_lr(double lr, double rate) {
  if (!(lr > 0.0)) throw InvalidArgument("decay_lr: learning rate must be positive");
  if (!(rate >= 0.0 && rate < 1.0)) throw InvalidArgument("decay_lr: rate must lie in [0, 1)");
  return lr * (1.0 - rate);
}

}  // namespace fatsim
