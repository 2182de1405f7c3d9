#pragma once

#include "fatsim/params.hpp"

namespace fatsim {

// SGD with classical momentum: v <- momentum * v + g; theta <- theta - lr * v.
struct OptimizerState {
  OptimizerState(const ParameterSet& params, double lr, double momentum);

  double lr;
  double momentum;
  ParameterSet velocity;
};

void sgd_step(ParameterSet& params, const ParameterSet& grads, OptimizerState& state);

// lr * (1 - rate); rate must lie in [0, 1).
double decay_lr(double lr, double rate);

}  // namespace fatsim
