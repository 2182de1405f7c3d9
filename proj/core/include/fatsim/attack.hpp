#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "fatsim/data.hpp"
#include "fatsim/model.hpp"
#include "fatsim/params.hpp"
#include "fatsim/rng.hpp"

namespace fatsim {

// l-infinity PGD parameters.
struct AttackConfig {
  double epsilon = 8.0 / 255.0;
  double alpha = 2.0 / 255.0;
  int steps = 7;
  bool random_start = false;

  void validate() const;
};

// Gradient of the loss with respect to batch.images.
using InputGradientFn = std::function<Tensor(const Batch&)>;

InputGradientFn model_input_gradient(const ParameterSet& params, const ModelConfig& cfg);

// s iterations of x <- clip01(project_eps(x + alpha * sign(grad))), starting
// from x0 or (random_start) a uniform point of the eps-ball. Every iterate
// satisfies |x - x0|_inf <= eps in floating point. Labels are untouched.
Batch pgd_perturb(const InputGradientFn& grad, const Batch& batch, const AttackConfig& cfg, Rng& rng);
Batch pgd_perturb(const ParameterSet& params, const ModelConfig& model, const Batch& batch, const AttackConfig& cfg,
                  Rng& rng);

// Single full-size signed step: pgd with steps=1, alpha=eps, no random start.
Batch fgsm_perturb(const InputGradientFn& grad, const Batch& batch, double epsilon);
Batch fgsm_perturb(const ParameterSet& params, const ModelConfig& model, const Batch& batch, double epsilon);

// floor(ratio * batch_size)
std::size_t adversarial_count(std::size_t batch_size, double ratio);

struct MixedBatch {
  Batch batch;
  std::vector<std::size_t> adversarial;  // positions replaced, ascending
};

// Replaces floor(ratio * B) uniformly chosen samples with their PGD
// versions; the rest, and the sample order, are unchanged.
MixedBatch mix_batch(const Batch& batch, double ratio, const InputGradientFn& grad, const AttackConfig& cfg,
                     Rng& rng);
MixedBatch mix_batch(const Batch& batch, double ratio, const ParameterSet& params, const ModelConfig& model,
                     const AttackConfig& cfg, Rng& rng);

}  // namespace fatsim
