#include "fatsim/attack.hpp"

#include <algorithm>
#include <cmath>

#include "fatsim/errors.hpp"

namespace fatsim {

void AttackConfig::validate() const {
  if (!std::isfinite(epsilon) || epsilon < 0.0) throw ConfigError("attack epsilon must be finite and >= 0");
  if (!std::isfinite(alpha) || alpha < 0.0) throw ConfigError("attack alpha must be finite and >= 0");
  if (steps < 0) throw ConfigError("attack steps must be >= 0");
}

InputGradientFn model_input_gradient(const ParameterSet& params, const ModelConfig& cfg) {
  return [&params, &cfg](const Batch& b) { return input_gradient(params, cfg, b); };
}

namespace {

// Clamps x into [x0 - eps, x0 + eps] intersected with [0, 1]; the final
// nudges make the bound hold for the floating-point difference too.
double project(double x, double x0, double eps) {
  x = std::clamp(x, x0 - eps, x0 + eps);
  x = std::clamp(x, 0.0, 1.0);
  while (x - x0 > eps) x = std::nextafter(x, x0);
  while (x0 - x > eps) x = std::nextafter(x, x0);
  return x;
}

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

}  // namespace

Batch pgd_perturb(const InputGradientFn& grad, const Batch& batch, const AttackConfig& cfg, Rng& rng) {
  if (batch.size() == 0) throw InvalidArgument("pgd_perturb: empty batch");
  cfg.validate();
  const auto x0 = batch.images.data();
  for (double v : x0) {
    if (!(v >= 0.0 && v <= 1.0)) throw InvalidArgument("pgd_perturb: inputs must lie in [0, 1]");
  }
  Batch adv = batch;
  auto x = adv.images.data();
  if (cfg.random_start) {
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = project(x0[i] + rng.uniform(-cfg.epsilon, cfg.epsilon), x0[i], cfg.epsilon);
  }
  for (int step = 0; step < cfg.steps; ++step) {
    const Tensor g = grad(adv);
    if (g.shape() != adv.images.shape()) {
      throw DimensionError("pgd_perturb: gradient " + shape_str(g.shape()) + " vs images " +
                           shape_str(adv.images.shape()));
    }
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = project(x[i] + cfg.alpha * sign(g[i]), x0[i], cfg.epsilon);
  }
  return adv;
}

Batch pgd_perturb(const ParameterSet& params, const ModelConfig& model, const Batch& batch, const AttackConfig& cfg,
                  Rng& rng) {
  return pgd_perturb(model_input_gradient(params, model), batch, cfg, rng);
}

Batch fgsm_perturb(const InputGradientFn& grad, const Batch& batch, double epsilon) {
  // No random start, so the stream is never drawn from.
  Rng unused(0);
  return pgd_perturb(grad, batch, AttackConfig{epsilon, epsilon, 1, false}, unused);
}

Batch fgsm_perturb(const ParameterSet& params, const ModelConfig& model, const Batch& batch, double epsilon) {
  return fgsm_perturb(model_input_gradient(params, model), batch, epsilon);
}

std::size_t adversarial_count(std::size_t batch_size, double ratio) {
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw InvalidArgument("adversarial ratio must lie in [0, 1]");
  // The epsilon absorbs representation error such as 0.29 * 100 = 28.999...
  return std::min(batch_size, static_cast<std::size_t>(std::floor(ratio * static_cast<double>(batch_size) + 1e-9)));
}

MixedBatch mix_batch(const Batch& batch, double ratio, const InputGradientFn& grad, const AttackConfig& cfg,
                     Rng& rng) {
  if (batch.size() == 0) throw InvalidArgument("mix_batch: empty batch");
  const std::size_t n_adv = adversarial_count(batch.size(), ratio);
  MixedBatch out{batch, {}};
  if (n_adv == 0) return out;

  out.adversarial = rng.sample_without_replacement(batch.size(), n_adv);
  std::sort(out.adversarial.begin(), out.adversarial.end());

  const Shape& s = batch.images.shape();
  const std::size_t stride = batch.images.size() / batch.size();
  Shape sub_shape = s;
  sub_shape[0] = n_adv;
  Batch sub{Tensor(sub_shape), {}};
  for (std::size_t j = 0; j < n_adv; ++j) {
    const std::size_t i = out.adversarial[j];
    std::copy_n(batch.images.data().begin() + static_cast<std::ptrdiff_t>(i * stride), stride,
                sub.images.data().begin() + static_cast<std::ptrdiff_t>(j * stride));
    sub.labels.push_back(batch.labels[i]);
  }
  const Batch perturbed = pgd_perturb(grad, sub, cfg, rng);
  for (std::size_t j = 0; j < n_adv; ++j) {
    const std::size_t i = out.adversarial[j];
    std::copy_n(perturbed.images.data().begin() + static_cast<std::ptrdiff_t>(j * stride), stride,
                out.batch.images.data().begin() + static_cast<std::ptrdiff_t>(i * stride));
  }
  return out;
}

MixedBatch mix_batch(const Batch& batch, double ratio, const ParameterSet& params, const ModelConfig& model,
                     const AttackConfig& cfg, Rng& rng) {
  return mix_batch(batch, ratio, model_input_gradient(params, model), cfg, rng);
}

}  // namespace fatsim
