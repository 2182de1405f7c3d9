#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "fatsim/data.hpp"
#include "fatsim/graph.hpp"
#include "fatsim/model.hpp"
#include "fatsim/ops.hpp"
#include "fatsim/rng.hpp"
#include "fatsim/tensor.hpp"

namespace fatsim::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// |a - n| / max(|a|, |n|, floor)
inline double rel_error(double a, double n, double floor = 1e-6) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

using GraphFn = std::function<Var(Graph&, const std::vector<Var>&)>;

// Worst relative error between the tape gradient and central finite
// differences of sum(f(inputs) * W) for a fixed random W.
inline double gradient_error(const std::vector<Tensor>& inputs, const GraphFn& f, double h = 1e-6,
                             std::uint64_t seed = 7) {
  Tensor weights;
  auto loss_of = [&](const std::vector<Tensor>& xs, std::vector<Tensor>* grads) {
    Graph g;
    std::vector<Var> vars;
    for (const auto& x : xs) vars.push_back(g.input(x, grads != nullptr));
    Var out = f(g, vars);
    if (weights.empty()) {
      Rng rng(seed);
      weights = random_tensor(out.shape(), rng);
    }
    Var loss = sum(mul(out, g.constant(weights)));
    if (grads != nullptr) {
      g.backward(loss);
      for (const auto& v : vars) grads->push_back(g.grad(v));
    }
    return loss.value().item();
  };
  std::vector<Tensor> analytic;
  loss_of(inputs, &analytic);
  double worst = 0.0;
  std::vector<Tensor> xs = inputs;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    for (std::size_t i = 0; i < xs[k].size(); ++i) {
      const double orig = xs[k][i];
      xs[k][i] = orig + h;
      const double up = loss_of(xs, nullptr);
      xs[k][i] = orig - h;
      const double down = loss_of(xs, nullptr);
      xs[k][i] = orig;
      const double numeric = (up - down) / (2 * h);
      worst = std::max(worst, rel_error(analytic[k][i], numeric, 1e-2));
    }
  }
  return worst;
}

inline ModelConfig tiny_model(HeadType head = HeadType::Cls) {
  ModelConfig m;
  m.image_h = 8;
  m.image_w = 8;
  m.channels = 1;
  m.patch_size = 4;
  m.embed_dim = 8;
  m.num_heads = 2;
  m.depth = 2;
  m.num_classes = 3;
  m.head = head;
  return m;
}

inline Dataset random_dataset(const ModelConfig& m, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Dataset ds;
  ds.num_classes = static_cast<int>(m.num_classes);
  for (std::size_t i = 0; i < n; ++i) {
    ds.examples.push_back(
        Example{random_tensor({m.image_h, m.image_w, m.channels}, rng, 0.0, 1.0), static_cast<int>(i % m.num_classes)});
  }
  return ds;
}

}  // namespace fatsim::testing
