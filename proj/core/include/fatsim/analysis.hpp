#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "fatsim/attack.hpp"
#include "fatsim/data.hpp"
#include "fatsim/model.hpp"
#include "fatsim/rng.hpp"

namespace fatsim {

// Argmax per row; ties go to the lowest class index.
std::vector<int> argmax_rows(const Tensor& logits);
double accuracy_from_logits(const Tensor& logits, std::span<const int> labels);

std::vector<int> predict(const ParameterSet& params, const ModelConfig& cfg, const Dataset& ds);
double accuracy(const ParameterSet& params, const ModelConfig& cfg, const Dataset& ds);
// Accuracy on PGD-perturbed inputs; rng drives the random start only.
double robust_accuracy(const ParameterSet& params, const ModelConfig& cfg, const Dataset& ds, const AttackConfig& attack,
                       Rng& rng);

// Output of encoder block `layer` (0-based), all tokens of a sample
// flattened into one row: [samples x (N+1)*D].
Tensor collect_activations(const ParameterSet& params, const ModelConfig& cfg, const Dataset& sample,
                           std::size_t layer);

struct CcaResult {
  std::vector<double> correlations;  // descending
};

// Canonical correlations between the columns of x and y (rows are
// observations, columns assumed centered). ridge is added to both
// covariance diagonals.
CcaResult cca(const Tensor& x, const Tensor& y, double ridge = 1e-10);

struct SVCCAReport {
  std::size_t layer = 0;
  std::string pair;
  double mean_correlation = 0.0;
  std::size_t retained = 0;  // canonical directions averaged
};

// Centers columns, keeps the top singular directions of each matrix that
// explain >= variance_keep of its variance, and reports the mean canonical
// correlation between the two reduced subspaces.
SVCCAReport svcca(const Tensor& a, const Tensor& b, double variance_keep = 0.99);

}  // namespace fatsim
