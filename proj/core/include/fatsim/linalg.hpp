#pragma once

#include <vector>

#include "fatsim/tensor.hpp"

namespace fatsim {

// Thin SVD A = U diag(s) V^T of an m x n matrix, r = min(m, n).
// U: m x r, V: n x r, singular values descending.
struct Svd {
  Tensor u;
  std::vector<double> singular;
  Tensor v;
};

// One-sided (Hestenes) Jacobi. Columns are rotated until every pair is
// orthogonal to within tol relative to their norms.
Svd jacobi_svd(const Tensor& a, double tol = 1e-10, int max_sweeps = 100);

Tensor transpose(const Tensor& a);
Tensor matmul(const Tensor& a, const Tensor& b);
// Subtracts each column's mean.
Tensor center_columns(const Tensor& a);

}  // namespace fatsim
