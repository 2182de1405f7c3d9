#include "fatsim/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fatsim/errors.hpp"

namespace fatsim {

namespace {

void require_matrix(const Tensor& a, const char* op) {
  if (a.rank() != 2) throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_str(a.shape()));
}

// Jacobi on the columns of a tall (m >= n) matrix.
Svd jacobi_tall(const Tensor& a, double tol, int max_sweeps) {
  const std::size_t m = a.dim(0), n = a.dim(1);
  // Column-major working copies make the pair loops contiguous.
  std::vector<double> u(m * n), v(n * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) u[j * m + i] = a[i * n + j];
  for (std::size_t j = 0; j < n; ++j) v[j * n + j] = 1.0;

  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        double* up = u.data() + p * m;
        double* uq = u.data() + q * m;
        double alpha = 0.0, beta = 0.0, gamma = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
          alpha += up[i] * up[i];
          beta += uq[i] * uq[i];
          gamma += up[i] * uq[i];
        }
        if (gamma == 0.0 || std::abs(gamma) <= tol * std::sqrt(alpha * beta)) continue;
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = std::copysign(1.0, zeta) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < m; ++i) {
          const double x = up[i], y = uq[i];
          up[i] = c * x - s * y;
          uq[i] = s * x + c * y;
        }
        double* vp = v.data() + p * n;
        double* vq = v.data() + q * n;
        for (std::size_t i = 0; i < n; ++i) {
          const double x = vp[i], y = vq[i];
          vp[i] = c * x - s * y;
          vq[i] = s * x + c * y;
        }
      }
    }
    if (!rotated) break;
  }

  std::vector<double> norms(n);
  for (std::size_t j = 0; j < n; ++j) {
    double acc = 0.0;
    for (std::size_t i = 0; i < m; ++i) acc += u[j * m + i] * u[j * m + i];
    norms[j] = std::sqrt(acc);
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return norms[x] > norms[y]; });

  Svd out{Tensor(Shape{m, n}), std::vector<double>(n), Tensor(Shape{n, n})};
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t j = order[r];
    out.singular[r] = norms[j];
    const double inv = norms[j] > 0.0 ? 1.0 / norms[j] : 0.0;
    for (std::size_t i = 0; i < m; ++i) out.u[i * n + r] = u[j * m + i] * inv;
    for (std::size_t i = 0; i < n; ++i) out.v[i * n + r] = v[j * n + i];
  }
  return out;
}

}  // namespace

Tensor transpose(const Tensor& a) {
  require_matrix(a, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  Tensor t(Shape{n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) t[j * m + i] = a[i * n + j];
  return t;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) throw DimensionError("matmul: " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  Tensor c(Shape{m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double x = a[i * k + p];
      for (std::size_t j = 0; j < n; ++j) c[i * n + j] += x * b[p * n + j];
    }
  return c;
}

Tensor center_columns(const Tensor& a) {
  require_matrix(a, "center_columns");
  const std::size_t m = a.dim(0), n = a.dim(1);
  Tensor out = a;
  for (std::size_t j = 0; j < n; ++j) {
    double mean = 0.0;
    for (std::size_t i = 0; i < m; ++i) mean += a[i * n + j];
    mean /= static_cast<double>(m);
    for (std::size_t i = 0; i < m; ++i) out[i * n + j] -= mean;
  }
  return out;
}

Svd jacobi_svd(const Tensor& a, double tol, int max_sweeps) {
  require_matrix(a, "jacobi_svd");
  if (a.dim(0) >= a.dim(1)) return jacobi_tall(a, tol, max_sweeps);
  Svd t = jacobi_tall(transpose(a), tol, max_sweeps);
  return Svd{std::move(t.v), std::move(t.singular), std::move(t.u)};
}

}  // namespace fatsim
