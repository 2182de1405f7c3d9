#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>

#include "fatsim/analysis.hpp"
#include "fatsim/errors.hpp"
#include "fatsim/linalg.hpp"
#include "support.hpp"

using namespace fatsim;
using namespace fatsim::testing;

namespace {

Eigen::MatrixXd to_eigen(const Tensor& t) {
  Eigen::MatrixXd m(t.dim(0), t.dim(1));
  for (std::size_t i = 0; i < t.dim(0); ++i)
    for (std::size_t j = 0; j < t.dim(1); ++j) m(i, j) = t[i * t.dim(1) + j];
  return m;
}

Tensor from_eigen(const Eigen::MatrixXd& m) {
  Tensor t({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) t[static_cast<std::size_t>(i * m.cols() + j)] = m(i, j);
  return t;
}

Eigen::MatrixXd random_orthogonal(std::size_t n, Rng& rng) {
  const Eigen::MatrixXd g = to_eigen(random_tensor({n, n}, rng));
  return Eigen::HouseholderQR<Eigen::MatrixXd>(g).householderQ();
}

}  // namespace

TEST(Argmax, TiesGoToLowestIndex) {
  const Tensor logits({3, 3}, {1, 3, 3, 5, 5, 5, -1, -2, 0});
  EXPECT_EQ(argmax_rows(logits), (std::vector<int>{1, 0, 2}));
  const std::vector<int> labels{1, 0, 0};
  EXPECT_NEAR(accuracy_from_logits(logits, labels), 2.0 / 3.0, 1e-15);
  const std::vector<int> short_labels{1};
  EXPECT_THROW(accuracy_from_logits(logits, short_labels), DimensionError);
}

TEST(Accuracy, MatchesPredictions) {
  const ModelConfig m = tiny_model(HeadType::Vis);
  const ParameterSet p = build_model(m, 3);
  const Dataset ds = random_dataset(m, 9, 4);
  const auto pred = predict(p, m, ds);
  double hits = 0;
  for (std::size_t i = 0; i < ds.size(); ++i) hits += pred[i] == ds.examples[i].label ? 1 : 0;
  EXPECT_DOUBLE_EQ(accuracy(p, m, ds), hits / 9.0);
  Rng rng(1);
  const double robust = robust_accuracy(p, m, ds, AttackConfig{0.0, 0.0, 0, false}, rng);
  EXPECT_DOUBLE_EQ(robust, accuracy(p, m, ds));
}

TEST(Activations, ShapeAndLayerCheck) {
  const ModelConfig m = tiny_model();
  const ParameterSet p = build_model(m, 3);
  const Dataset ds = random_dataset(m, 5, 4);
  const Tensor a = collect_activations(p, m, ds, 1);
  EXPECT_EQ(a.shape(), (Shape{5, m.tokens() * m.embed_dim}));
  EXPECT_THROW(collect_activations(p, m, ds, 2), InvalidArgument);
}

TEST(JacobiSvd, MatchesEigen) {
  Rng rng(5);
  for (auto [r, c] : {std::pair<std::size_t, std::size_t>{7, 4}, {4, 7}, {6, 6}}) {
    const Tensor a = random_tensor({r, c}, rng);
    const Svd d = jacobi_svd(a);
    const Eigen::JacobiSVD<Eigen::MatrixXd> ref(to_eigen(a));
    ASSERT_EQ(d.singular.size(), static_cast<std::size_t>(ref.singularValues().size()));
    for (std::size_t i = 0; i < d.singular.size(); ++i) EXPECT_NEAR(d.singular[i], ref.singularValues()(i), 1e-10);
    // Reconstruction U diag(s) V^T.
    Eigen::MatrixXd u = to_eigen(d.u), v = to_eigen(d.v);
    Eigen::VectorXd s = Eigen::Map<const Eigen::VectorXd>(d.singular.data(), static_cast<Eigen::Index>(d.singular.size()));
    EXPECT_LT((u * s.asDiagonal() * v.transpose() - to_eigen(a)).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(Svcca, SelfSimilarityIsOne) {
  Rng rng(6);
  const Tensor x = random_tensor({60, 8}, rng);
  const SVCCAReport r = svcca(x, x);
  EXPECT_NEAR(r.mean_correlation, 1.0, 1e-6);
  EXPECT_GT(r.retained, 0u);
}

TEST(Svcca, InvariantToOrthogonalTransform) {
  Rng rng(7);
  const Tensor x = random_tensor({80, 6}, rng), y = random_tensor({80, 6}, rng);
  Tensor mixed = x;
  for (std::size_t i = 0; i < mixed.size(); ++i) mixed[i] = 0.7 * x[i] + 0.3 * y[i];
  const double base = svcca(x, mixed).mean_correlation;
  const Tensor rotated = from_eigen(to_eigen(mixed) * random_orthogonal(6, rng));
  EXPECT_NEAR(svcca(x, rotated).mean_correlation, base, 1e-6);
  EXPECT_NEAR(svcca(x, from_eigen(to_eigen(x) * random_orthogonal(6, rng))).mean_correlation, 1.0, 1e-6);
}

TEST(Svcca, IndependentNoiseIsWeaklyCorrelated) {
  double total = 0.0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    total += svcca(random_tensor({200, 10}, rng), random_tensor({200, 10}, rng)).mean_correlation;
  }
  EXPECT_LT(total / 10.0, 0.5);
}

TEST(Svcca, Errors) {
  Rng rng(8);
  EXPECT_THROW(svcca(random_tensor({5, 3}, rng), random_tensor({6, 3}, rng)), DimensionError);
  EXPECT_THROW(svcca(random_tensor({5, 3}, rng), random_tensor({5, 3}, rng), 0.0), InvalidArgument);
}

TEST(Cca, PerfectlyCorrelatedColumns) {
  Rng rng(9);
  const Tensor x = center_columns(random_tensor({50, 3}, rng));
  const CcaResult r = cca(x, x);
  for (double c : r.correlations) EXPECT_NEAR(c, 1.0, 1e-6);
  EXPECT_TRUE(std::is_sorted(r.correlations.rbegin(), r.correlations.rend()));
}
