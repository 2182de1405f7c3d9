#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "fatsim/aggregation.hpp"
#include "fatsim/errors.hpp"
#include "support.hpp"

using namespace fatsim;
using namespace fatsim::testing;

namespace {

ParameterSet scalar_set(double v) {
  ParameterSet p;
  p.add("w", Tensor({1}, {v}));
  p.set_last_layer({"w"});
  return p;
}

ParameterSet random_set(Rng& rng) {
  ParameterSet p;
  p.add("a", random_tensor({3, 2}, rng));
  p.add("head.weight", random_tensor({4}, rng));
  p.add("head.bias", random_tensor({2}, rng));
  p.set_last_layer({"head.weight", "head.bias"});
  return p;
}

double sum(const std::vector<double>& w) { return std::accumulate(w.begin(), w.end(), 0.0); }

}  // namespace

TEST(FedAvg, WeightsBySampleCount) {
  const std::vector<ClientUpdate> ups{{10, scalar_set(1.0)}, {30, scalar_set(3.0)}};
  EXPECT_DOUBLE_EQ(aggregate_fedavg(ups).at("w")[0], 2.5);
  const std::vector<std::size_t> counts{10, 30};
  EXPECT_EQ(fedavg_weights(counts), (std::vector<double>{0.25, 0.75}));
}

TEST(FedAvg, MatchesScalarLoop) {
  Rng rng(1);
  std::vector<ClientUpdate> ups;
  for (std::size_t n : {7u, 19u, 4u}) ups.push_back({n, random_set(rng)});
  const ParameterSet out = aggregate_fedavg(ups);
  for (std::size_t t = 0; t < out.size(); ++t) {
    for (std::size_t i = 0; i < out.tensor(t).size(); ++i) {
      double want = 0.0;
      for (const auto& u : ups) want += (static_cast<double>(u.num_samples) / 30.0) * u.params.tensor(t)[i];
      EXPECT_NEAR(out.tensor(t)[i], want, 1e-12);
    }
  }
}

TEST(FedAvg, EqualCountsGiveMeanAndMismatchThrows) {
  const std::vector<ClientUpdate> ups{{5, scalar_set(1.0)}, {5, scalar_set(2.0)}, {5, scalar_set(6.0)}};
  EXPECT_DOUBLE_EQ(aggregate_fedavg(ups).at("w")[0], 3.0);
  ParameterSet other;
  other.add("w", Tensor({2}));
  other.set_last_layer({"w"});
  const std::vector<ClientUpdate> bad{{5, scalar_set(1.0)}, {5, other}};
  EXPECT_THROW(aggregate_fedavg(bad), DimensionError);
  EXPECT_THROW(aggregate_fedavg(std::vector<ClientUpdate>{}), InvalidArgument);
}

TEST(Cosine, ValuesAndDegenerateCase) {
  const std::vector<double> a{1, 0}, b{0, 2}, c{3, 3}, z{0, 0};
  EXPECT_DOUBLE_EQ(cosine_similarity(a, b), 0.0);
  EXPECT_NEAR(cosine_similarity(a, c), 1 / std::sqrt(2.0), 1e-15);
  EXPECT_NEAR(cosine_similarity(c, c), 1.0, 1e-15);
  EXPECT_THROW(cosine_similarity(a, z), DegenerateSimilarityError);
}

TEST(SimilarityWeights, ScaledSoftmax) {
  const std::vector<double> c{0.9, 0.1};
  const auto w = similarity_weights(c, 10.0);
  const double e8 = std::exp(8.0);
  EXPECT_NEAR(w[0], e8 / (e8 + 1), 1e-12);
  EXPECT_NEAR(w[1], 1 / (e8 + 1), 1e-12);
  EXPECT_NEAR(w[0], 0.999665, 1e-6);
}

TEST(SimilarityWeights, SimplexUniformAndShiftInvariant) {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t k = 1 + rng.below(8);
    std::vector<double> c(k), shifted(k);
    for (auto& v : c) v = rng.uniform(-1, 1);
    const double shift = rng.uniform(-3, 3), q = rng.uniform(0, 20);
    for (std::size_t i = 0; i < k; ++i) shifted[i] = c[i] + shift;
    const auto w = similarity_weights(c, q), ws = similarity_weights(shifted, q), w0 = similarity_weights(c, 0.0);
    EXPECT_NEAR(sum(w), 1.0, 1e-12);
    for (std::size_t i = 0; i < k; ++i) {
      EXPECT_GT(w[i], 0.0);
      EXPECT_NEAR(w[i], ws[i], 1e-12);
      EXPECT_NEAR(w0[i], 1.0 / static_cast<double>(k), 1e-12);
    }
  }
}

TEST(FedWAvgWeights, IdenticalClientsAreUniform) {
  const std::vector<double> g{1, 2, 3};
  const std::vector<std::vector<double>> ls(4, std::vector<double>{0.5, -1, 2});
  const auto sw = fedwavg_weights(g, ls, 10.0);
  for (double w : sw.weights) EXPECT_NEAR(w, 0.25, 1e-15);
  const std::vector<std::vector<double>> degenerate{{1, 1, 1}, {0, 0, 0}};
  EXPECT_THROW(fedwavg_weights(g, degenerate, 1.0), DegenerateSimilarityError);
}

TEST(FedWAvg, SingleClientAndIdenticalClients) {
  Rng rng(3);
  const ParameterSet global = random_set(rng), client = random_set(rng);
  EXPECT_EQ(aggregate_fedwavg(global, std::vector<ParameterSet>{client}, 10.0).params, client);
  const std::vector<ParameterSet> same(3, client);
  const ParameterSet out = aggregate_fedwavg(global, same, 7.0).params;
  for (std::size_t t = 0; t < out.size(); ++t) EXPECT_LT(max_abs_diff(out.tensor(t), client.tensor(t)), 1e-15);
}

TEST(FedWAvg, EqualSimilaritiesMatchFedAvg) {
  Rng rng(4);
  const ParameterSet global = random_set(rng);
  // Clients share the head but differ elsewhere, so similarities are equal.
  std::vector<ParameterSet> clients;
  std::vector<ClientUpdate> ups;
  const ParameterSet head = random_set(rng);
  for (int k = 0; k < 4; ++k) {
    ParameterSet c = random_set(rng);
    c.at("head.weight") = head.at("head.weight");
    c.at("head.bias") = head.at("head.bias");
    clients.push_back(c);
    ups.push_back({12, c});
  }
  const FedWAvgResult r = aggregate_fedwavg(global, clients, 10.0);
  const ParameterSet avg = aggregate_fedavg(ups);
  for (std::size_t t = 0; t < avg.size(); ++t) EXPECT_LT(max_abs_diff(r.params.tensor(t), avg.tensor(t)), 1e-12);
}

TEST(FedWAvg, QZeroIsUniformMeanAndWeightsFavourAlignedClients) {
  Rng rng(5);
  const ParameterSet global = random_set(rng);
  std::vector<ParameterSet> clients{random_set(rng), random_set(rng), global};
  std::vector<ClientUpdate> ups;
  for (const auto& c : clients) ups.push_back({1, c});
  const FedWAvgResult r0 = aggregate_fedwavg(global, clients, 0.0);
  const ParameterSet avg = aggregate_fedavg(ups);
  for (std::size_t t = 0; t < avg.size(); ++t) EXPECT_LT(max_abs_diff(r0.params.tensor(t), avg.tensor(t)), 1e-12);
  const FedWAvgResult r = aggregate_fedwavg(global, clients, 10.0);
  EXPECT_NEAR(r.weights.similarities[2], 1.0, 1e-15);
  EXPECT_GT(r.weights.weights[2], r.weights.weights[0]);
  EXPECT_GT(r.weights.weights[2], r.weights.weights[1]);
}

TEST(FedWAvg, BiasExclusionChangesTheComparedVector) {
  Rng rng(6);
  const ParameterSet global = random_set(rng);
  const std::vector<ParameterSet> clients{random_set(rng), random_set(rng)};
  const auto with = aggregate_fedwavg(global, clients, 1.0, true).weights.similarities;
  const auto without = aggregate_fedwavg(global, clients, 1.0, false).weights.similarities;
  const auto g = global.last_layer_vector(false), l = clients[0].last_layer_vector(false);
  EXPECT_NEAR(without[0], cosine_similarity(g, l), 1e-15);
  EXPECT_NE(with[0], without[0]);
}
