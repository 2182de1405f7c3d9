#include <gtest/gtest.h>

#include <algorithm>

#include "fatsim/analysis.hpp"
#include "fatsim/errors.hpp"
#include "fatsim/federation.hpp"
#include "fatsim/optimizer.hpp"
#include "support.hpp"

using namespace fatsim;
using namespace fatsim::testing;

namespace {

Dataset tiny_blobs(const ModelConfig& m, std::size_t per_class, std::uint64_t stream = 0) {
  BlobConfig b;
  b.num_classes = static_cast<int>(m.num_classes);
  b.height = m.image_h;
  b.width = m.image_w;
  b.channels = m.channels;
  b.contrast = 0.2;
  b.seed = 11;
  return generate_blobs(b, per_class, stream);
}

FedConfig small_fed(Aggregator agg) {
  FedConfig f;
  f.clients = 3;
  f.rounds = 2;
  f.batch_size = 4;
  f.lr = 0.05;
  f.adv_ratio = 0.5;
  f.attack = AttackConfig{0.03, 0.01, 2, true};
  f.aggregator = agg;
  f.seed = 9;
  f.threads = 1;
  return f;
}

struct World {
  ModelConfig model = tiny_model(HeadType::Vis);
  ServerState server;
  std::vector<ClientState> clients;

  World(const FedConfig& cfg, const PartitionSpec& spec = PartitionSpec::iid(3)) {
    server.params = build_model(model, cfg.seed);
    server.control = server.params.zeros_like();
    server.lr = cfg.lr;
    clients = make_clients(partition(tiny_blobs(model, 6), cfg.clients, spec), server.params);
  }
};

void expect_identical(const ParameterSet& a, const ParameterSet& b) {
  ASSERT_TRUE(a.same_layout(b));
  for (std::size_t t = 0; t < a.size(); ++t) EXPECT_EQ(max_abs_diff(a.tensor(t), b.tensor(t)), 0.0) << a.entry(t).name;
}

ParameterSet round_params(Aggregator agg, int rounds = 1) {
  const FedConfig cfg = small_fed(agg);
  World w(cfg);
  for (int t = 1; t <= rounds; ++t) run_round(w.server, w.clients, w.model, cfg, t);
  return w.server.params;
}

}  // namespace

TEST(FedConfig, ClientsPerRoundAndValidation) {
  FedConfig f;
  f.clients = 5;
  f.fraction = 0.4;
  EXPECT_EQ(f.clients_per_round(), 2u);
  f.fraction = 0.01;
  EXPECT_EQ(f.clients_per_round(), 1u);
  f.fraction = 1.0;
  EXPECT_EQ(sample_clients(f, 1), (std::vector<std::size_t>{0, 1, 2, 3, 4}));
  f.fraction = 0.0;
  EXPECT_THROW(f.validate(), ConfigError);
  f.fraction = 1.0;
  f.batch_size = 0;
  EXPECT_THROW(f.validate(), ConfigError);
}

TEST(Aggregator, Labels) {
  EXPECT_EQ(Aggregator::fedwavg(10).label(), "FedWAvg(10)");
  EXPECT_EQ(Aggregator::fedprox(0.1).label(), "FedProx(0.1)");
  EXPECT_EQ(Aggregator::scaffold().label(), "SCAFFOLD");
  EXPECT_EQ(parse_aggregator_kind("fedgate"), Aggregator::Kind::FedGate);
  EXPECT_THROW(parse_aggregator_kind("fedsgd"), ConfigError);
}

TEST(SampleClients, DeterministicSortedAndDistinct) {
  FedConfig f;
  f.clients = 10;
  f.fraction = 0.3;
  f.seed = 4;
  for (int t = 1; t <= 20; ++t) {
    const auto a = sample_clients(f, t);
    EXPECT_EQ(a, sample_clients(f, t));
    ASSERT_EQ(a.size(), 3u);
    EXPECT_TRUE(std::is_sorted(a.begin(), a.end()));
    EXPECT_EQ(std::adjacent_find(a.begin(), a.end()), a.end());
  }
}

TEST(ClientUpdate, ZeroEpochsReturnsGlobal) {
  FedConfig cfg = small_fed(Aggregator::fedavg());
  cfg.local_epochs = 0;
  World w(cfg);
  Rng rng(1);
  const ClientResult r = client_update(0, w.server.params, w.model, cfg, w.clients[0].shard, cfg.lr, rng);
  EXPECT_EQ(r.params, w.server.params);
  EXPECT_EQ(r.steps, 0u);
}

TEST(ClientUpdate, StepsFollowBatchCount) {
  FedConfig cfg = small_fed(Aggregator::fedavg());
  cfg.local_epochs = 2;
  World w(cfg);
  Rng rng(1);
  const ClientResult r = client_update(0, w.server.params, w.model, cfg, w.clients[0].shard, cfg.lr, rng);
  // 6 samples in batches of 4: 2 batches per epoch.
  EXPECT_EQ(r.num_samples, 6u);
  EXPECT_EQ(r.steps, 4u);
  EXPECT_TRUE(std::isfinite(r.mean_loss));
}

TEST(FedProx, ProximalGradientByHand) {
  ParameterSet p, g, grads;
  p.add("w", Tensor({1}, {3.0}));
  g.add("w", Tensor({1}, {1.0}));
  grads.add("w", Tensor({1}, {0.25}));
  const double loss = add_proximal_gradient(grads, p, g, 0.5);
  EXPECT_DOUBLE_EQ(loss, 1.0);
  EXPECT_DOUBLE_EQ(grads.at("w")[0], 1.25);
}

TEST(Degeneracy, FedProxMuZeroIsFedAvg) {
  expect_identical(round_params(Aggregator::fedprox(0.0), 2), round_params(Aggregator::fedavg(), 2));
}

TEST(Degeneracy, ScaffoldFirstRoundIsFedAvg) {
  expect_identical(round_params(Aggregator::scaffold()), round_params(Aggregator::fedavg()));
}

TEST(Degeneracy, FedGateFirstRoundIsFedAvg) {
  expect_identical(round_params(Aggregator::fedgate()), round_params(Aggregator::fedavg()));
}

TEST(Degeneracy, ProximalTermPullsTowardGlobal) {
  const FedConfig base = small_fed(Aggregator::fedavg());
  World w(base);
  FedConfig prox = base;
  prox.aggregator = Aggregator::fedprox(50.0);
  Rng a = client_stream(base, 1, 0), b = client_stream(base, 1, 0);
  const auto plain = client_update(0, w.server.params, w.model, base, w.clients[0].shard, base.lr, a);
  const auto pulled = client_update(0, w.server.params, w.model, prox, w.clients[0].shard, base.lr, b);
  EXPECT_LT(squared_distance(pulled.params, w.server.params), squared_distance(plain.params, w.server.params));
}

TEST(Scaffold, OneStepControlEqualsLocalGradient) {
  FedConfig cfg = small_fed(Aggregator::scaffold());
  cfg.clients = 1;
  cfg.adv_ratio = 0.0;
  cfg.batch_size = 64;
  cfg.shuffle_batches = false;
  World w(cfg);
  const ParameterSet global = w.server.params;
  const LossAndGrads lg = loss_and_grads(global, w.model, make_batch(w.clients[0].shard));
  const std::vector<std::size_t> all{0};
  const RoundResult r = scaffold_round(w.server, w.clients, w.model, cfg, all, 1);
  ASSERT_EQ(r.clients[0].steps, 1u);
  const ParameterSet& ck = w.clients[0].control;
  for (std::size_t t = 0; t < ck.size(); ++t) {
    for (std::size_t i = 0; i < ck.tensor(t).size(); ++i) {
      EXPECT_NEAR(ck.tensor(t)[i], lg.grads.tensor(t)[i], 1e-10) << ck.entry(t).name;
    }
  }
  // One client out of one: the server control follows the client exactly.
  for (std::size_t t = 0; t < ck.size(); ++t) EXPECT_LT(max_abs_diff(w.server.control.tensor(t), ck.tensor(t)), 1e-15);
}

TEST(Scaffold, ControlsKeepLayoutAcrossRounds) {
  FedConfig cfg = small_fed(Aggregator::scaffold());
  cfg.fraction = 0.67;
  World w(cfg);
  for (int t = 1; t <= 3; ++t) run_round(w.server, w.clients, w.model, cfg, t);
  EXPECT_TRUE(w.server.control.same_layout(w.server.params));
  EXPECT_TRUE(w.server.control.all_finite());
  for (const auto& c : w.clients) EXPECT_TRUE(c.control.same_layout(w.server.params));
  EXPECT_GT(squared_distance(w.server.control, w.server.params.zeros_like()), 0.0);
}

TEST(FedGate, IdenticalShardsKeepTrackersAtZero) {
  FedConfig cfg = small_fed(Aggregator::fedgate());
  cfg.adv_ratio = 0.0;
  cfg.shuffle_batches = false;
  World w(cfg);
  for (auto& c : w.clients) c.shard = w.clients[0].shard;
  for (int t = 1; t <= 3; ++t) run_round(w.server, w.clients, w.model, cfg, t);
  for (const auto& c : w.clients) {
    for (std::size_t t = 0; t < c.tracker.size(); ++t) {
      EXPECT_LE(max_abs_diff(c.tracker.tensor(t), Tensor(c.tracker.tensor(t).shape())), 1e-9);
    }
  }
}

TEST(FedGate, TrackersSumToZeroWithEqualShards) {
  FedConfig cfg = small_fed(Aggregator::fedgate());
  World w(cfg);
  run_round(w.server, w.clients, w.model, cfg, 1);
  // Equal shard sizes mean equal weights, so tracker increments cancel.
  for (std::size_t t = 0; t < w.server.params.size(); ++t) {
    for (std::size_t i = 0; i < w.server.params.tensor(t).size(); ++i) {
      double total = 0.0;
      for (const auto& c : w.clients) total += c.tracker.tensor(t)[i];
      EXPECT_NEAR(total, 0.0, 1e-9);
    }
  }
}

TEST(Round, SingleClientEqualsClientUpdate) {
  FedConfig cfg = small_fed(Aggregator::fedavg());
  cfg.clients = 1;
  World w(cfg);
  const ParameterSet global = w.server.params;
  Rng rng = client_stream(cfg, 1, 0);
  const auto direct = client_update(0, global, w.model, cfg, w.clients[0].shard, cfg.lr, rng);
  run_round(w.server, w.clients, w.model, cfg, 1);
  expect_identical(w.server.params, direct.params);
  EXPECT_DOUBLE_EQ(w.server.lr, decay_lr(cfg.lr, cfg.lr_decay));
}

TEST(Round, ParticipantOrderDoesNotMatter) {
  const FedConfig cfg = small_fed(Aggregator::fedavg());
  World a(cfg), b(cfg);
  const std::vector<std::size_t> forward{0, 1, 2}, shuffled{2, 0, 1};
  standard_round(a.server, a.clients, a.model, cfg, forward, 1);
  standard_round(b.server, b.clients, b.model, cfg, shuffled, 1);
  for (std::size_t t = 0; t < a.server.params.size(); ++t) {
    EXPECT_LT(max_abs_diff(a.server.params.tensor(t), b.server.params.tensor(t)), 1e-12);
  }
}

TEST(Round, ThreadCountDoesNotChangeResults) {
  FedConfig one = small_fed(Aggregator::fedwavg(10));
  FedConfig many = one;
  many.threads = 3;
  World a(one), b(many);
  for (int t = 1; t <= 2; ++t) {
    run_round(a.server, a.clients, a.model, one, t);
    run_round(b.server, b.clients, b.model, many, t);
  }
  expect_identical(a.server.params, b.server.params);
}

TEST(Round, NonFiniteAggregateAbortsNamingTheRound) {
  FedConfig cfg = small_fed(Aggregator::fedavg());
  World w(cfg);
  run_round(w.server, w.clients, w.model, cfg, 1);
  w.server.lr = 1e308;
  try {
    run_round(w.server, w.clients, w.model, cfg, 2);
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_EQ(e.round(), 2);
    EXPECT_NE(std::string(e.what()).find("round 2"), std::string::npos);
  }
}

TEST(Round, FedWAvgRecordsSimplexWeights) {
  const FedConfig cfg = small_fed(Aggregator::fedwavg(10));
  World w(cfg, PartitionSpec::class_restricted(1, 3));
  const RoundResult r = run_round(w.server, w.clients, w.model, cfg, 1);
  ASSERT_EQ(r.weights.size(), 3u);
  ASSERT_EQ(r.similarities.size(), 3u);
  double total = 0.0;
  for (double x : r.weights) total += x;
  EXPECT_NEAR(total, 1.0, 1e-12);
  const auto expected = similarity_weights(r.similarities, 10.0);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(r.weights[i], expected[i]);
}

TEST(Federation, DeterministicRecords) {
  FedConfig cfg = small_fed(Aggregator::scaffold());
  const ModelConfig m = tiny_model(HeadType::Vis);
  const Dataset train = tiny_blobs(m, 6), test = tiny_blobs(m, 3, 1);
  const auto a = run_federation(m, cfg, PartitionSpec::iid(1), train, test);
  const auto b = run_federation(m, cfg, PartitionSpec::iid(1), train, test);
  ASSERT_EQ(a.size(), 2u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].train_loss, b[i].train_loss);
    EXPECT_EQ(a[i].robust_accuracy, b[i].robust_accuracy);
    EXPECT_EQ(a[i].weights, b[i].weights);
  }
}

TEST(Federation, RejectsDatasetWithTooManyClasses) {
  const FedConfig cfg = small_fed(Aggregator::fedavg());
  ModelConfig big = tiny_model(HeadType::Vis);
  big.num_classes = 5;
  const Dataset train = tiny_blobs(big, 4);
  EXPECT_THROW(run_federation(tiny_model(HeadType::Vis), cfg, PartitionSpec::iid(1), train, train), ConfigError);
}

TEST(Federation, FedAvgLearnsSeparableBlobs) {
  ModelConfig m;
  m.image_h = m.image_w = 16;
  m.channels = 3;
  m.patch_size = 8;
  m.embed_dim = 16;
  m.num_heads = 2;
  m.depth = 2;
  m.num_classes = 10;
  m.head = HeadType::Vis;
  BlobConfig b;
  b.height = b.width = 16;
  b.channels = 3;
  b.contrast = 0.1;
  b.seed = 1;
  const Dataset train = generate_blobs(b, 60, 0), test = generate_blobs(b, 20, 1);
  FedConfig cfg;
  cfg.clients = 5;
  cfg.rounds = 50;
  cfg.adv_ratio = 0.0;
  cfg.lr = 0.02;
  cfg.lr_decay = 0.05;
  cfg.seed = 1;
  cfg.attack = AttackConfig{8.0 / 255, 2.0 / 255, 0, false};
  double best = 0.0;
  run_federation(m, cfg, PartitionSpec::iid(1), train, test,
                 [&](const RoundContext& ctx) { best = std::max(best, ctx.record.test_accuracy); });
  EXPECT_GE(best, 0.95);
}

TEST(EffectiveSteps, MatchesMomentumDisplacement) {
  EXPECT_DOUBLE_EQ(effective_steps(7, 0.0), 7.0);
  EXPECT_DOUBLE_EQ(effective_steps(1, 0.9), 1.0);
  EXPECT_NEAR(effective_steps(2, 0.9), 2.9, 1e-15);
  ParameterSet p, g;
  p.add("w", Tensor({1}, {0.0}));
  g.add("w", Tensor({1}, {1.5}));
  OptimizerState opt(p, 0.1, 0.9);
  for (int t = 0; t < 12; ++t) sgd_step(p, g, opt);
  EXPECT_NEAR(-p.at("w")[0], 0.1 * 1.5 * effective_steps(12, 0.9), 1e-12);
}
