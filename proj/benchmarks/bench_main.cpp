#include <benchmark/benchmark.h>

#include "fatsim/aggregation.hpp"
#include "fatsim/analysis.hpp"
#include "fatsim/attack.hpp"
#include "fatsim/graph.hpp"
#include "fatsim/model.hpp"
#include "fatsim/ops.hpp"

using namespace fatsim;

namespace {

Tensor random_tensor(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(0.0, 1.0);
  return t;
}

ModelConfig desk_model() {
  ModelConfig m;
  m.image_h = m.image_w = 16;
  m.channels = 3;
  m.patch_size = 8;
  m.embed_dim = 16;
  m.num_heads = 2;
  m.depth = 2;
  m.num_classes = 10;
  m.head = HeadType::Vis;
  return m;
}

Batch random_batch(const ModelConfig& m, std::size_t n, Rng& rng) {
  Batch b{random_tensor({n, m.image_h, m.image_w, m.channels}, rng), {}};
  for (std::size_t i = 0; i < n; ++i) b.labels.push_back(static_cast<int>(i % m.num_classes));
  return b;
}

void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Rng rng(1);
  const Tensor a = random_tensor({n, n}, rng), b = random_tensor({n, n}, rng);
  for (auto _ : state) {
    Graph g;
    benchmark::DoNotOptimize(matmul(g.constant(a), g.constant(b)).value().data().data());
  }
  state.SetItemsProcessed(state.iterations() * static_cast<std::int64_t>(2 * n * n * n));
}
BENCHMARK(BM_Matmul)->Arg(16)->Arg(64)->Arg(256);

void BM_ForwardBackward(benchmark::State& state) {
  const ModelConfig m = desk_model();
  const ParameterSet p = build_model(m, 1);
  Rng rng(2);
  const Batch b = random_batch(m, static_cast<std::size_t>(state.range(0)), rng);
  for (auto _ : state) benchmark::DoNotOptimize(loss_and_grads(p, m, b).loss);
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ForwardBackward)->Arg(1)->Arg(24);

void BM_Pgd(benchmark::State& state) {
  const ModelConfig m = desk_model();
  const ParameterSet p = build_model(m, 1);
  Rng rng(3);
  const Batch b = random_batch(m, 12, rng);
  const AttackConfig attack{8.0 / 255, 2.0 / 255, static_cast<int>(state.range(0)), true};
  for (auto _ : state) benchmark::DoNotOptimize(pgd_perturb(p, m, b, attack, rng).images.data().data());
}
BENCHMARK(BM_Pgd)->Arg(1)->Arg(7);

void BM_FedWAvg(benchmark::State& state) {
  const ModelConfig m = desk_model();
  const ParameterSet global = build_model(m, 0);
  std::vector<ParameterSet> clients;
  for (std::int64_t k = 0; k < state.range(0); ++k) clients.push_back(build_model(m, static_cast<std::uint64_t>(k + 1)));
  for (auto _ : state) benchmark::DoNotOptimize(aggregate_fedwavg(global, clients, 10.0).weights.weights.data());
}
BENCHMARK(BM_FedWAvg)->Arg(5)->Arg(20);

void BM_Svcca(benchmark::State& state) {
  Rng rng(4);
  const auto cols = static_cast<std::size_t>(state.range(0));
  const Tensor a = random_tensor({64, cols}, rng), b = random_tensor({64, cols}, rng);
  for (auto _ : state) benchmark::DoNotOptimize(svcca(a, b).mean_correlation);
}
BENCHMARK(BM_Svcca)->Arg(16)->Arg(48);

}  // namespace
BENCHMARK_MAIN();
