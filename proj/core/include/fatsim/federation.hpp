#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fatsim/aggregation.hpp"
#include "fatsim/attack.hpp"
#include "fatsim/data.hpp"
#include "fatsim/model.hpp"
#include "fatsim/params.hpp"
#include "fatsim/rng.hpp"

namespace fatsim {

struct Aggregator {
  enum class Kind { FedAvg, FedProx, FedGate, Scaffold, FedWAvg };

  Kind kind = Kind::FedAvg;
  double mu = 0.1;  // FedProx proximal weight
  double q = 1.0;   // FedWAvg softmax scale

  static Aggregator fedavg() { return {Kind::FedAvg, 0.1, 1.0}; }
  static Aggregator fedprox(double mu) { return {Kind::FedProx, mu, 1.0}; }
  static Aggregator fedgate() { return {Kind::FedGate, 0.1, 1.0}; }
  static Aggregator scaffold() { return {Kind::Scaffold, 0.1, 1.0}; }
  static Aggregator fedwavg(double q) { return {Kind::FedWAvg, 0.1, q}; }

  // Lower-case config name: fedavg, fedprox, fedgate, scaffold, fedwavg.
  std::string name() const;
  // Display label, e.g. "FedProx(0.1)", "FedWAvg(10)".
  std::string label() const;
  void validate() const;
};

Aggregator::Kind parse_aggregator_kind(std::string_view name);

struct FedConfig {
  std::size_t clients = 5;        // K
  double fraction = 1.0;          // C
  int rounds = 50;                // T
  int local_epochs = 1;           // E
  std::size_t batch_size = 24;    // B
  double lr = 0.1;                // initial eta
  double lr_decay = 0.05;         // applied once per round
  double momentum = 0.9;
  AttackConfig attack;
  double adv_ratio = 0.5;         // r
  Aggregator aggregator;
  std::uint64_t seed = 0;
  bool shuffle_batches = true;
  bool last_layer_bias = true;    // include head.bias in FedWAvg similarity
  // SCAFFOLD / FedGate: divide by effective_steps instead of the raw step
  // count when turning a model delta into a gradient estimate.
  bool momentum_aware_controls = false;
  std::size_t threads = 0;        // 0: FATSIM_THREADS or hardware concurrency

  // m = max(1, floor(C K))
  std::size_t clients_per_round() const;
  void validate() const;
};

struct ClientState {
  std::size_t id = 0;
  Dataset shard;
  ParameterSet control;  // SCAFFOLD c_k
  ParameterSet tracker;  // FedGate delta_k
};

struct ClientResult {
  std::size_t id = 0;
  ParameterSet params;
  std::size_t num_samples = 0;
  std::size_t steps = 0;  // local SGD steps taken (tau)
  double mean_loss = 0.0;
};

// mu * (theta - theta_global) added into grads; returns the proximal loss
// term mu/2 |theta - theta_global|^2.
double add_proximal_gradient(ParameterSet& grads, const ParameterSet& params, const ParameterSet& global, double mu);

// Local adversarial training on one client: E epochs over batches of B,
// each batch mixed with floor(r B) PGD samples, one momentum-SGD step per
// batch. `correction` (if any) is added to every gradient. The proximal
// term is applied when the aggregator is FedProx.
ClientResult client_update(std::size_t k, const ParameterSet& global, const ModelConfig& model, const FedConfig& cfg,
                           const Dataset& shard, double lr, Rng& rng, const ParameterSet* correction = nullptr);

struct ServerState {
  ParameterSet params;
  ParameterSet control;  // SCAFFOLD c
  double lr = 0.0;
};

struct RoundResult {
  int round = 0;
  double lr = 0.0;  // rate used for this round's local steps
  std::vector<std::size_t> participants;  // ascending client ids
  std::vector<double> similarities;       // cosine(global last layer, client last layer)
  std::vector<double> weights;            // aggregation weight per participant
  double train_loss = 0.0;
  std::vector<ClientResult> clients;
};

// Client ids taking part in a round, drawn from the round's own stream.
std::vector<std::size_t> sample_clients(const FedConfig& cfg, int round);

Rng client_stream(const FedConfig& cfg, int round, std::size_t client);

// Runs fn(i) for i in [0, n) on up to `threads` workers.
void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn);
std::size_t resolve_threads(std::size_t requested);

// FedAvg / FedProx / FedWAvg round: local training then aggregation.
RoundResult standard_round(ServerState& server, std::vector<ClientState>& clients, const ModelConfig& model,
                           const FedConfig& cfg, std::span<const std::size_t> participants, int round);

// Step count tau as seen through momentum: momentum SGD started from rest
// under a constant gradient g moves lr * effective_steps * g. Equals steps
// when momentum is 0.
double effective_steps(std::size_t steps, double momentum);

// Clients step with gradient + (c - c_k). Afterwards
// c_k <- c_k - c + (theta_global - theta_k) / (tau eta) and
// c <- c + (m / K) mean(delta c_k).
RoundResult scaffold_round(ServerState& server, std::vector<ClientState>& clients, const ModelConfig& model,
                           const FedConfig& cfg, std::span<const std::size_t> participants, int round);

// Clients step with gradient - delta_k. Afterwards, with
// D_k = theta_global - theta_k and D the aggregation-weighted mean,
// delta_k <- delta_k + (D_k - D) / (tau eta). tau is the local step count,
// or effective_steps with momentum_aware_controls.
RoundResult fedgate_round(ServerState& server, std::vector<ClientState>& clients, const ModelConfig& model,
                          const FedConfig& cfg, std::span<const std::size_t> participants, int round);

// Dispatches on cfg.aggregator, checks the result is finite, and decays
// the learning rate.
RoundResult run_round(ServerState& server, std::vector<ClientState>& clients, const ModelConfig& model,
                      const FedConfig& cfg, int round);

std::vector<ClientState> make_clients(std::vector<Dataset> shards, const ParameterSet& layout);

struct RoundRecord {
  int round = 0;
  double train_loss = 0.0;
  double test_accuracy = 0.0;
  double robust_accuracy = 0.0;
  double lr = 0.0;
  std::vector<std::size_t> clients;
  std::vector<double> similarities;
  std::vector<double> weights;
  double wall_ms = 0.0;
};

Rng eval_stream(const FedConfig& cfg, int round);

struct RoundContext {
  const RoundRecord& record;
  const RoundResult& result;
  const ServerState& server;
  const std::vector<ClientState>& clients;
};

using RoundObserver = std::function<void(const RoundContext&)>;

// Full server loop: build theta_0 from cfg.seed, partition the training
// set, then T rounds of sample / local update / aggregate / decay / evaluate.
std::vector<RoundRecord> run_federation(const ModelConfig& model, const FedConfig& cfg, const PartitionSpec& partition,
                                        const Dataset& train, const Dataset& test,
                                        const RoundObserver& observer = {});

}  // namespace fatsim
