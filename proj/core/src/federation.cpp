#include "fatsim/federation.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include "fatsim/analysis.hpp"
#include "fatsim/errors.hpp"
#include "fatsim/optimizer.hpp"

namespace fatsim {

std::string Aggregator::name() const {
  switch (kind) {
    case Kind::FedAvg:
      return "fedavg";
    case Kind::FedProx:
      return "fedprox";
    case Kind::FedGate:
      return "fedgate";
    case Kind::Scaffold:
      return "scaffold";
    case Kind::FedWAvg:
      return "fedwavg";
  }
  return "?";
}

namespace {

std::string format_number(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

}  // namespace

std::string Aggregator::label() const {
  switch (kind) {
    case Kind::FedAvg:
      return "FedAvg";
    case Kind::FedProx:
      return "FedProx(" + format_number(mu) + ")";
    case Kind::FedGate:
      return "FedGate";
    case Kind::Scaffold:
      return "SCAFFOLD";
    case Kind::FedWAvg:
      return "FedWAvg(" + format_number(q) + ")";
  }
  return "?";
}

void Aggregator::validate() const {
  if (!std::isfinite(mu) || mu < 0.0) throw ConfigError("FedProx mu must be finite and >= 0");
  if (!std::isfinite(q)) throw ConfigError("FedWAvg q must be finite");
}

Aggregator::Kind parse_aggregator_kind(std::string_view name) {
  if (name == "fedavg") return Aggregator::Kind::FedAvg;
  if (name == "fedprox") return Aggregator::Kind::FedProx;
  if (name == "fedgate") return Aggregator::Kind::FedGate;
  if (name == "scaffold") return Aggregator::Kind::Scaffold;
  if (name == "fedwavg") return Aggregator::Kind::FedWAvg;
  throw ConfigError("unknown aggregator '" + std::string(name) +
                    "' (expected fedavg, fedprox, fedgate, scaffold or fedwavg)");
}

std::size_t FedConfig::clients_per_round() const {
  const auto m = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(clients)));
  return std::max<std::size_t>(1, m);
}

void FedConfig::validate() const {
  if (clients == 0) throw ConfigError("fed.clients must be >= 1");
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("fed.fraction must lie in (0, 1]");
  if (rounds < 1) throw ConfigError("fed.rounds must be >= 1");
  if (local_epochs < 0) throw ConfigError("fed.local_epochs must be >= 0");
  if (batch_size == 0) throw ConfigError("fed.batch_size must be >= 1");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("fed.lr must be finite and >= 0");
  if (!(lr_decay >= 0.0 && lr_decay < 1.0)) throw ConfigError("fed.lr_decay must lie in [0, 1)");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("fed.momentum must lie in [0, 1)");
  if (!(adv_ratio >= 0.0 && adv_ratio <= 1.0)) throw ConfigError("fed.adv_ratio must lie in [0, 1]");
  attack.validate();
  aggregator.validate();
}

double add_proximal_gradient(ParameterSet& grads, const ParameterSet& params, const ParameterSet& global, double mu) {
  require_same_layout(params, global, "proximal term");
  require_same_layout(params, grads, "proximal term");
  double sq = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto g = grads.tensor(i).data();
    auto p = params.tensor(i).data();
    auto p0 = global.tensor(i).data();
    for (std::size_t j = 0; j < g.size(); ++j) {
      const double d = p[j] - p0[j];
      g[j] += mu * d;
      sq += d * d;
    }
  }
  return 0.5 * mu * sq;
}

ClientResult client_update(std::size_t k, const ParameterSet& global, const ModelConfig& model, const FedConfig& cfg,
                           const Dataset& shard, double lr, Rng& rng, const ParameterSet* correction) {
  if (shard.empty()) throw InvalidArgument("client " + std::to_string(k) + " has an empty shard");
  ClientResult out{k, global, shard.size(), 0, 0.0};
  if (cfg.local_epochs == 0) return out;

  const bool proximal = cfg.aggregator.kind == Aggregator::Kind::FedProx;
  OptimizerState opt(out.params, lr, cfg.momentum);
  std::vector<std::size_t> order(shard.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  double loss_sum = 0.0;
  for (int epoch = 0; epoch < cfg.local_epochs; ++epoch) {
    if (cfg.shuffle_batches) rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const std::span<const std::size_t> idx(order.data() + start, end - start);
      const MixedBatch mixed = mix_batch(make_batch(shard, idx), cfg.adv_ratio, out.params, model, cfg.attack, rng);
      LossAndGrads lg = loss_and_grads(out.params, model, mixed.batch);
      if (proximal) lg.loss += add_proximal_gradient(lg.grads, out.params, global, cfg.aggregator.mu);
      if (correction != nullptr) axpy(1.0, *correction, lg.grads);
      sgd_step(out.params, lg.grads, opt);
      loss_sum += lg.loss;
      ++out.steps;
    }
  }
  out.mean_loss = loss_sum / static_cast<double>(out.steps);
  return out;
}

std::vector<std::size_t> sample_clients(const FedConfig& cfg, int round) {
  Rng rng = Rng::derive(cfg.seed, {0x5a3, static_cast<std::uint64_t>(round)});
  auto picked = rng.sample_without_replacement(cfg.clients, cfg.clients_per_round());
  std::sort(picked.begin(), picked.end());
  return picked;
}

Rng client_stream(const FedConfig& cfg, int round, std::size_t client) {
  return Rng::derive(cfg.seed, {0xc11e, static_cast<std::uint64_t>(round), client});
}

Rng eval_stream(const FedConfig& cfg, int round) {
  return Rng::derive(cfg.seed, {0xe7a1, static_cast<std::uint64_t>(round)});
}

std::size_t resolve_threads(std::size_t requested) {
  if (requested > 0) return requested;
  if (const char* env = std::getenv("FATSIM_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v > 0) return static_cast<std::size_t>(v);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  threads = std::min(threads, n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  {
    std::vector<std::jthread> workers;
    workers.reserve(threads);
    for (std::size_t w = 0; w < threads; ++w) {
      workers.emplace_back([&] {
        for (std::size_t i = next++; i < n; i = next++) {
          try {
            fn(i);
          } catch (...) {
            std::lock_guard lock(error_mutex);
            if (!error) error = std::current_exception();
          }
        }
      });
    }
  }
  if (error) std::rethrow_exception(error);
}

namespace {

double safe_similarity(const std::vector<double>& g, const ParameterSet& client, bool include_bias) {
  try {
    return cosine_similarity(g, client.last_layer_vector(include_bias));
  } catch (const DegenerateSimilarityError&) {
    return std::nan("");
  }
}

// Local training for every participant; results come back in participant
// (ascending id) order whatever the scheduling.
RoundResult train_participants(const ServerState& server, const std::vector<ClientState>& clients,
                               const ModelConfig& model, const FedConfig& cfg, std::span<const std::size_t> participants,
                               int round, const std::vector<ParameterSet>* corrections) {
  RoundResult res;
  res.round = round;
  res.lr = server.lr;
  res.participants.assign(participants.begin(), participants.end());
  res.clients.resize(participants.size());
  parallel_for(participants.size(), resolve_threads(cfg.threads), [&](std::size_t i) {
    const std::size_t k = participants[i];
    Rng rng = client_stream(cfg, round, k);
    const ParameterSet* corr = corrections != nullptr ? &(*corrections)[i] : nullptr;
    res.clients[i] = client_update(k, server.params, model, cfg, clients.at(k).shard, server.lr, rng, corr);
  });
  for (const auto& c : res.clients) {
    if (!c.params.all_finite()) {
      throw NumericalError("round " + std::to_string(round) + " (" + cfg.aggregator.label() + "): client " +
                               std::to_string(c.id) + " parameters contain NaN or Inf",
                           round);
    }
  }
  double loss = 0.0;
  for (const auto& c : res.clients) loss += c.mean_loss;
  res.train_loss = loss / static_cast<double>(res.clients.size());
  return res;
}

std::vector<ClientUpdate> as_updates(const RoundResult& res) {
  std::vector<ClientUpdate> out;
  out.reserve(res.clients.size());
  for (const auto& c : res.clients) out.push_back(ClientUpdate{c.num_samples, c.params});
  return out;
}

std::vector<std::size_t> sample_counts(const RoundResult& res) {
  std::vector<std::size_t> out;
  for (const auto& c : res.clients) out.push_back(c.num_samples);
  return out;
}

void record_similarities(RoundResult& res, const ParameterSet& global, bool include_bias) {
  const auto g = global.last_layer_vector(include_bias);
  res.similarities.clear();
  for (const auto& c : res.clients) res.similarities.push_back(safe_similarity(g, c.params, include_bias));
}

void check_participants(const std::vector<ClientState>& clients, std::span<const std::size_t> participants) {
  if (participants.empty()) throw InvalidArgument("round has no participants");
  for (std::size_t k : participants) {
    if (k >= clients.size()) throw InvalidArgument("participant id " + std::to_string(k) + " out of range");
  }
}

}  // namespace

double effective_steps(std::size_t steps, double momentum) {
  if (momentum == 0.0) return static_cast<double>(steps);
  // Displacement of heavy-ball SGD from rest under a constant gradient, in
  // units of lr * gradient: sum over t = 1..tau of (1 - beta^t) / (1 - beta).
  double total = 0.0, power = 1.0;
  for (std::size_t t = 0; t < steps; ++t) {
    power *= momentum;
    total += (1.0 - power) / (1.0 - momentum);
  }
  return total;
}

namespace {

double control_steps(std::size_t steps, const FedConfig& cfg) {
  return cfg.momentum_aware_controls ? effective_steps(steps, cfg.momentum) : static_cast<double>(steps);
}

}  // namespace

RoundResult standard_round(ServerState& server, std::vector<ClientState>& clients, const ModelConfig& model,
                           const FedConfig& cfg, std::span<const std::size_t> participants, int round) {
  check_participants(clients, participants);
  RoundResult res = train_participants(server, clients, model, cfg, participants, round, nullptr);
  if (cfg.aggregator.kind == Aggregator::Kind::FedWAvg) {
    std::vector<ParameterSet> params;
    for (const auto& c : res.clients) params.push_back(c.params);
    FedWAvgResult agg = aggregate_fedwavg(server.params, params, cfg.aggregator.q, cfg.last_layer_bias);
    res.similarities = std::move(agg.weights.similarities);
    res.weights = std::move(agg.weights.weights);
    server.params = std::move(agg.params);
  } else {
    record_similarities(res, server.params, cfg.last_layer_bias);
    res.weights = fedavg_weights(sample_counts(res));
    server.params = aggregate_fedavg(as_updates(res));
  }
  return res;
}

RoundResult scaffold_round(ServerState& server, std::vector<ClientState>& clients, const ModelConfig& model,
                           const FedConfig& cfg, std::span<const std::size_t> participants, int round) {
  check_participants(clients, participants);
  if (server.control.empty()) server.control = server.params.zeros_like();
  std::vector<ParameterSet> corrections;
  for (std::size_t k : participants) {
    if (clients[k].control.empty()) clients[k].control = server.params.zeros_like();
    corrections.push_back(difference(server.control, clients[k].control));
  }
  RoundResult res = train_participants(server, clients, model, cfg, participants, round, &corrections);
  record_similarities(res, server.params, cfg.last_layer_bias);
  res.weights = fedavg_weights(sample_counts(res));
  ParameterSet aggregated = aggregate_fedavg(as_updates(res));

  ParameterSet mean_delta_c = server.params.zeros_like();
  const double inv_m = 1.0 / static_cast<double>(participants.size());
  for (std::size_t i = 0; i < participants.size(); ++i) {
    const ClientResult& r = res.clients[i];
    if (r.steps == 0 || server.lr == 0.0) continue;
    ClientState& st = clients[participants[i]];
    // c_k+ = c_k - c + (theta_global - theta_k) / (tau eta)
    ParameterSet updated = difference(st.control, server.control);
    axpy(1.0 / (control_steps(r.steps, cfg) * server.lr), difference(server.params, r.params), updated);
    axpy(inv_m, difference(updated, st.control), mean_delta_c);
    st.control = std::move(updated);
  }
  axpy(static_cast<double>(participants.size()) / static_cast<double>(clients.size()), mean_delta_c, server.control);
  server.params = std::move(aggregated);
  return res;
}

RoundResult fedgate_round(ServerState& server, std::vector<ClientState>& clients, const ModelConfig& model,
                          const FedConfig& cfg, std::span<const std::size_t> participants, int round) {
  check_participants(clients, participants);
  std::vector<ParameterSet> corrections;
  for (std::size_t k : participants) {
    if (clients[k].tracker.empty()) clients[k].tracker = server.params.zeros_like();
    ParameterSet neg = server.params.zeros_like();
    axpy(-1.0, clients[k].tracker, neg);
    corrections.push_back(std::move(neg));
  }
  RoundResult res = train_participants(server, clients, model, cfg, participants, round, &corrections);
  record_similarities(res, server.params, cfg.last_layer_bias);
  res.weights = fedavg_weights(sample_counts(res));
  ParameterSet aggregated = aggregate_fedavg(as_updates(res));

  std::vector<ParameterSet> deltas;
  for (const auto& r : res.clients) deltas.push_back(difference(server.params, r.params));
  const ParameterSet mean_delta = weighted_sum(deltas, res.weights);
  for (std::size_t i = 0; i < participants.size(); ++i) {
    const ClientResult& r = res.clients[i];
    if (r.steps == 0 || server.lr == 0.0) continue;
    axpy(1.0 / (control_steps(r.steps, cfg) * server.lr), difference(deltas[i], mean_delta),
         clients[participants[i]].tracker);
  }
  server.params = std::move(aggregated);
  return res;
}

RoundResult run_round(ServerState& server, std::vector<ClientState>& clients, const ModelConfig& model,
                      const FedConfig& cfg, int round) {
  const auto participants = sample_clients(cfg, round);
  RoundResult res;
  switch (cfg.aggregator.kind) {
    case Aggregator::Kind::Scaffold:
      res = scaffold_round(server, clients, model, cfg, participants, round);
      break;
    case Aggregator::Kind::FedGate:
      res = fedgate_round(server, clients, model, cfg, participants, round);
      break;
    default:
      res = standard_round(server, clients, model, cfg, participants, round);
      break;
  }
  if (!server.params.all_finite()) {
    throw NumericalError("round " + std::to_string(round) + " (" + cfg.aggregator.label() +
                             "): aggregated parameters contain NaN or Inf",
                         round);
  }
  if (server.lr > 0.0) server.lr = decay_lr(server.lr, cfg.lr_decay);
  return res;
}

std::vector<ClientState> make_clients(std::vector<Dataset> shards, const ParameterSet& layout) {
  std::vector<ClientState> out;
  out.reserve(shards.size());
  for (std::size_t k = 0; k < shards.size(); ++k) {
    out.push_back(ClientState{k, std::move(shards[k]), layout.zeros_like(), layout.zeros_like()});
  }
  return out;
}

std::vector<RoundRecord> run_federation(const ModelConfig& model, const FedConfig& cfg, const PartitionSpec& partition_spec,
                                        const Dataset& train, const Dataset& test, const RoundObserver& observer) {
  model.validate();
  cfg.validate();
  if (train.num_classes > static_cast<int>(model.num_classes)) {
    throw ConfigError("dataset has " + std::to_string(train.num_classes) + " classes but the model only " +
                      std::to_string(model.num_classes));
  }
  ServerState server;
  server.params = build_model(model, cfg.seed);
  server.control = server.params.zeros_like();
  server.lr = cfg.lr;
  auto clients = make_clients(partition(train, cfg.clients, partition_spec), server.params);

  std::vector<RoundRecord> records;
  records.reserve(static_cast<std::size_t>(cfg.rounds));
  for (int t = 1; t <= cfg.rounds; ++t) {
    const auto started = std::chrono::steady_clock::now();
    RoundResult res = run_round(server, clients, model, cfg, t);
    RoundRecord rec;
    rec.round = t;
    rec.train_loss = res.train_loss;
    rec.lr = res.lr;
    rec.clients = res.participants;
    rec.similarities = res.similarities;
    rec.weights = res.weights;
    rec.test_accuracy = accuracy(server.params, model, test);
    Rng eval_rng = eval_stream(cfg, t);
    rec.robust_accuracy = robust_accuracy(server.params, model, test, cfg.attack, eval_rng);
    rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
    if (observer) observer(RoundContext{rec, res, server, clients});
    records.push_back(std::move(rec));
  }
  return records;
}

}  // namespace fatsim
