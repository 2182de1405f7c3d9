#include "fatsim/aggregation.hpp"

#include <cmath>

#include "fatsim/errors.hpp"
#include "fatsim/ops.hpp"

namespace fatsim {

ParameterSet weighted_sum(std::span<const ParameterSet> params, std::span<const double> weights) {
  if (params.empty()) throw InvalidArgument("aggregation needs at least one client");
  if (params.size() != weights.size()) throw InvalidArgument("aggregation: one weight per client required");
  ParameterSet out = params.front().zeros_like();
  for (std::size_t k = 0; k < params.size(); ++k) {
    require_same_layout(params.front(), params[k], "aggregate");
    axpy(weights[k], params[k], out);
  }
  return out;
}

std::vector<double> fedavg_weights(std::span<const std::size_t> counts) {
  if (counts.empty()) throw InvalidArgument("aggregation needs at least one client");
  std::size_t total = 0;
  for (std::size_t n : counts) total += n;
  if (total == 0) throw InvalidArgument("aggregation: clients hold no samples");
  std::vector<double> w;
  w.reserve(counts.size());
  for (std::size_t n : counts) w.push_back(static_cast<double>(n) / static_cast<double>(total));
  return w;
}

ParameterSet aggregate_fedavg(std::span<const ClientUpdate> updates) {
  std::vector<std::size_t> counts;
  std::vector<ParameterSet> params;
  for (const auto& u : updates) {
    counts.push_back(u.num_samples);
    params.push_back(u.params);
  }
  return weighted_sum(params, fedavg_weights(counts));
}

double cosine_similarity(std::span<const double> g, std::span<const double> l) {
  if (g.size() != l.size()) {
    throw DimensionError("cosine_similarity: lengths differ (" + std::to_string(g.size()) + " vs " +
                         std::to_string(l.size()) + ")");
  }
  double dot = 0.0, gg = 0.0, ll = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) {
    dot += g[i] * l[i];
    gg += g[i] * g[i];
    ll += l[i] * l[i];
  }
  if (gg == 0.0 || ll == 0.0) throw DegenerateSimilarityError("cosine similarity of a zero-norm vector is undefined");
  return dot / (std::sqrt(gg) * std::sqrt(ll));
}

std::vector<double> similarity_weights(std::span<const double> similarities, double q) {
  if (similarities.empty()) throw InvalidArgument("similarity_weights: no clients");
  if (!std::isfinite(q)) throw InvalidArgument("similarity_weights: scale factor must be finite");
  std::vector<double> scaled;
  scaled.reserve(similarities.size());
  for (double c : similarities) {
    if (!std::isfinite(c)) throw InvalidArgument("similarity_weights: non-finite similarity");
    scaled.push_back(q * c);
  }
  return softmax(scaled);
}

SimilarityWeights fedwavg_weights(std::span<const double> global_last, std::span<const std::vector<double>> client_last,
                                  double q) {
  if (client_last.empty()) throw InvalidArgument("fedwavg_weights: no clients");
  SimilarityWeights out;
  out.similarities.reserve(client_last.size());
  for (const auto& l : client_last) out.similarities.push_back(cosine_similarity(global_last, l));
  out.weights = similarity_weights(out.similarities, q);
  return out;
}

FedWAvgResult aggregate_fedwavg(const ParameterSet& global, std::span<const ParameterSet> updates, double q,
                                bool include_bias) {
  if (updates.empty()) throw InvalidArgument("aggregate_fedwavg: no clients");
  const std::vector<double> g = global.last_layer_vector(include_bias);
  std::vector<std::vector<double>> ls;
  ls.reserve(updates.size());
  for (const auto& u : updates) {
    if (u.last_layer() != global.last_layer()) {
      throw InvalidArgument("aggregate_fedwavg: client last-layer designation differs from the global model");
    }
    ls.push_back(u.last_layer_vector(include_bias));
  }
  FedWAvgResult out;
  out.weights = fedwavg_weights(g, ls, q);
  out.params = weighted_sum(updates, out.weights.weights);
  return out;
}

}  // namespace fatsim
