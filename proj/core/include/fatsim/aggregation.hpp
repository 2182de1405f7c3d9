#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "fatsim/params.hpp"

namespace fatsim {

struct ClientUpdate {
  std::size_t num_samples = 0;
  ParameterSet params;
};

// sum_k w_k * theta_k, reduced in list order. Weights need not be normalized.
ParameterSet weighted_sum(std::span<const ParameterSet> params, std::span<const double> weights);

// Weights n_k / sum_j n_j.
std::vector<double> fedavg_weights(std::span<const std::size_t> counts);

ParameterSet aggregate_fedavg(std::span<const ClientUpdate> updates);

// g.l / (|g|_2 |l|_2); throws DegenerateSimilarityError if either norm is 0.
double cosine_similarity(std::span<const double> g, std::span<const double> l);

struct SimilarityWeights {
  std::vector<double> similarities;  // c_k
  std::vector<double> weights;       // w_k = softmax(q c)_k
};

// softmax(q * c): w_k = exp(q c_k) / sum_j exp(q c_j), max-subtracted.
std::vector<double> similarity_weights(std::span<const double> similarities, double q);

SimilarityWeights fedwavg_weights(std::span<const double> global_last, std::span<const std::vector<double>> client_last,
                                  double q);

struct FedWAvgResult {
  ParameterSet params;
  SimilarityWeights weights;
};

// Weights each client's full parameter set by the softmax of q times the
// cosine similarity between its last layer and the current global last layer.
FedWAvgResult aggregate_fedwavg(const ParameterSet& global, std::span<const ParameterSet> updates, double q,
                                bool include_bias = true);

}  // namespace fatsim
