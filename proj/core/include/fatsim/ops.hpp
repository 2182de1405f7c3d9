#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "fatsim/graph.hpp"

namespace fatsim {

inline constexpr double kLayerNormEps = 1e-5;

// [m x k] * [k x n] -> [m x n]
Var matmul(Var a, Var b);
// Batched: [g x m x k] * [g x k x n] -> [g x m x n]
Var bmm(Var a, Var b);
// Batched with transposed right operand: [g x m x k] * [g x n x k]^T -> [g x m x n]
Var bmm_nt(Var a, Var b);

Var add(Var a, Var b);
Var mul(Var a, Var b);
// x + y where y's shape equals the trailing dimensions of x (bias rows,
// positional tables).
Var add_broadcast(Var x, Var y);
Var scale(Var x, double factor);
// Sum of all elements, shape [1].
Var sum(Var x);
Var reshape(Var x, Shape shape);

// Tanh approximation 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))).
Var gelu(Var x);
double gelu_scalar(double x);

// Along the last axis, max-subtracted.
Var softmax(Var x);
std::vector<double> softmax(std::span<const double> x);

// Normalizes the last axis to zero mean / unit (biased) variance, then
// applies gamma and beta.
Var layer_norm(Var x, Var gamma, Var beta, double eps = kLayerNormEps);

// Mean over the batch of -log softmax(logits)[label]. logits: [B x C].
Var cross_entropy(Var logits, std::span<const int> labels);

// [B x H x W x C] -> [B x N x P*P*C]; patches enumerated row-major over
// the patch grid, pixels row-major (row, column, channel) within a patch.
Var patchify(Var images, std::size_t patch);

// [B x N x D], [D] -> [B x (N+1) x D] with the token at position 0.
Var prepend_token(Var tokens, Var token);

// [B x T x 3D] -> [B*h x T x D/h], selecting query (0), key (1) or value (2).
Var split_heads(Var qkv, std::size_t part, std::size_t heads);
// [B*h x T x d] -> [B x T x h*d]
Var merge_heads(Var x, std::size_t heads);

// [B x T x D] -> [B x D]
Var select_token(Var tokens, std::size_t index);
// Mean of tokens [begin, end): [B x T x D] -> [B x D]
Var mean_tokens(Var tokens, std::size_t begin, std::size_t end);
// [B x D1], [B x D2] -> [B x (D1+D2)]
Var concat_last(Var a, Var b);

}  // namespace fatsim
