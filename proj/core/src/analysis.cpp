#include "fatsim/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fatsim/errors.hpp"
#include "fatsim/linalg.hpp"

namespace fatsim {

namespace {

constexpr std::size_t kEvalChunk = 128;

template <typename F>
void for_each_chunk(const Dataset& ds, F&& fn) {
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < ds.size(); start += kEvalChunk) {
    const std::size_t end = std::min(ds.size(), start + kEvalChunk);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    fn(make_batch(ds, idx));
  }
}

void require_non_empty(const Dataset& ds, const char* op) {
  if (ds.empty()) throw InvalidArgument(std::string(op) + ": empty dataset");
}

}  // namespace

std::vector<int> argmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) throw DimensionError("argmax_rows: expected [B x C], got " + shape_str(logits.shape()));
  const std::size_t rows = logits.dim(0), cols = logits.dim(1);
  std::vector<int> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < cols; ++j) {
      if (logits[r * cols + j] > logits[r * cols + best]) best = j;
    }
    out[r] = static_cast<int>(best);
  }
  return out;
}

double accuracy_from_logits(const Tensor& logits, std::span<const int> labels) {
  const auto pred = argmax_rows(logits);
  if (pred.size() != labels.size()) throw DimensionError("accuracy: prediction and label counts differ");
  if (pred.empty()) throw InvalidArgument("accuracy: empty dataset");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == labels[i] ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(pred.size());
}

std::vector<int> predict(const ParameterSet& params, const ModelConfig& cfg, const Dataset& ds) {
  std::vector<int> out;
  out.reserve(ds.size());
  for_each_chunk(ds, [&](const Batch& b) {
    const auto p = argmax_rows(predict_logits(params, cfg, b.images));
    out.insert(out.end(), p.begin(), p.end());
  });
  return out;
}

double accuracy(const ParameterSet& params, const ModelConfig& cfg, const Dataset& ds) {
  require_non_empty(ds, "accuracy");
  const auto pred = predict(params, cfg, ds);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == ds.examples[i].label ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(ds.size());
}

double robust_accuracy(const ParameterSet& params, const ModelConfig& cfg, const Dataset& ds, const AttackConfig& attack,
                       Rng& rng) {
  require_non_empty(ds, "robust_accuracy");
  std::size_t correct = 0;
  for_each_chunk(ds, [&](const Batch& b) {
    const Batch adv = pgd_perturb(params, cfg, b, attack, rng);
    const auto pred = argmax_rows(predict_logits(params, cfg, adv.images));
    for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == adv.labels[i] ? 1 : 0;
  });
  return static_cast<double>(correct) / static_cast<double>(ds.size());
}

Tensor collect_activations(const ParameterSet& params, const ModelConfig& cfg, const Dataset& sample,
                           std::size_t layer) {
  if (layer >= cfg.depth) {
    throw InvalidArgument("collect_activations: layer " + std::to_string(layer) + " outside model depth " +
                          std::to_string(cfg.depth));
  }
  require_non_empty(sample, "collect_activations");
  const std::size_t width = cfg.tokens() * cfg.embed_dim;
  Tensor out(Shape{sample.size(), width});
  std::size_t row = 0;
  for_each_chunk(sample, [&](const Batch& b) {
    const ForwardPass pass = forward(params, cfg, b.images, GradMode::None);
    const auto values = pass.block_outputs[layer].value().data();
    std::copy(values.begin(), values.end(), out.data().begin() + static_cast<std::ptrdiff_t>(row * width));
    row += b.size();
  });
  return out;
}

namespace {

// Symmetric PSD inverse square root through its SVD (U = V for PSD input).
Tensor inverse_sqrt_psd(const Tensor& s) {
  const Svd d = jacobi_svd(s);
  const std::size_t n = s.dim(0);
  Tensor out(Shape{n, n});
  for (std::size_t r = 0; r < n; ++r) {
    if (d.singular[r] <= 0.0) continue;
    const double f = 1.0 / std::sqrt(d.singular[r]);
    for (std::size_t i = 0; i < n; ++i) {
      const double ui = d.u[i * n + r] * f;
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += ui * d.u[j * n + r];
    }
  }
  return out;
}

Tensor gram(const Tensor& x, const Tensor& y) { return matmul(transpose(x), y); }

std::size_t components_for(const std::vector<double>& s, double keep) {
  double total = 0.0;
  for (double v : s) total += v * v;
  double acc = 0.0;
  for (std::size_t k = 0; k < s.size(); ++k) {
    acc += s[k] * s[k];
    if (acc >= keep * total * (1.0 - 1e-12)) return k + 1;
  }
  return s.size();
}

// First k columns of U scaled by the singular values: the data expressed in
// its top-k singular directions.
Tensor reduce(const Svd& d, std::size_t k) {
  const std::size_t m = d.u.dim(0), r = d.u.dim(1);
  Tensor out(Shape{m, k});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < k; ++j) out[i * k + j] = d.u[i * r + j] * d.singular[j];
  return out;
}

}  // namespace

CcaResult cca(const Tensor& x, const Tensor& y, double ridge) {
  if (x.rank() != 2 || y.rank() != 2 || x.dim(0) != y.dim(0)) {
    throw DimensionError("cca: matrices " + shape_str(x.shape()) + " and " + shape_str(y.shape()) +
                         " need the same row count");
  }
  Tensor sxx = gram(x, x);
  Tensor syy = gram(y, y);
  for (std::size_t i = 0; i < sxx.dim(0); ++i) sxx[i * sxx.dim(0) + i] += ridge;
  for (std::size_t i = 0; i < syy.dim(0); ++i) syy[i * syy.dim(0) + i] += ridge;
  const Tensor m = matmul(matmul(inverse_sqrt_psd(sxx), gram(x, y)), inverse_sqrt_psd(syy));
  CcaResult out;
  out.correlations = jacobi_svd(m).singular;
  for (double& c : out.correlations) c = std::clamp(c, 0.0, 1.0);
  return out;
}

SVCCAReport svcca(const Tensor& a, const Tensor& b, double variance_keep) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(0) != b.dim(0)) {
    throw DimensionError("svcca: activations " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                         " need the same number of rows");
  }
  if (!(variance_keep > 0.0 && variance_keep <= 1.0)) throw InvalidArgument("svcca: variance_keep must lie in (0, 1]");
  const Svd da = jacobi_svd(center_columns(a));
  const Svd db = jacobi_svd(center_columns(b));
  if (da.singular.empty() || da.singular.front() == 0.0 || db.singular.empty() || db.singular.front() == 0.0) {
    throw InvalidArgument("svcca: rank-0 input");
  }
  const std::size_t ka = components_for(da.singular, variance_keep);
  const std::size_t kb = components_for(db.singular, variance_keep);
  if (ka > a.dim(0) || kb > b.dim(0)) throw InvalidArgument("svcca: fewer rows than retained components");
  const CcaResult c = cca(reduce(da, ka), reduce(db, kb));
  const std::size_t keep = std::min(ka, kb);
  double mean = 0.0;
  for (std::size_t i = 0; i < keep; ++i) mean += c.correlations[i];
  SVCCAReport out;
  out.mean_correlation = std::clamp(mean / static_cast<double>(keep), 0.0, 1.0);
  out.retained = keep;
  return out;
}

}  // namespace fatsim
