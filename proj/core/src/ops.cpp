#include "fatsim/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>

#include "fatsim/errors.hpp"

namespace fatsim {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

ConstMap cmap(const Tensor& t, std::size_t offset, std::size_t rows, std::size_t cols) {
  return ConstMap(t.data().data() + offset, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

MutMap mmap(Tensor& t, std::size_t offset, std::size_t rows, std::size_t cols) {
  return MutMap(t.data().data() + offset, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

std::size_t last_dim(const Shape& s) { return s.empty() ? 1 : s.back(); }

void require_rank(const char* op, const Var& v, std::size_t rank) {
  if (v.shape().size() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(v.shape()));
  }
}

void require_same_shape(const char* op, const Var& a, const Var& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shapes differ " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

// Adds src into the gradient buffer of node id if that node wants gradients.
template <typename F>
void accumulate(Graph& g, std::size_t id, F&& fill) {
  if (!g.requires_grad(id)) return;
  fill(g.grad_buffer(id));
}

}  // namespace

Var matmul(Var a, Var b) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  if (b.shape()[0] != k) {
    throw DimensionError("matmul: inner dimensions differ " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  Tensor out(Shape{m, n});
  mmap(out, 0, m, n).noalias() = cmap(a.value(), 0, m, k) * cmap(b.value(), 0, k, n);
  const std::size_t ia = a.id(), ib = b.id();
  return a.graph().record("matmul", std::move(out), {a, b}, [ia, ib, m, k, n](Graph& g, std::size_t self) {
    const auto dy = cmap(g.upstream(self), 0, m, n);
    accumulate(g, ia, [&](Tensor& ga) { mmap(ga, 0, m, k).noalias() += dy * cmap(g.value(ib), 0, k, n).transpose(); });
    accumulate(g, ib, [&](Tensor& gb) { mmap(gb, 0, k, n).noalias() += cmap(g.value(ia), 0, m, k).transpose() * dy; });
  });
}

Var bmm(Var a, Var b) {
  require_rank("bmm", a, 3);
  require_rank("bmm", b, 3);
  const std::size_t groups = a.shape()[0], m = a.shape()[1], k = a.shape()[2], n = b.shape()[2];
  if (b.shape()[0] != groups || b.shape()[1] != k) {
    throw DimensionError("bmm: incompatible shapes " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  }
  Tensor out(Shape{groups, m, n});
  for (std::size_t gi = 0; gi < groups; ++gi) {
    mmap(out, gi * m * n, m, n).noalias() = cmap(a.value(), gi * m * k, m, k) * cmap(b.value(), gi * k * n, k, n);
  }
  const std::size_t ia = a.id(), ib = b.id();
  return a.graph().record("bmm", std::move(out), {a, b}, [=](Graph& g, std::size_t self) {
    const Tensor& dy = g.upstream(self);
    accumulate(g, ia, [&](Tensor& ga) {
      for (std::size_t gi = 0; gi < groups; ++gi)
        mmap(ga, gi * m * k, m, k).noalias() += cmap(dy, gi * m * n, m, n) * cmap(g.value(ib), gi * k * n, k, n).transpose();
    });
    accumulate(g, ib, [&](Tensor& gb) {
      for (std::size_t gi = 0; gi < groups; ++gi)
        mmap(gb, gi * k * n, k, n).noalias() += cmap(g.value(ia), gi * m * k, m, k).transpose() * cmap(dy, gi * m * n, m, n);
    });
  });
}

Var bmm_nt(Var a, Var b) {
  require_rank("bmm_nt", a, 3);
  require_rank("bmm_nt", b, 3);
  const std::size_t groups = a.shape()[0], m = a.shape()[1], k = a.shape()[2], n = b.shape()[1];
  if (b.shape()[0] != groups || b.shape()[2] != k) {
    throw DimensionError("bmm_nt: incompatible shapes " + shape_str(a.shape()) + " x " + shape_str(b.shape()) + "^T");
  }
  Tensor out(Shape{groups, m, n});
  for (std::size_t gi = 0; gi < groups; ++gi) {
    mmap(out, gi * m * n, m, n).noalias() =
        cmap(a.value(), gi * m * k, m, k) * cmap(b.value(), gi * n * k, n, k).transpose();
  }
  const std::size_t ia = a.id(), ib = b.id();
  return a.graph().record("bmm_nt", std::move(out), {a, b}, [=](Graph& g, std::size_t self) {
    const Tensor& dy = g.upstream(self);
    accumulate(g, ia, [&](Tensor& ga) {
      for (std::size_t gi = 0; gi < groups; ++gi)
        mmap(ga, gi * m * k, m, k).noalias() += cmap(dy, gi * m * n, m, n) * cmap(g.value(ib), gi * n * k, n, k);
    });
    accumulate(g, ib, [&](Tensor& gb) {
      for (std::size_t gi = 0; gi < groups; ++gi)
        mmap(gb, gi * n * k, n, k).noalias() += cmap(dy, gi * m * n, m, n).transpose() * cmap(g.value(ia), gi * m * k, m, k);
    });
  });
}

Var add(Var a, Var b) {
  require_same_shape("add", a, b);
  Tensor out = a.value();
  auto o = out.data();
  auto bv = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.graph().record("add", std::move(out), {a, b}, [ia, ib](Graph& g, std::size_t self) {
    const auto dy = g.upstream(self).data();
    for (std::size_t id : {ia, ib}) {
      accumulate(g, id, [&](Tensor& gx) {
        auto d = gx.data();
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += dy[i];
      });
    }
  });
}

Var mul(Var a, Var b) {
  require_same_shape("mul", a, b);
  Tensor out = a.value();
  auto o = out.data();
  auto bv = b.value().data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] *= bv[i];
  const std::size_t ia = a.id(), ib = b.id();
  return a.graph().record("mul", std::move(out), {a, b}, [ia, ib](Graph& g, std::size_t self) {
    const auto dy = g.upstream(self).data();
    accumulate(g, ia, [&](Tensor& ga) {
      auto d = ga.data();
      auto other = g.value(ib).data();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += dy[i] * other[i];
    });
    accumulate(g, ib, [&](Tensor& gb) {
      auto d = gb.data();
      auto other = g.value(ia).data();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += dy[i] * other[i];
    });
  });
}

Var add_broadcast(Var x, Var y) {
  const Shape& xs = x.shape();
  const Shape& ys = y.shape();
  if (ys.size() > xs.size() || !std::equal(ys.begin(), ys.end(), xs.end() - static_cast<std::ptrdiff_t>(ys.size()))) {
    throw DimensionError("add_broadcast: " + shape_str(ys) + " is not a suffix of " + shape_str(xs));
  }
  const std::size_t inner = y.value().size();
  const std::size_t outer = x.value().size() / inner;
  Tensor out = x.value();
  auto o = out.data();
  auto yv = y.value().data();
  for (std::size_t r = 0; r < outer; ++r) {
    double* row = o.data() + r * inner;
    for (std::size_t j = 0; j < inner; ++j) row[j] += yv[j];
  }
  const std::size_t ix = x.id(), iy = y.id();
  return x.graph().record("add_broadcast", std::move(out), {x, y}, [=](Graph& g, std::size_t self) {
    const auto dy = g.upstream(self).data();
    accumulate(g, ix, [&](Tensor& gx) {
      auto d = gx.data();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += dy[i];
    });
    accumulate(g, iy, [&](Tensor& gy) {
      auto d = gy.data();
      for (std::size_t r = 0; r < outer; ++r) {
        const double* row = dy.data() + r * inner;
        for (std::size_t j = 0; j < inner; ++j) d[j] += row[j];
      }
    });
  });
}

Var scale(Var x, double factor) {
  Tensor out = x.value();
  for (double& v : out.data()) v *= factor;
  const std::size_t ix = x.id();
  return x.graph().record("scale", std::move(out), {x}, [ix, factor](Graph& g, std::size_t self) {
    const auto dy = g.upstream(self).data();
    accumulate(g, ix, [&](Tensor& gx) {
      auto d = gx.data();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += factor * dy[i];
    });
  });
}

Var sum(Var x) {
  double acc = 0.0;
  for (double v : x.value().data()) acc += v;
  const std::size_t ix = x.id();
  return x.graph().record("sum", Tensor::scalar(acc), {x}, [ix](Graph& g, std::size_t self) {
    const double dy = g.upstream(self)[0];
    accumulate(g, ix, [&](Tensor& gx) {
      for (double& d : gx.data()) d += dy;
    });
  });
}

Var reshape(Var x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  const std::size_t ix = x.id();
  return x.graph().record("reshape", std::move(out), {x}, [ix](Graph& g, std::size_t self) {
    const auto dy = g.upstream(self).data();
    accumulate(g, ix, [&](Tensor& gx) {
      auto d = gx.data();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += dy[i];
    });
  });
}

namespace {

constexpr double kGeluCubic = 0.044715;
const double kGeluScale = std::sqrt(2.0 / std::numbers::pi);

}  // namespace

double gelu_scalar(double x) {
  return 0.5 * x * (1.0 + std::tanh(kGeluScale * (x + kGeluCubic * x * x * x)));
}

Var gelu(Var x) {
  Tensor out = x.value();
  for (double& v : out.data()) v = gelu_scalar(v);
  const std::size_t ix = x.id();
  return x.graph().record("gelu", std::move(out), {x}, [ix](Graph& g, std::size_t self) {
    const auto dy = g.upstream(self).data();
    accumulate(g, ix, [&](Tensor& gx) {
      auto d = gx.data();
      auto xv = g.value(ix).data();
      for (std::size_t i = 0; i < d.size(); ++i) {
        const double v = xv[i];
        const double t = std::tanh(kGeluScale * (v + kGeluCubic * v * v * v));
        const double du = kGeluScale * (1.0 + 3.0 * kGeluCubic * v * v);
        d[i] += dy[i] * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du);
      }
    });
  });
}

namespace {

void softmax_row(const double* in, double* out, std::size_t n) {
  double mx = in[0];
  for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, in[j]);
  double total = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    out[j] = std::exp(in[j] - mx);
    total += out[j];
  }
  for (std::size_t j = 0; j < n; ++j) out[j] /= total;
}

}  // namespace

std::vector<double> softmax(std::span<const double> x) {
  std::vector<double> out(x.size());
  if (!x.empty()) softmax_row(x.data(), out.data(), x.size());
  return out;
}

Var softmax(Var x) {
  const std::size_t n = last_dim(x.shape());
  const std::size_t rows = x.value().size() / n;
  Tensor out(x.shape());
  for (std::size_t r = 0; r < rows; ++r) softmax_row(x.value().data().data() + r * n, out.data().data() + r * n, n);
  const std::size_t ix = x.id();
  return x.graph().record("softmax", std::move(out), {x}, [ix, n, rows](Graph& g, std::size_t self) {
    accumulate(g, ix, [&](Tensor& gx) {
      const double* y = g.value(self).data().data();
      const double* dy = g.upstream(self).data().data();
      double* d = gx.data().data();
      for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t o = r * n;
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += dy[o + j] * y[o + j];
        for (std::size_t j = 0; j < n; ++j) d[o + j] += y[o + j] * (dy[o + j] - dot);
      }
    });
  });
}

Var layer_norm(Var x, Var gamma, Var beta, double eps) {
  const std::size_t n = last_dim(x.shape());
  if (gamma.shape() != Shape{n} || beta.shape() != Shape{n}) {
    throw DimensionError("layer_norm: gamma " + shape_str(gamma.shape()) + " / beta " + shape_str(beta.shape()) +
                         " do not match feature dim of " + shape_str(x.shape()));
  }
  if (!(eps > 0.0)) throw InvalidArgument("layer_norm: eps must be positive");
  const std::size_t rows = x.value().size() / n;
  Tensor out(x.shape());
  // Normalized inputs and inverse std are kept for the backward pass.
  Tensor xhat(x.shape());
  std::vector<double> rstd(rows);
  const double* xv = x.value().data().data();
  const double* gv = gamma.value().data().data();
  const double* bv = beta.value().data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xv + r * n;
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += row[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(n);
    rstd[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) {
      const double h = (row[j] - mean) * rstd[r];
      xhat[r * n + j] = h;
      out[r * n + j] = h * gv[j] + bv[j];
    }
  }
  const std::size_t ix = x.id(), ig = gamma.id(), ib = beta.id();
  return x.graph().record(
      "layer_norm", std::move(out), {x, gamma, beta},
      [ix, ig, ib, n, rows, xhat = std::move(xhat), rstd = std::move(rstd)](Graph& g, std::size_t self) {
        const double* dy = g.upstream(self).data().data();
        accumulate(g, ig, [&](Tensor& gg) {
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < n; ++j) gg[j] += dy[r * n + j] * xhat[r * n + j];
        });
        accumulate(g, ib, [&](Tensor& gb) {
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t j = 0; j < n; ++j) gb[j] += dy[r * n + j];
        });
        accumulate(g, ix, [&](Tensor& gx) {
          const double* gam = g.value(ig).data().data();
          const double inv_n = 1.0 / static_cast<double>(n);
          for (std::size_t r = 0; r < rows; ++r) {
            const std::size_t o = r * n;
            double mean_d = 0.0, mean_dh = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
              const double dh = dy[o + j] * gam[j];
              mean_d += dh;
              mean_dh += dh * xhat[o + j];
            }
            mean_d *= inv_n;
            mean_dh *= inv_n;
            for (std::size_t j = 0; j < n; ++j) {
              const double dh = dy[o + j] * gam[j];
              gx[o + j] += rstd[r] * (dh - mean_d - xhat[o + j] * mean_dh);
            }
          }
        });
      });
}

Var cross_entropy(Var logits, std::span<const int> labels) {
  require_rank("cross_entropy", logits, 2);
  const std::size_t batch = logits.shape()[0], classes = logits.shape()[1];
  if (labels.size() != batch) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                         shape_str(logits.shape()));
  }
  if (batch == 0) throw InvalidArgument("cross_entropy: empty batch");
  std::vector<int> ys(labels.begin(), labels.end());
  for (int y : ys) {
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw InvalidArgument("cross_entropy: label " + std::to_string(y) + " outside [0, " +
                            std::to_string(classes) + ")");
    }
  }
  Tensor probs(logits.shape());
  double total = 0.0;
  const double* z = logits.value().data().data();
  for (std::size_t b = 0; b < batch; ++b) {
    const double* row = z + b * classes;
    double mx = row[0];
    for (std::size_t j = 1; j < classes; ++j) mx = std::max(mx, row[j]);
    double se = 0.0;
    for (std::size_t j = 0; j < classes; ++j) se += std::exp(row[j] - mx);
    const double lse = mx + std::log(se);
    total += lse - row[ys[b]];
    for (std::size_t j = 0; j < classes; ++j) probs[b * classes + j] = std::exp(row[j] - lse);
  }
  const double inv_b = 1.0 / static_cast<double>(batch);
  const std::size_t il = logits.id();
  return logits.graph().record(
      "cross_entropy", Tensor::scalar(total * inv_b), {logits},
      [il, batch, classes, inv_b, ys = std::move(ys), probs = std::move(probs)](Graph& g, std::size_t self) {
        const double dy = g.upstream(self)[0] * inv_b;
        accumulate(g, il, [&](Tensor& gl) {
          for (std::size_t b = 0; b < batch; ++b) {
            for (std::size_t j = 0; j < classes; ++j) {
              const double onehot = static_cast<int>(j) == ys[b] ? 1.0 : 0.0;
              gl[b * classes + j] += dy * (probs[b * classes + j] - onehot);
            }
          }
        });
      });
}

namespace {

// Source offset in the image tensor for every element of the patch tensor.
std::vector<std::size_t> patch_index(std::size_t batch, std::size_t h, std::size_t w, std::size_t c,
                                     std::size_t p) {
  const std::size_t gh = h / p, gw = w / p;
  std::vector<std::size_t> idx;
  idx.reserve(batch * h * w * c);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t py = 0; py < gh; ++py)
      for (std::size_t px = 0; px < gw; ++px)
        for (std::size_t y = 0; y < p; ++y)
          for (std::size_t x = 0; x < p; ++x)
            for (std::size_t ch = 0; ch < c; ++ch)
              idx.push_back(((b * h + py * p + y) * w + px * p + x) * c + ch);
  return idx;
}

}  // namespace

Var patchify(Var images, std::size_t patch) {
  require_rank("patchify", images, 4);
  const Shape& s = images.shape();
  const std::size_t batch = s[0], h = s[1], w = s[2], c = s[3];
  if (patch == 0 || h % patch != 0 || w % patch != 0) {
    throw DimensionError("patchify: patch size " + std::to_string(patch) + " does not divide image " + shape_str(s));
  }
  const std::size_t n = (h / patch) * (w / patch);
  auto idx = patch_index(batch, h, w, c, patch);
  Tensor out(Shape{batch, n, patch * patch * c});
  const auto src = images.value().data();
  for (std::size_t i = 0; i < idx.size(); ++i) out[i] = src[idx[i]];
  const std::size_t ii = images.id();
  return images.graph().record("patchify", std::move(out), {images}, [ii, idx = std::move(idx)](Graph& g, std::size_t self) {
    const auto dy = g.upstream(self).data();
    accumulate(g, ii, [&](Tensor& gi) {
      for (std::size_t i = 0; i < idx.size(); ++i) gi[idx[i]] += dy[i];
    });
  });
}

Var prepend_token(Var tokens, Var token) {
  require_rank("prepend_token", tokens, 3);
  const std::size_t batch = tokens.shape()[0], n = tokens.shape()[1], d = tokens.shape()[2];
  if (token.shape() != Shape{d}) {
    throw DimensionError("prepend_token: token " + shape_str(token.shape()) + " vs tokens " + shape_str(tokens.shape()));
  }
  Tensor out(Shape{batch, n + 1, d});
  const auto tv = tokens.value().data();
  const auto cv = token.value().data();
  for (std::size_t b = 0; b < batch; ++b) {
    std::copy(cv.begin(), cv.end(), out.data().begin() + static_cast<std::ptrdiff_t>(b * (n + 1) * d));
    std::copy(tv.begin() + static_cast<std::ptrdiff_t>(b * n * d), tv.begin() + static_cast<std::ptrdiff_t>((b + 1) * n * d),
              out.data().begin() + static_cast<std::ptrdiff_t>((b * (n + 1) + 1) * d));
  }
  const std::size_t it = tokens.id(), ic = token.id();
  return tokens.graph().record("prepend_token", std::move(out), {tokens, token}, [=](Graph& g, std::size_t self) {
    const auto dy = g.upstream(self).data();
    accumulate(g, it, [&](Tensor& gt) {
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = 0; i < n * d; ++i) gt[b * n * d + i] += dy[(b * (n + 1) + 1) * d + i];
    });
    accumulate(g, ic, [&](Tensor& gc) {
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t j = 0; j < d; ++j) gc[j] += dy[b * (n + 1) * d + j];
    });
  });
}

Var split_heads(Var qkv, std::size_t part, std::size_t heads) {
  require_rank("split_heads", qkv, 3);
  const std::size_t batch = qkv.shape()[0], t = qkv.shape()[1], width = qkv.shape()[2];
  if (part > 2 || heads == 0 || width % 3 != 0 || (width / 3) % heads != 0) {
    throw DimensionError("split_heads: cannot split " + shape_str(qkv.shape()) + " into " + std::to_string(heads) + " heads");
  }
  const std::size_t dm = width / 3, dh = dm / heads;
  Tensor out(Shape{batch * heads, t, dh});
  const auto src = qkv.value().data();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t i = 0; i < t; ++i)
        for (std::size_t j = 0; j < dh; ++j)
          out[((b * heads + h) * t + i) * dh + j] = src[(b * t + i) * width + part * dm + h * dh + j];
  const std::size_t iq = qkv.id();
  return qkv.graph().record("split_heads", std::move(out), {qkv}, [=](Graph& g, std::size_t self) {
    const auto dy = g.upstream(self).data();
    accumulate(g, iq, [&](Tensor& gq) {
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t h = 0; h < heads; ++h)
          for (std::size_t i = 0; i < t; ++i)
            for (std::size_t j = 0; j < dh; ++j)
              gq[(b * t + i) * width + part * dm + h * dh + j] += dy[((b * heads + h) * t + i) * dh + j];
    });
  });
}

Var merge_heads(Var x, std::size_t heads) {
  require_rank("merge_heads", x, 3);
  const std::size_t groups = x.shape()[0], t = x.shape()[1], dh = x.shape()[2];
  if (heads == 0 || groups % heads != 0) {
    throw DimensionError("merge_heads: " + shape_str(x.shape()) + " is not divisible into " + std::to_string(heads) + " heads");
  }
  const std::size_t batch = groups / heads, dm = heads * dh;
  Tensor out(Shape{batch, t, dm});
  const auto src = x.value().data();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t i = 0; i < t; ++i)
        for (std::size_t j = 0; j < dh; ++j)
          out[(b * t + i) * dm + h * dh + j] = src[((b * heads + h) * t + i) * dh + j];
  const std::size_t ix = x.id();
  return x.graph().record("merge_heads", std::move(out), {x}, [=](Graph& g, std::size_t self) {
    const auto dy = g.upstream(self).data();
    accumulate(g, ix, [&](Tensor& gx) {
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t h = 0; h < heads; ++h)
          for (std::size_t i = 0; i < t; ++i)
            for (std::size_t j = 0; j < dh; ++j)
              gx[((b * heads + h) * t + i) * dh + j] += dy[(b * t + i) * dm + h * dh + j];
    });
  });
}

Var select_token(Var tokens, std::size_t index) {
  require_rank("select_token", tokens, 3);
  const std::size_t batch = tokens.shape()[0], t = tokens.shape()[1], d = tokens.shape()[2];
  if (index >= t) throw DimensionError("select_token: index " + std::to_string(index) + " out of " + shape_str(tokens.shape()));
  Tensor out(Shape{batch, d});
  const auto src = tokens.value().data();
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t j = 0; j < d; ++j) out[b * d + j] = src[(b * t + index) * d + j];
  const std::size_t it = tokens.id();
  return tokens.graph().record("select_token", std::move(out), {tokens}, [=](Graph& g, std::size_t self) {
    const auto dy = g.upstream(self).data();
    accumulate(g, it, [&](Tensor& gt) {
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t j = 0; j < d; ++j) gt[(b * t + index) * d + j] += dy[b * d + j];
    });
  });
}

Var mean_tokens(Var tokens, std::size_t begin, std::size_t end) {
  require_rank("mean_tokens", tokens, 3);
  const std::size_t batch = tokens.shape()[0], t = tokens.shape()[1], d = tokens.shape()[2];
  if (begin >= end || end > t) {
    throw DimensionError("mean_tokens: range [" + std::to_string(begin) + ", " + std::to_string(end) + ") invalid for " +
                         shape_str(tokens.shape()));
  }
  const double inv = 1.0 / static_cast<double>(end - begin);
  Tensor out(Shape{batch, d});
  const auto src = tokens.value().data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = begin; i < end; ++i)
      for (std::size_t j = 0; j < d; ++j) out[b * d + j] += src[(b * t + i) * d + j];
    for (std::size_t j = 0; j < d; ++j) out[b * d + j] *= inv;
  }
  const std::size_t it = tokens.id();
  return tokens.graph().record("mean_tokens", std::move(out), {tokens}, [=](Graph& g, std::size_t self) {
    const auto dy = g.upstream(self).data();
    accumulate(g, it, [&](Tensor& gt) {
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = begin; i < end; ++i)
          for (std::size_t j = 0; j < d; ++j) gt[(b * t + i) * d + j] += inv * dy[b * d + j];
    });
  });
}

Var concat_last(Var a, Var b) {
  require_rank("concat_last", a, 2);
  require_rank("concat_last", b, 2);
  const std::size_t batch = a.shape()[0], da = a.shape()[1], db = b.shape()[1];
  if (b.shape()[0] != batch) {
    throw DimensionError("concat_last: batch sizes differ " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const std::size_t dc = da + db;
  Tensor out(Shape{batch, dc});
  const auto av = a.value().data();
  const auto bv = b.value().data();
  for (std::size_t r = 0; r < batch; ++r) {
    for (std::size_t j = 0; j < da; ++j) out[r * dc + j] = av[r * da + j];
    for (std::size_t j = 0; j < db; ++j) out[r * dc + da + j] = bv[r * db + j];
  }
  const std::size_t ia = a.id(), ib = b.id();
  return a.graph().record("concat_last", std::move(out), {a, b}, [=](Graph& g, std::size_t self) {
    const auto dy = g.upstream(self).data();
    accumulate(g, ia, [&](Tensor& ga) {
      for (std::size_t r = 0; r < batch; ++r)
        for (std::size_t j = 0; j < da; ++j) ga[r * da + j] += dy[r * dc + j];
    });
    accumulate(g, ib, [&](Tensor& gb) {
      for (std::size_t r = 0; r < batch; ++r)
        for (std::size_t j = 0; j < db; ++j) gb[r * db + j] += dy[r * dc + da + j];
    });
  });
}

}  // namespace fatsim
