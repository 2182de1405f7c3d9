#include "fatsim/model.hpp"

#include <cmath>

#include "fatsim/errors.hpp"
#include "fatsim/ops.hpp"
#include "fatsim/rng.hpp"

namespace fatsim {

std::string to_string(HeadType head) {
  switch (head) {
    case HeadType::Cls:
      return "cls";
    case HeadType::Vis:
      return "vis";
    case HeadType::ClsVis:
      return "cls+vis";
  }
  return "?";
}

HeadType parse_head_type(std::string_view name) {
  if (name == "cls") return HeadType::Cls;
  if (name == "vis") return HeadType::Vis;
  if (name == "cls+vis" || name == "cls_vis") return HeadType::ClsVis;
  throw ConfigError("unknown head type '" + std::string(name) + "' (expected cls, vis or cls+vis)");
}

void ModelConfig::validate() const {
  if (image_h == 0 || image_w == 0 || channels == 0 || patch_size == 0 || embed_dim == 0 || num_heads == 0 ||
      depth == 0 || num_classes == 0) {
    throw ConfigError("model dimensions must all be positive");
  }
  if (image_h % patch_size != 0 || image_w % patch_size != 0) {
    throw ConfigError("patch size " + std::to_string(patch_size) + " does not divide image " +
                      std::to_string(image_h) + "x" + std::to_string(image_w));
  }
  if (embed_dim % num_heads != 0) {
    throw ConfigError("embed_dim " + std::to_string(embed_dim) + " is not divisible by " +
                      std::to_string(num_heads) + " heads");
  }
}

namespace {

constexpr double kInitStd = 0.02;

Tensor trunc_normal(Shape shape, Rng& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.truncated_normal(kInitStd);
  return t;
}

std::string block_name(std::size_t layer, const char* suffix) {
  return "blocks." + std::to_string(layer) + "." + suffix;
}

Var linear(Var x, Var weight, Var bias) { return add_broadcast(matmul(x, weight), bias); }

}  // namespace

ParameterSet build_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng = Rng::derive(seed, {0x1417});
  const std::size_t d = cfg.embed_dim;
  ParameterSet p;
  p.add("patch_embed.weight", trunc_normal({cfg.patch_dim(), d}, rng));
  p.add("patch_embed.bias", Tensor(Shape{d}));
  p.add("cls_token", trunc_normal({d}, rng));
  p.add("pos_embed", trunc_normal({cfg.tokens(), d}, rng));
  for (std::size_t l = 0; l < cfg.depth; ++l) {
    p.add(block_name(l, "norm1.weight"), Tensor(Shape{d}, 1.0));
    p.add(block_name(l, "norm1.bias"), Tensor(Shape{d}));
    p.add(block_name(l, "attn.qkv.weight"), trunc_normal({d, 3 * d}, rng));
    p.add(block_name(l, "attn.qkv.bias"), Tensor(Shape{3 * d}));
    p.add(block_name(l, "attn.proj.weight"), trunc_normal({d, d}, rng));
    p.add(block_name(l, "attn.proj.bias"), Tensor(Shape{d}));
    p.add(block_name(l, "norm2.weight"), Tensor(Shape{d}, 1.0));
    p.add(block_name(l, "norm2.bias"), Tensor(Shape{d}));
    p.add(block_name(l, "mlp.fc1.weight"), trunc_normal({d, cfg.mlp_dim()}, rng));
    p.add(block_name(l, "mlp.fc1.bias"), Tensor(Shape{cfg.mlp_dim()}));
    p.add(block_name(l, "mlp.fc2.weight"), trunc_normal({cfg.mlp_dim(), d}, rng));
    p.add(block_name(l, "mlp.fc2.bias"), Tensor(Shape{d}));
  }
  p.add("norm.weight", Tensor(Shape{cfg.head_dim()}, 1.0));
  p.add("norm.bias", Tensor(Shape{cfg.head_dim()}));
  p.add("head.weight", trunc_normal({cfg.head_dim(), cfg.num_classes}, rng));
  p.add("head.bias", Tensor(Shape{cfg.num_classes}));
  p.set_last_layer({"head.weight", "head.bias"});
  return p;
}

BoundParams::BoundParams(Graph& graph, const ParameterSet& params, bool requires_grad) {
  for (const auto& e : params.entries()) vars_.emplace(e.name, graph.parameter(e.name, e.value, requires_grad));
}

Var BoundParams::operator[](const std::string& name) const {
  auto it = vars_.find(name);
  if (it == vars_.end()) throw InvalidArgument("model parameter '" + name + "' is missing");
  return it->second;
}

Var patch_embed(Var images, const BoundParams& p, const ModelConfig& cfg) {
  const Shape& s = images.shape();
  if (s.size() != 4 || s[1] != cfg.image_h || s[2] != cfg.image_w || s[3] != cfg.channels) {
    throw DimensionError("patch_embed: images " + shape_str(s) + " do not match configured " +
                         std::to_string(cfg.image_h) + "x" + std::to_string(cfg.image_w) + "x" +
                         std::to_string(cfg.channels));
  }
  const std::size_t batch = s[0], n = cfg.num_patches(), d = cfg.embed_dim;
  Var patches = reshape(patchify(images, cfg.patch_size), Shape{batch * n, cfg.patch_dim()});
  Var embedded = linear(patches, p["patch_embed.weight"], p["patch_embed.bias"]);
  Var tokens = prepend_token(reshape(embedded, Shape{batch, n, d}), p["cls_token"]);
  return add_broadcast(tokens, p["pos_embed"]);
}

Var encoder_block(Var tokens, const BoundParams& p, const ModelConfig& cfg, std::size_t layer, BlockTrace* trace) {
  const Shape& s = tokens.shape();
  const std::size_t d = cfg.embed_dim, h = cfg.num_heads, dh = d / h;
  if (s.size() != 3 || s[2] != d) {
    throw DimensionError("encoder_block: tokens " + shape_str(s) + " do not have width " + std::to_string(d));
  }
  const std::size_t batch = s[0], t = s[1];

  Var normed = reshape(layer_norm(tokens, p[block_name(layer, "norm1.weight")], p[block_name(layer, "norm1.bias")]),
                       Shape{batch * t, d});
  Var qkv = reshape(linear(normed, p[block_name(layer, "attn.qkv.weight")], p[block_name(layer, "attn.qkv.bias")]),
                    Shape{batch, t, 3 * d});
  Var q = split_heads(qkv, 0, h);
  Var k = split_heads(qkv, 1, h);
  Var v = split_heads(qkv, 2, h);
  Var attn = softmax(scale(bmm_nt(q, k), 1.0 / std::sqrt(static_cast<double>(dh))));
  if (trace != nullptr) trace->attention = attn;
  Var mixed = reshape(merge_heads(bmm(attn, v), h), Shape{batch * t, d});
  Var projected = linear(mixed, p[block_name(layer, "attn.proj.weight")], p[block_name(layer, "attn.proj.bias")]);
  Var z = add(reshape(projected, Shape{batch, t, d}), tokens);

  Var normed2 = reshape(layer_norm(z, p[block_name(layer, "norm2.weight")], p[block_name(layer, "norm2.bias")]),
                        Shape{batch * t, d});
  Var hidden = gelu(linear(normed2, p[block_name(layer, "mlp.fc1.weight")], p[block_name(layer, "mlp.fc1.bias")]));
  Var out = linear(hidden, p[block_name(layer, "mlp.fc2.weight")], p[block_name(layer, "mlp.fc2.bias")]);
  return add(reshape(out, Shape{batch, t, d}), z);
}

Var classify(Var tokens, const BoundParams& p, const ModelConfig& cfg) {
  const Shape& s = tokens.shape();
  if (s.size() != 3 || s[1] < 2 || s[2] != cfg.embed_dim) {
    throw DimensionError("classify: tokens " + shape_str(s) + " must be [B x (N+1) x D] with N >= 1");
  }
  Var pooled;
  switch (cfg.head) {
    case HeadType::Cls:
      pooled = select_token(tokens, 0);
      break;
    case HeadType::Vis:
      pooled = mean_tokens(tokens, 1, s[1]);
      break;
    case HeadType::ClsVis:
      pooled = concat_last(select_token(tokens, 0), mean_tokens(tokens, 1, s[1]));
      break;
    default:
      throw ConfigError("classify: unknown head type");
  }
  Var normed = layer_norm(pooled, p["norm.weight"], p["norm.bias"]);
  return linear(normed, p["head.weight"], p["head.bias"]);
}

ForwardPass forward(const ParameterSet& params, const ModelConfig& cfg, const Tensor& images, GradMode mode) {
  ForwardPass pass;
  pass.graph = std::make_unique<Graph>();
  Graph& g = *pass.graph;
  const BoundParams bound(g, params, mode == GradMode::Parameters);
  pass.input = g.input(images, mode == GradMode::Input);
  Var z = patch_embed(pass.input, bound, cfg);
  for (std::size_t l = 0; l < cfg.depth; ++l) {
    BlockTrace trace;
    z = encoder_block(z, bound, cfg, l, &trace);
    pass.block_outputs.push_back(z);
    pass.attention.push_back(trace.attention);
  }
  pass.logits = classify(z, bound, cfg);
  return pass;
}

ForwardPass forward_loss(const ParameterSet& params, const ModelConfig& cfg, const Batch& batch, GradMode mode) {
  if (batch.size() == 0) throw InvalidArgument("forward_loss: empty batch");
  ForwardPass pass = forward(params, cfg, batch.images, mode);
  pass.loss = cross_entropy(pass.logits, batch.labels);
  return pass;
}

LossAndGrads loss_and_grads(const ParameterSet& params, const ModelConfig& cfg, const Batch& batch) {
  ForwardPass pass = forward_loss(params, cfg, batch, GradMode::Parameters);
  pass.graph->backward(pass.loss);
  LossAndGrads out{pass.loss.value().item(), pass.graph->parameter_grads()};
  if (!params.last_layer().empty()) out.grads.set_last_layer(params.last_layer());
  return out;
}

Tensor input_gradient(const ParameterSet& params, const ModelConfig& cfg, const Batch& batch) {
  ForwardPass pass = forward_loss(params, cfg, batch, GradMode::Input);
  pass.graph->backward(pass.loss);
  return pass.graph->grad(pass.input);
}

Tensor predict_logits(const ParameterSet& params, const ModelConfig& cfg, const Tensor& images) {
  return forward(params, cfg, images, GradMode::None).logits.value();
}

}  // namespace fatsim
