#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "fatsim/data.hpp"
#include "fatsim/graph.hpp"
#include "fatsim/params.hpp"

namespace fatsim {

// Which tokens feed the classification layer.
enum class HeadType {
  Cls,     // class token only
  Vis,     // mean of the visual (patch) tokens
  ClsVis,  // class token concatenated with the visual mean
};

std::string to_string(HeadType head);
HeadType parse_head_type(std::string_view name);

struct ModelConfig {
  std::size_t image_h = 16;
  std::size_t image_w = 16;
  std::size_t channels = 1;
  std::size_t patch_size = 4;
  std::size_t embed_dim = 32;
  std::size_t num_heads = 4;
  std::size_t depth = 2;
  std::size_t num_classes = 10;
  HeadType head = HeadType::Cls;

  std::size_t num_patches() const { return (image_h / patch_size) * (image_w / patch_size); }
  std::size_t tokens() const { return num_patches() + 1; }
  std::size_t patch_dim() const { return patch_size * patch_size * channels; }
  std::size_t mlp_dim() const { return 4 * embed_dim; }
  // Width of the pooled vector entering the final norm and linear map.
  std::size_t head_dim() const { return head == HeadType::ClsVis ? 2 * embed_dim : embed_dim; }

  // Throws ConfigError on a non-dividing patch size, D % heads != 0, or zeros.
  void validate() const;
};

// Truncated-normal (std 0.02) weights, zero biases, unit LayerNorm gains.
// Deterministic in seed. The last layer is {"head.weight", "head.bias"}.
ParameterSet build_model(const ModelConfig& cfg, std::uint64_t seed);

// ParameterSet tensors registered as leaves of a graph.
class BoundParams {
 public:
  BoundParams(Graph& graph, const ParameterSet& params, bool requires_grad);
  Var operator[](const std::string& name) const;

 private:
  std::unordered_map<std::string, Var> vars_;
};

// images [B x H x W x C] -> tokens [B x (N+1) x D]
Var patch_embed(Var images, const BoundParams& p, const ModelConfig& cfg);

struct BlockTrace {
  Var attention;  // [B*h x T x T]
};

// Pre-norm transformer block: z' = MSA(LN(z)) + z; out = MLP(LN(z')) + z'.
Var encoder_block(Var tokens, const BoundParams& p, const ModelConfig& cfg, std::size_t layer,
                  BlockTrace* trace = nullptr);

// tokens [B x T x D] -> logits [B x classes]
Var classify(Var tokens, const BoundParams& p, const ModelConfig& cfg);

enum class GradMode { None, Parameters, Input };

struct ForwardPass {
  std::unique_ptr<Graph> graph;
  Var input;
  std::vector<Var> block_outputs;
  std::vector<Var> attention;
  Var logits;
  Var loss;  // set when labels were given
};

ForwardPass forward(const ParameterSet& params, const ModelConfig& cfg, const Tensor& images,
                    GradMode mode = GradMode::None);
ForwardPass forward_loss(const ParameterSet& params, const ModelConfig& cfg, const Batch& batch,
                         GradMode mode = GradMode::Parameters);

struct LossAndGrads {
  double loss = 0.0;
  ParameterSet grads;
};

LossAndGrads loss_and_grads(const ParameterSet& params, const ModelConfig& cfg, const Batch& batch);

// d(mean loss)/d(images), same shape as batch.images.
Tensor input_gradient(const ParameterSet& params, const ModelConfig& cfg, const Batch& batch);

Tensor predict_logits(const ParameterSet& params, const ModelConfig& cfg, const Tensor& images);

}  // namespace fatsim
