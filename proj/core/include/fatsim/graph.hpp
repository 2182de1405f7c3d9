#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <string>
#include <vector>

#include "fatsim/params.hpp"
#include "fatsim/tensor.hpp"

namespace fatsim {

class Graph;

// Handle to a node in a Graph.
class Var {
 public:
  Var() = default;
  Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

  Graph& graph() const { return *graph_; }
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return graph_ != nullptr; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }

 private:
  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

// Tape of operations for reverse-mode differentiation. Nodes are appended
// in evaluation order, so the tape order is a topological order and the
// backward sweep simply walks it in reverse.
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t self)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var constant(Tensor value);
  Var input(Tensor value, bool requires_grad = true);
  Var parameter(std::string name, Tensor value, bool requires_grad = true);

  // Appends an operation node. requires_grad is inherited from the inputs.
  Var record(const char* op, Tensor value, std::initializer_list<Var> inputs, BackwardFn backward);

  std::size_t size() const noexcept { return nodes_.size(); }
  const char* op(std::size_t id) const { return nodes_.at(id).op; }
  const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_.at(id).inputs; }
  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

  // Gradient reaching a node; zeros if backward never touched it.
  Tensor grad(Var v) const;
  // Accumulation buffer, zero-allocated on first use.
  Tensor& grad_buffer(std::size_t id);
  const Tensor& upstream(std::size_t id) const { return nodes_[id].grad; }

  // Seeds d(loss)/d(loss) = 1 and sweeps the tape backwards.
  void backward(Var loss);

  // Gradients for every registered parameter in registration order;
  // parameters the loss does not depend on get zero tensors.
  ParameterSet parameter_grads() const;

 private:
  struct Node {
    const char* op = "";
    Tensor value;
    Tensor grad;
    std::vector<std::size_t> inputs;
    bool requires_grad = false;
    BackwardFn backward;
    std::string param_name;
  };

  Var push(Node node);

  // deque keeps node references stable while the tape grows.
  std::deque<Node> nodes_;
  std::vector<std::size_t> param_ids_;
};

}  // namespace fatsim
