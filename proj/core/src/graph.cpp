#include "fatsim/graph.hpp"

#include "fatsim/errors.hpp"

namespace fatsim {

const Tensor& Var::value() const { return graph_->value(id_); }

Var Graph::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Graph::constant(Tensor value) {
  Node n;
  n.op = "constant";
  n.value = std::move(value);
  return push(std::move(n));
}

Var Graph::input(Tensor value, bool requires_grad) {
  Node n;
  n.op = "input";
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  return push(std::move(n));
}

Var Graph::parameter(std::string name, Tensor value, bool requires_grad) {
  Node n;
  n.op = "parameter";
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  n.param_name = std::move(name);
  Var v = push(std::move(n));
  param_ids_.push_back(v.id());
  return v;
}

Var Graph::record(const char* op, Tensor value, std::initializer_list<Var> inputs, BackwardFn backward) {
  Node n;
  n.op = op;
  n.value = std::move(value);
  n.inputs.reserve(inputs.size());
  for (const Var& in : inputs) {
    if (&in.graph() != this) throw InvalidArgument(std::string(op) + ": input belongs to another graph");
    n.inputs.push_back(in.id());
    n.requires_grad = n.requires_grad || nodes_[in.id()].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  return push(std::move(n));
}

Tensor Graph::grad(Var v) const {
  const Node& n = nodes_.at(v.id());
  if (n.grad.empty()) return Tensor(n.value.shape());
  return n.grad;
}

Tensor& Graph::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.empty()) n.grad = Tensor(n.value.shape());
  return n.grad;
}

void Graph::backward(Var loss) {
  if (loss.value().size() != 1) {
    throw DimensionError("backward: loss must be a scalar, got shape " + shape_str(loss.shape()));
  }
  if (!nodes_[loss.id()].requires_grad) return;
  grad_buffer(loss.id())[0] += 1.0;
  for (std::size_t id = loss.id() + 1; id-- > 0;) {
    Node& n = nodes_[id];
    if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
    n.backward(*this, id);
  }
}

ParameterSet Graph::parameter_grads() const {
  ParameterSet out;
  for (std::size_t id : param_ids_) {
    const Node& n = nodes_[id];
    out.add(n.param_name, n.grad.empty() ? Tensor(n.value.shape()) : n.grad);
  }
  return out;
}

}  // namespace fatsim
