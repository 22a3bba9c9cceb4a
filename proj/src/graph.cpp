#include "kneeatt/graph.hpp"

#include <stdexcept>

namespace kneeatt {

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Input: return "input";
    case OpKind::Parameter: return "parameter";
    case OpKind::Conv2d: return "conv2d";
    case OpKind::MaxPool: return "maxpool";
    case OpKind::Dense: return "dense";
    case OpKind::LocallyConnected: return "locally_connected_1x1";
    case OpKind::Relu: return "relu";
    case OpKind::Sigmoid: return "sigmoid";
    case OpKind::Softmax: return "softmax";
    case OpKind::Gap: return "gap";
    case OpKind::MaskMultiply: return "mask_multiply";
    case OpKind::Concat: return "concat";
    case OpKind::CrossEntropy: return "cross_entropy";
    case OpKind::Add: return "add";
    case OpKind::Multiply: return "multiply";
    case OpKind::Sum: return "sum";
    case OpKind::Scale: return "scale";
    case OpKind::WeightedSum: return "weighted_sum";
    case OpKind::DivideRows: return "divide_rows";
    case OpKind::Dot: return "dot";
  }
  return "?";
}

Graph& Var::graph() const {
  if (!graph_) throw std::logic_error("use of an unbound Var");
  return *graph_;
}

const Tensor& Var::value() const { return graph().value(id_); }

Tensor Var::grad() const {
  const Graph& g = graph();
  if (g.has_grad(id_)) return g.grad(id_);
  return Tensor::zeros(value().shape());
}

Var Graph::input(Tensor value, bool requires_grad) {
  Node n;
  n.kind = OpKind::Input;
  n.requires_grad = requires_grad;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Graph::param(Parameter& param) {
  Node n;
  n.kind = OpKind::Parameter;
  n.param = &param;
  n.requires_grad = true;
  nodes_.push_back(std::move(n));
  return Var(this, nodes_.size() - 1);
}

Var Graph::add_node(OpKind kind, std::vector<Var> inputs, Tensor value, BackwardFn backward) {
  Node n;
  n.kind = kind;
  const std::size_t self = nodes_.size();
  for (const Var& v : inputs) {
    if (&v.graph() != this) throw std::invalid_argument(std::string(op_name(kind)) + ": input from another graph");
    if (v.id() >= self) throw std::logic_error(std::string(op_name(kind)) + ": input does not precede node");
    n.inputs.push_back(v.id());
    n.requires_grad = n.requires_grad || nodes_[v.id()].requires_grad;
  }
  n.value = std::move(value);
  n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var(this, self);
}

const Tensor& Graph::value(std::size_t id) const {
  const Node& n = nodes_.at(id);
  return n.param ? n.param->value : n.value;
}

Tensor& Graph::grad_buffer(std::size_t id) {
  Node& n = nodes_.at(id);
  if (n.grad.empty()) n.grad = Tensor::zeros(value(id).shape());
  return n.grad;
}

void Graph::backward(Var loss) {
  if (&loss.graph() != this) throw std::invalid_argument("backward: loss belongs to another graph");
  if (value(loss.id()).size() != 1) {
    throw std::invalid_argument("backward: loss must be a scalar, got " + shape_str(value(loss.id()).shape()));
  }
  for (Node& n : nodes_) n.grad = Tensor();
  grad_buffer(loss.id())[0] = 1.0;

  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.grad.empty() || !n.requires_grad) continue;
    for (std::size_t in : n.inputs) {
      if (in >= i) throw std::logic_error("backward: cycle detected at node " + std::to_string(i));
    }
    if (n.param) {
      Tensor& pg = n.param->grad;
      if (pg.shape() != n.param->value.shape()) pg = Tensor::zeros(n.param->value.shape());
      for (std::size_t k = 0; k < pg.size(); ++k) pg[k] += n.grad[k];
    } else if (n.backward) {
      n.backward(*this, i);
    }
  }
}

}  // namespace kneeatt
