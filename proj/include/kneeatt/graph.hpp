#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "kneeatt/tensor.hpp"

namespace kneeatt {

/// Persistent trainable tensor with its accumulated gradient.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  Parameter() = default;
  Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(Tensor::zeros(value.shape())) {}
  void zero_grad() { grad.fill(0.0); }
};

enum class OpKind {
  Input,
  Parameter,
  Conv2d,
  MaxPool,
  Dense,
  LocallyConnected,
  Relu,
  Sigmoid,
  Softmax,
  Gap,
  MaskMultiply,
  Concat,
  CrossEntropy,
  Add,
  Multiply,
  Sum,
  Scale,
  WeightedSum,
  DivideRows,
  Dot,
};

const char* op_name(OpKind kind);

class Graph;

/// Handle to a node inside a Graph. Cheap to copy; valid while the graph lives.
class Var {
 public:
  Var() = default;
  Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

  Graph& graph() const;
  std::size_t id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }
  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  /// Gradient of the last backward() target with respect to this node (zeros if unreached).
  Tensor grad() const;

 private:
  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

/// Define-by-run computation graph. Nodes are appended in evaluation order,
/// so the node list is already a topological order; backward() walks it in
/// reverse, summing gradients for nodes with several consumers.
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t self)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Constant leaf. With requires_grad the node still collects a gradient,
  /// which the tests use to check input gradients.
  Var input(Tensor value, bool requires_grad = false);
  /// Leaf bound to a parameter; backward() accumulates into param.grad.
  Var param(Parameter& param);
  Var add_node(OpKind kind, std::vector<Var> inputs, Tensor value, BackwardFn backward);

  const Tensor& value(std::size_t id) const;
  std::size_t input_id(std::size_t node, std::size_t slot) const { return nodes_.at(node).inputs.at(slot); }
  OpKind kind(std::size_t id) const { return nodes_.at(id).kind; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  std::size_t size() const { return nodes_.size(); }

  bool has_grad(std::size_t id) const { return !nodes_.at(id).grad.empty(); }
  const Tensor& grad(std::size_t id) const { return nodes_.at(id).grad; }
  /// Gradient buffer for accumulation, zero-allocated on first use.
  Tensor& grad_buffer(std::size_t id);

  /// Seeds d(loss)/d(loss) = 1 and propagates to every reachable node.
  void backward(Var loss);

  /// Fingerprint of all branch decisions taken by non-smooth ops (relu signs,
  /// pooling argmaxes, clamps). Two evaluations with equal signatures lie on
  /// the same smooth piece.
  std::uint64_t kink_signature() const { return signature_; }
  void mix_signature(std::uint64_t v) { signature_ = (signature_ ^ v) * 1099511628211ULL; }

  void warn(std::string message) { diagnostics_.push_back(std::move(message)); }
  const std::vector<std::string>& diagnostics() const { return diagnostics_; }

 private:
  struct Node {
    OpKind kind = OpKind::Input;
    std::vector<std::size_t> inputs;
    Tensor value;
    Parameter* param = nullptr;
    bool requires_grad = false;
    Tensor grad;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
  std::uint64_t signature_ = 1469598103934665603ULL;
  std::vector<std::string> diagnostics_;
};

}  // namespace kneeatt
