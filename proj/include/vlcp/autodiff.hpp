#pragma once

// Reverse-mode differentiation over Tensor values.
//
// Every operation returns a Var whose node remembers its inputs and a local
// backward rule. Nodes carry a global creation sequence number; creation
// order is a valid topological order, so backward() collects the nodes
// reachable from the loss and replays their rules in descending sequence.

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "vlcp/tensor.hpp"

namespace vlcp::ad {

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // empty until something flows into it
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;
  std::uint64_t seq = 0;
  bool requires_grad = false;
  const char* op = "leaf";

  // Zero-initialized on first use.
  Tensor<T>& grad_buffer();
  bool has_grad() const noexcept { return !grad.empty(); }
};

template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  bool defined() const noexcept { return node_ != nullptr; }
  const Tensor<T>& value() const { return node_->value; }
  // Mutable access for optimizers and finite-difference probes only.
  Tensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t rows() const { return node_->value.rows(); }
  std::size_t cols() const { return node_->value.cols(); }
  std::size_t size() const { return node_->value.size(); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool has_grad() const { return node_->has_grad(); }
  // Empty tensor when no gradient reached this node.
  const Tensor<T>& grad() const { return node_->grad; }
  Tensor<T>& mutable_grad() { return node_->grad_buffer(); }
  void zero_grad() { node_->grad = Tensor<T>(); }
  const char* op() const { return node_->op; }

  const std::shared_ptr<Node<T>>& node() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

// Leaf holding a value that never receives gradient.
template <typename T>
Var<T> constant(Tensor<T> value);

// Leaf that accumulates gradient when requires_grad is set.
template <typename T>
Var<T> leaf(Tensor<T> value, bool requires_grad = true);

// Records an operation. The result requires grad iff any input does; when
// none does the backward rule is dropped. Throws NumericalError naming `op`
// if `value` holds NaN or Inf.
template <typename T>
Var<T> make_op(const char* op, Tensor<T> value, std::vector<Var<T>> inputs,
               std::function<void(Node<T>&)> backward);

// The set of nodes reachable from a root through requires_grad edges, in
// topological (creation) order.
template <typename T>
class Graph {
 public:
  static Graph build(const Var<T>& root);

  std::size_t size() const noexcept { return nodes_.size(); }
  const std::vector<Node<T>*>& nodes() const noexcept { return nodes_; }

  // Seeds the root gradient and runs every backward rule once, last node
  // first. `visit` observes each node as its rule runs.
  void run_backward(const Tensor<T>& seed,
                    const std::function<void(const Node<T>&)>& visit = {});

 private:
  std::vector<Node<T>*> nodes_;
  std::shared_ptr<Node<T>> root_;
};

// d(loss)/d(leaf) accumulated into every reachable leaf. `loss` must hold a
// single element.
template <typename T>
void backward(const Var<T>& loss);

template <typename T>
struct Parameter {
  std::string name;
  Var<T> var;
  bool trainable = true;
};

// Named parameters in insertion order; names are unique.
template <typename T>
class ParameterStore {
 public:
  Var<T> add(const std::string& name, Tensor<T> value, bool trainable = true);
  bool contains(const std::string& name) const;
  Parameter<T>& get(const std::string& name);
  const Parameter<T>& get(const std::string& name) const;
  std::vector<Parameter<T>>& all() noexcept { return params_; }
  const std::vector<Parameter<T>>& all() const noexcept { return params_; }
  std::vector<std::string> names_sorted() const;
  void zero_grad();
  // Sets trainable (and requires_grad) for every name starting with prefix.
  std::size_t set_trainable(const std::string& prefix, bool on);
  std::size_t total_elements() const;

 private:
  std::vector<Parameter<T>> params_;
};

}  // namespace vlcp::ad
