#include "vlcp/autodiff.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <unordered_set>

namespace vlcp::ad {
namespace {

std::uint64_t next_seq() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

template <typename T>
void check_finite(const char* op, const Tensor<T>& t) {
  const T* p = t.data();
  for (std::size_t i = 0; i < t.size(); ++i)
    if (!std::isfinite(p[i]))
      throw NumericalError(op, "non-finite value at flat index " +
                                   std::to_string(i) + " of " +
                                   shape_str(t.shape()));
}

}  // namespace

template <typename T>
Tensor<T>& Node<T>::grad_buffer() {
  if (grad.empty()) grad = Tensor<T>(value.shape());
  return grad;
}

template <typename T>
Var<T> constant(Tensor<T> value) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->seq = next_seq();
  n->op = "constant";
  return Var<T>(std::move(n));
}

template <typename T>
Var<T> leaf(Tensor<T> value, bool requires_grad) {
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->seq = next_seq();
  n->requires_grad = requires_grad;
  return Var<T>(std::move(n));
}

template <typename T>
Var<T> make_op(const char* op, Tensor<T> value, std::vector<Var<T>> inputs,
               std::function<void(Node<T>&)> backward) {
  check_finite(op, value);
  auto n = std::make_shared<Node<T>>();
  n->value = std::move(value);
  n->seq = next_seq();
  n->op = op;
  for (const auto& in : inputs)
    if (in.requires_grad()) n->requires_grad = true;
  if (n->requires_grad) {
    n->inputs.reserve(inputs.size());
    for (auto& in : inputs) n->inputs.push_back(in.node());
    n->backward = std::move(backward);
  }
  return Var<T>(std::move(n));
}

template <typename T>
Graph<T> Graph<T>::build(const Var<T>& root) {
  Graph g;
  g.root_ = root.node();
  if (!root.requires_grad()) return g;
  std::unordered_set<Node<T>*> seen;
  std::vector<Node<T>*> stack{root.node().get()};
  seen.insert(root.node().get());
  while (!stack.empty()) {
    Node<T>* n = stack.back();
    stack.pop_back();
    g.nodes_.push_back(n);
    for (const auto& in : n->inputs)
      if (in->requires_grad && seen.insert(in.get()).second)
        stack.push_back(in.get());
  }
  std::sort(g.nodes_.begin(), g.nodes_.end(),
            [](const Node<T>* a, const Node<T>* b) { return a->seq < b->seq; });
  return g;
}

template <typename T>
void Graph<T>::run_backward(const Tensor<T>& seed,
                            const std::function<void(const Node<T>&)>& visit) {
  if (nodes_.empty()) return;
  Node<T>* root = nodes_.back();
  if (seed.shape() != root->value.shape())
    throw DimensionError("backward seed " + shape_str(seed.shape()) +
                         " does not match root " + shape_str(root->value.shape()));
  auto& g = root->grad_buffer();
  for (std::size_t i = 0; i < g.size(); ++i) g[i] += seed[i];
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    Node<T>* n = *it;
    if (visit) visit(*n);
    if (n->backward && n->has_grad()) {
      n->backward(*n);
      // Interior gradients are dead once propagated; leaves keep theirs.
      if (!n->inputs.empty()) n->grad = Tensor<T>();
    }
  }
}

template <typename T>
void backward(const Var<T>& loss) {
  if (loss.size() != 1)
    throw ContractError("backward() needs a scalar loss, got " +
                        shape_str(loss.shape()));
  auto g = Graph<T>::build(loss);
  g.run_backward(Tensor<T>::full(loss.shape(), T(1)));
}

template <typename T>
Var<T> ParameterStore<T>::add(const std::string& name, Tensor<T> value,
                              bool trainable) {
  if (contains(name)) throw ContractError("duplicate parameter name '" + name + "'");
  Parameter<T> p{name, leaf(std::move(value), trainable), trainable};
  params_.push_back(p);
  return p.var;
}

template <typename T>
bool ParameterStore<T>::contains(const std::string& name) const {
  return std::any_of(params_.begin(), params_.end(),
                     [&](const auto& p) { return p.name == name; });
}

template <typename T>
Parameter<T>& ParameterStore<T>::get(const std::string& name) {
  for (auto& p : params_)
    if (p.name == name) return p;
  throw ContractError("unknown parameter '" + name + "'");
}

template <typename T>
const Parameter<T>& ParameterStore<T>::get(const std::string& name) const {
  for (const auto& p : params_)
    if (p.name == name) return p;
  throw ContractError("unknown parameter '" + name + "'");
}

template <typename T>
std::vector<std::string> ParameterStore<T>::names_sorted() const {
  std::vector<std::string> names;
  for (const auto& p : params_) names.push_back(p.name);
  std::sort(names.begin(), names.end());
  return names;
}

template <typename T>
void ParameterStore<T>::zero_grad() {
  for (auto& p : params_) p.var.zero_grad();
}

template <typename T>
std::size_t ParameterStore<T>::set_trainable(const std::string& prefix, bool on) {
  std::size_t n = 0;
  for (auto& p : params_)
    if (p.name.rfind(prefix, 0) == 0) {
      p.trainable = on;
      p.var.set_requires_grad(on);
      ++n;
    }
  return n;
}

template <typename T>
std::size_t ParameterStore<T>::total_elements() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.var.size();
  return n;
}

#define VLCP_INSTANTIATE(T)                                                  \
  template struct Node<T>;                                                   \
  template Var<T> constant<T>(Tensor<T>);                                    \
  template Var<T> leaf<T>(Tensor<T>, bool);                                  \
  template Var<T> make_op<T>(const char*, Tensor<T>, std::vector<Var<T>>,    \
                             std::function<void(Node<T>&)>);                 \
  template class Graph<T>;                                                   \
  template void backward<T>(const Var<T>&);                                  \
  template class ParameterStore<T>;

VLCP_INSTANTIATE(float)
VLCP_INSTANTIATE(double)
#undef VLCP_INSTANTIATE

}  // namespace vlcp::ad
