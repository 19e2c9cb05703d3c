#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "emb/error.hpp"

namespace emb {

using Shape = std::vector<std::size_t>;

// Storage aligned to the widest packet so vectorised reductions split the same
// way for every allocation. With plain vectors the result bits depended on
// where the heap placed a buffer.
template <class Real>
using Buffer = std::vector<Real, Eigen::aligned_allocator<Real>>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>{});
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

namespace detail {

inline std::atomic<std::uint64_t>& node_counter() {
  static std::atomic<std::uint64_t> counter{0};
  return counter;
}

inline int& no_grad_depth() {
  thread_local int depth = 0;
  return depth;
}

}  // namespace detail

inline bool grad_enabled() { return detail::no_grad_depth() == 0; }

/// Disables graph recording for the lifetime of the guard.
class NoGradGuard {
 public:
  NoGradGuard() { ++detail::no_grad_depth(); }
  ~NoGradGuard() { --detail::no_grad_depth(); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

/// One record of the computation graph. Ids grow with creation order, so
/// every input of a node has a smaller id than the node itself.
template <class Real>
struct Node {
  std::uint64_t id = detail::node_counter().fetch_add(1);
  Shape shape;
  Buffer<Real> value;
  Buffer<Real> grad;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward_fn;

  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), Real(0));
  }
};

template <class Real>
inline bool all_finite(std::span<const Real> values) {
  // x - x is NaN exactly when x is NaN or infinite; the sum vectorises.
  Real acc = 0;
  for (Real v : values) acc += v - v;
  return acc == Real(0);
}

/// Dense row-major tensor handle. Copies share the underlying node.
template <class Real>
class Tensor {
 public:
  using value_type = Real;
  using NodePtr = std::shared_ptr<Node<Real>>;

  Tensor() = default;
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  static Tensor from(Shape shape, Buffer<Real> values, bool requires_grad = false) {
    if (numel(shape) != values.size())
      fail(Error::Kind::shape, "tensor " + shape_str(shape) + " given " +
                                   std::to_string(values.size()) + " values");
    if (!all_finite<Real>(values)) fail(Error::Kind::numeric, "tensor built from non-finite values");
    auto node = std::make_shared<Node<Real>>();
    node->shape = std::move(shape);
    node->value = std::move(values);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    Buffer<Real> values(numel(shape), Real(0));
    return from(std::move(shape), std::move(values), requires_grad);
  }

  static Tensor filled(Shape shape, Real v) {
    Buffer<Real> values(numel(shape), v);
    return from(std::move(shape), std::move(values));
  }

  static Tensor scalar(Real v, bool requires_grad = false) {
    return from(Shape{1}, Buffer<Real>{v}, requires_grad);
  }

  static Tensor matrix(std::size_t rows, std::size_t cols, Buffer<Real> values,
                       bool requires_grad = false) {
    return from(Shape{rows, cols}, std::move(values), requires_grad);
  }

  template <class Alloc>
  static Tensor from(Shape shape, const std::vector<Real, Alloc>& values, bool requires_grad = false) {
    return from(std::move(shape), Buffer<Real>(values.begin(), values.end()), requires_grad);
  }

  template <class Alloc>
  static Tensor matrix(std::size_t rows, std::size_t cols, const std::vector<Real, Alloc>& values,
                       bool requires_grad = false) {
    return from(Shape{rows, cols}, Buffer<Real>(values.begin(), values.end()), requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const NodePtr& node() const { return node_; }

  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->value.size(); }

  /// Rank-2 view: rank-1 tensors read as a single row, scalars as 1x1.
  std::size_t rows() const {
    const auto& s = node_->shape;
    return s.size() >= 2 ? s[0] : 1;
  }
  std::size_t cols() const {
    const auto& s = node_->shape;
    if (s.size() >= 2) return numel(s) / s[0];
    return s.empty() ? 1 : s[0];
  }

  std::span<const Real> data() const { return node_->value; }
  std::span<Real> mutable_data() { return node_->value; }
  std::span<const Real> grad() const { return node_->grad; }
  std::span<Real> mutable_grad() {
    node_->ensure_grad();
    return node_->grad;
  }
  bool has_grad() const { return !node_->grad.empty(); }

  Real operator[](std::size_t i) const { return node_->value[i]; }
  Real at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }

  Real item() const {
    if (size() != 1)
      fail(Error::Kind::shape, "item() on tensor of shape " + shape_str(shape()));
    return node_->value[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  const char* op() const { return node_->op; }

  void zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), Real(0));
  }

  /// A new leaf sharing no graph history.
  Tensor detach() const { return from(shape(), node_->value, false); }

  void backward() const;

 private:
  NodePtr node_;
};

/// Creates the result node of a primitive op. Values are checked for
/// finiteness; the backward closure is kept only when some input needs it.
template <class Real, class BackwardFn>
Tensor<Real> make_result(const char* op, Shape shape, Buffer<Real> value,
                         const std::vector<const Tensor<Real>*>& inputs,
                         BackwardFn&& backward_fn) {
  if (!all_finite<Real>(value))
    fail(Error::Kind::numeric, std::string("non-finite value produced by op '") + op + "'");
  auto node = std::make_shared<Node<Real>>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  node->op = op;
  bool needs = false;
  if (grad_enabled())
    for (const auto* t : inputs) needs = needs || t->requires_grad();
  if (needs) {
    node->requires_grad = true;
    node->inputs.reserve(inputs.size());
    for (const auto* t : inputs) node->inputs.push_back(t->node());
    node->backward_fn = std::forward<BackwardFn>(backward_fn);
  }
  return Tensor<Real>(std::move(node));
}

template <class Real, class BackwardFn>
Tensor<Real> make_result(const char* op, Shape shape, Buffer<Real> value,
                         std::initializer_list<const Tensor<Real>*> inputs,
                         BackwardFn&& backward_fn) {
  return make_result<Real>(op, std::move(shape), std::move(value),
                           std::vector<const Tensor<Real>*>(inputs),
                           std::forward<BackwardFn>(backward_fn));
}

template <class Real>
Buffer<Real>* grad_sink(Node<Real>& self, std::size_t input) {
  auto& in = self.inputs[input];
  if (!in->requires_grad) return nullptr;
  in->ensure_grad();
  return &in->grad;
}

/// Reverse-mode sweep from a scalar. Intermediate nodes are released after
/// the sweep; leaf gradients accumulate.
template <class Real>
void backward(const Tensor<Real>& loss) {
  if (!loss.defined() || loss.size() != 1)
    fail(Error::Kind::shape, "backward() requires a scalar loss");
  auto root = loss.node();
  if (!root->requires_grad) return;

  // Owning references keep every node alive until its own turn in the sweep.
  std::vector<std::shared_ptr<Node<Real>>> order;
  std::unordered_set<Node<Real>*> seen;
  std::vector<std::shared_ptr<Node<Real>>> stack{root};
  seen.insert(root.get());
  while (!stack.empty()) {
    auto n = std::move(stack.back());
    stack.pop_back();
    for (auto& in : n->inputs)
      if (in->requires_grad && seen.insert(in.get()).second) stack.push_back(in);
    order.push_back(std::move(n));
  }
  std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) { return a->id > b->id; });

  root->ensure_grad();
  root->grad[0] += Real(1);
  for (auto& n : order) {
    if (!n->backward_fn) continue;
    if (n->grad.empty()) {
      n->backward_fn = nullptr;
      n->inputs.clear();
      n.reset();
      continue;
    }
    if (!all_finite<Real>(n->grad))
      fail(Error::Kind::numeric, "non-finite gradient at node " + std::to_string(n->id) +
                                     " (op '" + n->op + "')");
    n->backward_fn(*n);
    // Every consumer has a larger id, so this gradient is final.
    n->backward_fn = nullptr;
    n->inputs.clear();
    Buffer<Real>().swap(n->grad);
    n.reset();
  }
}

template <class Real>
void Tensor<Real>::backward() const {
  emb::backward(*this);
}

}  // namespace emb
