#pragma once

// Dense N-d tensor with reverse-mode differentiation.
//
// A Tensor is a cheap handle onto a shared node. Operations in ops.hpp create
// new nodes and, when any input requires a gradient, record the inputs and a
// backward rule on the output. backward() linearizes the recorded DAG into a
// Graph and runs each rule once in reverse topological order.

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace psinet {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline std::size_t element_count(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ')';
  return os.str();
}

template <class T>
class Tensor;

namespace detail {

template <class T>
struct Node {
  Shape shape;
  std::vector<T> data;
  std::vector<T> grad;  // empty until first written
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this->grad and accumulates into the inputs' grads.
  std::function<void(Node&)> backward;

  bool is_leaf() const { return !backward; }

  std::vector<T>& ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), T{0});
    return grad;
  }
};

}  // namespace detail

template <class T>
class Tensor {
 public:
  using value_type = T;
  using NodePtr = std::shared_ptr<detail::Node<T>>;

  Tensor() = default;

  static Tensor from(Shape shape, std::vector<T> data) {
    if (element_count(shape) != data.size()) {
      throw ShapeError("tensor: shape " + psinet::to_string(shape) + " holds " +
                       std::to_string(element_count(shape)) + " elements, got " +
                       std::to_string(data.size()));
    }
    auto node = std::make_shared<detail::Node<T>>();
    node->shape = std::move(shape);
    node->data = std::move(data);
    return Tensor(std::move(node));
  }

  static Tensor zeros(Shape shape) { return full(std::move(shape), T{0}); }

  static Tensor full(Shape shape, T value) {
    const auto n = element_count(shape);
    return from(std::move(shape), std::vector<T>(n, value));
  }

  static Tensor scalar(T value) { return from(Shape{}, {value}); }

  /// Wraps an operation output. Used by ops.hpp only.
  static Tensor make_result(Shape shape, std::vector<T> data, const char* op,
                            std::vector<Tensor> inputs,
                            std::function<void(detail::Node<T>&)> backward) {
    Tensor out = from(std::move(shape), std::move(data));
    bool needs = false;
    for (const auto& in : inputs) needs = needs || in.requires_grad();
    out.node_->op = op;
    if (needs) {
      out.node_->requires_grad = true;
      for (auto& in : inputs) out.node_->inputs.push_back(in.node_);
      out.node_->backward = std::move(backward);
    }
    return out;
  }

  bool defined() const { return static_cast<bool>(node_); }

  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->data.size(); }

  std::span<const T> data() const { return node_->data; }
  /// Mutable access for leaves (parameters, inputs). Mutating an operation
  /// output invalidates any graph that saved it.
  std::span<T> mutable_data() { return node_->data; }

  T item() const {
    if (size() != 1) throw ShapeError("item() on tensor of shape " + psinet::to_string(shape()));
    return node_->data[0];
  }

  T operator[](std::size_t i) const { return node_->data[i]; }

  bool requires_grad() const { return node_ && node_->requires_grad; }

  Tensor& set_requires_grad(bool value = true) {
    if (!node_->is_leaf()) throw std::logic_error("requires_grad can only be set on leaf tensors");
    node_->requires_grad = value;
    return *this;
  }

  bool has_grad() const { return !node_->grad.empty(); }

  /// Gradient view; all zeros when nothing has been accumulated yet.
  std::span<const T> grad() const {
    node_->ensure_grad();
    return node_->grad;
  }
  std::span<T> mutable_grad() { return node_->ensure_grad(); }

  void zero_grad() {
    if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), T{0});
  }

  bool is_leaf() const { return node_->is_leaf(); }
  const char* op_name() const { return node_->op; }

  /// Deep copy of the values with no history.
  Tensor detach() const { return from(shape(), node_->data); }

  const NodePtr& node() const { return node_; }

  friend bool same_node(const Tensor& a, const Tensor& b) { return a.node_ == b.node_; }

 private:
  explicit Tensor(NodePtr node) : node_(std::move(node)) {}

  NodePtr node_;
};

/// Recorded operations reachable from a root, in execution (topological) order.
template <class T>
class Graph {
 public:
  using NodePtr = typename Tensor<T>::NodePtr;

  explicit Graph(const Tensor<T>& root) {
    std::unordered_set<const detail::Node<T>*> seen;
    // Iterative post-order DFS; each node is emitted after all its inputs.
    std::vector<std::pair<NodePtr, std::size_t>> stack;
    stack.emplace_back(root.node(), 0);
    seen.insert(root.node().get());
    while (!stack.empty()) {
      auto& [node, next] = stack.back();
      if (next < node->inputs.size()) {
        const NodePtr& child = node->inputs[next++];
        if (child->requires_grad && seen.insert(child.get()).second) {
          stack.emplace_back(child, 0);
        }
      } else {
        order_.push_back(node);
        stack.pop_back();
      }
    }
  }

  const std::vector<NodePtr>& records() const { return order_; }

  /// Propagates `seed` (d root / d root, normally 1) back through every record.
  void backward(T seed) {
    for (auto& node : order_) {
      if (!node->is_leaf()) node->grad.assign(node->data.size(), T{0});
    }
    auto& root = order_.back();
    root->ensure_grad();
    for (auto& g : root->grad) g += seed;
    for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
      if (!(*it)->is_leaf()) (*it)->backward(**it);
    }
  }

 private:
  std::vector<NodePtr> order_;
};

/// Populates grad on every requires_grad tensor the scalar `loss` depends on.
/// Leaf gradients accumulate across calls; reset them with zero_grad().
template <class T>
void backward(const Tensor<T>& loss) {
  if (loss.size() != 1) {
    throw ShapeError("backward: loss must be a scalar, got shape " + to_string(loss.shape()));
  }
  if (!loss.requires_grad()) return;
  Graph<T>(loss).backward(T{1});
}

}  // namespace psinet
