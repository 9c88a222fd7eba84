// Copyright 2026 The Parallel GPT Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
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

namespace pgpt {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline ShapeError shape_error(const std::string& op, const Shape& a, const Shape& b) {
  return ShapeError(op + ": incompatible shapes " + shape_str(a) + " and " + shape_str(b));
}

namespace detail {
inline bool& grad_mode() {
  thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

inline bool grad_enabled() { return detail::grad_mode(); }

/// Disables tape recording for the current thread while alive.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode()) { detail::grad_mode() = false; }
  ~NoGradGuard() { detail::grad_mode() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

template <typename Real>
struct TensorNode {
  Shape shape;
  std::vector<Real> data;
  std::vector<Real> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorNode>> parents;
  std::function<void(TensorNode&)> backward;

  std::vector<Real>& ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), Real(0));
    return grad;
  }
};

/// Shared handle to a dense row-major array plus its autodiff record.
/// Copies alias the same storage, so a model's parameter list can hand out
/// handles that the optimizer mutates in place.
template <typename Real>
class Tensor {
 public:
  using value_type = Real;
  using Node = TensorNode<Real>;

  Tensor() = default;

  Tensor(Shape shape, std::vector<Real> data, bool requires_grad = false)
      : node_(std::make_shared<Node>()) {
    if (shape_size(shape) != data.size()) {
      throw ShapeError("Tensor: shape " + shape_str(shape) + " does not hold " +
                       std::to_string(data.size()) + " values");
    }
    node_->shape = std::move(shape);
    node_->data = std::move(data);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const std::size_t n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<Real>(n, Real(0)), requires_grad);
  }

  static Tensor full(Shape shape, Real value, bool requires_grad = false) {
    const std::size_t n = shape_size(shape);
    return Tensor(std::move(shape), std::vector<Real>(n, value), requires_grad);
  }

  static Tensor scalar(Real value, bool requires_grad = false) {
    return Tensor(Shape{}, std::vector<Real>{value}, requires_grad);
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->data.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rows() const { return rank() == 2 ? node_->shape[0] : 1; }
  std::size_t cols() const { return rank() == 0 ? 1 : node_->shape.back(); }

  std::span<const Real> data() const { return node_->data; }
  std::span<Real> mutable_data() { return node_->data; }
  const std::vector<Real>& values() const { return node_->data; }
  Real operator[](std::size_t i) const { return node_->data[i]; }
  Real at(std::size_t r, std::size_t c) const { return node_->data[r * cols() + c]; }
  Real item() const {
    if (size() != 1) throw ShapeError("item(): tensor of shape " + shape_str(shape()) + " is not a scalar");
    return node_->data[0];
  }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool flag) { node_->requires_grad = flag; }

  /// Gradient accumulated by backward(); zeros if none reached this tensor.
  std::vector<Real> grad() const {
    if (node_->grad.size() == node_->data.size()) return node_->grad;
    return std::vector<Real>(node_->data.size(), Real(0));
  }
  std::vector<Real>& grad_storage() { return node_->ensure_grad(); }
  bool has_grad() const { return node_->grad.size() == node_->data.size(); }
  std::span<const Real> grad_span() const { return node_->grad; }
  void zero_grad() const { node_->grad.clear(); }

  /// New leaf holding a copy of the values.
  Tensor detach() const { return Tensor(shape(), node_->data, false); }

  /// Deep copy that keeps the requires_grad flag; used to snapshot parameters.
  Tensor clone() const { return Tensor(shape(), node_->data, requires_grad()); }

  const std::shared_ptr<Node>& node() const { return node_; }

  /// Reverse-mode sweep from a scalar. Parameter gradients accumulate across
  /// calls until zero_grad().
  void backward() const;

  /// Builds an op result; parents are recorded only when some parent needs
  /// gradients and recording is enabled.
  static Tensor make_result(Shape shape, std::vector<Real> data,
                            std::vector<Tensor> parents,
                            std::function<void(Node&)> backward) {
    Tensor out(std::move(shape), std::move(data), false);
    if (!grad_enabled()) return out;
    bool any = false;
    for (const auto& p : parents) any = any || p.requires_grad();
    if (!any) return out;
    out.node_->requires_grad = true;
    out.node_->parents.reserve(parents.size());
    for (auto& p : parents) out.node_->parents.push_back(p.node_);
    out.node_->backward = std::move(backward);
    return out;
  }

 private:
  std::shared_ptr<Node> node_;
};

template <typename Real>
void Tensor<Real>::backward() const {
  if (size() != 1) {
    throw ShapeError("backward(): loss must be a scalar, got shape " + shape_str(shape()));
  }
  if (!requires_grad()) return;

  // Iterative post-order DFS; the graph can be a few thousand nodes deep.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && !visited.count(parent)) {
        visited.insert(parent);
        stack.emplace_back(parent, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  node_->ensure_grad()[0] += Real(1);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* node = *it;
    if (node->backward && node->grad.size() == node->data.size()) {
      node->backward(*node);
    }
  }
  // Interior gradients are no longer needed; leaves keep theirs.
  for (Node* node : order) {
    if (!node->parents.empty()) node->grad.clear();
  }
}

template <typename Real>
using ParamList = std::vector<std::pair<std::string, Tensor<Real>>>;

}  // namespace pgpt
