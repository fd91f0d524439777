#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <vector>

#include "lre/rng.hpp"

namespace lre {

// Thread-local reverse-mode recording switch. Inference paths wrap
// themselves in NoGradGuard so no tape is built.
inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

inline bool grad_enabled() { return grad_mode_flag(); }

class NoGradGuard {
 public:
  NoGradGuard() : prev_(grad_mode_flag()) { grad_mode_flag() = false; }
  ~NoGradGuard() { grad_mode_flag() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

template <typename S>
class TensorT;

// One tape entry. `backward` captures everything it needs (output values and
// gradient buffers by shared_ptr); `parents` exist for topological ordering.
template <typename S>
struct Node {
  std::vector<TensorT<S>> parents;
  std::function<void()> backward;
};

// Dense row-major tensor of rank 1 or 2 (all this model needs), with an
// optional gradient buffer and tape node. Copies are shallow: value
// semantics over shared storage, like the usual minimal-autodiff setup.
template <typename S>
class TensorT {
 public:
  using Scalar = S;

  TensorT() = default;

  static TensorT zeros(std::vector<int> shape, bool requires_grad = false) {
    TensorT t;
    t.shape_ = std::move(shape);
    t.values_ = std::make_shared<std::vector<S>>(t.count(), S(0));
    t.requires_grad_ = requires_grad;
    if (requires_grad) t.ensure_grad();
    return t;
  }

  static TensorT full(std::vector<int> shape, S value, bool requires_grad = false) {
    TensorT t = zeros(std::move(shape), requires_grad);
    for (S& v : *t.values_) v = value;
    return t;
  }

  static TensorT scalar(S value) {
    TensorT t = zeros({1});
    (*t.values_)[0] = value;
    return t;
  }

  static TensorT from_vector(std::vector<int> shape, std::vector<S> values,
                             bool requires_grad = false) {
    TensorT t;
    t.shape_ = std::move(shape);
    if (values.size() != t.count()) {
      throw std::invalid_argument("tensor: value count does not match shape");
    }
    t.values_ = std::make_shared<std::vector<S>>(std::move(values));
    t.requires_grad_ = requires_grad;
    if (requires_grad) t.ensure_grad();
    return t;
  }

  static TensorT randn(std::vector<int> shape, Rng& rng, double stddev,
                       bool requires_grad = false) {
    TensorT t = zeros(std::move(shape), requires_grad);
    for (S& v : *t.values_) v = static_cast<S>(rng.normal() * stddev);
    return t;
  }

  const std::vector<int>& shape() const { return shape_; }
  int dim(int i) const { return shape_.at(static_cast<std::size_t>(i)); }
  int rank() const { return static_cast<int>(shape_.size()); }
  std::size_t size() const { return values_ ? values_->size() : 0; }
  bool defined() const { return static_cast<bool>(values_); }

  int rows() const { return rank() == 2 ? shape_[0] : 1; }
  int cols() const { return rank() == 2 ? shape_[1] : (rank() == 1 ? shape_[0] : 0); }

  S* data() { return values_->data(); }
  const S* data() const { return values_->data(); }
  std::vector<S>& vec() { return *values_; }
  const std::vector<S>& vec() const { return *values_; }

  S& at(int i) { return (*values_)[static_cast<std::size_t>(i)]; }
  S at(int i) const { return (*values_)[static_cast<std::size_t>(i)]; }
  S& at(int r, int c) { return (*values_)[static_cast<std::size_t>(r) * cols() + c]; }
  S at(int r, int c) const { return (*values_)[static_cast<std::size_t>(r) * cols() + c]; }

  bool requires_grad() const { return requires_grad_; }
  void set_requires_grad(bool b) {
    requires_grad_ = b;
    if (b) ensure_grad();
  }

  void ensure_grad() {
    if (!grad_) grad_ = std::make_shared<std::vector<S>>(count(), S(0));
  }
  bool has_grad() const { return static_cast<bool>(grad_); }
  std::vector<S>& grad() { return *grad_; }
  const std::vector<S>& grad() const { return *grad_; }
  std::shared_ptr<std::vector<S>> grad_ptr() const { return grad_; }
  std::shared_ptr<std::vector<S>> values_ptr() const { return values_; }

  void zero_grad() {
    if (grad_) std::fill(grad_->begin(), grad_->end(), S(0));
  }

  std::shared_ptr<Node<S>>& node() { return node_; }
  const std::shared_ptr<Node<S>>& node() const { return node_; }

  // Deep copy of values only (no tape, no grad).
  TensorT detached_copy() const {
    TensorT t;
    t.shape_ = shape_;
    t.values_ = std::make_shared<std::vector<S>>(*values_);
    return t;
  }

  // Alias with a different shape over the same storage (and tape node).
  TensorT reshaped(std::vector<int> shape) const {
    TensorT t = *this;
    t.shape_ = std::move(shape);
    if (t.count() != size()) {
      throw std::invalid_argument("reshaped: element count mismatch");
    }
    return t;
  }

  std::size_t count() const {
    std::size_t n = 1;
    for (int e : shape_) n *= static_cast<std::size_t>(e);
    return n;
  }

  // Builds the op output: allocates values, wires the tape node when any
  // parent is differentiable and recording is on.
  static TensorT make_op_output(std::vector<int> shape,
                                std::vector<TensorT> parents) {
    TensorT out;
    out.shape_ = std::move(shape);
    out.values_ = std::make_shared<std::vector<S>>(out.count(), S(0));
    bool need = false;
    if (grad_enabled()) {
      for (const auto& p : parents) need = need || p.requires_grad_;
    }
    if (need) {
      out.requires_grad_ = true;
      out.ensure_grad();
      out.node_ = std::make_shared<Node<S>>();
      out.node_->parents = std::move(parents);
    }
    return out;
  }

 private:
  std::vector<int> shape_;
  std::shared_ptr<std::vector<S>> values_;
  std::shared_ptr<std::vector<S>> grad_;
  std::shared_ptr<Node<S>> node_;
  bool requires_grad_ = false;
};

// Reverse pass from a scalar loss. Nodes fire in reverse topological order;
// each node's closure is released right after it runs so intermediate
// activations free up as the sweep walks back.
template <typename S>
void backward(TensorT<S>& loss) {
  if (loss.size() != 1) {
    throw std::invalid_argument("backward: loss must be a scalar");
  }
  if (!loss.requires_grad()) return;
  loss.ensure_grad();
  loss.grad()[0] = S(1);

  std::vector<std::shared_ptr<Node<S>>> order;
  std::unordered_set<const Node<S>*> seen;
  // iterative DFS, children pushed after all parents are visited
  struct Frame {
    std::shared_ptr<Node<S>> node;
    std::size_t next_parent = 0;
  };
  std::vector<Frame> stack;
  if (loss.node()) {
    stack.push_back({loss.node()});
    seen.insert(loss.node().get());
  }
  while (!stack.empty()) {
    Frame& f = stack.back();
    bool descended = false;
    while (f.next_parent < f.node->parents.size()) {
      const auto& p = f.node->parents[f.next_parent++];
      if (p.node() && !seen.count(p.node().get())) {
        seen.insert(p.node().get());
        stack.push_back({p.node()});
        descended = true;
        break;
      }
    }
    if (!descended && f.next_parent >= f.node->parents.size()) {
      order.push_back(f.node);
      stack.pop_back();
    }
  }

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<S>& n = **it;
    if (n.backward) n.backward();
    n.backward = nullptr;
    n.parents.clear();
  }
}

using Tensor = TensorT<float>;
using Tensor64 = TensorT<double>;

}  // namespace lre
