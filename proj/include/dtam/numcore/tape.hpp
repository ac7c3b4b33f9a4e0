#pragma once

#include <functional>
#include <initializer_list>
#include <random>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dtam/numcore/types.hpp"

namespace dtam {

template <typename S>
class Tape;

// Handle to a node on a Tape. Cheap to copy; valid while the tape lives.
template <typename S>
struct Var {
  Tape<S>* tape = nullptr;
  int id = -1;

  const Mat<S>& value() const { return tape->value(id); }
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  S scalar() const { return value()(0, 0); }
  bool needs_grad() const { return tape->needs_grad(id); }
};

// Reverse-mode recording context. One tape per forward/backward pass; not
// shared across threads.
template <typename S>
class Tape {
 public:
  using Backward = std::function<void(Tape&, int self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Dropout and other train-only behaviour.
  bool training = false;
  // Throw NumericError as soon as any op produces NaN/Inf.
  bool check_finite = false;

  void seed(std::uint64_t s) { rng_.seed(s); }
  std::mt19937_64& rng() { return rng_; }

  Var<S> constant(Mat<S> v) { return push(std::move(v), false, nullptr); }

  // Differentiable leaf without a backing Param; read its gradient with grad().
  Var<S> variable(Mat<S> v) { return push(std::move(v), true, nullptr); }

  // Leaf bound to a Param; backward() accumulates into p.grad. Repeated calls
  // with the same Param return the same node.
  Var<S> param(Param<S>& p) {
    auto it = bound_.find(&p);
    if (it != bound_.end()) return Var<S>{this, it->second};
    Param<S>* pp = &p;
    Var<S> v = push(p.value, true, [pp](Tape& t, int self) {
      if (pp->grad.rows() != pp->value.rows() || pp->grad.cols() != pp->value.cols()) pp->zero_grad();
      pp->grad += t.grad(self);
    });
    bound_.emplace(&p, v.id);
    return v;
  }

  Var<S> push(Mat<S> value, bool needs_grad, Backward backward) {
    if (check_finite && !value.allFinite()) throw NumericError("non-finite value produced on tape (node " + std::to_string(nodes_.size()) + ")");
    nodes_.push_back(Node{std::move(value), Mat<S>(), needs_grad, needs_grad ? std::move(backward) : Backward()});
    return Var<S>{this, static_cast<int>(nodes_.size()) - 1};
  }

  Var<S> push(Mat<S> value, std::initializer_list<Var<S>> inputs, Backward backward) {
    bool ng = false;
    for (const auto& in : inputs) ng = ng || needs_grad(in.id);
    return push(std::move(value), ng, std::move(backward));
  }

  const Mat<S>& value(int id) const { return nodes_[id].value; }
  bool needs_grad(int id) const { return nodes_[id].needs_grad; }
  bool has_grad(int id) const { return nodes_[id].grad.size() != 0; }

  // Gradient w.r.t. node `id` (zeros if nothing flowed into it).
  const Mat<S>& grad(int id) {
    Node& n = nodes_[id];
    if (n.grad.size() == 0) n.grad = Mat<S>::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }
  const Mat<S>& grad(Var<S> v) { return grad(v.id); }

  template <typename Expr>
  void accum(Var<S> v, const Eigen::MatrixBase<Expr>& g) {
    Node& n = nodes_[v.id];
    if (!n.needs_grad) return;
    if (n.grad.size() == 0)
      n.grad = g;
    else
      n.grad += g;
  }

  // Adds g into the (r0, c0) block of v's gradient.
  template <typename Expr>
  void accum_block(Var<S> v, Eigen::Index r0, Eigen::Index c0, const Eigen::MatrixBase<Expr>& g) {
    Node& n = nodes_[v.id];
    if (!n.needs_grad) return;
    if (n.grad.size() == 0) n.grad = Mat<S>::Zero(n.value.rows(), n.value.cols());
    n.grad.block(r0, c0, g.rows(), g.cols()) += g;
  }

  // Seeds d(root)=1 for a 1x1 root and runs every recorded backward in reverse.
  void backward(Var<S> root) {
    require_dims(root.rows() == 1 && root.cols() == 1, "backward: root must be a scalar");
    for (auto& n : nodes_) n.grad.resize(0, 0);
    nodes_[root.id].grad = Mat<S>::Ones(1, 1);
    for (int i = root.id; i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.backward && n.grad.size() != 0) n.backward(*this, i);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat<S> value;
    Mat<S> grad;
    bool needs_grad;
    Backward backward;
  };

  std::vector<Node> nodes_;
  std::unordered_map<const Param<S>*, int> bound_;
  std::mt19937_64 rng_{0};
};

}  // namespace dtam
