// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode autodiff over scalar expressions whose leaves are model
// quantities (sequence log-probabilities, hidden-state distances, KL terms).
// Values are computed eagerly at node construction, so domain problems
// surface where the node is built.  backward() runs the scalar reverse pass,
// then executes each leaf's pullback — the hook that turns a leaf adjoint
// into parameter-gradient contributions.  Pullbacks run into per-leaf
// buffers that are reduced in leaf order, so serial and OpenMP execution are
// bit-identical.

#pragma once

#include <cstdint>
#include <functional>

#include "mpo/common.hpp"
#include "mpo/parallel.hpp"

namespace mpo {

class Graph {
 public:
  using Id = int;
  // adjoint d(root)/d(leaf value) -> accumulate adjoint * d(leaf)/d(params).
  using Pullback = std::function<void(double adjoint, std::span<double> grad)>;

  Id constant(double v) { return push(Op::constant, v, -1, -1); }

  // Leaf bound to model parameters through pb.
  Id leaf(double v, Pullback pb);

  Id add(Id a, Id b) { return push(Op::add, value(a) + value(b), a, b); }
  Id sub(Id a, Id b) { return push(Op::sub, value(a) - value(b), a, b); }
  Id mul(Id a, Id b) { return push(Op::mul, value(a) * value(b), a, b); }
  Id div(Id a, Id b);
  Id neg(Id a) { return push(Op::neg, -value(a), a, -1); }
  Id square(Id a) { return push(Op::square, value(a) * value(a), a, -1); }
  Id exp(Id a) { return push(Op::exp, std::exp(value(a)), a, -1); }
  // exp(x) - 1 without cancellation near 0 (odds-ratio denominators).
  Id expm1(Id a) { return push(Op::expm1, std::expm1(value(a)), a, -1); }
  Id log(Id a);
  Id sigmoid(Id a) { return push(Op::sigmoid, logistic(value(a)), a, -1); }
  // log(sigmoid(x)), numerically stable on both tails.
  Id log_sigmoid(Id a) { return push(Op::log_sigmoid, log_logistic(value(a)), a, -1); }
  Id scale(Id a, double k) { return push(Op::scale, k * value(a), a, -1, k); }
  Id add_const(Id a, double c) { return push(Op::add_const, value(a) + c, a, -1, c); }
  // |x| and max(x, c): non-differentiable exactly at the kink, which is a
  // construction error per the gradient_of contract.
  Id abs(Id a);
  Id clamp_min(Id a, double c);

  double value(Id id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  std::size_t size() const { return nodes_.size(); }

  // Gradient of root w.r.t. model parameters (sum over leaf pullbacks).
  void backward(Id root, std::span<double> grad, ExecMode mode = ExecMode::serial) const;
  Vec gradient(Id root, std::size_t n_params, ExecMode mode = ExecMode::serial) const;

 private:
  enum class Op {
    constant, leaf, add, sub, mul, div, neg, square, exp, expm1, log, sigmoid,
    log_sigmoid, scale, add_const, abs, clamp_min
  };
  struct Node {
    Op op;
    double value;
    Id a, b;
    double aux;  // scale factor / added constant / abs sign / clamp branch
  };

  Id push(Op op, double v, Id a, Id b, double aux = 0.0) {
    nodes_.push_back(Node{op, v, a, b, aux});
    return static_cast<Id>(nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
  std::vector<Pullback> pullbacks_;    // parallel to leaf_nodes_
  std::vector<Id> leaf_nodes_;
};

}  // namespace mpo
