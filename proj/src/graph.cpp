// SPDX-License-Identifier: Apache-2.0

#include "mpo/graph.hpp"

#include <cmath>

namespace mpo {

Graph::Id Graph::leaf(double v, Pullback pb) {
  const Id id = push(Op::leaf, v, -1, -1);
  leaf_nodes_.push_back(id);
  pullbacks_.push_back(std::move(pb));
  return id;
}

Graph::Id Graph::div(Id a, Id b) {
  if (value(b) == 0.0) throw ConstructionError("division by a zero-valued node");
  return push(Op::div, value(a) / value(b), a, b);
}

Graph::Id Graph::log(Id a) {
  if (!(value(a) > 0.0))
    throw ConstructionError("log of a non-positive node value (" + std::to_string(value(a)) + ")");
  return push(Op::log, std::log(value(a)), a, -1);
}

Graph::Id Graph::abs(Id a) {
  const double v = value(a);
  if (v == 0.0) throw ConstructionError("abs is not differentiable at 0");
  return push(Op::abs, std::fabs(v), a, -1, v > 0.0 ? 1.0 : -1.0);
}

Graph::Id Graph::clamp_min(Id a, double c) {
  const double v = value(a);
  if (v == c) throw ConstructionError("clamp_min is not differentiable at the clamp boundary");
  return push(Op::clamp_min, v > c ? v : c, a, -1, v > c ? 1.0 : 0.0);
}

void Graph::backward(Id root, std::span<double> grad, ExecMode mode) const {
  if (root < 0 || static_cast<std::size_t>(root) >= nodes_.size())
    throw InputError("backward: root node id out of range");
  Vec adj(nodes_.size(), 0.0);
  adj[static_cast<std::size_t>(root)] = 1.0;
  // Nodes are in topological order by construction; walk backwards.
  for (Id id = root; id >= 0; --id) {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    const double g = adj[static_cast<std::size_t>(id)];
    if (g == 0.0) continue;
    auto bump = [&](Id child, double factor) {
      if (child >= 0) adj[static_cast<std::size_t>(child)] += g * factor;
    };
    switch (n.op) {
      case Op::constant:
      case Op::leaf:
        break;
      case Op::add:
        bump(n.a, 1.0);
        bump(n.b, 1.0);
        break;
      case Op::sub:
        bump(n.a, 1.0);
        bump(n.b, -1.0);
        break;
      case Op::mul:
        bump(n.a, value(n.b));
        bump(n.b, value(n.a));
        break;
      case Op::div: {
        const double bv = value(n.b);
        bump(n.a, 1.0 / bv);
        bump(n.b, -value(n.a) / (bv * bv));
        break;
      }
      case Op::neg:
        bump(n.a, -1.0);
        break;
      case Op::square:
        bump(n.a, 2.0 * value(n.a));
        break;
      case Op::exp:
        bump(n.a, n.value);
        break;
      case Op::expm1:
        bump(n.a, n.value + 1.0);  // d/dx (e^x - 1) = e^x
        break;
      case Op::log:
        bump(n.a, 1.0 / value(n.a));
        break;
      case Op::sigmoid:
        bump(n.a, n.value * (1.0 - n.value));
        break;
      case Op::log_sigmoid:
        // d/dx log sigma(x) = 1 - sigma(x) = sigma(-x)
        bump(n.a, logistic(-value(n.a)));
        break;
      case Op::scale:
        bump(n.a, n.aux);
        break;
      case Op::add_const:
        bump(n.a, 1.0);
        break;
      case Op::abs:
      case Op::clamp_min:
        bump(n.a, n.aux);
        break;
    }
  }

  // Leaf pullbacks into per-leaf buffers, reduced in leaf order.  Both
  // execution modes share this exact sequence of floating-point additions.
  std::vector<std::size_t> active;
  for (std::size_t i = 0; i < leaf_nodes_.size(); ++i)
    if (adj[static_cast<std::size_t>(leaf_nodes_[i])] != 0.0) active.push_back(i);
  if (active.empty()) return;
  std::vector<Vec> buffers(active.size());
  for_each_index(active.size(), mode, [&](std::size_t i) {
    buffers[i].assign(grad.size(), 0.0);
    const std::size_t li = active[i];
    pullbacks_[li](adj[static_cast<std::size_t>(leaf_nodes_[li])], buffers[i]);
  });
  reduce_ordered(buffers, grad);
}

Vec Graph::gradient(Id root, std::size_t n_params, ExecMode mode) const {
  Vec grad(n_params, 0.0);
  backward(root, grad, mode);
  return grad;
}

}  // namespace mpo
