// SPDX-License-Identifier: Apache-2.0

#include <cmath>

#include "doctest.h"

#include "mpo/graph.hpp"
#include "mpo/rng.hpp"

using namespace mpo;

namespace {

// Leaf whose pullback writes the adjoint into grad[slot].
Graph::Id slot_leaf(Graph& g, double v, std::size_t slot) {
  return g.leaf(v, [slot](double adj, std::span<double> grad) { grad[slot] += adj; });
}

}  // namespace

TEST_SUITE("graph") {

TEST_CASE("forward values are computed eagerly per op") {
  Graph g;
  const auto a = g.constant(2.0);
  const auto b = g.constant(-0.5);
  CHECK(g.value(g.add(a, b)) == doctest::Approx(1.5).epsilon(1e-15));
  CHECK(g.value(g.sub(a, b)) == doctest::Approx(2.5).epsilon(1e-15));
  CHECK(g.value(g.mul(a, b)) == doctest::Approx(-1.0).epsilon(1e-15));
  CHECK(g.value(g.div(a, b)) == doctest::Approx(-4.0).epsilon(1e-15));
  CHECK(g.value(g.neg(a)) == doctest::Approx(-2.0).epsilon(1e-15));
  CHECK(g.value(g.square(b)) == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(g.value(g.exp(b)) == doctest::Approx(std::exp(-0.5)).epsilon(1e-15));
  CHECK(g.value(g.expm1(b)) == doctest::Approx(std::expm1(-0.5)).epsilon(1e-15));
  CHECK(g.value(g.log(a)) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(g.value(g.sigmoid(a)) == doctest::Approx(1.0 / (1.0 + std::exp(-2.0))).epsilon(1e-15));
  CHECK(g.value(g.log_sigmoid(a)) ==
        doctest::Approx(-std::log1p(std::exp(-2.0))).epsilon(1e-15));
  CHECK(g.value(g.scale(a, 3.0)) == doctest::Approx(6.0).epsilon(1e-15));
  CHECK(g.value(g.add_const(a, 0.25)) == doctest::Approx(2.25).epsilon(1e-15));
  CHECK(g.value(g.abs(b)) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(g.value(g.clamp_min(b, -1.0)) == doctest::Approx(-0.5).epsilon(1e-15));
  CHECK(g.value(g.clamp_min(b, 0.0)) == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("domain problems throw at construction, not at backward") {
  Graph g;
  const auto z = g.constant(0.0);
  const auto neg = g.constant(-1.0);
  CHECK_THROWS_AS(g.div(g.constant(1.0), z), ConstructionError);
  CHECK_THROWS_AS(g.log(z), ConstructionError);
  CHECK_THROWS_AS(g.log(neg), ConstructionError);
  CHECK_THROWS_AS(g.abs(z), ConstructionError);
  CHECK_THROWS_AS(g.clamp_min(z, 0.0), ConstructionError);
  CHECK_NOTHROW(g.clamp_min(z, -1.0));
  CHECK_NOTHROW(g.clamp_min(z, 1.0));  // fully inside the flat branch is fine
}

TEST_CASE("gradients of each primitive match hand derivatives") {
  // f(u, v) = sigmoid(u * v) + log(square(u)) - exp(v) / u, at u=1.5, v=-0.75.
  const double u = 1.5, v = -0.75;
  Graph g;
  const auto lu = slot_leaf(g, u, 0);
  const auto lv = slot_leaf(g, v, 1);
  const auto root = g.add(g.sigmoid(g.mul(lu, lv)), g.sub(g.log(g.square(lu)),
                                                          g.div(g.exp(lv), lu)));
  const double s = 1.0 / (1.0 + std::exp(-u * v));
  const double expect = s + std::log(u * u) - std::exp(v) / u;
  CHECK(g.value(root) == doctest::Approx(expect).epsilon(1e-14));

  const Vec grad = g.gradient(root, 2);
  const double df_du = s * (1.0 - s) * v + 2.0 / u + std::exp(v) / (u * u);
  const double df_dv = s * (1.0 - s) * u - std::exp(v) / u;
  CHECK(grad[0] == doctest::Approx(df_du).epsilon(1e-12));
  CHECK(grad[1] == doctest::Approx(df_dv).epsilon(1e-12));
}

TEST_CASE("gradients match central finite differences on a deep composite") {
  const auto build = [](double a, double b, double c) {
    // Mixes every differentiable primitive, with values kept in-domain.
    Graph g;
    const auto la = slot_leaf(g, a, 0);
    const auto lb = slot_leaf(g, b, 1);
    const auto lc = slot_leaf(g, c, 2);
    const auto t1 = g.log_sigmoid(g.sub(g.mul(la, lb), lc));
    const auto t2 = g.square(g.add_const(g.scale(lc, 0.5), 1.0));
    const auto t3 = g.div(g.expm1(lb), g.add_const(g.abs(la), 3.0));
    const auto t4 = g.clamp_min(g.neg(lc), -10.0);
    const auto root = g.add(g.add(t1, t2), g.add(t3, t4));
    return std::pair<Graph, Graph::Id>(std::move(g), root);
  };
  const double a = 0.8, b = -1.1, c = 0.4;
  auto [g, root] = build(a, b, c);
  const Vec grad = g.gradient(root, 3);

  const double h = 1e-6;
  const auto value_at = [&](double aa, double bb, double cc) {
    auto [gg, rr] = build(aa, bb, cc);
    return gg.value(rr);
  };
  CHECK(grad[0] ==
        doctest::Approx((value_at(a + h, b, c) - value_at(a - h, b, c)) / (2 * h)).epsilon(1e-6));
  CHECK(grad[1] ==
        doctest::Approx((value_at(a, b + h, c) - value_at(a, b - h, c)) / (2 * h)).epsilon(1e-6));
  CHECK(grad[2] ==
        doctest::Approx((value_at(a, b, c + h) - value_at(a, b, c - h)) / (2 * h)).epsilon(1e-6));
}

TEST_CASE("log_sigmoid stays finite and correct on extreme tails") {
  Graph g;
  const auto big = slot_leaf(g, 60.0, 0);
  const auto small = slot_leaf(g, -60.0, 1);
  const auto r1 = g.log_sigmoid(big);
  const auto r2 = g.log_sigmoid(small);
  CHECK(g.value(r1) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(g.value(r2) == doctest::Approx(-60.0).epsilon(1e-12));
  const Vec g1 = g.gradient(r1, 2), g2 = g.gradient(r2, 2);
  CHECK(g1[0] == doctest::Approx(0.0).epsilon(1e-12));   // sigma(-60)
  CHECK(g2[1] == doctest::Approx(1.0).epsilon(1e-12));   // sigma(60)
  CHECK(std::isfinite(g.value(g.exp(small))));
}

TEST_CASE("a leaf reached along several paths accumulates its adjoint once per path") {
  Graph g;
  const auto x = slot_leaf(g, 3.0, 0);
  // f = x * x + 2x  ->  df/dx = 2x + 2 = 8.
  const auto root = g.add(g.mul(x, x), g.scale(x, 2.0));
  const Vec grad = g.gradient(root, 1);
  CHECK(grad[0] == doctest::Approx(8.0).epsilon(1e-14));
}

TEST_CASE("pullbacks into shared parameter slots add up, serial == parallel bitwise") {
  Graph g;
  Rng rng(5);
  std::vector<Graph::Id> leaves;
  Graph::Id sum = g.constant(0.0);
  for (int i = 0; i < 64; ++i) {
    // Every leaf writes into both its own slot and shared slot 0.
    const std::size_t slot = 1 + static_cast<std::size_t>(i);
    const double coeff = rng.normal();
    const auto leaf = g.leaf(rng.uniform(), [slot, coeff](double adj, std::span<double> grad) {
      grad[0] += adj * coeff;
      grad[slot] += adj;
    });
    leaves.push_back(leaf);
    sum = g.add(sum, g.square(leaf));
  }
  const Vec serial = g.gradient(sum, 65, ExecMode::serial);
  const Vec parallel = g.gradient(sum, 65, ExecMode::parallel);
  REQUIRE(serial.size() == parallel.size());
  for (std::size_t i = 0; i < serial.size(); ++i) CHECK(serial[i] == parallel[i]);  // bitwise
  for (std::size_t i = 0; i < leaves.size(); ++i)
    CHECK(serial[i + 1] == doctest::Approx(2.0 * g.value(leaves[i])).epsilon(1e-14));
}

TEST_CASE("backward validates the root id and zero-adjoint leaves skip their pullbacks") {
  Graph g;
  Vec grad(1, 0.0);
  CHECK_THROWS_AS(g.backward(0, grad), InputError);  // empty graph

  int calls = 0;
  const auto live = g.leaf(2.0, [&calls](double adj, std::span<double> gr) {
    ++calls;
    gr[0] += adj;
  });
  const auto dead = g.leaf(5.0, [&calls](double, std::span<double>) { ++calls; });
  const auto root = g.add(g.scale(live, 3.0), g.mul(dead, g.constant(0.0)));
  g.backward(root, grad);
  CHECK(grad[0] == doctest::Approx(3.0).epsilon(1e-15));
  CHECK(calls == 1);  // `dead` has zero adjoint; its pullback never runs
}

}  // TEST_SUITE
