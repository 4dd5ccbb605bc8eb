#include <random>

#include <gtest/gtest.h>

#include "mgdecomp/edge_subproblems.hpp"

using namespace mgdecomp;

namespace {

GraphTopology triangle() { return GraphTopology(3, {{0, 1}, {1, 2}, {0, 2}}); }
GraphTopology path3() { return GraphTopology(3, {{0, 1}, {1, 2}}); }

EdgeCost quad(double a, double b = 0.0) { return EdgeCost{a, b}; }

// Reference solve through a null-space parametrization of A q = -r, which
// shares no code with the edge solver.
double nullspace_value(const Matrix& a, const std::vector<EdgeCost>& c, const Vector& r, Vector* q_out = nullptr) {
  const Vector qp = a.completeOrthogonalDecomposition().solve(Vector(-r));
  const Matrix n = a.fullPivLu().kernel();
  const int ne = static_cast<int>(a.cols());
  Matrix h = Matrix::Zero(ne, ne);
  Vector b(ne);
  for (int j = 0; j < ne; ++j) h(j, j) = 2 * c[j].quadratic, b(j) = c[j].linear;
  Vector q = qp;
  if (n.cols() > 0 && !(n.cols() == 1 && n.isZero())) {
    const Matrix hn = n.transpose() * h * n;
    const Vector z = hn.ldlt().solve(Vector(-n.transpose() * (h * qp + b)));
    q = qp + n * z;
  }
  if (q_out) *q_out = q;
  double v = 0;
  for (int j = 0; j < ne; ++j) v += c[j](q(j));
  return v;
}

}  // namespace

TEST(EdgePrice, ClosedFormExamples) {
  const IncidenceMatrix a{Matrix::Constant(1, 1, 1.0)};  // mu = p for a one-row toy
  PriceProcess p(1, 1);
  p(0, 0) = 2.0;
  auto s = solve_edge_price({{quad(1.0)}}, a, p);
  EXPECT_DOUBLE_EQ(s.flows(0, 0), -1.0);
  EXPECT_DOUBLE_EQ(s.value, -1.0);

  EdgeCost boxed{1.0, 0.0, 0.0, 1.0};
  s = solve_edge_price({{boxed}}, a, p);
  EXPECT_DOUBLE_EQ(s.flows(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(s.value, 0.0);

  EdgeCost linear{0.0, 0.0, -1.0, 1.0};
  s = solve_edge_price({{linear}}, a, p);
  EXPECT_DOUBLE_EQ(s.flows(0, 0), -1.0);
  EXPECT_DOUBLE_EQ(s.value, -2.0);

  EdgeCost open{0.0, 0.0, -kInfinity, 1.0};
  EXPECT_THROW(solve_edge_price({{open}}, a, p), UnboundedError);
}

TEST(EdgePrice, AdditiveOverEdgesAndStages) {
  const auto g = triangle();
  const auto a = build_incidence(g);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-2, 2);
  EdgeCostTable costs(4, std::vector<EdgeCost>(3));
  PriceProcess p(4, 3);
  for (int t = 0; t < 4; ++t) {
    for (int e = 0; e < 3; ++e) costs[t][e] = EdgeCost{u(rng) + 2.1, u(rng), -1.0, 1.5};
    for (int i = 0; i < 3; ++i) p(t, i) = u(rng);
  }
  const auto full = solve_edge_price(costs, a, p);
  double sum = 0;
  for (int t = 0; t < 4; ++t)
    for (int e = 0; e < 3; ++e) {
      // one edge, one stage: reuse the solver on a 1-stage 2-node graph
      const GraphTopology single(2, {{0, 1}});
      PriceProcess ps(1, 2);
      const auto& edge = g.edges()[e];
      ps(0, 0) = p(t, edge.tail);
      ps(0, 1) = p(t, edge.head);
      sum += solve_edge_price({{costs[t][e]}}, build_incidence(single), ps).value;
    }
  EXPECT_NEAR(full.value, sum, 1e-12);
}

TEST(EdgeResource, TriangleExample) {
  const auto g = triangle();
  ResourceProcess r(1, 3);
  r.stage(0) << 1, -1, 0;
  const EdgeCostTable costs{{quad(1), quad(1), quad(1)}};
  const auto s = solve_edge_resource(costs, g, r);
  ASSERT_TRUE(s.feasible);
  EXPECT_NEAR(s.flows(0, 0), -2.0 / 3.0, 1e-12);
  EXPECT_NEAR(s.flows(0, 1), 1.0 / 3.0, 1e-12);
  EXPECT_NEAR(s.flows(0, 2), -1.0 / 3.0, 1e-12);
  EXPECT_NEAR(s.value, 2.0 / 3.0, 1e-12);
  Vector q_ref;
  EXPECT_NEAR(nullspace_value(build_incidence(g).entries, costs[0], r.stage(0).transpose(), &q_ref), 2.0 / 3.0, 1e-12);
  EXPECT_LT((q_ref - s.flows.stage(0).transpose()).norm(), 1e-12);
  EXPECT_LT((s.multipliers.stage(0).transpose() - (2.0 / 3.0) * r.stage(0).transpose()).norm(), 1e-12);
  // same stage through the bounded (interior point) path, bounds inactive
  EdgeCostTable boxed{{EdgeCost{1, 0, -5, 5}, EdgeCost{1, 0, -5, 5}, EdgeCost{1, 0, -5, 5}}};
  const auto sb = solve_edge_resource(boxed, g, r);
  EXPECT_NEAR(sb.value, 2.0 / 3.0, 1e-9);
  EXPECT_LT((sb.multipliers.stage(0) - s.multipliers.stage(0)).norm(), 1e-7);
}

TEST(EdgeResource, ZeroAndEmptyCases) {
  const EdgeCostTable costs{{quad(1), quad(1), quad(1)}};
  const auto s = solve_edge_resource(costs, triangle(), ResourceProcess(1, 3));
  EXPECT_EQ(s.value, 0.0);
  EXPECT_TRUE(s.flows.matrix().isZero(1e-15));
  EXPECT_TRUE(s.multipliers.matrix().isZero(1e-15));

  const GraphTopology lone(1, {});
  const EdgeCostTable none{{}};
  EXPECT_EQ(solve_edge_resource(none, lone, ResourceProcess(1, 1)).value, 0.0);
  ResourceProcess r(1, 1);
  r(0, 0) = 1.0;
  const auto bad = solve_edge_resource(none, lone, r);
  EXPECT_FALSE(bad.feasible);
  EXPECT_TRUE(std::isinf(bad.value));
}

TEST(EdgeResource, BoundsThatCannotCarryTheResource) {
  const EdgeCostTable costs{{EdgeCost{1, 0, -0.5, 0.5}, EdgeCost{1, 0, -0.5, 0.5}}};
  ResourceProcess r(2, 3);
  r.stage(1) << 2, 0, -2;
  const auto s = solve_edge_resource(EdgeCostTable{costs[0], costs[0]}, path3(), r);
  EXPECT_FALSE(s.feasible);
  EXPECT_EQ(s.stage_values(0), 0.0);
  EXPECT_TRUE(std::isinf(s.stage_values(1)));
  EXPECT_NE(s.diagnostic.find("stage 1"), std::string::npos);
}

TEST(EdgeResource, KktResidualAndMultipliersMatchFiniteDifferences) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int trial = 0; trial < 20; ++trial) {
    const auto g = trial % 2 ? triangle() : path3();
    const auto a = build_incidence(g);
    const bool boxed = trial % 4 >= 2;
    std::vector<EdgeCost> row;
    for (int e = 0; e < g.num_edges(); ++e)
      row.push_back(boxed ? EdgeCost{1.5 + u(rng), u(rng), -10, 10} : EdgeCost{1.5 + u(rng), u(rng)});
    const EdgeCostTable costs{row};
    ResourceProcess r(1, 3);
    for (int i = 0; i < 3; ++i) r(0, i) = u(rng);
    r = project_onto_image(r, g);
    const auto s = solve_edge_resource(costs, g, r);
    ASSERT_TRUE(s.feasible);
    EXPECT_LT((a.entries * s.flows.stage(0).transpose() + r.stage(0).transpose()).norm(), 1e-9);
    EXPECT_NEAR(s.value, nullspace_value(a.entries, row, r.stage(0).transpose()), 1e-8);
    const double h = 1e-4;
    for (int i = 0; i < 3; ++i) {
      ResourceProcess d(1, 3);
      d(0, i) = 1.0;
      d = project_onto_image(d, g);
      ResourceProcess up = r, down = r;
      up.matrix() += h * d.matrix();
      down.matrix() -= h * d.matrix();
      const double fd =
          (solve_edge_resource(costs, g, up).value - solve_edge_resource(costs, g, down).value) / (2 * h);
      EXPECT_NEAR(fd, s.multipliers.stage(0).dot(d.stage(0)), 1e-4) << "trial " << trial;
    }
  }
}
