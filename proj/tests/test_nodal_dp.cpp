#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "fixtures.hpp"

using namespace mgdecomp;
using namespace fixtures;

namespace {

// T = 1, no battery, tank frozen (no heating, no penalty), demand 1 kW.
struct LinearNode {
  NodeModel node;
  std::vector<FiniteDistribution> laws;
  StateGrid grid;
  ControlGrid controls;

  LinearNode() {
    node.dt = 0.25;
    node.tank.level_max = 4.0;
    node.tank.reference_level = 0.0;
    node.tank.heating_max = 0.0;
    node.import_max = 5.0;
    node.import_price = {1.0};
    laws = {point_law(0.0, 0.25)};
    grid = StateGrid({{0.0, 4.0, 5}});
    controls = ControlGrid::for_node(node);
  }

  double price_value(double p) const {
    const auto vf = solve_price_dp(node, laws, Vector::Constant(1, p), grid, controls);
    return evaluate(vf[0], NodeState::Constant(1, 2.0));
  }
};

}  // namespace

TEST(Evaluate, InterpolatesAndClamps) {
  TabularValueFunction vf{StateGrid({{0.0, 1.0, 2}}), Vector(2), 0};
  vf.values << 0.0, 10.0;
  EXPECT_DOUBLE_EQ(evaluate(vf, NodeState::Constant(1, 0.5)), 5.0);
  EXPECT_EQ(evaluate(vf, NodeState::Constant(1, 1.0)), 10.0);
  EXPECT_EQ(evaluate(vf, NodeState::Constant(1, 1.2)), 10.0);
  EXPECT_EQ(evaluate(vf, NodeState::Constant(1, -3.0)), 0.0);

  TabularValueFunction v2{StateGrid({{0.0, 2.0, 3}, {0.0, 1.0, 2}}), Vector(6), 0};
  v2.values << 0, 1, 2, 3, kInfinity, 5;
  NodeState x(2);
  x << 0.5, 0.5;
  EXPECT_DOUBLE_EQ(evaluate(v2, x), 1.5);
  x << 1.0, 1.0;  // exact grid point next to an infinite corner
  EXPECT_EQ(evaluate(v2, x), 3.0);
  x << 1.5, 0.5;
  EXPECT_TRUE(std::isinf(evaluate(v2, x)));
}

TEST(PriceDp, LinearMinimizationExamples) {
  const LinearNode n;
  EXPECT_NEAR(n.price_value(0.0), 0.0, 1e-15);
  EXPECT_NEAR(n.price_value(0.5), -0.5, 1e-15);
  EXPECT_NEAR(n.price_value(-0.5), -0.75, 1e-15);
}

TEST(PriceDp, TerminalStageIsExact) {
  const auto node = grid_exact_node(true, 2);
  const auto grid = StateGrid::for_node(node, 7);
  const std::vector<FiniteDistribution> laws(2, two_atom_law(0, 0.5, 1, 1.0));
  const auto vf = solve_price_dp(node, laws, Vector::Zero(2), grid, ControlGrid::for_node(node, 5, 5));
  ASSERT_EQ(vf.size(), 3u);
  for (int g = 0; g < grid.size(); ++g) EXPECT_EQ(vf[2].values(g), node.terminal(grid.point(g)));
}

TEST(PriceDp, HazardDecisionBelowDecisionHazard) {
  const auto node = grid_exact_node(true, 3);
  const std::vector<FiniteDistribution> laws(3, two_atom_law(0, 0.5, 1, 2.0));
  const auto grid = grid_exact_states(node);
  const auto controls = grid_exact_controls(node);
  Vector p(3);
  p << 0.2, -0.3, 0.1;
  const auto hd = solve_price_dp(node, laws, p, grid, controls);
  DpOptions dh_opts;
  dh_opts.decision_hazard = true;
  const auto dh = solve_price_dp(node, laws, p, grid, controls, dh_opts);
  for (int t = 0; t < 3; ++t)
    for (int g = 0; g < grid.size(); ++g) EXPECT_LE(hd[t].values(g), dh[t].values(g) + 1e-12);
}

TEST(PriceDp, ConcaveInPrice) {
  const auto node = grid_exact_node(true, 3);
  const std::vector<FiniteDistribution> laws(3, two_atom_law(0, 0.5, 1, 1.0));
  const auto grid = grid_exact_states(node);
  const auto controls = grid_exact_controls(node);
  NodeState x0(2);
  x0 << 1.0, 2.0;
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1.5, 1.5);
  for (int trial = 0; trial < 20; ++trial) {
    Vector p1(3), p2(3);
    for (int t = 0; t < 3; ++t) p1(t) = u(rng), p2(t) = u(rng);
    const double lambda = (u(rng) + 1.5) / 3.0;
    auto value = [&](const Vector& p) { return evaluate(solve_price_dp(node, laws, p, grid, controls)[0], x0); };
    EXPECT_GE(value(lambda * p1 + (1 - lambda) * p2), lambda * value(p1) + (1 - lambda) * value(p2) - 1e-9);
  }
}

TEST(ResourceDp, AutarkicValueIsNonnegativeAndInfeasibleWhenForced) {
  const auto node = grid_exact_node(true, 3);
  const std::vector<FiniteDistribution> laws(3, two_atom_law(0, 0.5, 1, 1.0));
  const auto grid = grid_exact_states(node);
  const auto controls = grid_exact_controls(node);
  NodeState x0(2);
  x0 << 1.0, 2.0;
  const auto vf = solve_resource_dp(node, laws, Vector::Zero(3), grid, controls);
  const double v = evaluate(vf[0], x0);
  EXPECT_TRUE(std::isfinite(v));
  EXPECT_GE(v, 0.0);
  const auto forced = solve_resource_dp(node, laws, Vector::Constant(3, -50.0), grid, controls);
  EXPECT_TRUE(std::isinf(evaluate(forced[0], x0)));
}

TEST(ResourceDp, PriceBoundBelowResourceForOneNode) {
  // With no edges, p = 0 relaxes the pinned balance, so it can only help.
  const auto node = grid_exact_node(true, 3);
  const std::vector<FiniteDistribution> laws(3, two_atom_law(0, 0.5, 1, 1.0));
  const auto grid = grid_exact_states(node);
  const auto controls = grid_exact_controls(node);
  NodeState x0(2);
  x0 << 1.0, 2.0;
  const double lb = evaluate(solve_price_dp(node, laws, Vector::Zero(3), grid, controls)[0], x0);
  const double ub = evaluate(solve_resource_dp(node, laws, Vector::Zero(3), grid, controls)[0], x0);
  EXPECT_LE(lb, ub + 1e-12);
}

TEST(SimulateNodal, DeterministicMatchesDpArgmin) {
  const LinearNode n;
  const Vector p = Vector::Constant(1, -0.5);
  const auto vf = solve_price_dp(n.node, n.laws, p, n.grid, n.controls);
  const auto sim = simulate_nodal(n.node, n.laws, vf, NodalMode::price, p, n.controls, NodeState::Constant(1, 2.0),
                                  {{0}});
  EXPECT_EQ(sim.failed_count, 0);
  EXPECT_DOUBLE_EQ(sim.flows(0, 0), 4.0);  // import 5 minus demand 1
  EXPECT_DOUBLE_EQ(sim.costs(0), 1.25);
}

TEST(SimulateNodal, TwoAtomMeanFlow) {
  LinearNode n;
  n.laws = {two_atom_law(0.0, 0.25, 0.0, 0.5)};
  for (double price : {-0.5, 0.0}) {
    const Vector p = Vector::Constant(1, price);
    const auto vf = solve_price_dp(n.node, n.laws, p, n.grid, n.controls);
    const auto sim = simulate_nodal(n.node, n.laws, vf, NodalMode::price, p, n.controls, NodeState::Constant(1, 2.0),
                                    {{0}, {1}});
    // Per atom: import 5 (or 0) minus demand 1 or 2.
    EXPECT_DOUBLE_EQ(sim.mean_flow(0), price < 0 ? 3.5 : -1.5);
  }
}

TEST(SimulateNodal, ReproducibleUnderCommonPaths) {
  const auto node = grid_exact_node(true, 4);
  const std::vector<FiniteDistribution> laws(4, two_atom_law(0, 0.5, 1, 1.0));
  NoiseModel model({laws});
  std::vector<std::vector<int>> paths;
  for (int m = 0; m < 50; ++m) paths.push_back(sample_node_path(model, 0, detail::stream_seed(9, m)));
  const auto grid = grid_exact_states(node);
  const auto controls = grid_exact_controls(node);
  const Vector p = Vector::Constant(4, 0.3);
  const auto vf = solve_price_dp(node, laws, p, grid, controls);
  NodeState x0(2);
  x0 << 1.0, 2.0;
  const auto a = simulate_nodal(node, laws, vf, NodalMode::price, p, controls, x0, paths);
  const auto b = simulate_nodal(node, laws, vf, NodalMode::price, p, controls, x0, paths);
  EXPECT_EQ(a.flows, b.flows);
  EXPECT_EQ(a.mean_flow, b.mean_flow);
  EXPECT_EQ(a.failed_count, 0);
}

TEST(FiniteDifference, QuadraticToyIsExactAndCubicConvergesAtSecondOrder) {
  const Vector c = (Vector(3) << 1.0, -2.0, 0.5).finished();
  const Vector r0 = (Vector(3) << 0.3, 0.1, -0.4).finished();
  // f(r) = sum c_t r_t^2, gradient 2 c_t r_t
  auto quad = [&](int t, double d) {
    Vector r = r0;
    r(t) += d;
    return (c.array() * r.array().square()).sum();
  };
  const Vector analytic = 2.0 * c.cwiseProduct(r0);
  const double base = quad(0, 0.0);
  EXPECT_LT((central_difference_gradient(quad, base, 3, 1e-2) - analytic).cwiseAbs().maxCoeff(), 1e-9);

  auto cubic = [&](int t, double d) {
    Vector r = r0;
    r(t) += d;
    return (c.array() * r.array().cube()).sum();
  };
  const Vector cubic_grad = 3.0 * c.cwiseProduct(r0.cwiseAbs2());
  const double e1 = (central_difference_gradient(cubic, 0.0, 3, 1e-2) - cubic_grad).cwiseAbs().maxCoeff();
  const double e2 = (central_difference_gradient(cubic, 0.0, 3, 5e-3) - cubic_grad).cwiseAbs().maxCoeff();
  EXPECT_NEAR(e1 / e2, 4.0, 0.05);
}

TEST(FiniteDifference, OneSidedAtInfiniteNeighbour) {
  auto fn = [](int, double d) { return d > 0 ? kInfinity : 2.0 * d; };
  EXPECT_DOUBLE_EQ(central_difference_gradient(fn, 0.0, 1, 0.1)(0), 2.0);
  auto dead = [](int, double) { return kInfinity; };
  EXPECT_THROW(central_difference_gradient(dead, 0.0, 1, 0.1), InfeasibleError);
}

TEST(ResourceGradient, LinearNodeAndBindingImport) {
  // No battery, no heating: import = r + demand, value affine in r.
  LinearNode n;
  n.node.import_price = {1.0, 2.0};
  n.laws = {point_law(0.0, 0.25), point_law(0.0, 0.25)};
  const NodeState x0 = NodeState::Constant(1, 2.0);
  const Vector g = resource_gradient(n.node, n.laws, Vector::Zero(2), n.grid, n.controls, x0, 1e-2);
  EXPECT_NEAR(g(0), 0.25, 1e-12);
  EXPECT_NEAR(g(1), 0.5, 1e-12);
  // r_0 = 4 puts import at its bound 5; only the minus side is feasible.
  const Vector r = (Vector(2) << 4.0, 0.0).finished();
  const Vector g2 = resource_gradient(n.node, n.laws, r, n.grid, n.controls, x0, 1e-2);
  EXPECT_NEAR(g2(0), 0.25, 1e-12);
}

TEST(ValueFunctionCsv, RoundTrip) {
  TabularValueFunction vf{StateGrid({{0.0, 2.0, 3}, {0.0, 1.0, 2}}), Vector(6), 4};
  vf.values << 0.1, 1.0 / 3.0, 2, 3, kInfinity, -5e-7;
  std::stringstream ss;
  write_value_function_csv(ss, vf);
  const auto back = read_value_function_csv(ss);
  EXPECT_EQ(back.stage, 4);
  EXPECT_TRUE(back.grid == vf.grid);
  EXPECT_EQ(back.values, vf.values);
}
