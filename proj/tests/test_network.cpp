#include <random>

#include <gtest/gtest.h>

#include "mgdecomp/network.hpp"

using namespace mgdecomp;

namespace {

GraphTopology triangle() { return GraphTopology(3, {{0, 1}, {1, 2}, {0, 2}}); }
GraphTopology path3() { return GraphTopology(3, {{0, 1}, {1, 2}}); }

// Independent route to the projection: least squares on the incidence map.
Vector least_squares_projection(const IncidenceMatrix& a, const Vector& r) {
  if (a.num_edges() == 0) return Vector::Zero(r.size());
  const Vector q = a.entries.completeOrthogonalDecomposition().solve(r);
  return a.entries * q;
}

}  // namespace

TEST(Incidence, Triangle) {
  const auto a = build_incidence(triangle());
  Matrix expected(3, 3);
  expected << 1, 0, 1, -1, 1, 0, 0, -1, -1;
  EXPECT_EQ(a.entries, expected);
  EXPECT_TRUE((a.entries.colwise().sum().array() == 0.0).all());
}

TEST(Incidence, SingleNodeNoEdges) {
  const auto a = build_incidence(GraphTopology(1, {}));
  EXPECT_EQ(a.entries.rows(), 1);
  EXPECT_EQ(a.entries.cols(), 0);
}

TEST(Incidence, Path) {
  const auto a = build_incidence(path3());
  Matrix expected(3, 2);
  expected << 1, 0, -1, 1, 0, -1;
  EXPECT_EQ(a.entries, expected);
}

TEST(Incidence, RejectsMalformedEdgesByIndex) {
  try {
    GraphTopology(3, {{0, 1}, {1, 3}});
    FAIL() << "out of range endpoint accepted";
  } catch (const ModelError& e) {
    EXPECT_NE(std::string(e.what()).find("edge 2"), std::string::npos);
  }
  try {
    GraphTopology(3, {{0, 1}, {1, 2}, {2, 2}});
    FAIL() << "self-loop accepted";
  } catch (const ModelError& e) {
    EXPECT_NE(std::string(e.what()).find("edge 3"), std::string::npos);
  }
}

TEST(Topology, ComponentLabels) {
  const GraphTopology g(5, {{0, 1}, {3, 4}});
  EXPECT_EQ(g.num_components(), 3);
  const auto& lab = g.component_labels();
  EXPECT_EQ(lab[0], lab[1]);
  EXPECT_EQ(lab[3], lab[4]);
  EXPECT_NE(lab[0], lab[2]);
  EXPECT_NE(lab[0], lab[3]);
  EXPECT_NE(lab[2], lab[3]);
}

TEST(Kirchhoff, Examples) {
  const auto tri = build_incidence(triangle());
  EdgeFlows q(1, 3);
  NodeFlows f(1, 3);
  q.stage(0) << 1, 1, 0;
  f.stage(0) << -1, 0, 1;
  EXPECT_TRUE(kirchhoff_residual(tri, q, f, 0).isZero());

  q.stage(0).setZero();
  f.stage(0) << 1, 0, 0;
  EXPECT_EQ(kirchhoff_residual(tri, q, f, 0), Vector::Unit(3, 0));

  const auto path = build_incidence(path3());
  EdgeFlows qp(1, 2);
  qp.stage(0) << 1, 1;
  f.stage(0) << -1, 0, 1;
  EXPECT_TRUE(kirchhoff_residual(path, qp, f, 0).isZero());

  EXPECT_THROW(kirchhoff_residual(path, q, f, 0), ModelError);
  EXPECT_THROW(kirchhoff_residual(tri, q, f, 1), ModelError);
}

TEST(Projection, Examples) {
  const auto g = triangle();
  const auto a = build_incidence(g);
  ResourceProcess r(1, 3);

  r.stage(0) << 1, 1, 1;
  auto p = project_onto_image(r, g);
  EXPECT_TRUE(p.matrix().isZero(1e-15));
  EXPECT_TRUE(least_squares_projection(a, r.stage(0).transpose()).isZero(1e-12));

  r.stage(0) << 1, 0, -1;
  p = project_onto_image(r, g);
  EXPECT_EQ(p.matrix(), r.matrix());

  r.stage(0) << 3, 0, 0;
  p = project_onto_image(r, g);
  EXPECT_NEAR(p(0, 0), 2.0, 1e-15);
  EXPECT_NEAR(p(0, 1), -1.0, 1e-15);
  EXPECT_NEAR(p(0, 2), -1.0, 1e-15);
  // A q = -r' has an exact solution.
  const Vector q = a.entries.completeOrthogonalDecomposition().solve(Vector(-p.stage(0).transpose()));
  EXPECT_LT((a.entries * q + p.stage(0).transpose()).norm(), 1e-12);
}

TEST(Projection, MatchesLeastSquaresAndIsIdempotentOnDisconnectedGraphs) {
  const GraphTopology g(6, {{0, 1}, {1, 2}, {3, 4}});
  const auto a = build_incidence(g);
  std::mt19937_64 rng(7);
  std::normal_distribution<double> n01;
  ResourceProcess r(4, 6);
  for (int t = 0; t < 4; ++t)
    for (int i = 0; i < 6; ++i) r(t, i) = n01(rng);
  const auto p = project_onto_image(r, g);
  EXPECT_TRUE(in_image(p, g, 1e-12));
  EXPECT_TRUE(project_onto_image(p, g).matrix().isApprox(p.matrix(), 1e-14));
  for (int t = 0; t < 4; ++t) {
    const Vector expected = least_squares_projection(a, r.stage(t).transpose());
    EXPECT_LT((expected - p.stage(t).transpose()).cwiseAbs().maxCoeff(), 1e-9);
    // residual orthogonal to every column of A
    const Vector resid = r.stage(t).transpose() - p.stage(t).transpose();
    EXPECT_LT((a.entries.transpose() * resid).cwiseAbs().maxCoeff(), 1e-12);
  }
  // isolated node projects to zero
  EXPECT_DOUBLE_EQ(p(0, 5), 0.0);
}

TEST(Duality, PairingIdentity) {
  const GraphTopology g(4, {{0, 1}, {1, 2}, {2, 3}, {3, 0}, {0, 2}});
  const auto a = build_incidence(g);
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> u(-5.0, 5.0);
  for (int draw = 0; draw < 100; ++draw) {
    PriceProcess p(3, 4);
    NodeFlows f(3, 4);
    EdgeFlows q(3, 5);
    for (int t = 0; t < 3; ++t) {
      for (int i = 0; i < 4; ++i) p(t, i) = u(rng), f(t, i) = u(rng);
      for (int e = 0; e < 5; ++e) q(t, e) = u(rng);
    }
    const auto mu = dual_edge_prices(a, p);
    double lhs = p.flat().dot(f.flat()) + mu.flat().dot(q.flat());
    double rhs = 0.0;
    for (int t = 0; t < 3; ++t) rhs += p.stage(t).dot(kirchhoff_residual(a, q, f, t));
    EXPECT_NEAR(lhs, rhs, 1e-12);
  }
}
