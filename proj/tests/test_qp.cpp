#include <gtest/gtest.h>

#include "mgdecomp/qp.hpp"

using namespace mgdecomp;

TEST(Qp, EqualityConstrainedMatchesKkt) {
  QuadraticProgram qp(3);
  qp.hessian << 4, 1, 0, 1, 3, 0.5, 0, 0.5, 2;
  qp.linear << 1, -2, 0.5;
  Eigen::Vector3d a(1, 1, 1);
  qp.add_equality(a, 1.0);
  const auto sol = solve_qp(qp);
  ASSERT_TRUE(sol.optimal());
  Eigen::MatrixXd kkt = Eigen::MatrixXd::Zero(4, 4);
  kkt.topLeftCorner(3, 3) = qp.hessian;
  kkt.block(0, 3, 3, 1) = a;
  kkt.block(3, 0, 1, 3) = a.transpose();
  Eigen::Vector4d rhs;
  rhs << -qp.linear, 1.0;
  const Eigen::Vector4d ref = kkt.lu().solve(rhs);
  EXPECT_LT((sol.x - ref.head(3)).norm(), 1e-8);
  EXPECT_NEAR(sol.eq_multipliers(0), ref(3), 1e-8);
}

TEST(Qp, BoundedLinearProgram) {
  // min -x - 2y  s.t. x + y <= 3, 0 <= x, y <= 2
  QuadraticProgram qp(2);
  qp.linear << -1, -2;
  qp.lower.setZero();
  qp.upper.setConstant(2.0);
  qp.add_inequality(Eigen::Vector2d(1, 1), 3.0);
  const auto sol = solve_qp(qp);
  ASSERT_TRUE(sol.optimal());
  EXPECT_NEAR(sol.x(0), 1.0, 1e-7);
  EXPECT_NEAR(sol.x(1), 2.0, 1e-7);
  EXPECT_NEAR(sol.objective, -5.0, 1e-7);
  EXPECT_NEAR(sol.ineq_multipliers(0), 1.0, 1e-6);
  EXPECT_NEAR(sol.upper_multipliers(1), 1.0, 1e-6);
}

TEST(Qp, DetectsInfeasibility) {
  QuadraticProgram qp(1);
  qp.hessian(0, 0) = 1.0;
  qp.lower << 2.0;
  qp.add_inequality(Eigen::VectorXd::Ones(1), 1.0);
  EXPECT_FALSE(solve_qp(qp).optimal());
}

TEST(Qp, MultipliersAreSensitivities) {
  QuadraticProgram qp(2);
  qp.hessian << 2, 0.3, 0.3, 1;
  qp.linear << -3, -1;
  qp.add_inequality(Eigen::Vector2d(1, 2), 1.0);
  qp.add_equality(Eigen::Vector2d(1, -1), 0.2);
  const auto base = solve_qp(qp);
  ASSERT_TRUE(base.optimal());
  ASSERT_GT(base.ineq_multipliers(0), 1e-3);
  const double h = 1e-5;
  auto shifted = qp;
  shifted.ineq_rhs(0) += h;
  auto down = qp;
  down.ineq_rhs(0) -= h;
  const double dvdh = (solve_qp(shifted).objective - solve_qp(down).objective) / (2 * h);
  EXPECT_NEAR(dvdh, -base.ineq_multipliers(0), 1e-5);
  shifted = qp;
  shifted.eq_rhs(0) += h;
  down = qp;
  down.eq_rhs(0) -= h;
  const double dvde = (solve_qp(shifted).objective - solve_qp(down).objective) / (2 * h);
  EXPECT_NEAR(dvde, -base.eq_multipliers(0), 1e-5);
}

TEST(Qp, RandomStrictlyConvexProblemsSatisfyKkt) {
  std::srand(4);
  for (int trial = 0; trial < 30; ++trial) {
    const int n = 5;
    Eigen::MatrixXd m = Eigen::MatrixXd::Random(n, n);
    QuadraticProgram qp(n);
    qp.hessian = m * m.transpose() + 0.1 * Eigen::MatrixXd::Identity(n, n);
    qp.linear = Eigen::VectorXd::Random(n) * 3;
    qp.lower.setConstant(-1.0);
    qp.upper.setConstant(1.0);
    for (int r = 0; r < 3; ++r) qp.add_inequality(Eigen::VectorXd::Random(n), 0.5);
    qp.add_equality(Eigen::VectorXd::Ones(n), 0.3);
    const auto s = solve_qp(qp);
    ASSERT_TRUE(s.optimal()) << trial;
    const Eigen::VectorXd grad = qp.hessian * s.x + qp.linear + qp.eq_matrix.transpose() * s.eq_multipliers +
                                 qp.ineq_matrix.transpose() * s.ineq_multipliers + s.upper_multipliers -
                                 s.lower_multipliers;
    EXPECT_LT(grad.cwiseAbs().maxCoeff(), 1e-7);
    EXPECT_LE((qp.ineq_matrix * s.x - qp.ineq_rhs).maxCoeff(), 1e-8);
    EXPECT_GE(s.ineq_multipliers.minCoeff(), -1e-10);
  }
}
