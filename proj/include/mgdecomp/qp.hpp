#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "mgdecomp/errors.hpp"

namespace mgdecomp {

/// Dense convex quadratic program
///
///   minimize    1/2 x'Qx + c'x
///   subject to  E x  = e
///               G x <= h
///               lower <= x <= upper   (entries may be infinite)
///
/// Q must be positive semidefinite.
struct QuadraticProgram {
  Eigen::MatrixXd hessian;
  Eigen::VectorXd linear;
  Eigen::MatrixXd eq_matrix;
  Eigen::VectorXd eq_rhs;
  Eigen::MatrixXd ineq_matrix;
  Eigen::VectorXd ineq_rhs;
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;

  explicit QuadraticProgram(int n = 0)
      : hessian(Eigen::MatrixXd::Zero(n, n)),
        linear(Eigen::VectorXd::Zero(n)),
        eq_matrix(0, n),
        eq_rhs(0),
        ineq_matrix(0, n),
        ineq_rhs(0),
        lower(Eigen::VectorXd::Constant(n, -std::numeric_limits<double>::infinity())),
        upper(Eigen::VectorXd::Constant(n, std::numeric_limits<double>::infinity())) {}

  int num_variables() const { return static_cast<int>(linear.size()); }

  /// Appends the row a'x <= b; returns its index.
  int add_inequality(const Eigen::VectorXd& a, double b) {
    const auto m = ineq_matrix.rows();
    ineq_matrix.conservativeResize(m + 1, Eigen::NoChange);
    ineq_matrix.row(m) = a.transpose();
    ineq_rhs.conservativeResize(m + 1);
    ineq_rhs(m) = b;
    return static_cast<int>(m);
  }

  int add_equality(const Eigen::VectorXd& a, double b) {
    const auto m = eq_matrix.rows();
    eq_matrix.conservativeResize(m + 1, Eigen::NoChange);
    eq_matrix.row(m) = a.transpose();
    eq_rhs.conservativeResize(m + 1);
    eq_rhs(m) = b;
    return static_cast<int>(m);
  }
};

enum class QpStatus { optimal, infeasible, iteration_limit };

/// Primal solution and multipliers for L = f(x) + y'(Ex - e) + z'(Gx - h)
/// + zu'(x - upper) + zl'(lower - x); hence dV/de = -y and dV/dh = -z.
struct QpSolution {
  QpStatus status = QpStatus::iteration_limit;
  Eigen::VectorXd x;
  double objective = std::numeric_limits<double>::infinity();
  Eigen::VectorXd eq_multipliers;
  Eigen::VectorXd ineq_multipliers;
  Eigen::VectorXd lower_multipliers;
  Eigen::VectorXd upper_multipliers;
  int iterations = 0;

  bool optimal() const { return status == QpStatus::optimal; }
};

struct QpOptions {
  double tolerance = 1e-10;
  int max_iterations = 200;
  double regularization = 1e-12;
  // Degenerate programs can stall just above `tolerance`; an iterate meeting
  // this looser level is returned as optimal once progress stops.
  double acceptable_tolerance = 1e-8;
};

namespace detail {

// Inequalities in one stacked vector: [general rows, lower bounds, upper bounds].
class StackedInequalities {
 public:
  StackedInequalities(const QuadraticProgram& qp) : qp_(qp) {
    for (int j = 0; j < qp.num_variables(); ++j) {
      if (std::isfinite(qp.lower(j))) lower_idx_.push_back(j);
      if (std::isfinite(qp.upper(j))) upper_idx_.push_back(j);
    }
    mg_ = static_cast<int>(qp.ineq_matrix.rows());
    m_ = mg_ + static_cast<int>(lower_idx_.size() + upper_idx_.size());
  }

  int size() const { return m_; }

  Eigen::VectorXd rhs() const {
    Eigen::VectorXd h(m_);
    h.head(mg_) = qp_.ineq_rhs;
    int k = mg_;
    for (int j : lower_idx_) h(k++) = -qp_.lower(j);
    for (int j : upper_idx_) h(k++) = qp_.upper(j);
    return h;
  }

  Eigen::VectorXd apply(const Eigen::VectorXd& x) const {
    Eigen::VectorXd out(m_);
    if (mg_ > 0) out.head(mg_) = qp_.ineq_matrix * x;
    int k = mg_;
    for (int j : lower_idx_) out(k++) = -x(j);
    for (int j : upper_idx_) out(k++) = x(j);
    return out;
  }

  Eigen::VectorXd apply_transpose(const Eigen::VectorXd& v) const {
    Eigen::VectorXd out = Eigen::VectorXd::Zero(qp_.num_variables());
    if (mg_ > 0) out += qp_.ineq_matrix.transpose() * v.head(mg_);
    int k = mg_;
    for (int j : lower_idx_) out(j) -= v(k++);
    for (int j : upper_idx_) out(j) += v(k++);
    return out;
  }

  /// G' diag(w) G.
  Eigen::MatrixXd weighted_gram(const Eigen::VectorXd& w) const {
    const int n = qp_.num_variables();
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n, n);
    if (mg_ > 0) {
      const Eigen::MatrixXd wg = w.head(mg_).asDiagonal() * qp_.ineq_matrix;
      out.noalias() += qp_.ineq_matrix.transpose() * wg;
    }
    int k = mg_;
    for (int j : lower_idx_) out(j, j) += w(k++);
    for (int j : upper_idx_) out(j, j) += w(k++);
    return out;
  }

  void scatter(const Eigen::VectorXd& z, QpSolution& sol) const {
    const int n = qp_.num_variables();
    sol.ineq_multipliers = z.head(mg_);
    sol.lower_multipliers = Eigen::VectorXd::Zero(n);
    sol.upper_multipliers = Eigen::VectorXd::Zero(n);
    int k = mg_;
    for (int j : lower_idx_) sol.lower_multipliers(j) = z(k++);
    for (int j : upper_idx_) sol.upper_multipliers(j) = z(k++);
  }

 private:
  const QuadraticProgram& qp_;
  std::vector<int> lower_idx_, upper_idx_;
  int mg_ = 0;
  int m_ = 0;
};

inline double max_step(const Eigen::VectorXd& v, const Eigen::VectorXd& dv) {
  double alpha = 1.0;
  for (Eigen::Index i = 0; i < v.size(); ++i)
    if (dv(i) < 0.0) alpha = std::min(alpha, -v(i) / dv(i));
  return alpha;
}

}  // namespace detail

/// Mehrotra predictor-corrector interior point method on the dense KKT system.
inline QpSolution solve_qp(const QuadraticProgram& qp, const QpOptions& opts = {}) {
  const int n = qp.num_variables();
  const int p = static_cast<int>(qp.eq_matrix.rows());
  const detail::StackedInequalities ineq(qp);
  const int m = ineq.size();
  const Eigen::VectorXd h = ineq.rhs();
  const Eigen::MatrixXd& Q = qp.hessian;
  const Eigen::VectorXd& c = qp.linear;
  const Eigen::MatrixXd& E = qp.eq_matrix;
  const Eigen::VectorXd& e = qp.eq_rhs;

  QpSolution sol;
  if (n == 0) {
    const bool ok = (m == 0 || h.minCoeff() >= -opts.tolerance) && (p == 0 || e.cwiseAbs().maxCoeff() <= opts.tolerance);
    sol.status = ok ? QpStatus::optimal : QpStatus::infeasible;
    sol.x = Eigen::VectorXd(0);
    sol.objective = ok ? 0.0 : std::numeric_limits<double>::infinity();
    sol.eq_multipliers = Eigen::VectorXd::Zero(p);
    ineq.scatter(Eigen::VectorXd::Zero(m), sol);
    return sol;
  }

  double reg = opts.regularization;
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr;
  bool use_qr = false;
  Eigen::MatrixXd kkt(n + p, n + p);
  auto assemble = [&](const Eigen::VectorXd& w) {
    kkt.setZero();
    kkt.topLeftCorner(n, n) = Q + ineq.weighted_gram(w);
    kkt.topLeftCorner(n, n).diagonal().array() += reg;
    if (p > 0) {
      kkt.topRightCorner(n, p) = E.transpose();
      kkt.bottomLeftCorner(p, n) = E;
      kkt.bottomRightCorner(p, p).diagonal().setConstant(-reg);
    }
  };

  // Initial point: minimize 1/2 x'Qx + c'x + 1/2 |Gx - h|^2 subject to Ex = e.
  Eigen::VectorXd x(n), y = Eigen::VectorXd::Zero(p), s(m), z(m);
  {
    assemble(Eigen::VectorXd::Ones(m));
    Eigen::VectorXd rhs(n + p);
    rhs.head(n) = -c + ineq.apply_transpose(h);
    if (p > 0) rhs.tail(p) = e;
    const Eigen::VectorXd sol0 = kkt.partialPivLu().solve(rhs);
    x = sol0.head(n);
    if (p > 0) y = sol0.tail(p);
    if (m > 0) {
      s = h - ineq.apply(x);
      z = -s;
      const double ap = -s.minCoeff();
      if (ap >= -1e-8) s.array() += 1.0 + ap;
      const double ad = -z.minCoeff();
      if (ad >= -1e-8) z.array() += 1.0 + ad;
    }
  }

  const double scale_c = 1.0 + c.cwiseAbs().maxCoeff();
  const double scale_e = 1.0 + (p > 0 ? e.cwiseAbs().maxCoeff() : 0.0);
  const double scale_h = 1.0 + (m > 0 ? h.cwiseAbs().maxCoeff() : 0.0);

  struct Iterate {
    Eigen::VectorXd x, y, s, z;
  };
  std::optional<Iterate> fallback;
  int stalled = 0;
  for (sol.iterations = 0; sol.iterations < opts.max_iterations; ++sol.iterations) {
    const Eigen::VectorXd rd = Q * x + c + (p > 0 ? Eigen::VectorXd(E.transpose() * y) : Eigen::VectorXd::Zero(n)) +
                               (m > 0 ? ineq.apply_transpose(z) : Eigen::VectorXd::Zero(n));
    const Eigen::VectorXd rp = p > 0 ? Eigen::VectorXd(E * x - e) : Eigen::VectorXd(0);
    const Eigen::VectorXd ri = m > 0 ? Eigen::VectorXd(ineq.apply(x) + s - h) : Eigen::VectorXd(0);
    const double gap = m > 0 ? s.dot(z) : 0.0;
    const double mu = m > 0 ? gap / m : 0.0;
    const double obj = 0.5 * x.dot(Q * x) + c.dot(x);

    auto within = [&](double tol) {
      return rd.cwiseAbs().maxCoeff() <= tol * scale_c && (p == 0 || rp.cwiseAbs().maxCoeff() <= tol * scale_e) &&
             (m == 0 || ri.cwiseAbs().maxCoeff() <= tol * scale_h) && gap <= tol * (1.0 + std::abs(obj));
    };
    if (within(opts.tolerance)) {
      sol.status = QpStatus::optimal;
      break;
    }
    if (within(opts.acceptable_tolerance)) {
      fallback = {x, y, s, z};
      if (++stalled >= 5) break;
    }
    // Divergence of the iterates is the usual signature of an infeasible or
    // unbounded instance for this method.
    if (!x.allFinite() || x.cwiseAbs().maxCoeff() > 1e13 || (m > 0 && z.cwiseAbs().maxCoeff() > 1e13)) {
      sol.status = QpStatus::infeasible;
      break;
    }

    const Eigen::VectorXd w = m > 0 ? Eigen::VectorXd(z.cwiseQuotient(s)) : Eigen::VectorXd(0);
    reg = opts.regularization;
    use_qr = false;
    assemble(w);
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(kkt);

    auto newton = [&](const Eigen::VectorXd& rc, Eigen::VectorXd& dx, Eigen::VectorXd& dy, Eigen::VectorXd& ds,
                      Eigen::VectorXd& dz) {
      Eigen::VectorXd rhs(n + p);
      if (m > 0) {
        const Eigen::VectorXd t = w.cwiseProduct(ri) - rc.cwiseQuotient(s);
        rhs.head(n) = -rd - ineq.apply_transpose(t);
      } else {
        rhs.head(n) = -rd;
      }
      if (p > 0) rhs.tail(p) = -rp;
      const Eigen::VectorXd sol_step = use_qr ? Eigen::VectorXd(qr.solve(rhs)) : Eigen::VectorXd(lu.solve(rhs));
      dx = sol_step.head(n);
      dy = p > 0 ? Eigen::VectorXd(sol_step.tail(p)) : Eigen::VectorXd(0);
      if (m > 0) {
        dz = w.cwiseProduct(ineq.apply(dx) + ri) - rc.cwiseQuotient(s);
        ds = -ri - ineq.apply(dx);
      }
    };

    Eigen::VectorXd dx, dy, ds(m), dz(m);
    if (m == 0) {
      newton(Eigen::VectorXd(0), dx, dy, ds, dz);
      x += dx;
      if (p > 0) y += dy;
      continue;
    }
    // Predictor-corrector pair. A near-singular system close to the optimum
    // is regularized further; that changes the direction, not the fixed point.
    auto directions = [&] {
      const Eigen::VectorXd rc_aff = s.cwiseProduct(z);
      newton(rc_aff, dx, dy, ds, dz);
      const double a_aff = std::min(detail::max_step(s, ds), detail::max_step(z, dz));
      const double mu_aff = (s + a_aff * ds).dot(z + a_aff * dz) / m;
      const double sigma = std::pow(std::max(0.0, mu_aff / mu), 3);
      const Eigen::VectorXd rc = rc_aff + ds.cwiseProduct(dz) - Eigen::VectorXd::Constant(m, sigma * mu);
      newton(rc, dx, dy, ds, dz);
      return dx.allFinite() && dz.allFinite() && ds.allFinite();
    };
    bool ok = directions();
    if (!ok) {
      use_qr = true;
      qr.compute(kkt);
      ok = directions();
    }
    while (!ok && reg < 1e-4) {
      reg = std::max(1e3 * reg, 1e-10);
      assemble(w);
      qr.compute(kkt);
      ok = directions();
    }
    if (!ok) {
      sol.status = QpStatus::infeasible;
      break;
    }
    const double a_max = std::min(detail::max_step(s, ds), detail::max_step(z, dz));
    const double alpha = std::min(1.0, 0.99 * a_max);
    x += alpha * dx;
    if (p > 0) y += alpha * dy;
    s += alpha * ds;
    z += alpha * dz;
  }

  if (sol.status != QpStatus::optimal && fallback) {
    x = fallback->x, y = fallback->y, s = fallback->s, z = fallback->z;
    sol.status = QpStatus::optimal;
  }
  sol.x = x;
  sol.objective = sol.status == QpStatus::optimal ? 0.5 * x.dot(Q * x) + c.dot(x)
                                                  : std::numeric_limits<double>::infinity();
  sol.eq_multipliers = y;
  ineq.scatter(m > 0 ? z : Eigen::VectorXd(0), sol);
  return sol;
}

}  // namespace mgdecomp
