#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "mgdecomp/detail/parallel.hpp"
#include "mgdecomp/network.hpp"
#include "mgdecomp/qp.hpp"

namespace mgdecomp {

/// Stage cost of one edge: a q^2 + b q on [lower, upper].
struct EdgeCost {
  double quadratic = 0.0;
  double linear = 0.0;
  double lower = -std::numeric_limits<double>::infinity();
  double upper = std::numeric_limits<double>::infinity();

  bool bounded() const { return std::isfinite(lower) && std::isfinite(upper); }
  bool has_bounds() const { return std::isfinite(lower) || std::isfinite(upper); }

  double operator()(double q) const { return quadratic * q * q + linear * q; }

  void validate() const {
    if (!(quadratic >= 0.0)) throw ModelError("edge quadratic coefficient must be nonnegative");
    if (!(lower <= upper)) throw ModelError("edge flow bounds need lower <= upper");
    if (quadratic == 0.0 && !bounded()) throw ModelError("a linear edge cost needs finite flow bounds");
  }
};

/// Edge costs indexed [stage][edge].
using EdgeCostTable = std::vector<std::vector<EdgeCost>>;

struct EdgePriceSolution {
  EdgeFlows flows;
  Vector stage_values;
  double value = 0.0;
};

namespace detail {

inline void check_edge_table(const EdgeCostTable& costs, int horizon, int num_edges) {
  if (static_cast<int>(costs.size()) != horizon) throw ModelError("edge cost horizon mismatch");
  for (const auto& row : costs)
    if (static_cast<int>(row.size()) != num_edges) throw ModelError("edge cost width mismatch");
}

}  // namespace detail

/// Minimizer of a q^2 + k q on the edge's box, k the effective linear term.
inline double edge_price_argmin(const EdgeCost& c, double k, int edge, int stage) {
  const double slope = c.linear + k;
  if (c.quadratic > 0.0) return std::clamp(-slope / (2.0 * c.quadratic), c.lower, c.upper);
  double q = slope > 0.0 ? c.lower : (slope < 0.0 ? c.upper : std::clamp(0.0, c.lower, c.upper));
  if (!std::isfinite(q))
    throw UnboundedError("edge price subproblem unbounded at edge " + std::to_string(edge + 1) + ", stage " +
                         std::to_string(stage));
  return q;
}

/// Separable edge problem under node prices p: per edge and stage, minimize
/// l(q) + (A'p_t)_e q.
inline EdgePriceSolution solve_edge_price(const EdgeCostTable& costs, const IncidenceMatrix& a, const PriceProcess& p) {
  const int horizon = p.horizon(), ne = a.num_edges();
  detail::check_edge_table(costs, horizon, ne);
  const EdgePrices mu = dual_edge_prices(a, p);
  EdgePriceSolution s{EdgeFlows(horizon, ne), Vector::Zero(horizon), 0.0};
  for (int t = 0; t < horizon; ++t) {
    for (int e = 0; e < ne; ++e) {
      const EdgeCost& c = costs[t][e];
      const double q = edge_price_argmin(c, mu(t, e), e, t);
      s.flows(t, e) = q;
      s.stage_values(t) += c(q) + mu(t, e) * q;
    }
    s.value += s.stage_values(t);
  }
  return s;
}

struct EdgeResourceSolution {
  EdgeFlows flows;
  Vector stage_values;           // +inf where the stage is infeasible
  ResourceProcess multipliers;   // xi, gradient of each stage value in r_t
  double value = 0.0;
  bool feasible = true;
  std::string diagnostic;
};

namespace detail {

// Incidence rows with the last node of each component dropped, so the
// equality system has full row rank.
inline std::vector<int> independent_rows(const GraphTopology& topology) {
  std::vector<int> rows;
  for (const auto& nodes : topology.components())
    for (std::size_t k = 0; k + 1 < nodes.size(); ++k) rows.push_back(nodes[k]);
  std::sort(rows.begin(), rows.end());
  return rows;
}

}  // namespace detail

/// Per stage: minimize sum_e l_e(q_e) subject to A q_t = -r_t and the flow
/// bounds. Multipliers are projected per component onto the zero-sum
/// subspace, the tangent space of admissible resource perturbations.
inline EdgeResourceSolution solve_edge_resource(const EdgeCostTable& costs, const GraphTopology& topology,
                                                const ResourceProcess& r, double tol = 1e-9) {
  const int horizon = r.horizon(), ne = topology.num_edges(), nv = topology.num_nodes();
  if (r.width() != nv) throw ModelError("resource width does not match topology");
  detail::check_edge_table(costs, horizon, ne);
  const IncidenceMatrix a = build_incidence(topology);
  const std::vector<int> rows = detail::independent_rows(topology);
  const int m = static_cast<int>(rows.size());
  Matrix e(m, ne);
  for (int k = 0; k < m; ++k) e.row(k) = a.entries.row(rows[k]);

  EdgeResourceSolution s{EdgeFlows(horizon, ne), Vector::Zero(horizon), ResourceProcess(horizon, nv), 0.0, true, {}};
  std::vector<std::string> notes(horizon);
  detail::parallel_for(static_cast<std::size_t>(horizon), [&](std::size_t ts) {
    const int t = static_cast<int>(ts);
    ResourceProcess rt(1, nv);
    rt.stage(0) = r.stage(t);
    if (!in_image(rt, topology, tol)) {
      s.stage_values(t) = kInfinity;
      notes[t] = "stage " + std::to_string(t) + ": resource not in the image of the incidence map";
      return;
    }
    Vector rhs(m);
    for (int k = 0; k < m; ++k) rhs(k) = -r(t, rows[k]);
    Vector q = Vector::Zero(ne), y = Vector::Zero(m);
    bool closed_form = true;
    for (const auto& c : costs[t])
      if (!(c.quadratic > 0.0) || c.has_bounds()) closed_form = false;
    if (ne == 0) {
      // nothing to optimize; in_image already forced r_t = 0
    } else if (closed_form) {
      Matrix kkt = Matrix::Zero(ne + m, ne + m);
      Vector b(ne + m);
      for (int j = 0; j < ne; ++j) {
        kkt(j, j) = 2.0 * costs[t][j].quadratic;
        b(j) = -costs[t][j].linear;
      }
      kkt.topRightCorner(ne, m) = e.transpose();
      kkt.bottomLeftCorner(m, ne) = e;
      b.tail(m) = rhs;
      const Vector sol = kkt.partialPivLu().solve(b);
      q = sol.head(ne);
      y = sol.tail(m);
    } else {
      QuadraticProgram qp(ne);
      for (int j = 0; j < ne; ++j) {
        qp.hessian(j, j) = 2.0 * costs[t][j].quadratic;
        qp.linear(j) = costs[t][j].linear;
        qp.lower(j) = costs[t][j].lower;
        qp.upper(j) = costs[t][j].upper;
      }
      qp.eq_matrix = e;
      qp.eq_rhs = rhs;
      const QpSolution sol = solve_qp(qp);
      if (!sol.optimal()) {
        s.stage_values(t) = kInfinity;
        notes[t] = "stage " + std::to_string(t) + ": flow bounds cannot carry the resource";
        return;
      }
      q = sol.x.cwiseMax(qp.lower).cwiseMin(qp.upper);
      y = sol.eq_multipliers;
    }
    double v = 0.0;
    for (int j = 0; j < ne; ++j) v += costs[t][j](q(j));
    s.flows.stage(t) = q.transpose();
    s.stage_values(t) = v;
    // dV/dr on kept rows equals y under L = f + y'(E q + r).
    ResourceProcess xi(1, nv);
    for (int k = 0; k < m; ++k) xi(0, rows[k]) = y(k);
    s.multipliers.stage(t) = project_onto_image(xi, topology).stage(0);
  });
  for (int t = 0; t < horizon; ++t) {
    if (!std::isfinite(s.stage_values(t))) {
      s.feasible = false;
      if (s.diagnostic.empty()) s.diagnostic = notes[t];
    }
    s.value += s.stage_values(t);
  }
  return s;
}

}  // namespace mgdecomp
