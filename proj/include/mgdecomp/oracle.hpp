#pragma once

#include <cmath>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "mgdecomp/edge_subproblems.hpp"
#include "mgdecomp/instance.hpp"
#include "mgdecomp/qp.hpp"

// Brute-force backward induction over the full scenario tree on exact
// reachable states. Test and verification use only; no interpolation.

namespace mgdecomp {

/// Which problem the oracle solves. global: the coupled problem. price: the
/// price-relaxed problem for a given p (nodes and edges decouple). resource:
/// each node pinned to f = r, plus the edge resource value.
enum class OracleMode { global, price, resource };

struct OracleOptions {
  OracleMode mode = OracleMode::global;
  Matrix coordination;  // horizon x num_nodes, used by price and resource modes
  double max_evaluations = 1e7;
  QpOptions qp;
};

struct OracleResult {
  double value = kInfinity;
  double evaluations = 0.0;
  int tree_states = 0;
};

namespace detail {

class ExhaustiveSolver {
 public:
  ExhaustiveSolver(const Instance& inst, const std::vector<ControlGrid>& controls, const OracleOptions& opts)
      : inst_(inst), controls_(controls), opts_(opts), a_(inst.incidence()) {
    if (static_cast<int>(controls.size()) != inst.num_nodes()) throw ModelError("one control grid per node required");
    if (opts.mode != OracleMode::global &&
        (opts.coordination.rows() != inst.horizon || opts.coordination.cols() != inst.num_nodes()))
      throw ModelError("coordination process must be horizon x num_nodes");
    // joint control list per node: (battery, heating)
    for (int i = 0; i < inst.num_nodes(); ++i) {
      std::vector<std::pair<double, double>> list;
      for (double ub : controls[i].battery_or_zero())
        for (double ut : controls[i].heating) list.emplace_back(ub, ut);
      node_controls_.push_back(std::move(list));
    }
    estimate_size();
  }

  OracleResult solve() {
    OracleResult r;
    std::vector<NodeState> x0 = inst_.initial_state;
    r.value = value(0, x0);
    if (opts_.mode == OracleMode::resource && std::isfinite(r.value)) r.value += edge_resource_value();
    r.evaluations = evaluations_;
    r.tree_states = static_cast<int>(memo_.size());
    return r;
  }

 private:
  using Key = std::pair<int, std::vector<double>>;

  void estimate_size() {
    double joint_controls = 1.0, estimate = 0.0, reach = 1.0;
    for (const auto& list : node_controls_) joint_controls *= static_cast<double>(list.size());
    for (int t = 0; t < inst_.horizon; ++t) {
      const double atoms = product_support_size(inst_.noise, t);
      estimate += reach * atoms * joint_controls;
      reach *= atoms;
    }
    if (estimate > opts_.max_evaluations)
      throw ModelError("oracle size guard: about " + std::to_string(static_cast<long long>(estimate)) +
                       " evaluations exceed the limit of " +
                       std::to_string(static_cast<long long>(opts_.max_evaluations)));
  }

  double value(int t, const std::vector<NodeState>& x) {
    if (t == inst_.horizon) {
      double v = 0.0;
      for (int i = 0; i < inst_.num_nodes(); ++i) v += inst_.nodes[i].terminal(x[i]);
      return v;
    }
    Key key{t, {}};
    for (const auto& xi : x)
      for (int k = 0; k < xi.size(); ++k) key.second.push_back(xi(k));
    if (auto it = memo_.find(key); it != memo_.end()) return it->second;

    const FiniteDistribution joint = product_distribution(inst_.noise, t);
    double expected = 0.0;
    for (int a = 0; a < joint.size() && std::isfinite(expected); ++a) {
      const auto noise = split_global_noise(joint.atom(a));
      const double best = best_response(t, x, noise);
      expected = std::isinf(best) ? kInfinity : expected + joint.probability(a) * best;
    }
    memo_.emplace(std::move(key), expected);
    return expected;
  }

  // Minimum over all joint grid controls for one realized stage noise.
  double best_response(int t, const std::vector<NodeState>& x, const std::vector<NodeNoise>& w) {
    const int n = inst_.num_nodes();
    std::vector<int> choice(n, 0);
    double best = kInfinity;
    while (true) {
      evaluations_ += 1.0;
      std::vector<NodeState> next(n);
      Vector s(n);
      bool ok = true;
      for (int i = 0; i < n && ok; ++i) {
        const auto [ub, ut] = node_controls_[i][choice[i]];
        const NodeControl u{ub, ut, 0.0};
        next[i] = inst_.nodes[i].step(x[i], u, w[i]);
        ok = inst_.nodes[i].within_bounds(next[i], 1e-9);
        next[i] = next[i].cwiseMax(inst_.nodes[i].lower_bounds()).cwiseMin(inst_.nodes[i].upper_bounds());
        s(i) = w[i].electricity / inst_.dt + ub + ut;
      }
      if (ok) {
        const double stage = stage_value(t, s);
        if (std::isfinite(stage)) {
          const double future = value(t + 1, next);
          best = std::min(best, stage + future);
        }
      }
      int i = 0;
      while (i < n && ++choice[i] == static_cast<int>(node_controls_[i].size())) choice[i++] = 0;
      if (i == n) break;
    }
    return best;
  }

  // Import and flow cost given the required supply s_i = d_el/dt + u_b + u_t.
  double stage_value(int t, const Vector& s) const {
    const int n = inst_.num_nodes(), ne = inst_.num_edges();
    Vector c(n);
    for (int i = 0; i < n; ++i) c(i) = inst_.nodes[i].import_price[t] * inst_.dt;
    if (opts_.mode == OracleMode::resource) {
      double v = 0.0;
      for (int i = 0; i < n; ++i) {
        const double u = opts_.coordination(t, i) + s(i);
        if (u < -1e-9 || u > inst_.nodes[i].import_max + 1e-9) return kInfinity;
        v += c(i) * std::clamp(u, 0.0, inst_.nodes[i].import_max);
      }
      return v;
    }
    if (opts_.mode == OracleMode::price) {
      double v = 0.0;
      for (int i = 0; i < n; ++i) {
        const double p = opts_.coordination(t, i);
        const double k = c(i) + p;
        v += (k < 0.0 ? k * inst_.nodes[i].import_max : 0.0) - p * s(i);
      }
      for (int e = 0; e < ne; ++e) {
        const auto& edge = inst_.topology.edges()[e];
        const double mu = opts_.coordination(t, edge.tail) - opts_.coordination(t, edge.head);
        const EdgeCost& ec = inst_.edge_costs[t][e];
        const double q = edge_price_argmin(ec, mu, e, t);
        v += ec(q) + mu * q;
      }
      return v;
    }
    // global: u_ne = s - A q within [0, import_max]
    if (ne == 0) {
      double v = 0.0;
      for (int i = 0; i < n; ++i) {
        if (s(i) < -1e-9 || s(i) > inst_.nodes[i].import_max + 1e-9) return kInfinity;
        v += c(i) * std::clamp(s(i), 0.0, inst_.nodes[i].import_max);
      }
      return v;
    }
    QuadraticProgram qp(ne);
    for (int e = 0; e < ne; ++e) {
      const EdgeCost& ec = inst_.edge_costs[t][e];
      qp.hessian(e, e) = 2.0 * ec.quadratic;
      qp.linear(e) = ec.linear;
      qp.lower(e) = ec.lower;
      qp.upper(e) = ec.upper;
    }
    qp.linear -= a_.entries.transpose() * c;
    for (int i = 0; i < n; ++i) {
      qp.add_inequality(a_.entries.row(i).transpose(), s(i));
      qp.add_inequality(-a_.entries.row(i).transpose(), inst_.nodes[i].import_max - s(i));
    }
    const QpSolution sol = solve_qp(qp, opts_.qp);
    if (!sol.optimal()) return kInfinity;
    return sol.objective + c.dot(s);
  }

  double edge_resource_value() const {
    const ResourceProcess r(opts_.coordination);
    return solve_edge_resource(inst_.edge_costs, inst_.topology, r).value;
  }

  const Instance& inst_;
  const std::vector<ControlGrid>& controls_;
  OracleOptions opts_;
  IncidenceMatrix a_;
  std::vector<std::vector<std::pair<double, double>>> node_controls_;
  std::map<Key, double> memo_;
  double evaluations_ = 0.0;
};

}  // namespace detail

/// Exact hazard-decision optimum over the full scenario tree, with controls
/// restricted to the given per-node grids. Refuses instances whose
/// enumeration would exceed opts.max_evaluations.
inline OracleResult exhaustive_solve(const Instance& inst, const std::vector<ControlGrid>& controls,
                                     const OracleOptions& opts = {}) {
  inst.validate();
  detail::ExhaustiveSolver solver(inst, controls, opts);
  return solver.solve();
}

}  // namespace mgdecomp
