#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "mgdecomp/coordination.hpp"
#include "mgdecomp/detail/parallel.hpp"
#include "mgdecomp/detail/random.hpp"
#include "mgdecomp/nodal_dp.hpp"
#include "mgdecomp/qp.hpp"
#include "mgdecomp/sddp.hpp"

// Online policies from value-function stacks, and their Monte Carlo
// evaluation on the original noise law.

namespace mgdecomp {

enum class StackKind { sddp, dadp, padp };

inline std::string to_string(StackKind k) {
  switch (k) {
    case StackKind::sddp: return "sddp";
    case StackKind::dadp: return "dadp";
    case StackKind::padp: return "padp";
  }
  return "?";
}

/// Global value functions: a cut pool per stage (sddp) or a sum of nodal
/// tables plus a per-stage edge constant (dadp, padp).
struct GlobalValueStack {
  StackKind kind = StackKind::sddp;
  std::vector<CutPool> pools;               // sddp: pools[t] for V_t, t = 1..T-1
  std::vector<ValueStack> node_values;      // dadp/padp: [node][t], t = 0..T
  Vector edge_constants;                    // dadp/padp: edge term of stage t
  std::vector<ControlGrid> controls;        // dadp/padp: enumeration grids
  int injection_points = 41;

  static GlobalValueStack from_sddp(const SddpResult& run) {
    GlobalValueStack s;
    s.kind = StackKind::sddp;
    s.pools = run.pools;
    return s;
  }

  static GlobalValueStack from_coordination(StackKind kind, const CoordinationResult& run,
                                            std::vector<ControlGrid> controls) {
    if (kind == StackKind::sddp) throw ModelError("coordination stacks are dadp or padp");
    if (run.node_values.empty()) throw ModelError("coordination run holds no value functions");
    GlobalValueStack s;
    s.kind = kind;
    s.node_values = run.node_values;
    s.edge_constants = run.edge_stage_values;
    s.controls = std::move(controls);
    return s;
  }

  const CutPool* next_pool(int t) const {
    return t + 1 < static_cast<int>(pools.size()) ? &pools[t + 1] : nullptr;
  }
};

struct PolicyDecision {
  std::vector<NodeControl> controls;
  Vector node_flows;  // f
  Vector edge_flows;  // q
  Vector next_state;
  double stage_cost = 0.0;
};

namespace detail {

struct InjectionCandidate {
  double battery, heating;
  double lo, hi;    // feasible injections for this control
  double future;    // next value, +inf if unknown
  NodeState next;
};

// Controls of node i whose next state is admissible, with their injection
// intervals f = u_ne - d_el/dt - u_b - u_t, u_ne in [0, import_max].
inline std::vector<InjectionCandidate> injection_candidates(const NodeModel& node, const NodeState& x,
                                                            const NodeNoise& w, const ControlGrid& controls,
                                                            const TabularValueFunction& next_vf) {
  std::vector<InjectionCandidate> out;
  const double demand = w.electricity / node.dt;
  for (double ub : controls.battery_or_zero())
    for (double ut : controls.heating) {
      NodeState nx = node.step(x, NodeControl{ub, ut, 0.0}, w);
      if (!node.within_bounds(nx, 1e-9)) continue;
      nx = nx.cwiseMax(node.lower_bounds()).cwiseMin(node.upper_bounds());
      const double base = -demand - ub - ut;
      out.push_back({ub, ut, base, node.import_max + base, evaluate(next_vf, nx), nx});
    }
  return out;
}

// Lower convex hull of (f, value) points sorted by f.
inline std::vector<std::pair<double, double>> lower_hull(std::vector<std::pair<double, double>> pts) {
  std::sort(pts.begin(), pts.end());
  std::vector<std::pair<double, double>> hull;
  for (const auto& p : pts) {
    if (!hull.empty() && hull.back().first == p.first) continue;  // sorted: keep the lower value
    while (hull.size() >= 2) {
      const auto& a = hull[hull.size() - 2];
      const auto& b = hull.back();
      const double cross = (b.first - a.first) * (p.second - a.second) - (b.second - a.second) * (p.first - a.first);
      if (cross <= 0.0)
        hull.pop_back();
      else
        break;
    }
    hull.push_back(p);
  }
  return hull;
}

// Nodal one-step value of injection, sampled and convexified.
struct InjectionEnvelope {
  std::vector<std::pair<double, double>> hull;
  double lo() const { return hull.front().first; }
  double hi() const { return hull.back().first; }
};

inline InjectionEnvelope injection_envelope(const NodeModel& node, int t, const std::vector<InjectionCandidate>& cands,
                                            bool use_future, int points) {
  InjectionEnvelope env;
  if (cands.empty()) return env;
  double lo = kInfinity, hi = -kInfinity;
  for (const auto& c : cands) lo = std::min(lo, c.lo), hi = std::max(hi, c.hi);
  const double price = node.import_price[t] * node.dt;
  std::vector<std::pair<double, double>> pts;
  for (int k = 0; k < points; ++k) {
    const double f = points == 1 ? lo : lo + (hi - lo) * k / (points - 1);
    double best = kInfinity;
    for (const auto& c : cands) {
      if (f < c.lo - 1e-12 || f > c.hi + 1e-12) continue;
      const double v = price * std::clamp(f - c.lo, 0.0, node.import_max) + (use_future ? c.future : 0.0);
      best = std::min(best, v);
    }
    if (std::isfinite(best)) pts.emplace_back(f, best);
  }
  env.hull = lower_hull(std::move(pts));
  return env;
}

// Best grid control delivering exactly injection f.
inline const InjectionCandidate* pick_control(const NodeModel& node, int t, const std::vector<InjectionCandidate>& cands,
                                              double f, bool use_future) {
  const double price = node.import_price[t] * node.dt;
  const InjectionCandidate* best = nullptr;
  double best_v = kInfinity;
  for (const auto& c : cands) {
    if (f < c.lo - 1e-9 || f > c.hi + 1e-9) continue;
    const double v = price * (f - c.lo) + (use_future ? c.future : 0.0);
    if (best == nullptr || v < best_v) best = &c, best_v = v;
  }
  return best;
}

}  // namespace detail

/// One-step lookahead decision at stage t, state x (stacked), noise w.
inline PolicyDecision one_step_policy(const Instance& inst, int t, const Vector& x, const std::vector<NodeNoise>& w,
                                      const GlobalValueStack& stack, const QpOptions& qp_opts = {}) {
  const int n = inst.num_nodes(), ne = inst.num_edges();
  PolicyDecision d;
  if (stack.kind == StackKind::sddp) {
    const auto sol = stage_solve(inst, t, x, w, stack.next_pool(t), qp_opts);
    d.controls = sol.controls;
    d.node_flows = sol.node_flows;
    d.edge_flows = sol.edge_flows;
    d.next_state = sol.next_state;
    d.stage_cost = sol.stage_cost;
    return d;
  }

  const IncidenceMatrix a = inst.incidence();
  std::vector<std::vector<detail::InjectionCandidate>> cands(n);
  std::vector<detail::InjectionEnvelope> env(n);
  std::vector<bool> use_future(n, true);
  for (int i = 0; i < n; ++i) {
    const auto& node = inst.nodes[i];
    const NodeState xi = x.segment(inst.state_offset(i), node.state_dim());
    cands[i] = detail::injection_candidates(node, xi, w[i], stack.controls[i], stack.node_values[i][t + 1]);
    env[i] = detail::injection_envelope(node, t, cands[i], true, stack.injection_points);
    if (env[i].hull.empty()) {
      // every continuation is outside the table's finite region: act myopically
      use_future[i] = false;
      env[i] = detail::injection_envelope(node, t, cands[i], false, stack.injection_points);
    }
    if (env[i].hull.empty())
      throw InfeasibleError("stage " + std::to_string(t) + ": node " + std::to_string(i + 1) +
                            " has no admissible control at its state");
  }

  // min sum_i tau_i + edge costs, tau_i above the envelope of f_i = -(A q)_i
  d.edge_flows = Vector::Zero(ne);
  if (ne > 0) {
    QuadraticProgram qp(ne + n);
    for (int e = 0; e < ne; ++e) {
      const EdgeCost& ec = inst.edge_costs[t][e];
      qp.hessian(e, e) = 2.0 * ec.quadratic;
      qp.linear(e) = ec.linear;
      qp.lower(e) = ec.lower;
      qp.upper(e) = ec.upper;
    }
    for (int i = 0; i < n; ++i) {
      qp.linear(ne + i) = 1.0;
      const Vector arow = a.entries.row(i).transpose();
      Vector row = Vector::Zero(ne + n);
      row.head(ne) = -arow;
      qp.add_inequality(row, env[i].hi());
      qp.add_inequality(-row, -env[i].lo());
      const auto& h = env[i].hull;
      if (h.size() == 1) {
        Vector r = Vector::Zero(ne + n);
        r(ne + i) = -1.0;
        qp.add_inequality(r, -h[0].second);
      }
      for (std::size_t k = 0; k + 1 < h.size(); ++k) {
        const double slope = (h[k + 1].second - h[k].second) / (h[k + 1].first - h[k].first);
        const double icpt = h[k].second - slope * h[k].first;
        Vector r = Vector::Zero(ne + n);
        r.head(ne) = -slope * arow;
        r(ne + i) = -1.0;
        qp.add_inequality(r, -icpt);
      }
    }
    const QpSolution sol = solve_qp(qp, qp_opts);
    if (!sol.optimal()) throw InfeasibleError("stage " + std::to_string(t) + ": no admissible network flow");
    for (int e = 0; e < ne; ++e)
      d.edge_flows(e) = std::clamp(sol.x(e), inst.edge_costs[t][e].lower, inst.edge_costs[t][e].upper);
  }
  d.node_flows = -(a.entries * d.edge_flows);

  d.controls.resize(n);
  d.next_state = Vector(x.size());
  for (int i = 0; i < n; ++i) {
    const auto& node = inst.nodes[i];
    const double f = d.node_flows(i);
    const auto* c = detail::pick_control(node, t, cands[i], f, use_future[i]);
    if (c == nullptr)
      throw InfeasibleError("stage " + std::to_string(t) + ": node " + std::to_string(i + 1) +
                            " cannot deliver injection " + std::to_string(f));
    NodeControl u{c->battery, c->heating, 0.0};
    u.grid_import = std::clamp(f + w[i].electricity / node.dt + u.battery + u.heating, 0.0, node.import_max);
    d.controls[i] = u;
    d.next_state.segment(inst.state_offset(i), node.state_dim()) = c->next;
    d.stage_cost += node.cost(t, u);
  }
  for (int e = 0; e < ne; ++e) d.stage_cost += inst.edge_costs[t][e](d.edge_flows(e));
  return d;
}

struct SimulationReport {
  double mean = kInfinity;
  double half_width = kInfinity;
  std::vector<double> costs;  // NaN for flagged scenarios
  int flagged = 0;
  double max_kirchhoff_residual = 0.0;
  double max_balance_residual = 0.0;
};

/// Rolls the one-step policy along n scenarios of the original noise law.
/// Scenario s uses its own seed stream, so reports are reproducible.
inline SimulationReport simulate_policy(const Instance& inst, const GlobalValueStack& stack, int scenarios,
                                        std::uint64_t seed, const QpOptions& qp = {}) {
  if (scenarios < 1) throw ModelError("simulation needs at least one scenario");
  const IncidenceMatrix a = inst.incidence();
  SimulationReport rep;
  rep.costs.assign(scenarios, 0.0);
  std::vector<double> kirchhoff(scenarios, 0.0), balance(scenarios, 0.0);
  detail::parallel_for(static_cast<std::size_t>(scenarios), [&](std::size_t s) {
    const Scenario sc = sample_scenario(inst.noise, detail::stream_seed(seed, s, 0x51));
    Vector x = inst.global_initial_state();
    double cost = 0.0;
    try {
      for (int t = 0; t < inst.horizon; ++t) {
        const auto d = one_step_policy(inst, t, x, sc.noise[t], stack, qp);
        kirchhoff[s] = std::max(kirchhoff[s], (a.entries * d.edge_flows + d.node_flows).cwiseAbs().maxCoeff());
        for (int i = 0; i < inst.num_nodes(); ++i)
          balance[s] = std::max(balance[s], std::abs(inst.nodes[i].balance(d.controls[i], sc.noise[t][i]) - d.node_flows(i)));
        cost += d.stage_cost;
        x = d.next_state;
      }
      rep.costs[s] = cost + global_terminal_cost(inst, x);
    } catch (const InfeasibleError&) {
      rep.costs[s] = std::nan("");
    }
  });
  std::vector<double> ok;
  for (int s = 0; s < scenarios; ++s) {
    if (std::isnan(rep.costs[s]))
      ++rep.flagged;
    else
      ok.push_back(rep.costs[s]);
    rep.max_kirchhoff_residual = std::max(rep.max_kirchhoff_residual, kirchhoff[s]);
    rep.max_balance_residual = std::max(rep.max_balance_residual, balance[s]);
  }
  if (!ok.empty()) summarize_costs(ok, rep.mean, rep.half_width);
  return rep;
}

/// Per-scenario costs as CSV, then a summary line "mean,half_width".
inline void write_simulation_csv(std::ostream& out, const SimulationReport& rep) {
  const auto old = out.precision(17);
  out << "scenario,cost\n";
  for (std::size_t s = 0; s < rep.costs.size(); ++s) {
    out << s << ',';
    if (std::isnan(rep.costs[s]))
      out << "flagged";
    else
      out << rep.costs[s];
    out << '\n';
  }
  out.precision(old);
}

}  // namespace mgdecomp
