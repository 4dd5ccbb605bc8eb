#pragma once

#include <cmath>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "mgdecomp/detail/random.hpp"
#include "mgdecomp/edge_subproblems.hpp"
#include "mgdecomp/instance.hpp"
#include "mgdecomp/nodal_dp.hpp"
#include "mgdecomp/optimizer.hpp"

namespace mgdecomp {

struct CoordinationOptions {
  OptimizerOptions optimizer;
  GridOptions grid;
  int gradient_scenarios = 1000;  // M, common random numbers for E[f]
  std::uint64_t seed = 0;
  double fd_step = 1e-2;          // resource gradient step, flow units
};

inline CoordinationOptions dadp_defaults() { return {}; }

inline CoordinationOptions padp_defaults() {
  CoordinationOptions o;
  o.optimizer.rule = StepRule::gradient;
  o.optimizer.initial_step = 10.0;
  return o;
}

struct CoordinationResult {
  Matrix process;                       // p or r, horizon x num_nodes
  double bound = kInfinity;
  std::vector<IterationRecord> trace;   // value column holds the bound
  std::vector<ValueStack> node_values;  // at the best evaluated process
  Vector edge_stage_values;             // edge term per stage at the best process
  Matrix edge_multipliers;              // xi (resource runs only)
  Matrix node_gradients;                // mu (resource runs only)
  int iterations = 0;
  int evaluations = 0;
  std::string stop_reason;

  bool finite() const { return std::isfinite(bound); }
};

namespace detail {

inline Matrix unflatten(const Vector& v, int horizon, int width) {
  return StageSeries<tags::NodePrice>::from_flat(v, horizon, width).matrix();
}

inline Vector flatten(const Matrix& m) { return StageSeries<tags::NodePrice>(m).flat(); }

// Best-so-far bookkeeping over every evaluated process.
struct BestPoint {
  double value = kInfinity;  // minimized quantity
  Vector x;
  std::vector<ValueStack> stacks;
  Vector edge_stage_values;
};

// Per-coordinate slope from one-sided quotients (objective already includes
// the edge multipliers). A coordinate where both moves raise the bound is
// held fixed for this step.
inline void descent_slopes(const Matrix& forward, const Matrix& backward, Matrix& g,
                           Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>& held) {
  g = Matrix::Zero(forward.rows(), forward.cols());
  held.setConstant(forward.rows(), forward.cols(), false);
  for (Eigen::Index t = 0; t < forward.rows(); ++t)
    for (Eigen::Index i = 0; i < forward.cols(); ++i) {
      const double up = forward(t, i), down = backward(t, i);
      if (!std::isfinite(up) || !std::isfinite(down)) {
        // one infeasible side: move only toward the other, if that helps
        if (std::isfinite(down) && down > 0.0)
          g(t, i) = down;
        else if (std::isfinite(up) && up < 0.0)
          g(t, i) = up;
        else
          held(t, i) = true;
      } else if (up >= 0.0 && down <= 0.0 && (up > 0.0 || down < 0.0))
        held(t, i) = true;
      else if (up < 0.0 && down > 0.0)  // concave kink: take the steeper side
        g(t, i) = -up >= down ? up : down;
      else
        g(t, i) = 0.5 * (up + down);
    }
}

// Projection onto zero-sum-per-component vectors that vanish on held entries.
inline Matrix project_free(const Matrix& g, const Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>& held,
                           const GraphTopology& topology) {
  Matrix out = Matrix::Zero(g.rows(), g.cols());
  const auto groups = topology.components();
  for (Eigen::Index t = 0; t < g.rows(); ++t)
    for (const auto& nodes : groups) {
      double mean = 0.0;
      int free = 0;
      for (int i : nodes)
        if (!held(t, i)) mean += g(t, i), ++free;
      if (free < 2) continue;
      mean /= free;
      for (int i : nodes)
        if (!held(t, i)) out(t, i) = g(t, i) - mean;
    }
  return out;
}

}  // namespace detail

/// Dual bound at a fixed price process p (horizon x num_nodes).
struct PriceBound {
  double value = -kInfinity;
  std::vector<ValueStack> stacks;
  EdgePriceSolution edges;
};

inline PriceBound evaluate_price_bound(const Instance& inst, const Matrix& p, const std::vector<StateGrid>& grids,
                                       const std::vector<ControlGrid>& controls) {
  PriceBound b;
  b.stacks.resize(inst.num_nodes());
  double lb = 0.0;
  for (int i = 0; i < inst.num_nodes(); ++i) {
    b.stacks[i] = solve_price_dp(inst.nodes[i], inst.noise.node_laws(i), p.col(i), grids[i], controls[i]);
    const double v = evaluate(b.stacks[i][0], inst.initial_state[i]);
    if (!std::isfinite(v)) throw InfeasibleError("price subproblem infeasible at node " + std::to_string(i + 1));
    lb += v;
  }
  b.edges = solve_edge_price(inst.edge_costs, inst.incidence(), PriceProcess(p));
  b.value = lb + b.edges.value;
  return b;
}

/// Primal bound at a fixed resource process r; +inf when r is infeasible.
struct ResourceBound {
  double value = kInfinity;
  std::vector<ValueStack> stacks;
  EdgeResourceSolution edges;
};

inline ResourceBound evaluate_resource_bound(const Instance& inst, const Matrix& r, const std::vector<StateGrid>& grids,
                                             const std::vector<ControlGrid>& controls) {
  ResourceBound b;
  b.stacks.resize(inst.num_nodes());
  b.edges = solve_edge_resource(inst.edge_costs, inst.topology, ResourceProcess(r));
  double ub = b.edges.value;
  for (int i = 0; i < inst.num_nodes() && std::isfinite(ub); ++i) {
    b.stacks[i] = solve_resource_dp(inst.nodes[i], inst.noise.node_laws(i), r.col(i), grids[i], controls[i]);
    ub += evaluate(b.stacks[i][0], inst.initial_state[i]);
  }
  b.value = ub;
  return b;
}

/// Price decomposition: maximizes the dual bound over deterministic prices.
/// The bound at every evaluated p is a valid lower bound; the best one is
/// returned.
inline CoordinationResult dadp_run(const Instance& inst, const CoordinationOptions& opts = dadp_defaults()) {
  inst.validate();
  const int horizon = inst.horizon, n = inst.num_nodes();
  const IncidenceMatrix a = inst.incidence();
  const auto grids = node_state_grids(inst, opts.grid);
  const auto controls = node_control_grids(inst, opts.grid);

  // common random numbers: node-local atom paths fixed for the whole run
  std::vector<std::vector<std::vector<int>>> paths(n);
  for (int i = 0; i < n; ++i)
    for (int m = 0; m < opts.gradient_scenarios; ++m)
      paths[i].push_back(sample_node_path(inst.noise, i, detail::stream_seed(opts.seed, static_cast<std::uint64_t>(m),
                                                                             static_cast<std::uint64_t>(i))));

  Vector cached_x;
  PriceBound cache;
  detail::BestPoint best;

  auto solve_at = [&](const Vector& x) -> double {
    cached_x = x;
    cache = evaluate_price_bound(inst, detail::unflatten(x, horizon, n), grids, controls);
    if (-cache.value < best.value) best = {-cache.value, x, cache.stacks, cache.edges.stage_values};
    return -cache.value;
  };

  Objective obj;
  obj.value = solve_at;
  obj.gradient = [&](const Vector& x) -> Vector {
    if (cached_x.size() != x.size() || cached_x != x) solve_at(x);
    const Matrix p = detail::unflatten(x, horizon, n);
    Matrix g(horizon, n);
    for (int i = 0; i < n; ++i) {
      const auto sim = simulate_nodal(inst.nodes[i], inst.noise.node_laws(i), cache.stacks[i], NodalMode::price,
                                      p.col(i), controls[i], inst.initial_state[i], paths[i]);
      if (sim.failed_count == opts.gradient_scenarios)
        throw InfeasibleError("every gradient scenario failed at node " + std::to_string(i + 1));
      g.col(i) = sim.mean_flow;
    }
    g += cache.edges.flows.matrix() * a.entries.transpose();
    return -detail::flatten(g);  // ascent on the bound
  };

  const auto run = minimize(obj, Vector::Zero(horizon * n), opts.optimizer);
  CoordinationResult res;
  res.process = detail::unflatten(best.x, horizon, n);
  res.bound = -best.value;
  res.node_values = std::move(best.stacks);
  res.edge_stage_values = best.edge_stage_values;
  res.trace = run.trace;
  for (auto& r : res.trace) r.value = -r.value;
  res.iterations = run.iterations;
  res.evaluations = run.evaluations;
  res.stop_reason = run.stop_reason;
  return res;
}

/// Resource decomposition: minimizes the upper bound over resources in the
/// image of the incidence map, starting from r = 0. Every evaluated r gives
/// a valid upper bound; the best one is returned (+inf if none is feasible).
inline CoordinationResult padp_run(const Instance& inst, const CoordinationOptions& opts = padp_defaults()) {
  inst.validate();
  const int horizon = inst.horizon, n = inst.num_nodes();
  const auto grids = node_state_grids(inst, opts.grid);
  const auto controls = node_control_grids(inst, opts.grid);

  Vector cached_x;
  ResourceBound cache;
  detail::BestPoint best;
  Matrix last_xi, last_mu;

  auto project = [&](const Vector& v) -> Vector {
    const ResourceProcess r(detail::unflatten(v, horizon, n));
    return detail::flatten(project_onto_image(r, inst.topology).matrix());
  };

  auto solve_at = [&](const Vector& x) -> double {
    cached_x = x;
    cache = evaluate_resource_bound(inst, detail::unflatten(x, horizon, n), grids, controls);
    if (cache.value < best.value) best = {cache.value, x, cache.stacks, cache.edges.stage_values};
    return cache.value;
  };

  Objective obj;
  obj.value = solve_at;
  obj.project = project;
  obj.gradient = [&](const Vector& x) -> Vector {
    if (cached_x.size() != x.size() || cached_x != x) solve_at(x);
    const Matrix r = detail::unflatten(x, horizon, n);
    last_xi = cache.edges.multipliers.matrix();
    Matrix forward(horizon, n), backward(horizon, n);
    for (int i = 0; i < n; ++i) {
      const auto sl = resource_slopes(inst.nodes[i], inst.noise.node_laws(i), r.col(i), grids[i], controls[i],
                                      inst.initial_state[i], opts.fd_step);
      forward.col(i) = sl.forward + last_xi.col(i);
      backward.col(i) = sl.backward + last_xi.col(i);
    }
    Matrix g;
    Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> held;
    detail::descent_slopes(forward, backward, g, held);
    last_mu = g - last_xi;
    return detail::flatten(detail::project_free(g, held, inst.topology));
  };

  const auto run = minimize(obj, Vector::Zero(horizon * n), opts.optimizer);
  CoordinationResult res;
  res.bound = best.value;
  res.process = best.x.size() ? detail::unflatten(best.x, horizon, n) : Matrix::Zero(horizon, n);
  res.node_values = std::move(best.stacks);
  res.edge_stage_values = best.edge_stage_values;
  res.edge_multipliers = last_xi;
  res.node_gradients = last_mu;
  res.trace = run.trace;
  res.iterations = run.iterations;
  res.evaluations = run.evaluations;
  res.stop_reason = run.stop_reason;
  return res;
}

struct BoundsReport {
  double lower = -kInfinity;
  double upper = kInfinity;
  double gap = kInfinity;  // (upper - lower) / max(1, |lower|)
  bool consistent = true;  // lower <= upper within tolerance
};

inline BoundsReport bounds_report(const CoordinationResult& dadp, const CoordinationResult& padp, double tol = 1e-6) {
  BoundsReport b;
  b.lower = dadp.bound;
  b.upper = padp.bound;
  b.gap = (b.upper - b.lower) / std::max(1.0, std::abs(b.lower));
  b.consistent = !(b.lower > b.upper + tol * std::max(1.0, std::abs(b.lower)));
  return b;
}

inline void write_trace_csv(std::ostream& out, const std::vector<IterationRecord>& trace) {
  const auto old = out.precision(17);
  out << "iteration,bound,grad_norm,step,wall_seconds\n";
  for (const auto& r : trace)
    out << r.iteration << ',' << r.value << ',' << r.gradient_norm << ',' << r.step << ',' << r.wall_seconds << '\n';
  out.precision(old);
}

}  // namespace mgdecomp
