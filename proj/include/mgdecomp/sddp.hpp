#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "mgdecomp/detail/parallel.hpp"
#include "mgdecomp/detail/random.hpp"
#include "mgdecomp/edge_subproblems.hpp"
#include "mgdecomp/instance.hpp"
#include "mgdecomp/qp.hpp"
#include "mgdecomp/uncertainty.hpp"

// Global SDDP on the stacked state (battery, tank per node). Each stage is a
// convex QP: battery charge and discharge are split so the yield kink stays
// convex, and the future cost is a max of affine cuts.

namespace mgdecomp {

/// Affine minorant theta >= intercept + slope'x of a stage value function.
struct Cut {
  double intercept = 0.0;
  Vector slope;
  int stage = 0;
  int iteration = 0;

  double operator()(const Vector& x) const { return intercept + slope.dot(x); }
};

/// Cuts for one stage plus the states the forward passes visited there.
struct CutPool {
  int stage = 0;
  int cap = 100;
  std::vector<Cut> cuts;
  std::vector<Vector> visited;

  double evaluate(const Vector& x) const {
    double v = -kInfinity;
    for (const auto& c : cuts) v = std::max(v, c(x));
    return v;
  }

  int size() const { return static_cast<int>(cuts.size()); }
};

/// Level-one selection: a cut survives if it is the highest (latest on ties)
/// at some visited state. Above the cap, the cuts that win at the most
/// visited states are kept, latest first on ties.
inline CutPool cut_select_level1(const CutPool& pool) {
  if (pool.visited.empty()) throw ModelError("cut selection needs visited states");
  const int n = pool.size();
  std::vector<int> wins(n, 0);
  for (const auto& x : pool.visited) {
    int best = -1;
    double v = -kInfinity;
    for (int k = 0; k < n; ++k) {
      const double c = pool.cuts[k](x);
      if (best < 0 || c >= v) best = k, v = c;
    }
    if (best >= 0) ++wins[best];
  }
  std::vector<int> keep;
  for (int k = 0; k < n; ++k)
    if (wins[k] > 0) keep.push_back(k);
  if (static_cast<int>(keep.size()) > pool.cap) {
    std::stable_sort(keep.begin(), keep.end(), [&](int a, int b) { return wins[a] != wins[b] ? wins[a] > wins[b] : a > b; });
    keep.resize(pool.cap);
    std::sort(keep.begin(), keep.end());
  }
  CutPool out = pool;
  out.cuts.clear();
  for (int k : keep) out.cuts.push_back(pool.cuts[k]);
  return out;
}

struct StageSolution {
  double value = kInfinity;       // stage cost + future cost estimate
  double stage_cost = kInfinity;  // import and edge costs only
  std::vector<NodeControl> controls;
  Vector node_flows;  // f
  Vector edge_flows;  // q
  Vector next_state;
  Vector subgradient;  // of value with respect to the incoming state
};

namespace detail {

// Column layout of the stage program.
struct StageLayout {
  std::vector<int> charge, discharge, heating, import;  // -1 when absent
  int edges = 0;
  int theta = 0;
  int num_theta = 1;
  int size = 0;

  StageLayout(const Instance& inst, bool terminal) {
    int k = 0;
    for (const auto& n : inst.nodes) {
      charge.push_back(n.has_battery() ? k++ : -1);
      discharge.push_back(n.has_battery() ? k++ : -1);
      heating.push_back(k++);
      import.push_back(k++);
    }
    edges = k;
    k += inst.num_edges();
    theta = k;
    num_theta = terminal ? inst.num_nodes() : 1;
    size = k + num_theta;
  }
};

}  // namespace detail

/// Solves stage t from global state x with the stage noise w already
/// observed. next == nullptr means the next value is the terminal penalty,
/// represented exactly by two cuts per node.
inline StageSolution stage_solve(const Instance& inst, int t, const Vector& x, const std::vector<NodeNoise>& w,
                                 const CutPool* next, const QpOptions& qp_opts = {}) {
  const int n = inst.num_nodes(), ne = inst.num_edges(), dim = inst.total_state_dim();
  const bool terminal = next == nullptr;
  if (!terminal && next->cuts.empty()) throw ModelError("cut pool for stage " + std::to_string(t + 1) + " is empty");
  const detail::StageLayout lay(inst, terminal);
  const IncidenceMatrix a = inst.incidence();
  const double dt = inst.dt;

  QuadraticProgram qp(lay.size);
  // d(rhs)/dx for each general inequality row, for the subgradient
  std::vector<Vector> rhs_slope;
  auto add_row = [&](const Vector& row, double rhs, const Vector& slope) {
    qp.add_inequality(row, rhs);
    rhs_slope.push_back(slope);
  };

  // next state = C x + D u + e, one row of D per state component
  Vector c_diag(dim), e_vec(dim);
  Matrix d_mat = Matrix::Zero(dim, lay.size);
  Vector lo(dim), hi(dim);
  for (int i = 0; i < n; ++i) {
    const auto& node = inst.nodes[i];
    const int o = inst.state_offset(i);
    if (node.battery) {
      const auto& b = *node.battery;
      c_diag(o) = b.auto_discharge;
      e_vec(o) = 0.0;
      d_mat(o, lay.charge[i]) = dt * b.charge_yield;
      d_mat(o, lay.discharge[i]) = -dt / b.discharge_yield;
      qp.lower(lay.charge[i]) = 0.0;
      qp.upper(lay.charge[i]) = b.power_max;
      qp.lower(lay.discharge[i]) = 0.0;
      qp.upper(lay.discharge[i]) = -b.power_min;
    }
    const int h = o + node.tank_index();
    c_diag(h) = node.tank.conduction_loss;
    e_vec(h) = -w[i].hot_water;
    d_mat(h, lay.heating[i]) = dt * node.tank.conversion;
    qp.lower(lay.heating[i]) = 0.0;
    qp.upper(lay.heating[i]) = node.tank.heating_max;
    qp.lower(lay.import[i]) = 0.0;
    qp.upper(lay.import[i]) = node.import_max;
    qp.linear(lay.import[i]) = node.import_price[t] * dt;
    lo.segment(o, node.state_dim()) = node.lower_bounds();
    hi.segment(o, node.state_dim()) = node.upper_bounds();

    // u_ne - u_b - u_t + (A q)_i = d_el / dt
    Vector row = Vector::Zero(lay.size);
    row(lay.import[i]) = 1.0;
    if (node.battery) row(lay.charge[i]) = -1.0, row(lay.discharge[i]) = 1.0;
    row(lay.heating[i]) = -1.0;
    for (int e = 0; e < ne; ++e) row(lay.edges + e) = a.entries(i, e);
    qp.add_equality(row, w[i].electricity / dt);
  }
  for (int e = 0; e < ne; ++e) {
    const EdgeCost& ec = inst.edge_costs[t][e];
    qp.hessian(lay.edges + e, lay.edges + e) = 2.0 * ec.quadratic;
    qp.linear(lay.edges + e) = ec.linear;
    qp.lower(lay.edges + e) = ec.lower;
    qp.upper(lay.edges + e) = ec.upper;
  }
  const Vector cx = c_diag.cwiseProduct(x);
  for (int k = 0; k < dim; ++k) {
    Vector s = Vector::Zero(dim);
    s(k) = c_diag(k);
    add_row(d_mat.row(k).transpose(), hi(k) - cx(k) - e_vec(k), -s);
    add_row(-d_mat.row(k).transpose(), -lo(k) + cx(k) + e_vec(k), s);
  }
  for (int j = 0; j < lay.num_theta; ++j) qp.linear(lay.theta + j) = 1.0;
  if (terminal) {
    // theta_i >= 0 and theta_i >= kappa (ref - tank')
    for (int i = 0; i < n; ++i) {
      const auto& tank = inst.nodes[i].tank;
      const int h = inst.state_offset(i) + inst.nodes[i].tank_index();
      const double kappa = tank.penalty_rate;
      Vector row = Vector::Zero(lay.size);
      row(lay.theta + i) = -1.0;
      add_row(row, 0.0, Vector::Zero(dim));
      row = -kappa * d_mat.row(h).transpose();
      row(lay.theta + i) = -1.0;
      Vector s = Vector::Zero(dim);
      s(h) = kappa * c_diag(h);
      add_row(row, -kappa * tank.reference_level + kappa * (cx(h) + e_vec(h)), s);
    }
  } else {
    // slope'(C x + D u + e) + intercept <= theta
    for (const auto& cut : next->cuts) {
      Vector row = d_mat.transpose() * cut.slope;
      row(lay.theta) = -1.0;
      add_row(row, -cut.intercept - cut.slope.dot(cx + e_vec), -cut.slope.cwiseProduct(c_diag));
    }
  }

  const QpSolution sol = solve_qp(qp, qp_opts);
  if (!sol.optimal())
    throw InfeasibleError("stage " + std::to_string(t) + " program has no solution at the given state and noise");

  StageSolution out;
  out.value = sol.objective;
  out.subgradient = Vector::Zero(dim);
  for (std::size_t r = 0; r < rhs_slope.size(); ++r) out.subgradient -= sol.ineq_multipliers(r) * rhs_slope[r];

  // Rebuild an exactly consistent decision from the primal solution.
  out.edge_flows = Vector(ne);
  for (int e = 0; e < ne; ++e) {
    const EdgeCost& ec = inst.edge_costs[t][e];
    out.edge_flows(e) = std::clamp(sol.x(lay.edges + e), ec.lower, ec.upper);
  }
  out.node_flows = -(a.entries * out.edge_flows);
  out.controls.resize(n);
  out.next_state = Vector(dim);
  double stage_cost = 0.0;
  for (int i = 0; i < n; ++i) {
    const auto& node = inst.nodes[i];
    NodeControl u;
    if (node.battery)
      u.battery = std::clamp(sol.x(lay.charge[i]), 0.0, node.battery->power_max) -
                  std::clamp(sol.x(lay.discharge[i]), 0.0, -node.battery->power_min);
    u.heating = std::clamp(sol.x(lay.heating[i]), 0.0, node.tank.heating_max);
    u.grid_import = std::clamp(out.node_flows(i) + w[i].electricity / dt + u.battery + u.heating, 0.0, node.import_max);
    out.controls[i] = u;
    const int o = inst.state_offset(i);
    NodeState xi = x.segment(o, node.state_dim());
    NodeState nx = node.step(xi, u, w[i]);
    nx = nx.cwiseMax(node.lower_bounds()).cwiseMin(node.upper_bounds());
    out.next_state.segment(o, node.state_dim()) = nx;
    stage_cost += node.cost(t, u);
  }
  for (int e = 0; e < ne; ++e) stage_cost += inst.edge_costs[t][e](out.edge_flows(e));
  out.stage_cost = stage_cost;
  return out;
}

/// Global terminal penalty at a stacked state.
inline double global_terminal_cost(const Instance& inst, const Vector& x) {
  double v = 0.0;
  for (int i = 0; i < inst.num_nodes(); ++i)
    v += inst.nodes[i].terminal(x.segment(inst.state_offset(i), inst.nodes[i].state_dim()));
  return v;
}

struct SddpOptions {
  int resample_k = 100;            // atoms per stage after resampling
  int resample_samples = 1000;     // draws fed to k-means
  int max_iterations = 2000;
  int upper_bound_every = 10;
  int upper_bound_scenarios = 1000;
  double gap_tolerance = 0.01;
  int cut_cap = 100;
  std::uint64_t seed = 0;
  QpOptions qp;
};

struct UpperBoundCheck {
  int iteration = 0;
  double mean = kInfinity;
  double half_width = kInfinity;
  bool flagged = false;  // lower bound above mean + half_width
};

struct StatisticalBound {
  double mean = kInfinity;
  double half_width = kInfinity;
  std::vector<double> costs;
};

struct SddpResult {
  std::vector<CutPool> pools;               // pools[t] approximates V_t, t = 1..T-1
  std::vector<FiniteDistribution> laws;     // stage noise used by the passes
  std::vector<double> lower_trace;          // lower bound after each iteration
  std::vector<double> wall_seconds;
  std::vector<UpperBoundCheck> upper_checks;
  double lower_bound = -kInfinity;
  int iterations = 0;
  std::string stop_reason;

  /// Pool for the value after stage t, or nullptr at the last stage.
  const CutPool* next_pool(int t) const {
    return t + 1 < static_cast<int>(pools.size()) ? &pools[t + 1] : nullptr;
  }
};

/// Stage noise for SDDP: the exact product law when its support fits in k
/// atoms, else a k-means quantization of sampled joint noise.
inline std::vector<FiniteDistribution> sddp_stage_laws(const Instance& inst, const SddpOptions& opts) {
  std::vector<FiniteDistribution> laws;
  for (int t = 0; t < inst.horizon; ++t) {
    if (product_support_size(inst.noise, t) <= opts.resample_k)
      laws.push_back(product_distribution(inst.noise, t));
    else
      laws.push_back(resample_product(inst.noise, t, opts.resample_k, opts.resample_samples, opts.seed));
  }
  return laws;
}

/// Sample mean and 95% half-width 1.96 s / sqrt(n). Deviations are taken
/// from the first sample so identical samples give exactly zero width.
inline void summarize_costs(const std::vector<double>& costs, double& mean, double& half_width) {
  const double n = static_cast<double>(costs.size());
  const double shift = costs.front();
  double sum = 0.0, ss = 0.0;
  for (double c : costs) sum += c - shift, ss += (c - shift) * (c - shift);
  mean = shift + sum / n;
  const double var = costs.size() > 1 ? std::max(0.0, (ss - sum * sum / n) / (n - 1.0)) : 0.0;
  half_width = 1.96 * std::sqrt(var / n);
}

/// Monte Carlo cost of the cut-induced policy under the original noise law.
inline StatisticalBound statistical_upper_bound(const SddpResult& run, const Instance& inst, int scenarios,
                                                std::uint64_t seed, const QpOptions& qp = {}) {
  if (scenarios < 1) throw ModelError("statistical bound needs at least one scenario");
  StatisticalBound b;
  b.costs.assign(scenarios, 0.0);
  detail::parallel_for(static_cast<std::size_t>(scenarios), [&](std::size_t s) {
    const Scenario sc = sample_scenario(inst.noise, detail::stream_seed(seed, s, 0xb0));
    Vector x = inst.global_initial_state();
    double cost = 0.0;
    for (int t = 0; t < inst.horizon; ++t) {
      const auto sol = stage_solve(inst, t, x, sc.noise[t], run.next_pool(t), qp);
      cost += sol.stage_cost;
      x = sol.next_state;
    }
    b.costs[s] = cost + global_terminal_cost(inst, x);
  });
  summarize_costs(b.costs, b.mean, b.half_width);
  return b;
}

namespace detail {

// Lower bound on the cost of stages t..T-1: imports and penalties are
// nonnegative, edges contribute at least their box minimum.
inline double cost_floor(const Instance& inst, int t) {
  double v = 0.0;
  for (int s = t; s < inst.horizon; ++s)
    for (int e = 0; e < inst.num_edges(); ++e) {
      const EdgeCost& c = inst.edge_costs[s][e];
      v += c(edge_price_argmin(c, 0.0, e, s));
    }
  return v;
}

// Expected value and subgradient over every atom of the stage law.
inline Cut average_cut(const Instance& inst, int t, const Vector& x, const FiniteDistribution& law,
                       const CutPool* next, const QpOptions& qp) {
  std::vector<StageSolution> sols(law.size());
  parallel_for(static_cast<std::size_t>(law.size()), [&](std::size_t k) {
    sols[k] = stage_solve(inst, t, x, split_global_noise(law.atom(static_cast<int>(k))), next, qp);
  });
  Cut c;
  c.stage = t;
  c.slope = Vector::Zero(x.size());
  double value = 0.0;
  for (int k = 0; k < law.size(); ++k) {
    value += law.probability(k) * sols[k].value;
    c.slope += law.probability(k) * sols[k].subgradient;
  }
  c.intercept = value - c.slope.dot(x);
  return c;
}

}  // namespace detail

inline void check_sddp_instance(const Instance& inst) {
  inst.validate();
  for (int i = 0; i < inst.num_nodes(); ++i)
    for (double p : inst.nodes[i].import_price)
      if (p < 0.0)
        throw ModelError("node " + std::to_string(i + 1) + ": SDDP needs nonnegative import prices");
}

/// Forward/backward SDDP with one forward scenario per iteration.
inline SddpResult sddp_run(const Instance& inst, const SddpOptions& opts = {}) {
  check_sddp_instance(inst);
  if (opts.max_iterations < 1 || opts.upper_bound_every < 1 || opts.cut_cap < 1)
    throw ModelError("SDDP options need positive iteration counts and cap");
  const auto start = std::chrono::steady_clock::now();
  const int horizon = inst.horizon;
  const Vector x0 = inst.global_initial_state();

  SddpResult res;
  res.laws = sddp_stage_laws(inst, opts);
  res.pools.resize(horizon);
  for (int t = 1; t < horizon; ++t) {
    res.pools[t].stage = t;
    res.pools[t].cap = opts.cut_cap;
    Cut floor;
    floor.intercept = detail::cost_floor(inst, t);
    floor.slope = Vector::Zero(x0.size());
    floor.stage = t;
    res.pools[t].cuts.push_back(floor);
  }

  detail::Rng rng(detail::stream_seed(opts.seed, 0xf0));
  int check = 0;
  for (res.iterations = 1; res.iterations <= opts.max_iterations; ++res.iterations) {
    const int it = res.iterations;
    // forward pass on the stage laws
    std::vector<Vector> states{x0};
    for (int t = 0; t + 1 < horizon; ++t) {
      const int k = res.laws[t].sample_index(rng);
      const auto sol = stage_solve(inst, t, states.back(), split_global_noise(res.laws[t].atom(k)), res.next_pool(t),
                                   opts.qp);
      states.push_back(sol.next_state);
      res.pools[t + 1].visited.push_back(sol.next_state);
    }
    // backward pass
    for (int t = horizon - 1; t >= 1; --t) {
      Cut c = detail::average_cut(inst, t, states[t], res.laws[t], res.next_pool(t), opts.qp);
      c.iteration = it;
      auto& pool = res.pools[t];
      // a repeated cut only adds degeneracy to the stage programs
      const bool known = std::any_of(pool.cuts.begin(), pool.cuts.end(), [&](const Cut& o) {
        return std::abs(o.intercept - c.intercept) <= 1e-9 * (1.0 + std::abs(c.intercept)) &&
               (o.slope - c.slope).cwiseAbs().maxCoeff() <= 1e-9 * (1.0 + c.slope.cwiseAbs().maxCoeff());
      });
      if (!known) pool.cuts.push_back(std::move(c));
      if (pool.size() > pool.cap) pool = cut_select_level1(pool);
    }
    const Cut first = detail::average_cut(inst, 0, x0, res.laws[0], res.next_pool(0), opts.qp);
    res.lower_bound = first(x0);
    res.lower_trace.push_back(res.lower_bound);
    res.wall_seconds.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count());

    if (it % opts.upper_bound_every == 0) {
      const auto ub = statistical_upper_bound(res, inst, opts.upper_bound_scenarios,
                                              detail::stream_seed(opts.seed, 0xab, static_cast<std::uint64_t>(check++)),
                                              opts.qp);
      UpperBoundCheck rec{it, ub.mean, ub.half_width, res.lower_bound > ub.mean + ub.half_width + 1e-9};
      res.upper_checks.push_back(rec);
      if ((ub.mean - res.lower_bound) < opts.gap_tolerance * std::abs(ub.mean)) {
        res.stop_reason = "gap below tolerance";
        return res;
      }
    }
  }
  res.iterations = opts.max_iterations;
  res.stop_reason = "iteration cap";
  return res;
}

inline void write_sddp_trace_csv(std::ostream& out, const SddpResult& run) {
  const auto old = out.precision(17);
  out << "iteration,lower_bound,upper_mean,upper_half_width,wall_seconds\n";
  std::size_t c = 0;
  for (std::size_t k = 0; k < run.lower_trace.size(); ++k) {
    out << k + 1 << ',' << run.lower_trace[k] << ',';
    if (c < run.upper_checks.size() && run.upper_checks[c].iteration == static_cast<int>(k + 1)) {
      out << run.upper_checks[c].mean << ',' << run.upper_checks[c].half_width;
      ++c;
    } else {
      out << ',';
    }
    out << ',' << run.wall_seconds[k] << '\n';
  }
  out.precision(old);
}

/// Cuts as CSV: stage, iteration, intercept, slope entries.
inline void write_cuts_csv(std::ostream& out, const SddpResult& run) {
  const auto old = out.precision(17);
  out << "stage,iteration,intercept,slope\n";
  for (const auto& pool : run.pools)
    for (const auto& c : pool.cuts) {
      out << c.stage << ',' << c.iteration << ',' << c.intercept;
      for (Eigen::Index k = 0; k < c.slope.size(); ++k) out << ',' << c.slope(k);
      out << '\n';
    }
  out.precision(old);
}

/// Inverse of write_cuts_csv: pools[t] for t = 0..horizon-1.
inline std::vector<CutPool> read_cuts_csv(std::istream& in, int horizon) {
  std::string line;
  if (!std::getline(in, line) || line != "stage,iteration,intercept,slope") throw ModelError("bad cuts header");
  std::vector<CutPool> pools(horizon);
  for (int t = 0; t < horizon; ++t) pools[t].stage = t;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ls(line);
    std::vector<std::string> f;
    for (std::string s; std::getline(ls, s, ',');) f.push_back(s);
    if (f.size() < 3) throw ModelError("bad cut row: " + line);
    Cut c;
    c.stage = std::stoi(f[0]);
    c.iteration = std::stoi(f[1]);
    c.intercept = std::stod(f[2]);
    c.slope.resize(static_cast<Eigen::Index>(f.size() - 3));
    for (std::size_t k = 3; k < f.size(); ++k) c.slope(static_cast<Eigen::Index>(k - 3)) = std::stod(f[k]);
    if (c.stage < 0 || c.stage >= horizon) throw ModelError("cut stage out of range: " + line);
    pools[c.stage].cuts.push_back(std::move(c));
  }
  return pools;
}

}  // namespace mgdecomp
