#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "mgdecomp/detail/parallel.hpp"
#include "mgdecomp/network.hpp"
#include "mgdecomp/prosumer.hpp"
#include "mgdecomp/uncertainty.hpp"

namespace mgdecomp {


/// Uniform axis of a tensor-product grid.
struct GridAxis {
  double lower = 0.0;
  double upper = 1.0;
  int points = 2;

  double point(int k) const {
    if (k == points - 1) return upper;
    return lower + (upper - lower) * k / (points - 1);
  }
  double spacing() const { return (upper - lower) / (points - 1); }

  std::vector<double> points_vector() const {
    std::vector<double> v(points);
    for (int k = 0; k < points; ++k) v[k] = point(k);
    return v;
  }
};

/// Cell index and weight of the upper neighbour along one axis.
struct AxisLocation {
  int index = 0;
  double weight = 0.0;
};

// Coordinates outside the axis clamp to its ends; weights within 1e-12 of a
// grid point snap to it so exact grid states read stored values exactly.
inline AxisLocation locate(const GridAxis& axis, double x) {
  if (axis.points == 1) return {0, 0.0};
  const double s = (x - axis.lower) / (axis.upper - axis.lower) * (axis.points - 1);
  if (!(s > 0.0)) return {0, 0.0};
  if (s >= axis.points - 1) return {axis.points - 1, 0.0};
  int i = static_cast<int>(std::floor(s));
  double w = s - i;
  if (w < 1e-12) w = 0.0;
  if (w > 1.0 - 1e-12) ++i, w = 0.0;
  return {i, w};
}

class StateGrid {
 public:
  StateGrid() = default;
  explicit StateGrid(std::vector<GridAxis> axes) : axes_(std::move(axes)) {
    if (axes_.empty() || axes_.size() > 2) throw ModelError("state grid must have one or two axes");
    for (const auto& a : axes_) {
      if (a.points < 2) throw ModelError("state grid needs at least 2 points per axis");
      if (!(a.lower < a.upper)) throw ModelError("state grid axis needs lower < upper");
    }
  }

  /// Grid over the node's physical state bounds.
  static StateGrid for_node(const NodeModel& node, int points_per_axis = 51) {
    const NodeState lo = node.lower_bounds(), hi = node.upper_bounds();
    std::vector<GridAxis> axes;
    for (int k = 0; k < node.state_dim(); ++k) axes.push_back({lo(k), hi(k), points_per_axis});
    return StateGrid(std::move(axes));
  }

  int dim() const { return static_cast<int>(axes_.size()); }
  const GridAxis& axis(int k) const { return axes_[k]; }
  const std::vector<GridAxis>& axes() const { return axes_; }

  int size() const {
    int n = 1;
    for (const auto& a : axes_) n *= a.points;
    return n;
  }

  // Row-major: the last axis varies fastest.
  int flat_index(const std::array<int, 2>& idx) const { return dim() == 1 ? idx[0] : idx[0] * axes_[1].points + idx[1]; }

  std::array<int, 2> multi_index(int flat) const {
    if (dim() == 1) return {flat, 0};
    return {flat / axes_[1].points, flat % axes_[1].points};
  }

  NodeState point(int flat) const {
    const auto idx = multi_index(flat);
    NodeState x(dim());
    for (int k = 0; k < dim(); ++k) x(k) = axes_[k].point(idx[k]);
    return x;
  }

  friend bool operator==(const StateGrid& a, const StateGrid& b) {
    if (a.dim() != b.dim()) return false;
    for (int k = 0; k < a.dim(); ++k)
      if (a.axes_[k].lower != b.axes_[k].lower || a.axes_[k].upper != b.axes_[k].upper ||
          a.axes_[k].points != b.axes_[k].points)
        return false;
    return true;
  }

 private:
  std::vector<GridAxis> axes_;
};

/// Candidate controls searched exhaustively by the nodal DP.
struct ControlGrid {
  std::vector<double> battery;  // empty without a battery
  std::vector<double> heating;

  static ControlGrid for_node(const NodeModel& node, int battery_points = 21, int heating_points = 21) {
    ControlGrid c;
    if (node.battery) c.battery = GridAxis{node.battery->power_min, node.battery->power_max, battery_points}.points_vector();
    c.heating = heating_points == 1 || node.tank.heating_max == 0.0
                    ? std::vector<double>{0.0}
                    : GridAxis{0.0, node.tank.heating_max, heating_points}.points_vector();
    return c;
  }

  const std::vector<double>& battery_or_zero() const {
    static const std::vector<double> zero{0.0};
    return battery.empty() ? zero : battery;
  }
};

/// Tabulated value function of one stage, +inf marking infeasible states.
struct TabularValueFunction {
  StateGrid grid;
  Vector values;
  int stage = 0;
};

using ValueStack = std::vector<TabularValueFunction>;

namespace detail {

// Multilinear combination over the cell corners with nonzero weight. A
// corner holding +inf makes the result +inf; zero-weight corners are skipped.
inline double interpolate(const TabularValueFunction& vf, const std::array<AxisLocation, 2>& loc) {
  const auto& g = vf.grid;
  if (g.dim() == 1) {
    const double v0 = vf.values(loc[0].index);
    if (loc[0].weight == 0.0) return v0;
    const double v1 = vf.values(loc[0].index + 1);
    if (std::isinf(v0) || std::isinf(v1)) return kInfinity;
    return (1.0 - loc[0].weight) * v0 + loc[0].weight * v1;
  }
  double total = 0.0;
  for (int a = 0; a < 2; ++a) {
    const double wa = a ? loc[0].weight : 1.0 - loc[0].weight;
    if (wa == 0.0) continue;
    for (int b = 0; b < 2; ++b) {
      const double wb = b ? loc[1].weight : 1.0 - loc[1].weight;
      if (wb == 0.0) continue;
      const double v = vf.values(g.flat_index({loc[0].index + a, loc[1].index + b}));
      if (std::isinf(v)) return kInfinity;
      total += wa * wb * v;
    }
  }
  return total;
}

}  // namespace detail

/// Multilinear interpolation; coordinates outside the grid clamp to it.
inline double evaluate(const TabularValueFunction& vf, const NodeState& x) {
  if (x.size() != vf.grid.dim()) throw ModelError("state dimension does not match value function grid");
  std::array<AxisLocation, 2> loc{};
  for (int k = 0; k < vf.grid.dim(); ++k) loc[k] = locate(vf.grid.axis(k), x(k));
  return detail::interpolate(vf, loc);
}

/// Which nodal subproblem a recursion solves. In price mode the coordination
/// value is the node price p_t paired with the node flow; in resource mode it
/// is the pinned flow r_t.
enum class NodalMode { price, resource };

struct DpOptions {
  double bound_tolerance = 1e-9;
  // Diagnostic only: take the min outside the expectation (decision-hazard).
  bool decision_hazard = false;
};

/// Best control for one realized noise at a continuous state.
struct NodalChoice {
  double value = kInfinity;  // stage term plus next-stage value
  NodeControl control;
  double flow = 0.0;
  bool feasible() const { return std::isfinite(value); }
};

namespace detail {

// Grid import and stage term for fixed (battery, heating). Returns false
// when the pinned import leaves [0, import_max].
inline bool stage_term(const NodeModel& node, int t, NodalMode mode, double coord, double battery, double heating,
                       const NodeNoise& w, double tol, double& grid_import, double& term) {
  const double demand = w.electricity / node.dt;
  if (mode == NodalMode::price) {
    const double c = node.import_price[t] * node.dt + coord;
    grid_import = c < 0.0 ? node.import_max : 0.0;
    term = c * grid_import + coord * (-demand - battery - heating);
    return true;
  }
  grid_import = coord + demand + battery + heating;
  if (grid_import < -tol || grid_import > node.import_max + tol) return false;
  grid_import = std::clamp(grid_import, 0.0, node.import_max);
  term = node.import_price[t] * node.dt * grid_import;
  return true;
}

// Next-state location along one axis, or false when outside the bounds.
inline bool locate_next(const GridAxis& axis, double lo, double hi, double next, double tol, AxisLocation& out) {
  if (next < lo - tol || next > hi + tol) return false;
  out = locate(axis, std::clamp(next, lo, hi));
  return true;
}

}  // namespace detail

/// Argmin of the one-stage hazard-decision problem at state x under noise w,
/// using the tabulated next-stage value. Ties keep the first control found.
inline NodalChoice best_control(const NodeModel& node, int t, const NodeState& x, const NodeNoise& w, NodalMode mode,
                                double coord, const TabularValueFunction& next, const ControlGrid& controls,
                                double tol = 1e-9) {
  const NodeState lo = node.lower_bounds(), hi = node.upper_bounds();
  const int ti = node.tank_index();
  NodalChoice best;
  for (double ub : controls.battery_or_zero()) {
    std::array<AxisLocation, 2> loc{};
    if (node.battery && !detail::locate_next(next.grid.axis(0), lo(0), hi(0), battery_step(*node.battery, node.dt, x(0), ub),
                                             tol, loc[0]))
      continue;
    for (double ut : controls.heating) {
      if (!detail::locate_next(next.grid.axis(ti), lo(ti), hi(ti), tank_step(node.tank, node.dt, x(ti), ut, w.hot_water),
                               tol, loc[ti]))
        continue;
      double grid_import = 0.0, term = 0.0;
      if (!detail::stage_term(node, t, mode, coord, ub, ut, w, tol, grid_import, term)) continue;
      const double v = term + detail::interpolate(next, loc);
      if (v < best.value) {
        best.value = v;
        best.control = {ub, ut, grid_import};
        best.flow = node_balance(grid_import, w.electricity, ub, ut, node.dt);
      }
    }
  }
  return best;
}

namespace detail {

inline TabularValueFunction terminal_values(const NodeModel& node, const StateGrid& grid) {
  TabularValueFunction vf{grid, Vector(grid.size()), node.horizon()};
  for (int g = 0; g < grid.size(); ++g) vf.values(g) = node.terminal(grid.point(g));
  return vf;
}

// One backward step: V_t from V_{t+1}. Next-state locations are separable
// by axis, so they are precomputed per (grid index, control, atom).
inline TabularValueFunction backward_stage(const NodeModel& node, const FiniteDistribution& law, int t, NodalMode mode,
                                           double coord, const TabularValueFunction& next, const ControlGrid& controls,
                                           const DpOptions& opts) {
  const StateGrid& grid = next.grid;
  const NodeState lo = node.lower_bounds(), hi = node.upper_bounds();
  const int ti = node.tank_index();
  const auto& bat = controls.battery_or_zero();
  const auto& heat = controls.heating;
  const int nb = static_cast<int>(bat.size()), nh = static_cast<int>(heat.size()), na = law.size();
  const double tol = opts.bound_tolerance;

  // battery axis: [level index][control]
  std::vector<AxisLocation> bat_loc;
  std::vector<char> bat_ok;
  if (node.battery) {
    const auto& ax = grid.axis(0);
    bat_loc.resize(ax.points * nb);
    bat_ok.resize(ax.points * nb);
    for (int i = 0; i < ax.points; ++i)
      for (int c = 0; c < nb; ++c)
        bat_ok[i * nb + c] = locate_next(ax, lo(0), hi(0), battery_step(*node.battery, node.dt, ax.point(i), bat[c]),
                                         tol, bat_loc[i * nb + c]);
  }
  // tank axis: [level index][atom][control]
  const auto& tax = grid.axis(ti);
  std::vector<AxisLocation> tank_loc(tax.points * na * nh);
  std::vector<char> tank_ok(tax.points * na * nh);
  for (int i = 0; i < tax.points; ++i)
    for (int a = 0; a < na; ++a)
      for (int c = 0; c < nh; ++c) {
        const std::size_t k = (static_cast<std::size_t>(i) * na + a) * nh + c;
        tank_ok[k] = locate_next(tax, lo(ti), hi(ti), tank_step(node.tank, node.dt, tax.point(i), heat[c], law.atoms()(a, 0)),
                                 tol, tank_loc[k]);
      }
  // stage term: [atom][battery control][heating control]
  std::vector<double> term(static_cast<std::size_t>(na) * nb * nh);
  for (int a = 0; a < na; ++a) {
    const NodeNoise w = law.node_noise(a);
    for (int b = 0; b < nb; ++b)
      for (int c = 0; c < nh; ++c) {
        double u = 0.0, v = 0.0;
        term[(static_cast<std::size_t>(a) * nb + b) * nh + c] =
            stage_term(node, t, mode, coord, bat[b], heat[c], w, tol, u, v) ? v : kInfinity;
      }
  }

  TabularValueFunction out{grid, Vector(grid.size()), t};
  parallel_for(static_cast<std::size_t>(grid.size()), [&](std::size_t g) {
    const auto idx = grid.multi_index(static_cast<int>(g));
    const int bi = node.battery ? idx[0] : 0;
    const int hi_idx = idx[ti];
    auto candidate = [&](int a, int b, int c) {
      std::array<AxisLocation, 2> loc{};
      if (node.battery) {
        if (!bat_ok[bi * nb + b]) return kInfinity;
        loc[0] = bat_loc[bi * nb + b];
      }
      const std::size_t k = (static_cast<std::size_t>(hi_idx) * na + a) * nh + c;
      if (!tank_ok[k]) return kInfinity;
      loc[ti] = tank_loc[k];
      const double s = term[(static_cast<std::size_t>(a) * nb + b) * nh + c];
      if (std::isinf(s)) return kInfinity;
      return s + interpolate(next, loc);
    };
    double value = 0.0;
    if (!opts.decision_hazard) {
      for (int a = 0; a < na && std::isfinite(value); ++a) {
        double best = kInfinity;
        for (int b = 0; b < nb; ++b)
          for (int c = 0; c < nh; ++c) best = std::min(best, candidate(a, b, c));
        value = std::isinf(best) ? kInfinity : value + law.probability(a) * best;
      }
    } else {
      value = kInfinity;
      for (int b = 0; b < nb; ++b)
        for (int c = 0; c < nh; ++c) {
          double e = 0.0;
          for (int a = 0; a < na && std::isfinite(e); ++a) {
            const double v = candidate(a, b, c);
            e = std::isinf(v) ? kInfinity : e + law.probability(a) * v;
          }
          value = std::min(value, e);
        }
    }
    out.values(static_cast<Eigen::Index>(g)) = value;
  });
  return out;
}

inline void check_dp_inputs(const NodeModel& node, const std::vector<FiniteDistribution>& laws, const Vector& coord,
                            const StateGrid& grid) {
  node.validate();
  if (static_cast<int>(laws.size()) != node.horizon()) throw ModelError("noise horizon does not match node horizon");
  if (coord.size() != node.horizon()) throw ModelError("coordination vector length does not match horizon");
  if (!coord.allFinite()) throw ModelError("coordination vector has non-finite entries");
  if (grid.dim() != node.state_dim()) throw ModelError("state grid dimension does not match node");
  for (const auto& law : laws)
    if (law.dim() != 2) throw ModelError("node noise atoms must be (hot water, electricity)");
}

// Stages [0, last] recomputed on top of the given suffix value V_{last+1}.
inline void backward_range(const NodeModel& node, const std::vector<FiniteDistribution>& laws, NodalMode mode,
                           const Vector& coord, const ControlGrid& controls, const DpOptions& opts, int last,
                           ValueStack& stack) {
  for (int t = last; t >= 0; --t)
    stack[t] = backward_stage(node, laws[t], t, mode, coord(t), stack[t + 1], controls, opts);
}

}  // namespace detail

/// Backward recursion for either nodal subproblem; returns V_0..V_T.
inline ValueStack solve_nodal_dp(const NodeModel& node, const std::vector<FiniteDistribution>& laws, NodalMode mode,
                                 const Vector& coord, const StateGrid& grid, const ControlGrid& controls,
                                 const DpOptions& opts = {}) {
  detail::check_dp_inputs(node, laws, coord, grid);
  const int horizon = node.horizon();
  ValueStack stack(horizon + 1);
  stack[horizon] = detail::terminal_values(node, grid);
  detail::backward_range(node, laws, mode, coord, controls, opts, horizon - 1, stack);
  return stack;
}

inline ValueStack solve_price_dp(const NodeModel& node, const std::vector<FiniteDistribution>& laws, const Vector& prices,
                                 const StateGrid& grid, const ControlGrid& controls, const DpOptions& opts = {}) {
  return solve_nodal_dp(node, laws, NodalMode::price, prices, grid, controls, opts);
}

inline ValueStack solve_resource_dp(const NodeModel& node, const std::vector<FiniteDistribution>& laws,
                                    const Vector& resource, const StateGrid& grid, const ControlGrid& controls,
                                    const DpOptions& opts = {}) {
  return solve_nodal_dp(node, laws, NodalMode::resource, resource, grid, controls, opts);
}

/// Realized flows of the greedy nodal policy along a set of noise paths.
struct NodalSimulation {
  Matrix flows;              // scenario x stage
  Vector costs;              // stage plus terminal cost per scenario
  std::vector<char> failed;  // scenario hit a state with no feasible control
  Vector mean_flow;          // per stage, over non-failed scenarios
  int failed_count = 0;
};

/// Rolls the argmin policy of the nodal recursion from x0 along each path of
/// atom indices (paths[m][t]); controls are re-optimized at continuous states.
inline NodalSimulation simulate_nodal(const NodeModel& node, const std::vector<FiniteDistribution>& laws,
                                      const ValueStack& stack, NodalMode mode, const Vector& coord,
                                      const ControlGrid& controls, const NodeState& x0,
                                      const std::vector<std::vector<int>>& paths) {
  const int horizon = node.horizon();
  if (static_cast<int>(stack.size()) != horizon + 1) throw ModelError("value stack length does not match horizon");
  const int m = static_cast<int>(paths.size());
  NodalSimulation sim;
  sim.flows = Matrix::Zero(m, horizon);
  sim.costs = Vector::Zero(m);
  sim.failed.assign(m, 0);
  detail::parallel_for(static_cast<std::size_t>(m), [&](std::size_t s) {
    NodeState x = x0;
    double cost = 0.0;
    for (int t = 0; t < horizon; ++t) {
      const NodeNoise w = laws[t].node_noise(paths[s][t]);
      const NodalChoice c = best_control(node, t, x, w, mode, coord(t), stack[t + 1], controls);
      if (!c.feasible()) {
        sim.failed[s] = 1;
        return;
      }
      sim.flows(static_cast<Eigen::Index>(s), t) = c.flow;
      cost += node.cost(t, c.control);
      x = node.step(x, c.control, w);
      x = x.cwiseMax(node.lower_bounds()).cwiseMin(node.upper_bounds());
    }
    sim.costs(static_cast<Eigen::Index>(s)) = cost + node.terminal(x);
  });
  sim.mean_flow = Vector::Zero(horizon);
  for (int s = 0; s < m; ++s) {
    if (sim.failed[s]) {
      ++sim.failed_count;
      continue;
    }
    sim.mean_flow += sim.flows.row(s).transpose();
  }
  if (sim.failed_count < m) sim.mean_flow /= static_cast<double>(m - sim.failed_count);
  return sim;
}

/// Central differences of fn around r, one coordinate at a time. When one
/// side is +inf the other one-sided difference is used; both sides infinite
/// raises InfeasibleError naming the coordinate.
inline Vector central_difference_gradient(const std::function<double(int, double)>& fn, double base, int n, double h) {
  Vector g(n);
  for (int t = 0; t < n; ++t) {
    const double up = fn(t, h), down = fn(t, -h);
    if (std::isfinite(up) && std::isfinite(down))
      g(t) = (up - down) / (2.0 * h);
    else if (std::isfinite(up) && std::isfinite(base))
      g(t) = (up - base) / h;
    else if (std::isfinite(down) && std::isfinite(base))
      g(t) = (base - down) / h;
    else
      throw InfeasibleError("resource perturbation infeasible on both sides at stage " + std::to_string(t));
  }
  return g;
}

/// Gradient of r -> V[r](x0) for the nodal resource recursion by central
/// finite differences. Perturbing r_t leaves stages after t unchanged, so
/// only stages 0..t are recomputed for each coordinate.
inline Vector resource_gradient(const NodeModel& node, const std::vector<FiniteDistribution>& laws,
                                const Vector& resource, const StateGrid& grid, const ControlGrid& controls,
                                const NodeState& x0, double h = 1e-2, const DpOptions& opts = {}) {
  if (!(h > 0.0)) throw ModelError("finite-difference step must be positive");
  const ValueStack base = solve_resource_dp(node, laws, resource, grid, controls, opts);
  const double v0 = evaluate(base[0], x0);
  auto perturbed = [&](int t, double delta) {
    ValueStack stack = base;
    Vector r = resource;
    r(t) += delta;
    detail::backward_range(node, laws, NodalMode::resource, r, controls, opts, t, stack);
    return evaluate(stack[0], x0);
  };
  return central_difference_gradient(perturbed, v0, node.horizon(), h);
}

/// One-sided difference quotients of r -> V[r](x0): forward(t) uses r + h e_t,
/// backward(t) uses r - h e_t. An infeasible side gives +inf (forward) or
/// -inf (backward). With grid controls V can jump in r, so these carry more
/// information than a central difference.
struct OneSidedSlopes {
  Vector forward;
  Vector backward;
};

inline OneSidedSlopes resource_slopes(const NodeModel& node, const std::vector<FiniteDistribution>& laws,
                                      const Vector& resource, const StateGrid& grid, const ControlGrid& controls,
                                      const NodeState& x0, double h = 1e-2, const DpOptions& opts = {}) {
  if (!(h > 0.0)) throw ModelError("finite-difference step must be positive");
  const ValueStack base = solve_resource_dp(node, laws, resource, grid, controls, opts);
  const double v0 = evaluate(base[0], x0);
  if (!std::isfinite(v0)) throw InfeasibleError("resource process infeasible at the base point");
  const int horizon = node.horizon();
  OneSidedSlopes out{Vector(horizon), Vector(horizon)};
  for (int t = 0; t < horizon; ++t)
    for (double delta : {h, -h}) {
      ValueStack stack = base;
      Vector r = resource;
      r(t) += delta;
      detail::backward_range(node, laws, NodalMode::resource, r, controls, opts, t, stack);
      const double v = evaluate(stack[0], x0);
      if (delta > 0.0)
        out.forward(t) = std::isfinite(v) ? (v - v0) / h : kInfinity;
      else
        out.backward(t) = std::isfinite(v) ? (v0 - v) / h : -kInfinity;
    }
  return out;
}

/// CSV layout: a header line with the grid spec, then one value per line in
/// row-major grid order ("inf" for infeasible entries).
inline void write_value_function_csv(std::ostream& out, const TabularValueFunction& vf) {
  const auto old_precision = out.precision(17);
  out << "stage," << vf.stage << ",dims," << vf.grid.dim();
  for (const auto& a : vf.grid.axes()) out << ',' << a.lower << ',' << a.upper << ',' << a.points;
  out << '\n';
  for (Eigen::Index g = 0; g < vf.values.size(); ++g) {
    if (std::isinf(vf.values(g)))
      out << "inf\n";
    else
      out << vf.values(g) << '\n';
  }
  out.precision(old_precision);
}

inline TabularValueFunction read_value_function_csv(std::istream& in) {
  std::string header;
  if (!std::getline(in, header)) throw ModelError("value function table is empty");
  std::stringstream hs(header);
  std::vector<std::string> fields;
  for (std::string f; std::getline(hs, f, ',');) fields.push_back(f);
  if (fields.size() < 4 || fields[0] != "stage" || fields[2] != "dims") throw ModelError("bad value function header");
  const int dims = std::stoi(fields[3]);
  if (static_cast<int>(fields.size()) != 4 + 3 * dims) throw ModelError("bad value function grid spec");
  std::vector<GridAxis> axes;
  for (int k = 0; k < dims; ++k)
    axes.push_back({std::stod(fields[4 + 3 * k]), std::stod(fields[5 + 3 * k]), std::stoi(fields[6 + 3 * k])});
  TabularValueFunction vf{StateGrid(std::move(axes)), Vector(), std::stoi(fields[1])};
  vf.values.resize(vf.grid.size());
  std::string line;
  for (int g = 0; g < vf.grid.size(); ++g) {
    if (!std::getline(in, line)) throw ModelError("value function table is truncated");
    vf.values(g) = line == "inf" ? kInfinity : std::stod(line);
  }
  return vf;
}

}  // namespace mgdecomp
