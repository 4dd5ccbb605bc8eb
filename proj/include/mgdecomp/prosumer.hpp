#pragma once

#include <algorithm>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "mgdecomp/errors.hpp"

// Unit convention: controls and node/edge flows are powers (kW), stocks and
// demands are energies over one step (kWh), dt is the step length in hours.

namespace mgdecomp {

struct BatteryParams {
  double auto_discharge = 1.0;  // alpha_b
  double charge_yield = 1.0;    // rho_c
  double discharge_yield = 1.0; // rho_d
  double level_min = 0.0;
  double level_max = 0.0;
  double power_min = 0.0;  // < 0, discharge
  double power_max = 0.0;  // > 0, charge

  void validate() const {
    if (!(auto_discharge > 0.0 && auto_discharge <= 1.0)) throw ModelError("battery auto-discharge must lie in (0,1]");
    if (!(charge_yield > 0.0 && charge_yield <= 1.0)) throw ModelError("battery charge yield must lie in (0,1]");
    if (!(discharge_yield > 0.0 && discharge_yield <= 1.0)) throw ModelError("battery discharge yield must lie in (0,1]");
    if (!(level_min >= 0.0 && level_min < level_max)) throw ModelError("battery needs 0 <= level_min < level_max");
    if (!(power_min < 0.0 && power_max > 0.0)) throw ModelError("battery needs power_min < 0 < power_max");
  }
};

struct TankParams {
  double conduction_loss = 1.0;  // alpha_h
  double conversion = 1.0;       // beta_h
  double level_min = 0.0;
  double level_max = 0.0;
  double heating_max = 0.0;
  double reference_level = 0.0;  // h_ref
  double penalty_rate = 0.0;     // kappa

  void validate() const {
    if (!(conduction_loss > 0.0 && conduction_loss <= 1.0)) throw ModelError("tank conduction loss must lie in (0,1]");
    if (!(conversion > 0.0)) throw ModelError("tank conversion must be positive");
    if (!(level_min >= 0.0 && level_min <= reference_level && reference_level <= level_max && level_min < level_max))
      throw ModelError("tank needs 0 <= level_min <= reference_level <= level_max");
    if (!(heating_max >= 0.0)) throw ModelError("tank heating bound must be nonnegative");
    if (!(penalty_rate >= 0.0)) throw ModelError("tank penalty rate must be nonnegative");
  }
};

/// One realization of the node-local noise over a step.
struct NodeNoise {
  double hot_water = 0.0;    // d_hw, energy >= 0
  double electricity = 0.0;  // d_el, residual energy demand (solar aggregated in)
};

/// Node state: (battery, tank) with a battery, (tank) without.
using NodeState = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, 2, 1>;

struct NodeControl {
  double battery = 0.0;      // u_b, signed
  double heating = 0.0;      // u_t
  double grid_import = 0.0;  // u_ne
};

inline double battery_step(const BatteryParams& p, double dt, double level, double power) {
  const double charge = std::max(power, 0.0);
  const double discharge = std::max(-power, 0.0);
  return p.auto_discharge * level + dt * (p.charge_yield * charge - discharge / p.discharge_yield);
}

inline double tank_step(const TankParams& p, double dt, double level, double heating, double hot_water) {
  return p.conduction_loss * level + dt * p.conversion * heating - hot_water;
}

/// Node flow injected into the network (power; positive means export).
inline double node_balance(double grid_import, double electricity, double battery, double heating, double dt) {
  return grid_import - electricity / dt - battery - heating;
}

inline double stage_cost(double price, double grid_import, double dt) { return price * grid_import * dt; }

/// Hinge penalty on the final tank level; the tank is the last state component.
inline double terminal_cost(const TankParams& p, const NodeState& final_state) {
  const double tank = final_state(final_state.size() - 1);
  return p.penalty_rate * std::max(0.0, p.reference_level - tank);
}

struct NodeModel {
  std::optional<BatteryParams> battery;
  TankParams tank;
  double import_max = 0.0;
  double dt = 0.25;
  std::vector<double> import_price;  // per stage, cost per energy

  bool has_battery() const { return battery.has_value(); }
  int state_dim() const { return has_battery() ? 2 : 1; }
  int horizon() const { return static_cast<int>(import_price.size()); }
  int tank_index() const { return state_dim() - 1; }

  void validate() const {
    if (battery) battery->validate();
    tank.validate();
    if (!(import_max >= 0.0)) throw ModelError("import bound must be nonnegative");
    if (!(dt > 0.0)) throw ModelError("step length must be positive");
    if (import_price.empty()) throw ModelError("import price vector is empty");
  }

  NodeState lower_bounds() const {
    NodeState x(state_dim());
    if (battery) x(0) = battery->level_min;
    x(tank_index()) = tank.level_min;
    return x;
  }

  NodeState upper_bounds() const {
    NodeState x(state_dim());
    if (battery) x(0) = battery->level_max;
    x(tank_index()) = tank.level_max;
    return x;
  }

  NodeState step(const NodeState& x, const NodeControl& u, const NodeNoise& w) const {
    NodeState next(state_dim());
    if (battery) next(0) = battery_step(*battery, dt, x(0), u.battery);
    next(tank_index()) = tank_step(tank, dt, x(tank_index()), u.heating, w.hot_water);
    return next;
  }

  bool within_bounds(const NodeState& x, double tol = 1e-9) const {
    const NodeState lo = lower_bounds(), hi = upper_bounds();
    for (int k = 0; k < state_dim(); ++k)
      if (x(k) < lo(k) - tol || x(k) > hi(k) + tol) return false;
    return true;
  }

  double balance(const NodeControl& u, const NodeNoise& w) const {
    return node_balance(u.grid_import, w.electricity, u.battery, u.heating, dt);
  }

  double cost(int t, const NodeControl& u) const { return stage_cost(import_price.at(t), u.grid_import, dt); }

  double terminal(const NodeState& x) const { return terminal_cost(tank, x); }
};

}  // namespace mgdecomp
