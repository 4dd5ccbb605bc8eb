#pragma once

#include "mgdecomp/instance.hpp"
#include "mgdecomp/nodal_dp.hpp"

namespace fixtures {

using namespace mgdecomp;

// Node whose states and controls stay on the grid: dt = 0.5, lossless
// devices, battery levels {0,1,2}, tank levels {0,..,4}.
inline NodeModel grid_exact_node(bool with_battery, int horizon, double price = 1.0) {
  NodeModel n;
  n.dt = 0.5;
  if (with_battery) {
    BatteryParams b;
    b.level_min = 0.0;
    b.level_max = 2.0;
    b.power_min = -2.0;
    b.power_max = 2.0;
    n.battery = b;
  }
  n.tank.level_min = 0.0;
  n.tank.level_max = 4.0;
  n.tank.heating_max = 4.0;
  n.tank.reference_level = 2.0;
  n.tank.penalty_rate = 3.0;
  n.import_max = 8.0;
  n.import_price.assign(horizon, price);
  return n;
}

inline StateGrid grid_exact_states(const NodeModel& n) {
  std::vector<GridAxis> axes;
  if (n.battery) axes.push_back({0.0, 2.0, 3});
  axes.push_back({0.0, 4.0, 5});
  return StateGrid(axes);
}

inline ControlGrid grid_exact_controls(const NodeModel& n) {
  ControlGrid c;
  if (n.battery) c.battery = {-2.0, 0.0, 2.0};
  c.heating = {0.0, 2.0, 4.0};
  return c;
}

// Two equiprobable atoms: (hot water, electricity) energies with
// electricity / dt integral.
inline FiniteDistribution two_atom_law(double hw0, double el0, double hw1, double el1) {
  return make_distribution(std::vector<std::vector<double>>{{hw0, el0}, {hw1, el1}}, {0.5, 0.5});
}

inline FiniteDistribution point_law(double hw, double el) {
  return make_distribution(std::vector<std::vector<double>>{{hw, el}}, {1.0});
}

// Grid-exact instance on one or two nodes. Node 1 has a battery; node 2
// (if present) has none and is joined to node 1 by an edge with linear cost.
// Demands are even multiples of dt so continuous optima stay on the grid.
inline Instance tiny_instance(int num_nodes, bool stochastic, int horizon = 3) {
  const std::vector<double> prices0{1.0, 3.0, 2.0, 1.0}, prices1{2.0, 1.0, 3.0, 2.0};
  Instance inst;
  inst.horizon = horizon;
  inst.dt = 0.5;
  std::vector<std::vector<FiniteDistribution>> laws(num_nodes);
  for (int i = 0; i < num_nodes; ++i) {
    NodeModel n = grid_exact_node(i == 0, horizon);
    for (int t = 0; t < horizon; ++t) n.import_price[t] = (i == 0 ? prices0 : prices1)[t % 4];
    NodeState x0(n.state_dim());
    if (n.battery) x0(0) = 1.0;
    x0(n.tank_index()) = 2.0;
    for (int t = 0; t < horizon; ++t) {
      if (!stochastic)
        laws[i].push_back(point_law(1.0, 1.0));
      else if (i == 0)
        laws[i].push_back(two_atom_law(0.0, 0.0, 1.0, 1.0));
      else
        laws[i].push_back(two_atom_law(1.0, 0.0, 0.0, 1.0));
    }
    inst.nodes.push_back(n);
    inst.initial_state.push_back(x0);
  }
  std::vector<Edge> edges;
  if (num_nodes == 2) edges.push_back({0, 1});
  inst.topology = GraphTopology(num_nodes, edges);
  inst.edge_costs.assign(horizon, std::vector<EdgeCost>(edges.size(), EdgeCost{0.0, 0.05, -4.0, 4.0}));
  inst.noise = NoiseModel(std::move(laws));
  inst.validate();
  return inst;
}

inline std::vector<StateGrid> tiny_state_grids(const Instance& inst) {
  std::vector<StateGrid> g;
  for (const auto& n : inst.nodes) g.push_back(grid_exact_states(n));
  return g;
}

inline std::vector<ControlGrid> tiny_control_grids(const Instance& inst) {
  std::vector<ControlGrid> c;
  for (const auto& n : inst.nodes) c.push_back(grid_exact_controls(n));
  return c;
}

}  // namespace fixtures
