#pragma once

#include <cmath>
#include <fstream>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "mgdecomp/detail/random.hpp"
#include "mgdecomp/edge_subproblems.hpp"
#include "mgdecomp/network.hpp"
#include "mgdecomp/nodal_dp.hpp"
#include "mgdecomp/prosumer.hpp"
#include "mgdecomp/uncertainty.hpp"

namespace mgdecomp {

inline constexpr int kSchemaVersion = 1;

/// A complete problem: nodes, graph, edge costs, noise and initial state.
struct Instance {
  int horizon = 0;
  double dt = 0.25;
  std::vector<NodeModel> nodes;
  GraphTopology topology;
  EdgeCostTable edge_costs;  // [t][e]
  NoiseModel noise;
  std::vector<NodeState> initial_state;
  nlohmann::json generator = nlohmann::json::object();

  int num_nodes() const { return static_cast<int>(nodes.size()); }
  int num_edges() const { return topology.num_edges(); }
  IncidenceMatrix incidence() const { return build_incidence(topology); }

  int total_state_dim() const {
    int d = 0;
    for (const auto& n : nodes) d += n.state_dim();
    return d;
  }

  /// Offset of node i's block in the stacked global state.
  int state_offset(int node) const {
    int d = 0;
    for (int i = 0; i < node; ++i) d += nodes[i].state_dim();
    return d;
  }

  Vector global_initial_state() const {
    Vector x(total_state_dim());
    for (int i = 0; i < num_nodes(); ++i) x.segment(state_offset(i), nodes[i].state_dim()) = initial_state[i];
    return x;
  }

  void validate() const {
    if (horizon < 1) throw ModelError("horizon must be at least 1");
    if (!(dt > 0.0)) throw ModelError("dt must be positive");
    if (nodes.empty()) throw ModelError("instance has no nodes");
    if (topology.num_nodes() != num_nodes()) throw ModelError("topology node count does not match nodes");
    if (noise.num_nodes() != num_nodes() || noise.horizon() != horizon) throw ModelError("noise shape does not match");
    if (static_cast<int>(initial_state.size()) != num_nodes()) throw ModelError("initial state count does not match");
    for (int i = 0; i < num_nodes(); ++i) {
      const auto& n = nodes[i];
      const std::string where = "node " + std::to_string(i + 1) + ": ";
      try {
        n.validate();
      } catch (const ModelError& e) {
        throw ModelError(where + e.what());
      }
      if (n.horizon() != horizon) throw ModelError(where + "price vector length differs from horizon");
      if (n.dt != dt) throw ModelError(where + "dt differs from instance dt");
      for (double p : n.import_price)
        if (!std::isfinite(p)) throw ModelError(where + "import price must be finite");
      if (initial_state[i].size() != n.state_dim()) throw ModelError(where + "initial state has wrong dimension");
      if (!n.within_bounds(initial_state[i], 0.0)) throw ModelError(where + "initial state outside device bounds");
      for (int t = 0; t < horizon; ++t) {
        const auto& law = noise.law(t, i);
        if (law.dim() != 2) throw ModelError(where + "noise atoms must be (hot_water, electricity)");
        for (int k = 0; k < law.size(); ++k)
          if (law.atoms()(k, 0) < 0.0) throw ModelError(where + "hot water demand must be nonnegative");
      }
    }
    if (static_cast<int>(edge_costs.size()) != horizon) throw ModelError("edge cost horizon mismatch");
    for (int t = 0; t < horizon; ++t) {
      if (static_cast<int>(edge_costs[t].size()) != num_edges()) throw ModelError("edge cost width mismatch");
      for (int e = 0; e < num_edges(); ++e) {
        try {
          edge_costs[t][e].validate();
        } catch (const ModelError& err) {
          throw ModelError("edge " + std::to_string(e + 1) + ", stage " + std::to_string(t) + ": " + err.what());
        }
      }
    }
  }
};

/// Discretization used by the nodal DP and the policy layer.
struct GridOptions {
  int state_points = 51;
  int battery_points = 21;
  int heating_points = 21;
};

inline std::vector<StateGrid> node_state_grids(const Instance& inst, const GridOptions& g = {}) {
  std::vector<StateGrid> out;
  for (const auto& n : inst.nodes) out.push_back(StateGrid::for_node(n, g.state_points));
  return out;
}

inline std::vector<ControlGrid> node_control_grids(const Instance& inst, const GridOptions& g = {}) {
  std::vector<ControlGrid> out;
  for (const auto& n : inst.nodes) out.push_back(ControlGrid::for_node(n, g.battery_points, g.heating_points));
  return out;
}

// ---------------------------------------------------------------------------
// JSON format. Indices are 1-based in files; null encodes an infinite bound.

namespace detail {

using nlohmann::json;

inline void require_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed,
                         std::initializer_list<const char*> required = {}) {
  if (!j.is_object()) throw ModelError(where + ": expected an object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [k, v] : j.items())
    if (!ok.count(k)) throw ModelError(where + ": unknown key '" + k + "'");
  for (const char* k : required)
    if (!j.contains(k)) throw ModelError(where + ": missing key '" + std::string(k) + "'");
}

inline double bound_from_json(const json& j, double missing) { return j.is_null() ? missing : j.get<double>(); }

inline json bound_to_json(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

inline json edge_cost_to_json(const EdgeCost& c) {
  return {{"quadratic", c.quadratic}, {"linear", c.linear}, {"lower", bound_to_json(c.lower)},
          {"upper", bound_to_json(c.upper)}};
}

inline EdgeCost edge_cost_from_json(const json& j, const std::string& where) {
  require_keys(j, where, {"quadratic", "linear", "lower", "upper"});
  EdgeCost c;
  c.quadratic = j.value("quadratic", 0.0);
  c.linear = j.value("linear", 0.0);
  if (j.contains("lower")) c.lower = bound_from_json(j["lower"], -kInfinity);
  if (j.contains("upper")) c.upper = bound_from_json(j["upper"], kInfinity);
  return c;
}

}  // namespace detail

inline nlohmann::json to_json(const Instance& inst) {
  using nlohmann::json;
  json nodes = json::array();
  for (int i = 0; i < inst.num_nodes(); ++i) {
    const auto& n = inst.nodes[i];
    json node;
    if (n.battery) {
      const auto& b = *n.battery;
      node["battery"] = {{"auto_discharge", b.auto_discharge}, {"charge_yield", b.charge_yield},
                         {"discharge_yield", b.discharge_yield}, {"level_min", b.level_min},
                         {"level_max", b.level_max}, {"power_min", b.power_min}, {"power_max", b.power_max}};
    }
    const auto& h = n.tank;
    node["tank"] = {{"conduction_loss", h.conduction_loss}, {"conversion", h.conversion}, {"level_min", h.level_min},
                    {"level_max", h.level_max}, {"heating_max", h.heating_max},
                    {"reference_level", h.reference_level}, {"penalty_rate", h.penalty_rate}};
    node["import_max"] = n.import_max;
    node["import_price"] = n.import_price;
    json x0;
    if (n.battery) x0["battery"] = inst.initial_state[i](0);
    x0["tank"] = inst.initial_state[i](n.tank_index());
    node["initial_state"] = x0;
    json laws = json::array();
    for (int t = 0; t < inst.horizon; ++t) {
      const auto& law = inst.noise.law(t, i);
      json atoms = json::array();
      for (int k = 0; k < law.size(); ++k) atoms.push_back({law.atoms()(k, 0), law.atoms()(k, 1)});
      laws.push_back({{"atoms", atoms}, {"probabilities", law.probabilities()}});
    }
    node["noise"] = laws;
    nodes.push_back(node);
  }
  json edges = json::array();
  for (int e = 0; e < inst.num_edges(); ++e) {
    const auto& edge = inst.topology.edges()[e];
    json costs = json::array();
    for (int t = 0; t < inst.horizon; ++t) costs.push_back(detail::edge_cost_to_json(inst.edge_costs[t][e]));
    edges.push_back({{"tail", edge.tail + 1}, {"head", edge.head + 1}, {"cost", costs}});
  }
  return {{"schema_version", kSchemaVersion}, {"horizon", inst.horizon}, {"dt", inst.dt},
          {"nodes", nodes},                   {"edges", edges},         {"generator", inst.generator}};
}

inline Instance instance_from_json(const nlohmann::json& j) {
  using detail::require_keys;
  require_keys(j, "instance", {"schema_version", "horizon", "dt", "nodes", "edges", "generator"},
               {"schema_version", "horizon", "dt", "nodes"});
  if (j["schema_version"].get<int>() != kSchemaVersion)
    throw ModelError("unsupported schema_version " + j["schema_version"].dump());
  Instance inst;
  inst.horizon = j["horizon"].get<int>();
  inst.dt = j["dt"].get<double>();
  if (j.contains("generator")) inst.generator = j["generator"];
  std::vector<std::vector<FiniteDistribution>> laws;
  for (std::size_t i = 0; i < j["nodes"].size(); ++i) {
    const auto& jn = j["nodes"][i];
    const std::string where = "node " + std::to_string(i + 1);
    require_keys(jn, where, {"battery", "tank", "import_max", "import_price", "initial_state", "noise"},
                 {"tank", "import_max", "import_price", "initial_state", "noise"});
    NodeModel n;
    n.dt = inst.dt;
    if (jn.contains("battery") && !jn["battery"].is_null()) {
      const auto& jb = jn["battery"];
      require_keys(jb, where + " battery",
                   {"auto_discharge", "charge_yield", "discharge_yield", "level_min", "level_max", "power_min",
                    "power_max"},
                   {"level_max", "power_min", "power_max"});
      BatteryParams b;
      b.auto_discharge = jb.value("auto_discharge", 1.0);
      b.charge_yield = jb.value("charge_yield", 1.0);
      b.discharge_yield = jb.value("discharge_yield", 1.0);
      b.level_min = jb.value("level_min", 0.0);
      b.level_max = jb["level_max"].get<double>();
      b.power_min = jb["power_min"].get<double>();
      b.power_max = jb["power_max"].get<double>();
      n.battery = b;
    }
    const auto& jt = jn["tank"];
    require_keys(jt, where + " tank",
                 {"conduction_loss", "conversion", "level_min", "level_max", "heating_max", "reference_level",
                  "penalty_rate"},
                 {"level_max", "heating_max"});
    n.tank.conduction_loss = jt.value("conduction_loss", 1.0);
    n.tank.conversion = jt.value("conversion", 1.0);
    n.tank.level_min = jt.value("level_min", 0.0);
    n.tank.level_max = jt["level_max"].get<double>();
    n.tank.heating_max = jt["heating_max"].get<double>();
    n.tank.reference_level = jt.value("reference_level", 0.0);
    n.tank.penalty_rate = jt.value("penalty_rate", 0.0);
    n.import_max = jn["import_max"].get<double>();
    n.import_price = jn["import_price"].get<std::vector<double>>();

    const auto& jx = jn["initial_state"];
    require_keys(jx, where + " initial_state", {"battery", "tank"}, {"tank"});
    NodeState x0(n.state_dim());
    if (n.battery) {
      if (!jx.contains("battery")) throw ModelError(where + ": initial_state needs a battery level");
      x0(0) = jx["battery"].get<double>();
    } else if (jx.contains("battery")) {
      throw ModelError(where + ": initial battery level given for a node without battery");
    }
    x0(n.tank_index()) = jx["tank"].get<double>();
    inst.initial_state.push_back(x0);

    std::vector<FiniteDistribution> node_laws;
    for (std::size_t t = 0; t < jn["noise"].size(); ++t) {
      const auto& jl = jn["noise"][t];
      require_keys(jl, where + " noise", {"atoms", "probabilities"}, {"atoms", "probabilities"});
      node_laws.push_back(make_distribution(jl["atoms"].get<std::vector<std::vector<double>>>(),
                                            jl["probabilities"].get<std::vector<double>>()));
    }
    if (static_cast<int>(node_laws.size()) != inst.horizon)
      throw ModelError(where + ": noise has " + std::to_string(node_laws.size()) + " stages");
    laws.push_back(std::move(node_laws));
    inst.nodes.push_back(std::move(n));
  }
  std::vector<Edge> edges;
  std::vector<std::vector<EdgeCost>> by_edge;
  if (j.contains("edges")) {
    for (std::size_t e = 0; e < j["edges"].size(); ++e) {
      const auto& je = j["edges"][e];
      const std::string where = "edge " + std::to_string(e + 1);
      require_keys(je, where, {"tail", "head", "cost"}, {"tail", "head", "cost"});
      edges.push_back({je["tail"].get<int>() - 1, je["head"].get<int>() - 1});
      std::vector<EdgeCost> costs;
      if (je["cost"].is_array()) {
        for (const auto& jc : je["cost"]) costs.push_back(detail::edge_cost_from_json(jc, where + " cost"));
        if (static_cast<int>(costs.size()) != inst.horizon) throw ModelError(where + ": cost list length differs from horizon");
      } else {
        costs.assign(inst.horizon, detail::edge_cost_from_json(je["cost"], where + " cost"));
      }
      by_edge.push_back(std::move(costs));
    }
  }
  inst.topology = GraphTopology(static_cast<int>(inst.nodes.size()), edges);
  inst.edge_costs.assign(inst.horizon, std::vector<EdgeCost>(edges.size()));
  for (std::size_t e = 0; e < edges.size(); ++e)
    for (int t = 0; t < inst.horizon; ++t) inst.edge_costs[t][e] = by_edge[e][t];
  inst.noise = NoiseModel(std::move(laws));
  inst.validate();
  return inst;
}

inline Instance load_instance(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ModelError("cannot open instance file " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ModelError("instance file " + path + " is not valid JSON: " + e.what());
  }
  return instance_from_json(j);
}

inline void save_instance(const Instance& inst, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ModelError("cannot write instance file " + path);
  out << to_json(inst).dump(1) << '\n';
}

// ---------------------------------------------------------------------------
// Synthetic generator. Node and edge counts follow the benchmark family
// table; device sizes and demand shapes are synthetic.

struct FamilySize {
  int nodes;
  int edges;
};

inline FamilySize family_size(int family_nodes) {
  switch (family_nodes) {
    case 3: return {3, 3};
    case 6: return {6, 7};
    case 12: return {12, 16};
    case 24: return {24, 33};
    case 48: return {48, 69};
    default: throw ModelError("unknown instance family " + std::to_string(family_nodes) + "-nodes");
  }
}

struct GeneratorOptions {
  int horizon = 96;
  double dt = 0.25;
  int atoms_per_stage = 10;
};

namespace detail {

inline double bump(double hour, double center, double width) {
  const double z = (hour - center) / width;
  return std::exp(-z * z);
}

}  // namespace detail

/// Connected instance with num_nodes nodes and num_edges edges. Every third
/// node (0, 3, ...) has a battery, the node after it has solar panels, and
/// the path edge between them keeps each solar node next to a battery.
inline Instance generate_custom(int num_nodes, int num_edges, std::uint64_t seed, const GeneratorOptions& opts = {}) {
  if (num_nodes < 1) throw ModelError("generator needs at least one node");
  if (num_edges < num_nodes - 1) throw ModelError("generator needs num_edges >= num_nodes - 1 for connectivity");
  if (static_cast<long>(num_edges) > static_cast<long>(num_nodes) * (num_nodes - 1) / 2)
    throw ModelError("too many edges for a simple graph");
  if (opts.horizon < 1 || opts.atoms_per_stage < 1 || !(opts.dt > 0.0)) throw ModelError("bad generator options");

  Instance inst;
  inst.horizon = opts.horizon;
  inst.dt = opts.dt;
  const double dt = opts.dt;
  detail::Rng rng(detail::stream_seed(seed, 0x6e6f646573));

  std::vector<Edge> edges;
  std::set<std::pair<int, int>> used;
  for (int i = 1; i < num_nodes; ++i) {
    edges.push_back({i - 1, i});
    used.insert({i - 1, i});
  }
  while (static_cast<int>(edges.size()) < num_edges) {
    int a = static_cast<int>(rng.below(num_nodes)), b = static_cast<int>(rng.below(num_nodes));
    if (a == b) continue;
    if (a > b) std::swap(a, b);
    if (used.count({a, b})) continue;
    used.insert({a, b});
    edges.push_back({a, b});
  }
  inst.topology = GraphTopology(num_nodes, edges);

  std::vector<std::vector<FiniteDistribution>> laws(num_nodes);
  for (int i = 0; i < num_nodes; ++i) {
    NodeModel n;
    n.dt = dt;
    const int batteries = std::max(1, num_nodes / 3);
    const bool has_battery = i % 3 == 0 && i / 3 < batteries;
    const bool has_solar = i % 3 == 1 && (i - 1) / 3 < batteries;
    if (has_battery) {
      BatteryParams b;
      b.auto_discharge = 0.999;
      b.charge_yield = 0.95;
      b.discharge_yield = 0.95;
      b.level_min = 0.0;
      b.level_max = 3.0;
      b.power_min = -1.5;
      b.power_max = 1.5;
      n.battery = b;
    }
    n.tank.conduction_loss = 0.995;
    n.tank.conversion = 1.0;
    n.tank.level_min = 0.0;
    n.tank.level_max = 8.0;
    n.tank.heating_max = 3.0;
    n.tank.reference_level = 4.0;
    n.tank.penalty_rate = 0.5;
    n.import_max = 12.0;
    const double price_scale = 0.9 + 0.2 * rng.uniform();
    const double load_scale = 0.7 + 0.6 * rng.uniform();
    const double water_scale = 0.6 + 0.6 * rng.uniform();
    n.import_price.resize(opts.horizon);
    NodeState x0(n.state_dim());
    if (has_battery) x0(0) = 1.5;
    x0(n.tank_index()) = 4.0;

    for (int t = 0; t < opts.horizon; ++t) {
      const double hour = std::fmod(t * dt, 24.0);
      n.import_price[t] = price_scale * ((hour < 6.0 || hour >= 22.0) ? 0.15 : 0.25);
      const double load = load_scale * (0.4 + 0.5 * detail::bump(hour, 8.0, 1.5) + 0.8 * detail::bump(hour, 19.5, 2.0));
      const double pv = has_solar ? 1.2 * detail::bump(hour, 13.0, 3.0) : 0.0;
      const double water = water_scale * (0.2 + 1.5 * detail::bump(hour, 7.0, 1.0) + 1.2 * detail::bump(hour, 20.0, 1.5));
      std::vector<std::vector<double>> atoms;
      for (int k = 0; k < opts.atoms_per_stage; ++k) {
        const double zl = 2.0 * rng.uniform() - 1.0, zp = 2.0 * rng.uniform() - 1.0, zw = rng.uniform();
        // Surplus beyond the local load is curtailed, so residual demand is
        // nonnegative and every node can run on its own.
        const double electricity = dt * std::max(0.0, load * (1.0 + 0.25 * zl) - pv * (1.0 + 0.2 * zp));
        const double hot_water = std::min(0.6, dt * water * (0.5 + zw));
        atoms.push_back({hot_water, electricity});
      }
      laws[i].push_back(
          make_distribution(atoms, std::vector<double>(opts.atoms_per_stage, 1.0 / opts.atoms_per_stage)));
    }
    inst.nodes.push_back(std::move(n));
    inst.initial_state.push_back(x0);
  }
  inst.noise = NoiseModel(std::move(laws));
  const EdgeCost line{0.01, 0.0, -8.0, 8.0};
  inst.edge_costs.assign(opts.horizon, std::vector<EdgeCost>(num_edges, line));
  inst.generator = {{"seed", seed},
                    {"nodes", num_nodes},
                    {"edges", num_edges},
                    {"horizon", opts.horizon},
                    {"atoms_per_stage", opts.atoms_per_stage}};
  inst.validate();
  return inst;
}

/// Benchmark family instance ("3", "6", "12", "24" or "48" nodes).
inline Instance generate_family(int family_nodes, std::uint64_t seed, const GeneratorOptions& opts = {}) {
  const FamilySize s = family_size(family_nodes);
  Instance inst = generate_custom(s.nodes, s.edges, seed, opts);
  inst.generator["family"] = std::to_string(family_nodes) + "-nodes";
  return inst;
}

}  // namespace mgdecomp
