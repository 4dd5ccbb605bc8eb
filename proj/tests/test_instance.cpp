#include <filesystem>

#include <gtest/gtest.h>

#include "mgdecomp/instance.hpp"

using namespace mgdecomp;

namespace {
GeneratorOptions short_horizon() {
  GeneratorOptions o;
  o.horizon = 8;
  o.atoms_per_stage = 3;
  return o;
}
}  // namespace

TEST(Generator, FamilySizes) {
  const int families[] = {3, 6, 12, 24, 48};
  const int edges[] = {3, 7, 16, 33, 69};
  for (int k = 0; k < 5; ++k) {
    const auto inst = generate_family(families[k], 1, short_horizon());
    EXPECT_EQ(inst.num_nodes(), families[k]);
    EXPECT_EQ(inst.num_edges(), edges[k]);
    EXPECT_EQ(inst.topology.num_components(), 1);
    int batteries = 0;
    for (const auto& n : inst.nodes) batteries += n.has_battery();
    EXPECT_EQ(batteries, families[k] / 3);
  }
  const auto twelve = generate_family(12, 1);
  EXPECT_EQ(twelve.horizon, 96);
  EXPECT_EQ(twelve.dt, 0.25);
  EXPECT_EQ(twelve.total_state_dim(), 16);
  EXPECT_EQ(2 * twelve.num_nodes(), 24);  // noise dimension
  EXPECT_EQ(generate_family(48, 1, short_horizon()).total_state_dim(), 64);
  EXPECT_THROW(generate_family(5, 1), ModelError);
  EXPECT_THROW(generate_custom(5, 3, 1), ModelError);
}

TEST(Generator, SolarNodesNeighbourABattery) {
  const auto inst = generate_family(24, 3, short_horizon());
  for (int i = 0; i < inst.num_nodes(); ++i) {
    if (i % 3 != 1) continue;
    bool next_to_battery = false;
    for (const auto& e : inst.topology.edges()) {
      const int other = e.tail == i ? e.head : (e.head == i ? e.tail : -1);
      if (other >= 0 && inst.nodes[other].has_battery()) next_to_battery = true;
    }
    EXPECT_TRUE(next_to_battery) << "node " << i;
  }
}

TEST(Generator, SeedReproducible) {
  const auto a = to_json(generate_family(6, 42, short_horizon())).dump();
  const auto b = to_json(generate_family(6, 42, short_horizon())).dump();
  const auto c = to_json(generate_family(6, 43, short_horizon())).dump();
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
}

TEST(Generator, AutarkyIsFeasibleForEveryNode) {
  const auto inst = generate_family(6, 5, short_horizon());
  GridOptions g{11, 5, 5};
  const auto grids = node_state_grids(inst, g);
  const auto controls = node_control_grids(inst, g);
  for (int i = 0; i < inst.num_nodes(); ++i) {
    const auto vf = solve_resource_dp(inst.nodes[i], inst.noise.node_laws(i), Vector::Zero(inst.horizon), grids[i],
                                      controls[i]);
    EXPECT_TRUE(std::isfinite(evaluate(vf[0], inst.initial_state[i]))) << "node " << i;
  }
}

TEST(InstanceJson, RoundTrip) {
  const auto inst = generate_family(3, 9, short_horizon());
  const auto j = to_json(inst);
  const auto back = instance_from_json(j);
  EXPECT_EQ(to_json(back), j);
  const auto path = std::filesystem::temp_directory_path() / "mgdecomp_roundtrip.json";
  save_instance(inst, path.string());
  EXPECT_EQ(to_json(load_instance(path.string())), j);
  std::filesystem::remove(path);
}

TEST(InstanceJson, RejectsUnknownKeysAndBadValues) {
  auto j = to_json(generate_family(3, 9, short_horizon()));
  auto bad = j;
  bad["nodes"][0]["tank"]["colour"] = "red";
  EXPECT_THROW(instance_from_json(bad), ModelError);
  bad = j;
  bad["extra"] = 1;
  EXPECT_THROW(instance_from_json(bad), ModelError);
  bad = j;
  bad["edges"][0]["head"] = 7;
  try {
    instance_from_json(bad);
    FAIL();
  } catch (const ModelError& e) {
    EXPECT_NE(std::string(e.what()).find("edge 1"), std::string::npos);
  }
  bad = j;
  bad["edges"][0]["cost"][0]["quadratic"] = 0.0;
  bad["edges"][0]["cost"][0]["lower"] = nullptr;
  EXPECT_THROW(instance_from_json(bad), ModelError);
  bad = j;
  bad["schema_version"] = 99;
  EXPECT_THROW(instance_from_json(bad), ModelError);
  bad = j;
  bad["nodes"][1]["initial_state"]["tank"] = 100.0;
  EXPECT_THROW(instance_from_json(bad), ModelError);
}

TEST(InstanceJson, NullBoundsAreInfinite) {
  auto j = to_json(generate_family(3, 9, short_horizon()));
  j["edges"][0]["cost"] = {{"quadratic", 1.0}, {"linear", 0.0}, {"lower", nullptr}, {"upper", nullptr}};
  const auto inst = instance_from_json(j);
  EXPECT_TRUE(std::isinf(inst.edge_costs[3][0].lower));
  EXPECT_TRUE(std::isinf(inst.edge_costs[3][0].upper));
}
