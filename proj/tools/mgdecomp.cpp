// mgdecomp: generate instances, run solvers, simulate policies, compare runs.
//
// Exit status: 0 on success, 1 on bad input, 2 when a solver returns an
// infinite bound or fails.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "mgdecomp/coordination.hpp"
#include "mgdecomp/instance.hpp"
#include "mgdecomp/policy_sim.hpp"
#include "mgdecomp/sddp.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mgdecomp;

namespace {

constexpr int kUsageError = 1;
constexpr int kSolverError = 2;

struct Failure {
  int status;
  std::string message;
};

// JSON has no infinity; non-finite bounds are written as strings.
json number(double v) {
  if (std::isfinite(v)) return v;
  if (std::isnan(v)) return "nan";
  return v > 0 ? "inf" : "-inf";
}

double number_from(const json& j) {
  if (j.is_number()) return j.get<double>();
  const auto s = j.get<std::string>();
  if (s == "inf") return kInfinity;
  if (s == "-inf") return -kInfinity;
  return std::nan("");
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Failure{kUsageError, "cannot write " + p.string()};
  out << text;
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw Failure{kUsageError, "cannot read " + p.string()};
  return json::parse(in);
}

template <class Writer>
std::string render(Writer&& w) {
  std::ostringstream out;
  w(out);
  return out.str();
}

// "N" sets the state points per axis; "N,B,H" also sets the battery and
// heating control points.
GridOptions parse_grid(const std::string& spec) {
  GridOptions g;
  std::vector<int> v;
  std::stringstream ss(spec);
  for (std::string f; std::getline(ss, f, ',');) v.push_back(std::stoi(f));
  if (v.size() == 1) {
    g.state_points = v[0];
  } else if (v.size() == 3) {
    g = {v[0], v[1], v[2]};
  } else {
    throw Failure{kUsageError, "--grid-points takes N or N,B,H"};
  }
  if (g.state_points < 2 || g.battery_points < 2 || g.heating_points < 2)
    throw Failure{kUsageError, "grid point counts must be at least 2"};
  return g;
}

json grid_json(const GridOptions& g) { return {g.state_points, g.battery_points, g.heating_points}; }

GridOptions grid_from(const json& j) { return {j.at(0).get<int>(), j.at(1).get<int>(), j.at(2).get<int>()}; }

void write_matrix_csv(std::ostream& out, const Matrix& m) {
  out << std::setprecision(17);
  for (Eigen::Index t = 0; t < m.rows(); ++t) {
    for (Eigen::Index i = 0; i < m.cols(); ++i) out << (i ? "," : "") << m(t, i);
    out << '\n';
  }
}

fs::path value_path(const fs::path& dir, int node, int t) {
  return dir / "values" / ("node" + std::to_string(node) + "_t" + std::to_string(t) + ".csv");
}

// ---------------------------------------------------------------------------

struct GenerateArgs {
  int family = 0;
  int nodes = 0, edges = 0;
  std::uint64_t seed = 0;
  int horizon = 96;
  std::string out;
};

int run_generate(const GenerateArgs& a) {
  GeneratorOptions g;
  g.horizon = a.horizon;
  Instance inst;
  if (a.family > 0)
    inst = generate_family(a.family, a.seed, g);
  else if (a.nodes > 0)
    inst = generate_custom(a.nodes, a.edges, a.seed, g);
  else
    throw Failure{kUsageError, "give --family or --nodes/--edges"};
  save_instance(inst, a.out);
  std::cout << "wrote " << a.out << ": " << inst.num_nodes() << " nodes, " << inst.num_edges() << " edges, state dim "
            << inst.total_state_dim() << ", T=" << inst.horizon << '\n';
  return 0;
}

// ---------------------------------------------------------------------------

struct SolveArgs {
  std::string instance, algo, out;
  std::uint64_t seed = 0;
  std::optional<int> scenarios, resample_k, max_iters;
  std::string grid = "51,21,21";
};

int run_solve(const SolveArgs& a) {
  const Instance inst = load_instance(a.instance);
  const fs::path dir(a.out);
  fs::create_directories(dir);
  save_instance(inst, (dir / "instance.json").string());

  json config = {{"command", "solve"}, {"algo", a.algo}, {"instance", a.instance}, {"seed", a.seed}};
  json summary = {{"algo", a.algo}, {"nodes", inst.num_nodes()}, {"edges", inst.num_edges()},
                  {"horizon", inst.horizon}};
  int status = 0;

  if (a.algo == "sddp") {
    SddpOptions o;
    o.seed = a.seed;
    if (a.scenarios) o.upper_bound_scenarios = *a.scenarios;
    if (a.resample_k) o.resample_k = *a.resample_k;
    if (a.max_iters) o.max_iterations = *a.max_iters;
    config["scenarios"] = o.upper_bound_scenarios;
    config["resample_k"] = o.resample_k;
    config["max_iters"] = o.max_iterations;
    config["resample_samples"] = o.resample_samples;
    config["upper_bound_every"] = o.upper_bound_every;
    config["gap_tolerance"] = o.gap_tolerance;
    config["cut_cap"] = o.cut_cap;
    write_file(dir / "config.json", config.dump(2) + "\n");

    const auto run = sddp_run(inst, o);
    write_file(dir / "trace.csv", render([&](std::ostream& s) { write_sddp_trace_csv(s, run); }));
    write_file(dir / "cuts.csv", render([&](std::ostream& s) { write_cuts_csv(s, run); }));
    summary["lower_bound"] = number(run.lower_bound);
    if (!run.upper_checks.empty()) {
      summary["upper_mean"] = number(run.upper_checks.back().mean);
      summary["upper_half_width"] = number(run.upper_checks.back().half_width);
    }
    summary["iterations"] = run.iterations;
    summary["stop_reason"] = run.stop_reason;
    if (!std::isfinite(run.lower_bound)) status = kSolverError;
  } else if (a.algo == "dadp" || a.algo == "padp") {
    const bool price = a.algo == "dadp";
    auto o = price ? dadp_defaults() : padp_defaults();
    o.seed = a.seed;
    o.grid = parse_grid(a.grid);
    if (a.scenarios) o.gradient_scenarios = *a.scenarios;
    if (a.max_iters) o.optimizer.max_iterations = *a.max_iters;
    config["grid_points"] = grid_json(o.grid);
    config["max_iters"] = o.optimizer.max_iterations;
    config["initial_step"] = o.optimizer.initial_step;
    config["step_rule"] = o.optimizer.rule == StepRule::gradient ? "gradient" : "quasi_newton";
    if (price) config["scenarios"] = o.gradient_scenarios;
    else config["fd_step"] = o.fd_step;
    write_file(dir / "config.json", config.dump(2) + "\n");

    CoordinationResult run;
    try {
      run = price ? dadp_run(inst, o) : padp_run(inst, o);
    } catch (const InfeasibleError& e) {
      run.bound = price ? -kInfinity : kInfinity;
      run.stop_reason = e.what();
    }
    const char* key = price ? "lower_bound" : "upper_bound";
    summary[key] = number(run.bound);
    summary["iterations"] = run.iterations;
    summary["evaluations"] = run.evaluations;
    summary["stop_reason"] = run.stop_reason;
    write_file(dir / "trace.csv", render([&](std::ostream& s) { write_trace_csv(s, run.trace); }));
    if (run.process.size()) write_file(dir / "process.csv", render([&](std::ostream& s) { write_matrix_csv(s, run.process); }));
    if (!run.node_values.empty()) {
      fs::create_directories(dir / "values");
      for (int i = 0; i < inst.num_nodes(); ++i)
        for (int t = 0; t <= inst.horizon; ++t)
          write_file(value_path(dir, i, t),
                     render([&](std::ostream& s) { write_value_function_csv(s, run.node_values[i][t]); }));
      write_file(dir / "edges.csv",
                 render([&](std::ostream& s) { write_matrix_csv(s, Matrix(run.edge_stage_values)); }));
    }
    if (!run.finite()) status = kSolverError;
  } else {
    throw Failure{kUsageError, "unknown --algo " + a.algo};
  }

  write_file(dir / "summary.json", summary.dump(2) + "\n");
  std::cout << summary.dump() << '\n';
  return status;
}

// ---------------------------------------------------------------------------

GlobalValueStack load_stack(const fs::path& dir, const Instance& inst, const json& config) {
  const std::string algo = config.at("algo");
  if (algo == "sddp") {
    std::ifstream in(dir / "cuts.csv");
    if (!in) throw Failure{kUsageError, "run has no cuts.csv"};
    GlobalValueStack s;
    s.kind = StackKind::sddp;
    s.pools = read_cuts_csv(in, inst.horizon);
    for (const auto& p : s.pools)
      for (const auto& c : p.cuts)
        if (c.slope.size() != inst.total_state_dim()) throw Failure{kUsageError, "cuts do not match the instance"};
    return s;
  }
  CoordinationResult run;
  run.node_values.resize(inst.num_nodes());
  for (int i = 0; i < inst.num_nodes(); ++i)
    for (int t = 0; t <= inst.horizon; ++t) {
      std::ifstream in(value_path(dir, i, t));
      if (!in) throw Failure{kUsageError, "missing value function " + value_path(dir, i, t).string()};
      run.node_values[i].push_back(read_value_function_csv(in));
    }
  std::ifstream edges(dir / "edges.csv");
  if (!edges) throw Failure{kUsageError, "run has no edges.csv"};
  run.edge_stage_values = Vector::Zero(inst.horizon);
  for (int t = 0; t < inst.horizon; ++t) edges >> run.edge_stage_values(t);
  if (!edges) throw Failure{kUsageError, "edges.csv is truncated"};
  const auto controls = node_control_grids(inst, grid_from(config.at("grid_points")));
  return GlobalValueStack::from_coordination(algo == "dadp" ? StackKind::dadp : StackKind::padp, run, controls);
}

struct SimulateArgs {
  std::string run, instance, out;
  std::uint64_t seed = 0;
  int scenarios = 5000;
};

int run_simulate(const SimulateArgs& a) {
  const fs::path dir(a.run);
  const json config = read_json(dir / "config.json");
  const Instance inst = load_instance(a.instance.empty() ? (dir / "instance.json").string() : a.instance);
  const auto stack = load_stack(dir, inst, config);
  const auto rep = simulate_policy(inst, stack, a.scenarios, a.seed);

  const fs::path out = a.out.empty() ? dir : fs::path(a.out);
  fs::create_directories(out);
  write_file(out / "simulation.csv", render([&](std::ostream& s) { write_simulation_csv(s, rep); }));
  const json summary = {{"algo", config.at("algo")},
                        {"scenarios", a.scenarios},
                        {"seed", a.seed},
                        {"mean", number(rep.mean)},
                        {"half_width", number(rep.half_width)},
                        {"flagged", rep.flagged},
                        {"max_kirchhoff_residual", rep.max_kirchhoff_residual},
                        {"max_balance_residual", rep.max_balance_residual}};
  write_file(out / "simulation.json", summary.dump(2) + "\n");
  std::cout << summary.dump() << '\n';
  return rep.flagged == a.scenarios ? kSolverError : 0;
}

// ---------------------------------------------------------------------------

struct Row {
  std::string dir, algo;
  std::optional<double> lower, upper, upper_hw, policy, policy_hw;
};

std::string cell(const std::optional<double>& v) {
  if (!v) return "-";
  std::ostringstream s;
  s << std::setprecision(8) << *v;
  return s.str();
}

int run_report(const std::vector<std::string>& dirs, const std::string& csv) {
  std::vector<Row> rows;
  for (const auto& d : dirs) {
    Row r{d, "-", {}, {}, {}, {}, {}};
    const fs::path p(d);
    if (fs::exists(p / "summary.json")) {
      const json s = read_json(p / "summary.json");
      r.algo = s.at("algo");
      if (s.contains("lower_bound")) r.lower = number_from(s["lower_bound"]);
      if (s.contains("upper_bound")) r.upper = number_from(s["upper_bound"]);
      if (s.contains("upper_mean")) r.upper = number_from(s["upper_mean"]);
      if (s.contains("upper_half_width")) r.upper_hw = number_from(s["upper_half_width"]);
    }
    if (fs::exists(p / "simulation.json")) {
      const json s = read_json(p / "simulation.json");
      r.policy = number_from(s["mean"]);
      r.policy_hw = number_from(s["half_width"]);
    }
    rows.push_back(r);
  }

  std::ostringstream table;
  table << "run,algo,lower,upper,upper_half_width,policy_mean,policy_half_width\n";
  for (const auto& r : rows)
    table << r.dir << ',' << r.algo << ',' << cell(r.lower) << ',' << cell(r.upper) << ',' << cell(r.upper_hw) << ',' << cell(r.policy) << ','
          << cell(r.policy_hw) << '\n';
  std::cout << table.str();

  // Bounds are compared within a discretization: the coordination runs
  // bound the gridded problem, sddp the continuous one.
  bool violation = false;
  auto check = [&](const char* name, std::initializer_list<const char*> algos) {
    double lo = -kInfinity, hi = kInfinity;
    for (const auto& r : rows)
      for (const char* al : algos)
        if (r.algo == al) {
          if (r.lower) lo = std::max(lo, *r.lower);
          if (r.upper) hi = std::min(hi, *r.upper + r.upper_hw.value_or(0.0));
        }
    if (!std::isfinite(lo) || !std::isfinite(hi)) {
      std::cout << name << ": incomplete\n";
      return;
    }
    const bool ok = lo <= hi + 1e-6 * std::max(1.0, std::abs(lo));
    violation = violation || !ok;
    std::cout << name << ": lower " << cell(lo) << (ok ? " <= " : " > ") << "upper " << cell(hi)
              << ", gap " << std::setprecision(4) << 100.0 * (hi - lo) / std::max(1e-12, std::abs(hi)) << "%"
              << (ok ? "" : "  SANDWICH VIOLATION") << '\n';
  };
  check("coordination", {"dadp", "padp"});
  check("sddp", {"sddp"});
  if (!csv.empty()) write_file(csv, table.str());
  return violation ? kSolverError : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Stochastic microgrid management: decomposition and SDDP solvers"};
  app.require_subcommand(1);

  GenerateArgs gen;
  auto* g = app.add_subcommand("generate", "write a synthetic instance");
  g->add_option("--family", gen.family, "benchmark family: 3, 6, 12, 24 or 48 nodes");
  g->add_option("--nodes", gen.nodes, "custom node count");
  g->add_option("--edges", gen.edges, "custom edge count");
  g->add_option("--seed", gen.seed);
  g->add_option("--horizon", gen.horizon, "number of stages");
  g->add_option("--out", gen.out, "instance file")->required();

  SolveArgs sol;
  auto* s = app.add_subcommand("solve", "run a solver and write a run directory");
  s->add_option("--instance", sol.instance)->required()->check(CLI::ExistingFile);
  s->add_option("--algo", sol.algo)->required()->check(CLI::IsMember({"sddp", "dadp", "padp"}));
  s->add_option("--seed", sol.seed);
  s->add_option("--scenarios", sol.scenarios, "dadp: gradient samples; sddp: upper bound samples");
  s->add_option("--grid-points", sol.grid, "N or N,B,H (state, battery and heating points)");
  s->add_option("--resample-k", sol.resample_k, "sddp atoms per stage");
  s->add_option("--max-iters", sol.max_iters);
  s->add_option("--out", sol.out, "run directory")->required();

  SimulateArgs sim;
  auto* m = app.add_subcommand("simulate", "simulate the policy of a run directory");
  m->add_option("--run", sim.run, "run directory from solve")->required()->check(CLI::ExistingDirectory);
  m->add_option("--instance", sim.instance, "defaults to the run's own copy");
  m->add_option("--scenarios", sim.scenarios);
  m->add_option("--seed", sim.seed);
  m->add_option("--out", sim.out, "defaults to the run directory");

  std::vector<std::string> report_dirs;
  std::string report_csv;
  auto* r = app.add_subcommand("report", "compare bounds across run directories");
  r->add_option("runs", report_dirs)->required();
  r->add_option("--out", report_csv, "also write the table as CSV");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*g) return run_generate(gen);
    if (*s) return run_solve(sol);
    if (*m) return run_simulate(sim);
    return run_report(report_dirs, report_csv);
  } catch (const Failure& f) {
    std::cerr << "error: " << f.message << '\n';
    return f.status;
  } catch (const ModelError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kSolverError;
  }
}
