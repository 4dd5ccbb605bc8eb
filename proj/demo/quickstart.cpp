// Bounds from the three solvers on a small generated microgrid, then a
// policy simulation for each value stack.

#include <iomanip>
#include <iostream>

#include "mgdecomp/coordination.hpp"
#include "mgdecomp/policy_sim.hpp"
#include "mgdecomp/sddp.hpp"

using namespace mgdecomp;

int main() {
  GeneratorOptions gen;
  gen.horizon = 24;  // six hours at 15 minutes
  const Instance inst = generate_family(3, 7, gen);

  const GridOptions grid{11, 5, 5};
  auto dadp = dadp_defaults();
  dadp.grid = grid;
  dadp.gradient_scenarios = 200;
  dadp.optimizer.max_iterations = 20;
  auto padp = padp_defaults();
  padp.grid = grid;
  padp.optimizer.max_iterations = 5;
  SddpOptions sddp;
  sddp.resample_k = 10;
  sddp.upper_bound_scenarios = 200;

  const auto lb = dadp_run(inst, dadp);
  const auto ub = padp_run(inst, padp);
  const auto cuts = sddp_run(inst, sddp);

  std::cout << std::setprecision(6);
  std::cout << "DADP lower bound " << lb.bound << " (" << lb.iterations << " iterations)\n";
  std::cout << "PADP upper bound " << ub.bound << " (" << ub.iterations << " iterations)\n";
  std::cout << "SDDP lower bound " << cuts.lower_bound << " (" << cuts.iterations << " iterations, "
            << cuts.stop_reason << ")\n";

  const auto controls = node_control_grids(inst, grid);
  for (const auto& stack : {GlobalValueStack::from_sddp(cuts), GlobalValueStack::from_coordination(StackKind::dadp, lb, controls),
                            GlobalValueStack::from_coordination(StackKind::padp, ub, controls)}) {
    const auto rep = simulate_policy(inst, stack, 1000, 1);
    std::cout << to_string(stack.kind) << " policy: " << rep.mean << " +- " << rep.half_width << '\n';
  }
}
