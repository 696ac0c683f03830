// Smallest end-to-end use of the library: noisy SIR data, a coarse grid
// posterior, a short neural ensemble and the distance between the two.

#include <cstdio>

#include "epical/epical.hpp"

using namespace epical;

int main() {
  const auto data = synth_generate(presets::sir_reference(1)).densities();
  const auto problem = presets::sir_problem(data);

  const std::vector<std::vector<double>> axes{linspace(0.0, 1.0, 60), linspace(1.0, 30.0, 60)};
  const auto grid = grid_search(problem, axes);

  auto train = presets::sir_train();
  train.epochs = 60;
  const auto ens = run_ensemble(problem, train, 60, 42);
  const auto joint = joint_from_log(ens.log, axes);

  for (std::size_t i = 0; i < 2; ++i) {
    const auto g = grid.marginal(i), n = joint.marginal(i);
    std::printf("%-5s grid mean %7.3f  neural mean %7.3f  hellinger %.2e\n", ens.log.names[i].c_str(),
                g.mean(), n.mean(), hellinger(g, n));
  }
  std::printf("%zu records, %zu failed chains\n", ens.log.size(), ens.failures.size());
}
