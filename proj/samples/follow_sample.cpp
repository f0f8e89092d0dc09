// Localize a capsule from one simulated sensor frame, then drive a full
// insertion and trajectory-following withdrawal through the navigator.
#include "capnav/experiments.hpp"

#include <iostream>

int main() {
  using namespace capnav;

  const RunConfig cfg = default_config();
  Rng rng(7);
  const Vec3 truth = cfg.array.center() + Vec3(0.01, -0.02, 0.09);
  const Vec3 moment = Vec3(1.0, 0.5, 0.2).normalized();
  const SensorFrame frame =
      simulate_frame({Dipole{truth, cfg.solver.moment_magnitude * moment}}, cfg.array, cfg.sensing.noise_sigma, Vec3::Zero(), rng);
  const FitResult fit = initialize_pose(frame, std::nullopt, cfg.array, cfg.solver);
  std::cout << "localization error " << 1e3 * (fit.state.position - truth).norm() << " mm after " << fit.iterations
            << " iterations\n";

  Navigator nav(load_environment("tube1"), cfg, 1);
  if (!nav.run_insertion()) {
    std::cerr << "insertion failed\n";
    return 1;
  }
  std::cout << "trajectory length " << 1e3 * nav.session().trajectory.length() << " mm\n";
  nav.run_withdrawal(WithdrawalMethod::tf, {0.5, 0.1});
  std::cout << format_metrics_table(nav.metrics());
  return 0;
}
