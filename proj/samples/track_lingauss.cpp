// Tracks a 2D random walk with the Stein particle filter and the exact
// Kalman filter side by side.
#include <cstdio>

#include "spf/spf.hpp"

int main() {
  using namespace spf;
  const auto model = LinearGaussianModel::random_walk(2, 0.5, 0.2);
  const RngStream root(2024);

  FilterConfig cfg;
  cfg.particles = 100;
  cfg.iterations = 30;

  RngStream init = root.child(0, Purpose::Init);
  FilterState st{ParticleSet(init.normal_vector(2 * cfg.particles).reshaped(cfg.particles, 2))};
  const auto [m0, c0] = particle_mean_cov(st.particles);
  Gaussian kf{m0, c0};

  RngStream truth_rng = root.child(0, Purpose::Truth);
  RngStream sensor_rng = root.child(0, Purpose::Sensor);
  StateVector x = StateVector::Zero(2);
  const RngStream filter_rng = root.child(0, Purpose::Process);

  std::printf("%4s %9s %9s %9s %9s\n", "t", "truth_x", "spf_x", "kalman_x", "spf_sd_x");
  for (int t = 1; t <= 20; ++t) {
    x = model.propagate(x, ControlInput(), truth_rng);
    const Observation z = model.observe(x, sensor_rng);
    st = spf_step(st, ControlInput(), z, model, model, cfg, filter_rng);
    kf = lingauss_step_oracle(model, kf, ControlInput(), z);
    const auto [mean, cov] = particle_mean_cov(st.particles);
    std::printf("%4d %9.4f %9.4f %9.4f %9.4f\n", t, x[0], mean[0], kf.mean[0], std::sqrt(cov(0, 0)));
  }
  return 0;
}
