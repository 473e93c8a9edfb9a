#pragma once

#include <cmath>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

#include "spf/filters.hpp"
#include "spf/kalman.hpp"
#include "spf/kernels.hpp"
#include "spf/models.hpp"
#include "spf/scenarios.hpp"
#include "spf/stein.hpp"

namespace spf {

struct CheckResult {
  std::string module;
  std::string invariant;
  double observed = 0.0;
  double bound = 0.0;
  bool pass = false;
};

/// Central differences of a scalar function.
inline StateVector finite_difference_gradient(const std::function<double(const StateVector&)>& f, const StateVector& x,
                                              double h = 1e-6) {
  StateVector g(x.size());
  for (Index i = 0; i < x.size(); ++i) {
    StateVector a = x, b = x;
    a[i] += h;
    b[i] -= h;
    g[i] = (f(a) - f(b)) / (2.0 * h);
  }
  return g;
}

/// max_i |a_i - b_i| / max(1, max_i |b_i|).
inline double gradient_rel_error(const StateVector& analytic, const StateVector& numeric) {
  return (analytic - numeric).cwiseAbs().maxCoeff() / std::max(1.0, numeric.cwiseAbs().maxCoeff());
}

namespace checks {

/// Worst relative error of the model score over `points` random (x, z).
inline double worst_score_error(const ObservationModel& m, int points, RngStream& rng,
                                const std::function<StateVector(RngStream&)>& draw_x,
                                const std::function<Observation(const StateVector&, RngStream&)>& draw_z,
                                double h = 1e-6) {
  double worst = 0.0;
  for (int k = 0; k < points; ++k) {
    const StateVector x = draw_x(rng);
    const Observation z = draw_z(x, rng);
    const StateVector fd = finite_difference_gradient([&](const StateVector& y) { return m.log_likelihood(y, z); }, x, h);
    worst = std::max(worst, gradient_rel_error(m.score(x, z), fd));
  }
  return worst;
}

inline std::vector<CheckResult> gradients() {
  std::vector<CheckResult> out;
  RngStream rng = RngStream(101).child(0, Purpose::Test);
  const int points = 200;

  {
    SineBankModel::Params p;
    p.n_fns = 5;
    p.periods = {1.0, 0.5, 2.0, 1.5, 0.8};
    const SineBankModel m(p, 1.7);
    const double e = worst_score_error(
        m, points, rng,
        [&](RngStream& r) {
          StateVector x(10);
          for (Index i = 0; i < 5; ++i) {
            x[2 * i] = r.uniform(0.5, 5.0);
            x[2 * i + 1] = r.uniform(0.0, 2.0 * std::numbers::pi);
          }
          return x;
        },
        [&](const StateVector& x, RngStream& r) {
          Observation z = m.predict_observation(x);
          for (Index i = 0; i < z.size(); ++i) z[i] += r.normal(0.0, 0.3);
          return z;
        });
    out.push_back({"models", "sine bank score vs central differences", e, 1e-5, e <= 1e-5});
  }
  {
    Matrix F = Matrix::Identity(3, 3);
    Matrix H(2, 3);
    H << 1.0, 0.5, 0.0, 0.0, -0.3, 2.0;
    Matrix R(2, 2);
    R << 0.5, 0.1, 0.1, 0.3;
    const LinearGaussianModel m(F, Matrix(3, 0), 0.1 * Matrix::Identity(3, 3), H, R);
    const double e = worst_score_error(
        m, points, rng, [](RngStream& r) { return StateVector(3.0 * r.normal_vector(3)); },
        [](const StateVector&, RngStream& r) { return Observation(2.0 * r.normal_vector(2)); });
    out.push_back({"models", "linear-Gaussian score vs central differences", e, 1e-5, e <= 1e-5});
  }
  {
    Eigen::VectorXd a(2), b(2);
    a << 2.0, 0.0;
    b << -2.0, 1.0;
    const GaussianMixtureObservation m({{a, 0.5, 1.0}, {b, 0.8, 2.0}});
    const double e = worst_score_error(
        m, points, rng, [](RngStream& r) { return StateVector(2.0 * r.normal_vector(2)); },
        [](const StateVector&, RngStream& r) { return Observation(r.normal_vector(2)); });
    out.push_back({"models", "Gaussian-mixture score vs central differences", e, 1e-5, e <= 1e-5});
  }
  {
    ParticleSet p(RngStream(7).child(0, Purpose::Test).normal_vector(60).reshaped(20, 3));
    const GaussianPrior g = GaussianPrior::fit(p);
    double worst = 0.0;
    for (int k = 0; k < points; ++k) {
      const StateVector x = 2.0 * rng.normal_vector(3);
      const StateVector fd =
          finite_difference_gradient([&](const StateVector& y) { return g.evaluate(y).log_likelihood; }, x);
      worst = std::max(worst, gradient_rel_error(g.evaluate(x).score, fd));
    }
    out.push_back({"steinflow", "Gaussian prior score vs central differences", worst, 1e-5, worst <= 1e-5});
  }
  {
    GridLocalizeScenario::Params gp;
    GridLocalizeScenario sc(make_two_room_map(), gp);
    const auto obs = sc.observation_model(1);
    const Episode ep = sc.simulate(points, rng.child(1, Purpose::Truth));
    double worst = 0.0;
    for (std::size_t k = 0; k < ep.truth.size(); ++k) {
      StateVector x = ep.truth[k];
      x[0] += rng.normal(0.0, 0.2);
      x[1] += rng.normal(0.0, 0.2);
      x[2] += rng.normal(0.0, 0.05);
      const Observation& z = *ep.observations[k];
      const StateVector fd =
          finite_difference_gradient([&](const StateVector& y) { return obs->log_likelihood(y, z); }, x, 1e-7);
      worst = std::max(worst, gradient_rel_error(obs->score(x, z), fd));
    }
    out.push_back({"models", "grid beam score vs central differences", worst, 1e-3, worst <= 1e-3});
  }
  {
    double worst = 0.0;
    for (int k = 0; k < 20; ++k) {
      ParticleSet p(rng.normal_vector(5 * 3).reshaped(5, 3));
      Matrix A = rng.normal_vector(9).reshaped(3, 3);
      const KernelSpec specs[2] = {KernelSpec::isotropic(0.5 + rng.uniform()),
                                   KernelSpec::anisotropic(A * A.transpose() + 0.1 * Matrix::Identity(3, 3))};
      for (const auto& spec : specs) {
        const GramResult g = gram_and_grads(p, spec);
        for (Index j = 0; j < p.size(); ++j)
          for (Index l = 0; l < p.size(); ++l) {
            const StateVector xl = p.particle(l);
            const StateVector fd = finite_difference_gradient(
                [&](const StateVector& y) { return kernel_eval(spec, y, xl); }, p.particle(j));
            worst = std::max(worst, gradient_rel_error(g.grad.row(j * p.size() + l).transpose(), fd));
          }
      }
    }
    out.push_back({"kernels", "kernel gradients vs central differences", worst, 1e-5, worst <= 1e-5});
  }
  return out;
}

inline std::vector<CheckResult> stein() {
  std::vector<CheckResult> out;
  double worst = 0.0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    RngStream r = RngStream(seed).child(0, Purpose::Test);
    ParticleSet p(r.normal_vector(2000).reshaped(1000, 2));
    const PosteriorScore s = score_batch(p, [](Index, const StateVector& x) {
      return TargetEval{-0.5 * x.squaredNorm(), 0.0, -x};
    });
    const GramResult g = gram_and_grads(p, KernelSpec::isotropic(median_heuristic(p)));
    const Matrix phi = phi_hat(p, s, g);
    worst = std::max(worst, phi.colwise().mean().norm());
  }
  out.push_back({"steinflow", "mean phi norm on N(0, I2) samples (5 seeds, worst)", worst, 0.1, worst <= 0.1});

  RngStream r = RngStream(11).child(0, Purpose::Test);
  ParticleSet p(r.normal_vector(10000).reshaped(10000, 1));
  const PosteriorScore s = score_batch(p, [](Index, const StateVector& x) {
    return TargetEval{-0.5 * x.squaredNorm(), 0.0, -x};
  });
  const double diag = stein_trace_diagnostic(p, s, [](const StateVector& x) {
    return TestFunctionValue{x, Matrix::Identity(x.size(), x.size())};
  });
  out.push_back({"steinflow", "Stein trace diagnostic, phi(x) = x, 1e4 samples", std::abs(diag), 0.05,
                 std::abs(diag) <= 0.05});
  return out;
}

inline std::vector<CheckResult> resampling() {
  std::vector<CheckResult> out;
  {
    Eigen::VectorXd w(3);
    w << 0.5, 0.3, 0.2;
    RngStream r = RngStream(5).child(0, Purpose::Test);
    Eigen::Vector3d counts = Eigen::Vector3d::Zero();
    const int trials = 100000;
    for (int k = 0; k < trials; ++k)
      for (Index i : low_variance_resample(w, r, 10)) counts[i] += 1.0;
    counts /= trials;
    const Eigen::Vector3d expected(5.0, 3.0, 2.0);
    const double rel = ((counts - expected).array() / expected.array()).abs().maxCoeff();
    out.push_back({"filters", "low-variance mean counts vs N*w (1e5 trials)", rel, 0.01, rel <= 0.01});
  }
  {
    RngStream r = RngStream(6).child(0, Purpose::Test);
    int bad = 0;
    for (int k = 0; k < 1000; ++k) {
      const Index n = 1 + static_cast<Index>(r.below(64));
      const auto idx = low_variance_resample(Eigen::VectorXd::Constant(n, 1.0 / static_cast<double>(n)), r);
      for (Index i = 0; i < n; ++i)
        if (idx[static_cast<std::size_t>(i)] != i) ++bad;
    }
    out.push_back({"filters", "uniform weights select each index once", static_cast<double>(bad), 0.0, bad == 0});
  }
  {
    Eigen::VectorXd w(2);
    w << 0.75, 0.25;
    int bad = 0;
    for (int k = 0; k < 1000; ++k) {
      const double u = (k + 0.5) / 1000.0 * 0.5;
      const auto idx = low_variance_resample(w, 2, u);
      const long zeros = std::count(idx.begin(), idx.end(), Index{0});
      if (zeros != (u < 0.25 ? 2 : 1)) ++bad;
    }
    out.push_back({"filters", "weights (0.75, 0.25), N=2 case split at u=0.25", static_cast<double>(bad), 0.0,
                   bad == 0});
  }
  return out;
}

inline std::vector<CheckResult> oracle() {
  std::vector<CheckResult> out;
  const LinearGaussianModel m = LinearGaussianModel::random_walk(1, 0.0, 1.0);
  {
    RngStream r = RngStream(21).child(0, Purpose::Test);
    FilterState st{ParticleSet(r.normal_vector(200).reshaped(200, 1))};
    FilterConfig cfg;
    cfg.particles = 200;
    cfg.iterations = 30;
    Observation z(1);
    z << 1.0;
    const FilterState post = spf_update(st, z, m, cfg);
    const auto [mean, cov] = particle_mean_cov(post.particles);
    out.push_back({"filters", "conjugate update |mean - 0.5|", std::abs(mean[0] - 0.5), 0.05,
                   std::abs(mean[0] - 0.5) <= 0.05});
    out.push_back({"filters", "conjugate update |var - 0.5|", std::abs(cov(0, 0) - 0.5), 0.1,
                   std::abs(cov(0, 0) - 0.5) <= 0.1});
  }
  for (int kind = 0; kind < 2; ++kind) {
    LinGaussScenario sc({});
    const LinearGaussianModel& lm = *sc.linear_model();
    const double sd = std::sqrt(steady_state_covariance(lm)(0, 0));
    const Episode ep = sc.simulate(30, RngStream(31).child(0, Purpose::Truth));
    RngStream init = RngStream(31).child(0, Purpose::Init);
    const RngStream base = RngStream(31).child(0, Purpose::Process);
    const Index n = kind == 0 ? 100 : 1000;
    FilterState st(sc.initial_particles(n, ep, init));
    auto [m0, c0] = particle_mean_cov(st.particles);
    Gaussian g{m0, c0};
    FilterConfig cfg;
    cfg.particles = n;
    cfg.iterations = 30;
    double sq = 0.0;
    for (std::size_t t = 0; t < ep.truth.size(); ++t) {
      st = kind == 0 ? spf_step(st, ep.controls[t], ep.observations[t], lm, lm, cfg, base)
                     : pf_step(st, ep.controls[t], ep.observations[t], lm, lm, base);
      g = lingauss_step_oracle(lm, g, ep.controls[t], *ep.observations[t]);
      sq += (particle_mean_cov(st.particles).first - g.mean).squaredNorm();
    }
    const double gap = std::sqrt(sq / static_cast<double>(ep.truth.size())) / sd;
    out.push_back({"filters",
                   kind == 0 ? "SPF N=100 30-step mean gap / steady-state sd" : "PF N=1000 30-step mean gap / steady-state sd",
                   gap, 0.1, gap <= 0.1});
  }
  return out;
}

}  // namespace checks

inline const std::vector<std::string>& check_suite_names() {
  static const std::vector<std::string> names = {"gradients", "stein", "resampling", "oracle"};
  return names;
}

/// Runs a named suite; throws std::invalid_argument for an unknown name.
inline std::vector<CheckResult> run_check_suite(const std::string& name) {
  if (name == "gradients") return checks::gradients();
  if (name == "stein") return checks::stein();
  if (name == "resampling") return checks::resampling();
  if (name == "oracle") return checks::oracle();
  throw std::invalid_argument("unknown check suite '" + name + "'");
}

}  // namespace spf
