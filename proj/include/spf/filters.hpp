#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <boost/math/distributions/chi_squared.hpp>
#include <Eigen/Core>

#include "spf/core.hpp"
#include "spf/grid_map.hpp"
#include "spf/kernels.hpp"
#include "spf/metrics.hpp"
#include "spf/models.hpp"
#include "spf/optimizers.hpp"
#include "spf/stein.hpp"

namespace spf {

enum class KernelKind { IsotropicMedian, HessianScaled };
enum class OptimizerKind { Lbfgs, Adam, Sgd };
enum class PriorKind { Gaussian, Kde };
/// What the L-BFGS y vectors difference: the full flow direction or the raw score.
enum class PairSource { Phi, Score };

struct ReprojectionConfig {
  bool enabled = false;
  long start_step = 5;  // first filter step (1-based) at which it may trigger; earlier steps converge locally
  double threshold = std::numeric_limits<double>::quiet_NaN();  // NaN: 0.5 * chi2_0.99(K)
};

struct FilterConfig {
  Index particles = 50;
  double step_size = 0.5;
  int iterations = 25;
  KernelKind kernel = KernelKind::HessianScaled;
  OptimizerKind optimizer = OptimizerKind::Lbfgs;
  std::size_t lbfgs_memory = 10;
  double adam_lr = 0.05;
  PriorKind prior = PriorKind::Gaussian;
  PairSource pairs = PairSource::Phi;
  bool curvature_seed = true;  // diagonal inverse-curvature seed for empty L-BFGS histories
  double max_step = 0.0;       // per-particle step norm cap, 0 disables
  double trust_radius = 0.5;   // per-iteration step cap in predicted standard deviations, 0 disables
  std::uint64_t seed = 0;
  ReprojectionConfig reprojection;

  void validate() const {
    if (particles < 1) throw std::invalid_argument("filter config: N must be >= 1");
    if (!(step_size >= 0.0)) throw std::invalid_argument("filter config: step size must be >= 0");
    if (iterations < 1) throw std::invalid_argument("filter config: L must be >= 1");
    if (lbfgs_memory < 1) throw std::invalid_argument("filter config: L-BFGS memory must be >= 1");
    if (!(adam_lr > 0.0)) throw std::invalid_argument("filter config: Adam learning rate must be > 0");
    if (!(max_step >= 0.0)) throw std::invalid_argument("filter config: max step must be >= 0");
    if (!(trust_radius >= 0.0)) throw std::invalid_argument("filter config: trust radius must be >= 0");
  }

  /// SPF without second-order information, driven by Adam.
  static FilterConfig svgdpf(Index n, double lr = 0.05, int iterations = 25) {
    FilterConfig c;
    c.particles = n;
    c.iterations = iterations;
    c.kernel = KernelKind::IsotropicMedian;
    c.optimizer = OptimizerKind::Adam;
    c.adam_lr = lr;
    return c;
  }
};

struct FilterDiagnostics {
  double mean_phi_norm = 0.0;
  std::size_t pair_rejections = 0;
  int outside_beams = 0;
  int reprojected = 0;
  int weight_resets = 0;
  double ess = 0.0;
};

struct FilterState {
  ParticleSet particles;
  long step = 0;
  std::vector<LbfgsHistory> lbfgs;
  std::vector<AdamState> adam;
  FilterDiagnostics diagnostics;

  FilterState() = default;
  explicit FilterState(ParticleSet p) : particles(std::move(p)) {}
};

// ---------------------------------------------------------------------------
// Stein flow engine

struct FlowSettings {
  int iterations = 25;
  double step_size = 0.05;
  KernelKind kernel = KernelKind::IsotropicMedian;
  std::optional<Matrix> metric;  // used when kernel == HessianScaled
  OptimizerKind optimizer = OptimizerKind::Sgd;
  PairSource pairs = PairSource::Phi;
  double max_step = 0.0;
  /// Trust region: a step whose largest component exceeds trust_radius
  /// times step_scale (per dimension) is shrunk along its direction.
  double trust_radius = 0.0;
  std::optional<Eigen::VectorXd> step_scale;
  /// Per-particle diagonal of the curvature A(x^j); enables the L-BFGS seed.
  std::optional<Matrix> curvature_diagonals;
  std::function<void(const ParticleSet&, int)> before_iteration;
  std::function<void(int, const ParticleSet&, const PosteriorScore&, const Matrix&)> on_iteration;
};

struct FlowOutcome {
  double mean_phi_norm = 0.0;
  std::size_t pair_rejections = 0;
};

/// Runs the particle flow x^j <- x^j + eps * H^j phi(x^j) for a fixed target.
/// Scores and Gram matrices use the positions at the start of each
/// iteration (simultaneous update). Optimizer state vectors must be sized N
/// (or left empty, in which case they are created fresh).
inline FlowOutcome run_stein_flow(ParticleSet& p, const TargetFn& target, const FlowSettings& s,
                                  std::vector<LbfgsHistory>& lbfgs, std::vector<AdamState>& adam,
                                  std::size_t lbfgs_memory = 10, double adam_lr = 0.05) {
  const Index n = p.size();
  const Index d = p.dim();
  if (s.optimizer == OptimizerKind::Lbfgs && static_cast<Index>(lbfgs.size()) != n)
    lbfgs.assign(static_cast<std::size_t>(n), LbfgsHistory(lbfgs_memory));
  if (s.optimizer == OptimizerKind::Adam && static_cast<Index>(adam.size()) != n)
    adam.assign(static_cast<std::size_t>(n), AdamState(d, adam_lr));
  if (s.kernel == KernelKind::HessianScaled && !s.metric)
    throw std::invalid_argument("Hessian-scaled kernel requires a metric");
  std::optional<KernelSpec> fixed_kernel;
  if (s.kernel == KernelKind::HessianScaled) fixed_kernel = KernelSpec::anisotropic(*s.metric);

  FlowOutcome outcome;
  std::size_t rejected_before = 0;
  for (const auto& h : lbfgs) rejected_before += h.rejected();

  Matrix prev_x, prev_src;
  for (int it = 0; it < s.iterations; ++it) {
    if (s.before_iteration) s.before_iteration(p, it);
    const PosteriorScore score = score_batch(p, target);
    const KernelSpec spec = fixed_kernel ? *fixed_kernel
                                         : KernelSpec::isotropic(n >= 2 ? median_heuristic(p) : 1.0);
    const GramResult gram = gram_and_grads(p, spec);
    const Matrix phi = phi_hat(p, score, gram);
    if (s.on_iteration) s.on_iteration(it, p, score, phi);

    const Matrix& src = (s.pairs == PairSource::Phi) ? phi : score.scores;
    if (s.optimizer == OptimizerKind::Lbfgs && it > 0) {
      for (Index j = 0; j < n; ++j) {
        const Eigen::VectorXd sv = (p.states.row(j) - prev_x.row(j)).transpose();
        const Eigen::VectorXd yv = -(src.row(j) - prev_src.row(j)).transpose();
        lbfgs[static_cast<std::size_t>(j)].insert(sv, yv);
      }
    }
    prev_x = p.states;
    prev_src = src;

    double phi_norm_sum = 0.0;
    for (Index j = 0; j < n; ++j) {
      const Eigen::VectorXd g = phi.row(j).transpose();
      phi_norm_sum += g.norm();
      Eigen::VectorXd step;
      switch (s.optimizer) {
        case OptimizerKind::Lbfgs: {
          std::optional<Eigen::VectorXd> seed;
          if (s.curvature_diagonals) {
            const double density = gram.K.col(j).sum() / static_cast<double>(n);
            Eigen::VectorXd a = s.curvature_diagonals->row(j).transpose();
            const double floor = std::max(1e-12, 1e-6 * a.maxCoeff());
            seed = (density * a.cwiseMax(floor)).cwiseInverse();
          }
          step = s.step_size * lbfgs[static_cast<std::size_t>(j)].direction(g, seed);
          break;
        }
        case OptimizerKind::Adam:
          step = adam_step(adam[static_cast<std::size_t>(j)], g);
          break;
        case OptimizerKind::Sgd:
          step = s.step_size * g;
          break;
      }
      if (s.trust_radius > 0.0 && s.step_scale) {
        const double ratio = (step.array().abs() / s.step_scale->array()).maxCoeff();
        if (ratio > s.trust_radius) step *= s.trust_radius / ratio;
      }
      if (s.max_step > 0.0) {
        const double norm = step.norm();
        if (norm > s.max_step) step *= s.max_step / norm;
      }
      p.states.row(j) += step.transpose();
      if (!p.states.row(j).allFinite())
        throw std::runtime_error("non-finite state at particle " + std::to_string(j) + " in iteration " +
                                 std::to_string(it + 1));
    }
    outcome.mean_phi_norm = phi_norm_sum / static_cast<double>(n);
  }
  std::size_t rejected_after = 0;
  for (const auto& h : lbfgs) rejected_after += h.rejected();
  outcome.pair_rejections = rejected_after - rejected_before;
  return outcome;
}

// ---------------------------------------------------------------------------
// Re-projection

/// 0.5 * chi-square 0.99 quantile with k degrees of freedom.
inline double reprojection_threshold(Index beams) {
  boost::math::chi_squared dist(static_cast<double>(std::max<Index>(beams, 1)));
  return 0.5 * boost::math::quantile(dist, 0.99);
}

struct LeaderRule {
  double threshold = std::numeric_limits<double>::quiet_NaN();  // NaN: 0.5 * chi2_0.99(K)
};

/// For every particle whose fit is incompatible with the best particle, the
/// leader's beam correspondences to use in its next score evaluation.
struct ReprojectionPlan {
  Index leader = 0;
  double threshold = 0.0;
  std::vector<std::optional<BeamMatches>> borrowed;
  int count = 0;
};

inline ReprojectionPlan reproject_to_leader(const ParticleSet& p, const Observation& z, const BeamModel& model,
                                            const LeaderRule& rule = {}) {
  const Index n = p.size();
  const Index beams = z.size() / 2;
  ReprojectionPlan plan;
  plan.threshold = std::isnan(rule.threshold) ? reprojection_threshold(beams) : rule.threshold;
  plan.borrowed.assign(static_cast<std::size_t>(n), std::nullopt);
  std::vector<double> ll(static_cast<std::size_t>(n));
  std::vector<int> matched(static_cast<std::size_t>(n));
  for (Index j = 0; j < n; ++j) {
    const StateVector x = p.particle(j);
    ll[static_cast<std::size_t>(j)] = model.log_likelihood(x, z);
    matched[static_cast<std::size_t>(j)] = model.matches(x, z).second;
  }
  // Leader: highest likelihood among particles with the most matched beams.
  const int most = *std::max_element(matched.begin(), matched.end());
  Index leader = -1;
  for (Index j = 0; j < n; ++j) {
    if (matched[static_cast<std::size_t>(j)] < most && most > 0) continue;
    if (leader < 0 || ll[static_cast<std::size_t>(j)] > ll[static_cast<std::size_t>(leader)]) leader = j;
  }
  plan.leader = leader;
  const double best = ll[static_cast<std::size_t>(leader)];
  const BeamMatches leader_matches = model.matches(p.particle(leader), z).first;
  for (Index j = 0; j < n; ++j) {
    if (j == leader) continue;
    const auto uj = static_cast<std::size_t>(j);
    if (ll[uj] < best - plan.threshold || matched[uj] == 0) {
      plan.borrowed[uj] = leader_matches;
      ++plan.count;
    }
  }
  return plan;
}

// ---------------------------------------------------------------------------
// Stein particle filter

/// Propagates each particle with one noise draw; weights are dropped.
inline FilterState spf_predict(const FilterState& st, const ControlInput& u, const TransitionModel& transition,
                               RngStream& rng) {
  FilterState out = st;
  const auto angular = transition.angular_dims();
  for (Index j = 0; j < out.particles.size(); ++j) {
    StateVector x = transition.propagate(st.particles.particle(j), u, rng);
    for (Index a : angular) x[a] = wrap_angle(x[a]);
    out.particles.states.row(j) = x.transpose();
  }
  out.particles.weights.reset();
  return out;
}

/// Moves the predicted particles towards the posterior with L flow
/// iterations. The prior approximation and the kernel metric are built once
/// from the predicted particles.
inline FilterState spf_update(const FilterState& st, const Observation& z, const ObservationModel& obs,
                              const FilterConfig& cfg, const std::vector<Index>& angular = {}) {
  cfg.validate();
  FilterState out = st;
  ParticleSet& p = out.particles;
  const Index n = p.size();
  const Index d = p.dim();

  std::unique_ptr<PriorApprox> prior;
  if (n < 2) {
    prior = std::make_unique<FlatPrior>(d);
  } else if (cfg.prior == PriorKind::Kde) {
    prior = std::make_unique<KdePrior>(p, KernelSpec::isotropic(median_heuristic(p)));
  } else {
    prior = std::make_unique<GaussianPrior>(GaussianPrior::fit(p, angular));
  }

  FlowSettings fs;
  fs.iterations = cfg.iterations;
  fs.step_size = cfg.step_size;
  fs.optimizer = cfg.optimizer;
  fs.pairs = cfg.pairs;
  fs.max_step = cfg.max_step;
  if (cfg.trust_radius > 0.0 && n >= 2) {
    fs.trust_radius = cfg.trust_radius;
    fs.step_scale = GaussianPrior::fit(p, angular).cov().diagonal().cwiseSqrt();
  }
  fs.kernel = KernelKind::IsotropicMedian;

  if (obs.has_curvature() && (cfg.kernel == KernelKind::HessianScaled ||
                              (cfg.curvature_seed && cfg.optimizer == OptimizerKind::Lbfgs))) {
    std::vector<Matrix> curv;
    curv.reserve(static_cast<std::size_t>(n));
    Matrix diagonals(n, d);
    for (Index j = 0; j < n; ++j) {
      const StateVector x = p.particle(j);
      Matrix a = obs.curvature(x, z) + prior->curvature(x);
      diagonals.row(j) = a.diagonal().transpose();
      curv.push_back(std::move(a));
    }
    if (cfg.kernel == KernelKind::HessianScaled) {
      fs.kernel = KernelKind::HessianScaled;
      fs.metric = metric_from_curvature(curv);
    }
    if (cfg.curvature_seed && cfg.optimizer == OptimizerKind::Lbfgs) fs.curvature_diagonals = diagonals;
  }

  const auto* beam = dynamic_cast<const BeamModel*>(&obs);
  const bool reproject = cfg.reprojection.enabled && beam != nullptr && st.step >= cfg.reprojection.start_step;
  ReprojectionPlan plan;
  int reprojected = 0;
  if (reproject) {
    fs.before_iteration = [&](const ParticleSet& cur, int) {
      plan = reproject_to_leader(cur, z, *beam, LeaderRule{cfg.reprojection.threshold});
      reprojected = std::max(reprojected, plan.count);
    };
  }

  int outside = 0;
  const TargetFn target = [&](Index j, const StateVector& x) {
    LogLikScore l;
    if (reproject && plan.borrowed[static_cast<std::size_t>(j)]) {
      l = beam->evaluate_matched(x, z, *plan.borrowed[static_cast<std::size_t>(j)]);
    } else if (beam) {
      const auto e = beam->evaluate_full(x, z);
      outside += e.outside_beams;
      l = {e.log_likelihood, e.score};
    } else {
      l = obs.evaluate(x, z);
    }
    const LogLikScore pr = prior->evaluate(x);
    return TargetEval{l.log_likelihood + pr.log_likelihood, l.log_likelihood, l.score + pr.score};
  };

  const FlowOutcome res = run_stein_flow(p, target, fs, out.lbfgs, out.adam, cfg.lbfgs_memory, cfg.adam_lr);
  for (Index a : angular)
    for (Index j = 0; j < n; ++j) p.states(j, a) = wrap_angle(p.states(j, a));
  p.weights.reset();
  out.diagnostics.mean_phi_norm = res.mean_phi_norm;
  out.diagnostics.pair_rejections = res.pair_rejections;
  out.diagnostics.outside_beams = outside;
  out.diagnostics.reprojected = reprojected;
  out.diagnostics.ess = static_cast<double>(n);
  return out;
}

/// One step: reset optimizer state, predict, then update when an observation
/// is available.
inline FilterState spf_step(const FilterState& st, const ControlInput& u, const std::optional<Observation>& z,
                            const TransitionModel& transition, const ObservationModel& obs, const FilterConfig& cfg,
                            const RngStream& base) {
  FilterState cur = st;
  cur.lbfgs.clear();
  cur.adam.clear();
  cur.step = st.step + 1;
  RngStream rng = base.child(static_cast<std::uint64_t>(cur.step), Purpose::Process);
  cur = spf_predict(cur, u, transition, rng);
  cur.diagnostics = {};
  cur.diagnostics.ess = static_cast<double>(cur.particles.size());
  if (!z) return cur;
  return spf_update(cur, *z, obs, cfg, transition.angular_dims());
}

// ---------------------------------------------------------------------------
// Bootstrap particle filter

/// Systematic resampling with a single draw r in [0, 1/n): the m-th pick is
/// the first index whose cumulative weight reaches r + m/n.
inline std::vector<Index> low_variance_resample(const Eigen::VectorXd& weights, Index n, double r) {
  const Index m = weights.size();
  if (m < 1 || n < 1) throw std::invalid_argument("low_variance_resample: empty input");
  std::vector<Index> out(static_cast<std::size_t>(n));
  double c = weights[0];
  Index i = 0;
  for (Index k = 0; k < n; ++k) {
    const double u = r + static_cast<double>(k) / static_cast<double>(n);
    while (u > c && i < m - 1) {
      ++i;
      c += weights[i];
    }
    out[static_cast<std::size_t>(k)] = i;
  }
  return out;
}

inline std::vector<Index> low_variance_resample(const Eigen::VectorXd& weights, RngStream& rng,
                                                std::optional<Index> n = std::nullopt) {
  const Index count = n.value_or(weights.size());
  return low_variance_resample(weights, count, rng.uniform() / static_cast<double>(count));
}

struct PfOptions {
  bool resample = true;
};

/// Propagate, weight by the likelihood, normalize, resample. Without an
/// observation only the propagation happens. All-zero weights reset to
/// uniform and are counted.
inline FilterState pf_step(const FilterState& st, const ControlInput& u, const std::optional<Observation>& z,
                           const TransitionModel& transition, const ObservationModel& obs, const RngStream& base,
                           PfOptions opt = {}) {
  FilterState out = st;
  out.step = st.step + 1;
  out.diagnostics = {};
  const Index n = st.particles.size();
  RngStream prop = base.child(static_cast<std::uint64_t>(out.step), Purpose::Process);
  const auto angular = transition.angular_dims();
  for (Index j = 0; j < n; ++j) {
    StateVector x = transition.propagate(st.particles.particle(j), u, prop);
    for (Index a : angular) x[a] = wrap_angle(x[a]);
    out.particles.states.row(j) = x.transpose();
  }
  Eigen::VectorXd prior_w = st.particles.weights.value_or(Eigen::VectorXd::Constant(n, 1.0 / static_cast<double>(n)));
  if (!z) {
    out.particles.weights = opt.resample ? std::optional<Eigen::VectorXd>{} : std::optional<Eigen::VectorXd>{prior_w};
    out.diagnostics.ess = effective_sample_size(prior_w);
    return out;
  }
  Eigen::VectorXd logw(n);
  int outside = 0;
  const auto* beam = dynamic_cast<const BeamModel*>(&obs);
  for (Index j = 0; j < n; ++j) {
    const StateVector x = out.particles.particle(j);
    if (beam) {
      const auto e = beam->evaluate_full(x, *z);
      outside += e.outside_beams;
      logw[j] = e.log_likelihood;
    } else {
      logw[j] = obs.log_likelihood(x, *z);
    }
    logw[j] += std::log(prior_w[j]);
  }
  Eigen::VectorXd w(n);
  const double mx = logw.maxCoeff();
  if (!std::isfinite(mx)) {
    w.setConstant(1.0 / static_cast<double>(n));
    out.diagnostics.weight_resets = 1;
  } else {
    w = (logw.array() - mx).exp();
    const double total = w.sum();
    if (!(total > 0.0) || !std::isfinite(total)) {
      w.setConstant(1.0 / static_cast<double>(n));
      out.diagnostics.weight_resets = 1;
    } else {
      w /= total;
    }
  }
  out.diagnostics.ess = effective_sample_size(w);
  out.diagnostics.outside_beams = outside;
  if (!opt.resample) {
    out.particles.weights = w;
    return out;
  }
  RngStream rs = base.child(static_cast<std::uint64_t>(out.step), Purpose::Resample);
  const std::vector<Index> idx = low_variance_resample(w, rs);
  Matrix resampled(n, st.particles.dim());
  for (Index k = 0; k < n; ++k) resampled.row(k) = out.particles.states.row(idx[static_cast<std::size_t>(k)]);
  out.particles.states = std::move(resampled);
  out.particles.weights.reset();
  return out;
}

}  // namespace spf
