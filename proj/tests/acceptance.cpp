// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/QR>

#include "spf/spf.hpp"

using namespace spf;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[128];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

template <class... A>
std::string fmt(const char* f, A... a) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, a...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

FilterSpec spf_filter(const std::string& name, Index n, int iterations = 25) {
  FilterSpec f;
  f.name = name;
  f.type = FilterType::Spf;
  f.config.particles = n;
  f.config.iterations = iterations;
  return f;
}

FilterSpec pf_filter(const std::string& name, Index n) {
  FilterSpec f;
  f.name = name;
  f.type = FilterType::Pf;
  f.config.particles = n;
  return f;
}

const FilterSummary& find(const std::vector<FilterSummary>& s, const std::string& name) {
  return *std::find_if(s.begin(), s.end(), [&](const FilterSummary& x) { return x.name == name; });
}

// 1. SPF vs Kalman on 1D and 4D linear-Gaussian systems.
Verdict kalman_oracle() {
  const auto t0 = std::chrono::steady_clock::now();
  Verdict v{true, ""};
  double worst_gap = 0.0, lo = 1e9, hi = 0.0;
  for (int dim : {1, 4}) {
    ScenarioConfig c;
    c.scenario = "lingauss-verify";
    c.horizon = 30;
    c.repeats = 10;
    c.seed = 11;
    c.params = {{"dim", dim}};
    c.filters = {spf_filter("spf", 100, 30)};
    const RunResult run = run_scenario(c);
    const FilterSummary s = summarize(run).front();
    if (s.failed_repeats > 0 || !s.oracle_gap)
      return {false, fmt("dim %d: %d failed repeats, oracle %s", dim, s.failed_repeats, s.oracle_gap ? "yes" : "missing")};
    for (double g : *s.oracle_gap) worst_gap = std::max(worst_gap, g);
    for (const auto& rep : *s.oracle_final_var_ratio)
      for (double r : rep) {
        lo = std::min(lo, r);
        hi = std::max(hi, r);
      }
  }
  const double secs = seconds_since(t0);
  v.pass = worst_gap <= 0.1 && lo >= 0.75 && hi <= 1.25 && secs < 30.0;
  v.detail = fmt("worst gap/sd %.4f (<= 0.1), final var ratio [%.3f, %.3f] (within 0.75..1.25), %.1f s (< 30)",
                 worst_gap, lo, hi, secs);
  return v;
}

// 2. Sine bank, d = 20.
Verdict sine_bank() {
  ScenarioConfig c;
  c.scenario = "sine-bank";
  c.horizon = 50;
  c.repeats = 10;
  c.seed = 7;
  c.params = {{"n_fns", 10}};
  c.filters = {spf_filter("spf", 50), pf_filter("pf", 50), pf_filter("pf5000", 5000)};
  const auto sums = summarize(run_scenario(c));
  const double spf = find(sums, "spf").rmse_mean;
  const double pf = find(sums, "pf").rmse_mean;
  const double pf5k = find(sums, "pf5000").rmse_mean;
  const bool pass = spf <= 5.0 && pf >= 20.0 * spf && spf < pf5k && pf5k < pf;
  return {pass, fmt("RMSE SPF %.3f (<= 5), PF(50) %.3f, ratio %.1f (>= 20), PF(5000) %.3f (strictly between)", spf, pf,
                    pf / spf, pf5k)};
}

// 3. Stein identity on exact N(0, I2) samples.
Verdict stein_identity() {
  const CheckResult r = checks::stein().front();
  return {r.pass, fmt("worst ||mean phi|| over 5 seeds %.4f (<= 0.1)", r.observed)};
}

// 4. Analytic scores vs central differences.
Verdict gradients() {
  bool pass = true;
  std::ostringstream os;
  for (const CheckResult& r : checks::gradients()) {
    pass = pass && r.pass;
    os << (os.tellp() > 0 ? "; " : "") << r.invariant << " " << fmt("%.2e", r.observed) << " (<= "
       << fmt("%.0e", r.bound) << ")";
  }
  return {pass, os.str()};
}

// 5. Bimodal posterior keeps both modes; PF impoverishment witness.
Verdict bimodal() {
  Eigen::VectorXd plus(1), minus(1);
  plus << 2.0;
  minus << -2.0;
  const GaussianMixtureObservation lik({{plus, 0.5, 1.0}, {minus, 0.5, 1.0}});
  const Observation z = Observation::Zero(1);
  FilterConfig cfg;
  cfg.particles = 50;
  cfg.iterations = 100;

  double worst_share = 1.0, min_dist = 1e9;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    RngStream r = RngStream(seed).child(0, Purpose::Init);
    // Predicted cloud from a broad symmetric prior N(0, 3^2).
    FilterState st{ParticleSet(3.0 * r.normal_vector(50).reshaped(50, 1))};
    st.particles.states.col(0).array() -= st.particles.states.col(0).mean();
    const FilterState post = spf_update(st, z, lik, cfg);
    const auto col = post.particles.states.col(0);
    const double pos = static_cast<double>((col.array() > 0.0).count()) / 50.0;
    worst_share = std::min({worst_share, pos, 1.0 - pos});
    min_dist = std::min(min_dist, min_pairwise_distance(post.particles));
  }

  const LinearGaussianModel walk = LinearGaussianModel::random_walk(1, 0.01, 1.0);
  RngStream r = RngStream(1).child(0, Purpose::Init);
  FilterState pf{ParticleSet(3.0 * r.normal_vector(50).reshaped(50, 1))};
  const RngStream base = RngStream(1).child(0, Purpose::Process);
  double min_ess = 1e9;
  for (int round = 0; round < 5; ++round) {
    pf = pf_step(pf, ControlInput(), z, walk, lik, base);
    min_ess = std::min(min_ess, pf.diagnostics.ess);
  }
  const bool pass = worst_share >= 0.3 && min_dist > 1e-4 && min_ess < 25.0;
  return {pass, fmt("SPF smallest mode share %.2f (>= 0.30), min pairwise distance %.3g (> 1e-4) over 5 seeds; "
                    "PF min ESS over 5 rounds %.1f (< 25)",
                    worst_share, min_dist, min_ess)};
}

// 6. Preconditioned flow vs plain SVGD on an ill-conditioned Gaussian.
struct FlowTrace {
  std::vector<double> mean_logp;
  bool diverged = false;
};

FlowTrace trace_flow(const Matrix& precision, const ParticleSet& start, FlowSettings s, int iterations) {
  FlowTrace tr;
  ParticleSet p = start;
  const TargetFn target = [&](Index, const StateVector& x) {
    const StateVector px = precision * x;
    return TargetEval{-0.5 * x.dot(px), 0.0, -px};
  };
  s.iterations = iterations;
  s.on_iteration = [&](int, const ParticleSet&, const PosteriorScore& sc, const Matrix&) {
    tr.mean_logp.push_back(sc.log_density.mean());
  };
  std::vector<LbfgsHistory> lbfgs;
  std::vector<AdamState> adam;
  try {
    run_stein_flow(p, target, s, lbfgs, adam);
    tr.mean_logp.push_back(score_batch(p, target).log_density.mean());
  } catch (const std::exception&) {
    tr.diverged = true;
    return tr;
  }
  if (!std::isfinite(tr.mean_logp.back())) tr.diverged = true;
  return tr;
}

// First iteration from which the trace stays within `tol` of its final value.
int settle_iteration(const FlowTrace& tr, double tol) {
  const double fin = tr.mean_logp.back();
  int k = static_cast<int>(tr.mean_logp.size()) - 1;
  while (k > 0 && std::abs(tr.mean_logp[static_cast<std::size_t>(k - 1)] - fin) <= tol) --k;
  return k;
}

Verdict second_order() {
  const Index d = 10, n = 50;
  RngStream r = RngStream(17).child(0, Purpose::Test);
  const Matrix q = Eigen::HouseholderQR<Matrix>(r.normal_vector(d * d).reshaped(d, d)).householderQ();
  Eigen::VectorXd lambda(d);
  for (Index i = 0; i < d; ++i) lambda[i] = std::pow(100.0, static_cast<double>(i) / static_cast<double>(d - 1));
  const Matrix precision = q * lambda.asDiagonal() * q.transpose();
  Matrix start = r.normal_vector(n * d).reshaped(n, d);
  start.rowwise() += Eigen::RowVectorXd::Constant(d, 3.0);
  const ParticleSet p0(start);
  const int long_run = 3000;

  FlowSettings spf;
  spf.step_size = 0.5;
  spf.kernel = KernelKind::HessianScaled;
  spf.metric = metric_from_curvature({precision});
  spf.optimizer = OptimizerKind::Lbfgs;
  spf.trust_radius = 0.5;
  spf.step_scale = Eigen::VectorXd::Ones(d);
  spf.curvature_diagonals = precision.diagonal().transpose().replicate(n, 1);
  const FlowTrace a = trace_flow(precision, p0, spf, long_run);
  const int it_spf = a.diverged ? long_run : settle_iteration(a, 1.0);

  // Plain SVGD: median-heuristic kernel, fixed step; best of a step grid.
  int it_svgd = long_run;
  double best_eps = 0.0;
  for (double eps : {0.001, 0.002, 0.005, 0.01, 0.02, 0.05, 0.1, 0.2, 0.5}) {
    FlowSettings plain;
    plain.step_size = eps;
    plain.kernel = KernelKind::IsotropicMedian;
    plain.optimizer = OptimizerKind::Sgd;
    const FlowTrace b = trace_flow(precision, p0, plain, long_run);
    if (b.diverged) continue;
    const int it = settle_iteration(b, 1.0);
    if (it < it_svgd) {
      it_svgd = it;
      best_eps = eps;
    }
  }
  const bool pass = !a.diverged && it_spf <= 0.5 * it_svgd;
  return {pass, fmt("iterations to within 1 nat: L-BFGS flow %d, plain SVGD %d (best step %.3g), ratio %.3f (<= 0.5)",
                    it_spf, it_svgd, best_eps, static_cast<double>(it_spf) / it_svgd)};
}

// 7. Global localization on the two-room map.
Verdict global_localization() {
  ScenarioConfig c;
  c.scenario = "grid-localize-global";
  c.horizon = 30;
  c.repeats = 10;
  c.seed = 3;
  FilterSpec spf = spf_filter("spf", 50);
  spf.config.reprojection.enabled = true;
  c.filters = {spf, pf_filter("pf", 50)};
  const auto sums = summarize(run_scenario(c));
  const int s = find(sums, "spf").successes.value_or(0);
  const int p = find(sums, "pf").successes.value_or(0);
  return {s >= 7 && p < s, fmt("successes (error <= 2 cells at t=30): SPF %d/10 (>= 7), PF %d/10 (< SPF)", s, p)};
}

// 8. Low-variance resampling statistics.
Verdict resampling() {
  bool pass = true;
  std::ostringstream os;
  for (const CheckResult& r : checks::resampling()) {
    pass = pass && r.pass;
    os << (os.tellp() > 0 ? "; " : "") << r.invariant << " " << fmt("%.4g", r.observed);
  }
  return {pass, os.str()};
}

// 9. Same seed, same bytes.
Verdict determinism() {
  std::vector<ScenarioConfig> cfgs;
  auto add = [&](const std::string& sc, json params, int horizon) {
    ScenarioConfig c;
    c.scenario = sc;
    c.horizon = horizon;
    c.repeats = 2;
    c.seed = 5;
    c.params = std::move(params);
    FilterSpec rp = spf_filter("spf", 20, 10);
    rp.config.reprojection.enabled = true;
    c.filters = {rp, pf_filter("pf", 40)};
    cfgs.push_back(std::move(c));
  };
  add("lingauss-verify", {{"dim", 2}}, 10);
  add("multimodal-track", json::object(), 20);
  add("sine-bank", {{"n_fns", 3}}, 10);
  add("grid-localize-global", json::object(), 8);
  add("grid-localize-track", json::object(), 8);
  int identical = 0;
  for (const auto& c : cfgs) {
    std::string out[2];
    for (auto& o : out) {
      const RunResult run = run_scenario(c, 2);
      std::ostringstream steps, plot;
      write_steps_csv(steps, run);
      write_plot_csv(plot, run);
      o = steps.str() + plot.str();
    }
    if (out[0] == out[1]) ++identical;
  }
  return {identical == static_cast<int>(cfgs.size()),
          fmt("%d/%d scenarios produced byte-identical steps.csv and plot.csv", identical,
              static_cast<int>(cfgs.size()))};
}

// 10. phi_hat cost scaling and reported SPF overhead.
// Median phi_hat time for each particle count. Sizes are timed in
// alternation so that machine load affects them alike.
std::vector<double> median_phi_ms(const std::vector<Index>& sizes, Index d, int reps) {
  std::vector<ParticleSet> sets;
  std::vector<PosteriorScore> scores;
  std::vector<KernelSpec> specs;
  for (Index n : sizes) {
    RngStream r = RngStream(23).child(static_cast<std::uint64_t>(n), Purpose::Test);
    sets.emplace_back(r.normal_vector(n * d).reshaped(n, d));
    scores.push_back({Matrix(-sets.back().states), Eigen::VectorXd::Zero(n), Eigen::VectorXd::Zero(n)});
    specs.push_back(KernelSpec::isotropic(median_heuristic(sets.back())));
  }
  std::vector<std::vector<double>> ms(sizes.size());
  double sink = 0.0;
  for (int k = 0; k < reps; ++k) {
    for (std::size_t i = 0; i < sizes.size(); ++i) {
      const auto t0 = std::chrono::steady_clock::now();
      const GramResult g = gram_and_grads(sets[i], specs[i]);
      const Matrix phi = phi_hat(sets[i], scores[i], g);
      ms[i].push_back(seconds_since(t0) * 1e3);
      sink += phi(0, 0);
    }
  }
  if (!std::isfinite(sink)) std::cerr << "non-finite flow direction\n";
  std::vector<double> out;
  for (auto& v : ms) out.push_back(median_of(v));
  return out;
}

Verdict complexity() {
  const Index d = 20;
  const std::vector<double> t = median_phi_ms({50, 100}, d, 301);
  const double t50 = t[0];
  const double t100 = t[1];
  const double ratio = t100 / t50;

  ScenarioConfig c;
  c.scenario = "sine-bank";
  c.horizon = 10;
  c.repeats = 2;
  c.seed = 9;
  c.params = {{"n_fns", 10}};
  c.filters = {spf_filter("spf", 50), pf_filter("pf", 50)};
  const auto sums = summarize(run_scenario(c, 1));
  const double spf_it = find(sums, "spf").ms_per_iteration;
  const double pf_step = find(sums, "pf").ms_per_step;
  const bool pass = ratio >= 2.0 && ratio <= 6.0;
  return {pass, fmt("phi_hat median %.4f ms (N=50) vs %.4f ms (N=100), ratio %.2f (4 +- 50%%); reported: SPF "
                    "%.3f ms per inner iteration, PF %.3f ms per step (d=20, N=50)",
                    t50, t100, ratio, spf_it, pf_step)};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
      {"Kalman-oracle equivalence", kalman_oracle},
      {"Sine-bank high-dimensional trend", sine_bank},
      {"Stein identity", stein_identity},
      {"Gradient correctness", gradients},
      {"No particle collapse / multimodality", bimodal},
      {"Second-order convergence advantage", second_order},
      {"Global localization", global_localization},
      {"Resampling statistics", resampling},
      {"Determinism", determinism},
      {"Complexity envelope", complexity},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    if (!v.pass) ++failed;
    std::cout << (v.pass ? "PASS" : "FAIL") << " " << (i + 1) << " " << criteria[i].first << ": " << v.detail
              << std::endl;
  }
  std::cout << (criteria.size() - static_cast<std::size_t>(failed)) << "/" << criteria.size() << " criteria passed"
            << std::endl;
  return failed == 0 ? 0 : 1;
}
