#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "spf/filters.hpp"
#include "spf/io.hpp"
#include "spf/kalman.hpp"
#include "spf/metrics.hpp"
#include "spf/scenarios.hpp"

namespace spf {

/// Raised for configuration problems (CLI exit code 1).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class FilterType { Spf, Pf, Kalman };

struct FilterSpec {
  std::string name;
  FilterType type = FilterType::Spf;
  FilterConfig config;
  bool resample = true;  // PF only
};

struct ScenarioConfig {
  std::string scenario;
  int horizon = 30;
  int repeats = 1;
  std::uint64_t seed = 1;
  std::vector<std::uint64_t> seeds;  // explicit per-repeat seeds; overrides seed/repeats when set
  std::vector<FilterSpec> filters;
  json params = json::object();
  std::filesystem::path base_dir;  // relative file paths in params resolve against this

  std::uint64_t repeat_seed(int r) const {
    if (!seeds.empty()) return seeds[static_cast<std::size_t>(r)];
    return RngStream(seed).child(static_cast<std::uint64_t>(r), Purpose::Scenario).next_u64();
  }
  int repeat_count() const { return seeds.empty() ? repeats : static_cast<int>(seeds.size()); }
};

inline const std::vector<std::string>& known_scenarios() {
  static const std::vector<std::string> names = {"lingauss-verify", "multimodal-track", "sine-bank",
                                                 "grid-localize-global", "grid-localize-track"};
  return names;
}

// ---------------------------------------------------------------------------
// Config parsing

namespace detail {

template <class T>
void read_opt(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

inline FilterSpec filter_spec_from_json(const json& j, std::size_t index) {
  FilterSpec f;
  const std::string type = j.value("type", std::string("spf"));
  if (type == "spf") {
    f.type = FilterType::Spf;
  } else if (type == "svgdpf") {
    f.type = FilterType::Spf;
    f.config = FilterConfig::svgdpf(f.config.particles);
  } else if (type == "pf") {
    f.type = FilterType::Pf;
  } else if (type == "kalman") {
    f.type = FilterType::Kalman;
  } else {
    throw ConfigError("filter " + std::to_string(index) + ": unknown type '" + type + "'");
  }
  f.name = j.value("name", type + "-" + std::to_string(index));
  f.config = filter_config_from_json(j, f.config);
  f.resample = j.value("resample", true);
  return f;
}

inline std::uint64_t seed_from_json(const json& j) {
  if (j.is_number_unsigned()) return j.get<std::uint64_t>();
  if (j.is_number_integer() && j.get<std::int64_t>() >= 0) return static_cast<std::uint64_t>(j.get<std::int64_t>());
  throw ConfigError("seeds must be non-negative integers");
}

}  // namespace detail

inline ScenarioConfig scenario_config_from_json(const json& j, const std::filesystem::path& base_dir = {}) {
  try {
    if (!j.is_object()) throw ConfigError("config must be a JSON object");
    detail::reject_unknown_keys(j, {"scenario", "horizon", "repeats", "seed", "seeds", "filters", "params"}, "config");
    ScenarioConfig c;
    c.base_dir = base_dir;
    c.scenario = j.at("scenario").get<std::string>();
    const auto& names = known_scenarios();
    if (std::find(names.begin(), names.end(), c.scenario) == names.end())
      throw ConfigError("unknown scenario '" + c.scenario + "'");
    detail::read_opt(j, "horizon", c.horizon);
    detail::read_opt(j, "repeats", c.repeats);
    if (j.contains("seed")) c.seed = detail::seed_from_json(j.at("seed"));
    if (j.contains("seeds"))
      for (const auto& s : j.at("seeds")) c.seeds.push_back(detail::seed_from_json(s));
    if (j.contains("params")) c.params = j.at("params");
    if (!c.params.is_object()) throw ConfigError("params must be an object");
    if (!j.contains("filters") || !j.at("filters").is_array() || j.at("filters").empty())
      throw ConfigError("config needs a non-empty filters list");
    std::size_t i = 0;
    for (const auto& f : j.at("filters")) c.filters.push_back(detail::filter_spec_from_json(f, i++));
    for (std::size_t a = 0; a < c.filters.size(); ++a)
      for (std::size_t b = a + 1; b < c.filters.size(); ++b)
        if (c.filters[a].name == c.filters[b].name) throw ConfigError("duplicate filter name '" + c.filters[a].name + "'");
    if (c.horizon < 1) throw ConfigError("horizon must be >= 1");
    if (c.repeats < 1) throw ConfigError("repeats must be >= 1");
    if (j.contains("seeds") && c.seeds.empty()) throw ConfigError("seeds list must not be empty");
    return c;
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
}

inline ScenarioConfig load_scenario_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file " + path.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const std::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  return scenario_config_from_json(j, path.parent_path());
}

inline json to_json(const ScenarioConfig& c) {
  json filters = json::array();
  for (const auto& f : c.filters) {
    json fj = to_json(f.config);
    fj["name"] = f.name;
    fj["type"] = f.type == FilterType::Pf ? "pf" : f.type == FilterType::Kalman ? "kalman" : "spf";
    if (f.type == FilterType::Pf) fj["resample"] = f.resample;
    filters.push_back(std::move(fj));
  }
  json j = {{"scenario", c.scenario}, {"horizon", c.horizon}, {"repeats", c.repeats}, {"seed", c.seed},
            {"filters", std::move(filters)}, {"params", c.params}};
  if (!c.seeds.empty()) j["seeds"] = c.seeds;
  return j;
}

// ---------------------------------------------------------------------------
// Scenario factory

inline std::unique_ptr<Scenario> make_scenario(const ScenarioConfig& c) {
  const json& p = c.params;
  try {
    if (c.scenario == "lingauss-verify") {
      detail::reject_unknown_keys(p, {"dim", "process_var", "obs_var", "prior_var", "coupling"}, "params");
      LinGaussScenario::Params s;
      detail::read_opt(p, "dim", s.dim);
      detail::read_opt(p, "process_var", s.process_var);
      detail::read_opt(p, "obs_var", s.obs_var);
      detail::read_opt(p, "prior_var", s.prior_var);
      detail::read_opt(p, "coupling", s.coupling);
      if (s.dim < 1 || !(s.process_var >= 0.0) || !(s.obs_var > 0.0) || !(s.prior_var > 0.0))
        throw ConfigError("lingauss-verify: need dim >= 1, process_var >= 0, obs_var > 0, prior_var > 0");
      return std::make_unique<LinGaussScenario>(s);
    }
    if (c.scenario == "sine-bank") {
      detail::reject_unknown_keys(p, {"n_fns", "sigma_z", "sigma_amplitude", "sigma_phase", "dt", "amplitude_min",
                                      "amplitude_max", "period"},
                                  "params");
      SineBankScenario::Params s;
      detail::read_opt(p, "n_fns", s.n_fns);
      detail::read_opt(p, "sigma_z", s.sigma_z);
      detail::read_opt(p, "sigma_amplitude", s.sigma_amplitude);
      detail::read_opt(p, "sigma_phase", s.sigma_phase);
      detail::read_opt(p, "dt", s.dt);
      detail::read_opt(p, "amplitude_min", s.amplitude_min);
      detail::read_opt(p, "amplitude_max", s.amplitude_max);
      detail::read_opt(p, "period", s.period);
      if (s.n_fns < 1 || !(s.sigma_z > 0.0) || !(s.period > 0.0) || !(s.amplitude_max >= s.amplitude_min))
        throw ConfigError("sine-bank: need n_fns >= 1, sigma_z > 0, period > 0, amplitude_max >= amplitude_min");
      return std::make_unique<SineBankScenario>(s);
    }
    if (c.scenario == "multimodal-track") {
      detail::reject_unknown_keys(p, {"sigma_accel", "sigma_obs", "width", "height", "speed", "init_speed_std",
                                      "coverage_radius", "scanner", "obstacles"},
                                  "params");
      MultimodalTrackScenario::Params s;
      detail::read_opt(p, "sigma_accel", s.sigma_accel);
      detail::read_opt(p, "sigma_obs", s.sigma_obs);
      detail::read_opt(p, "width", s.width);
      detail::read_opt(p, "height", s.height);
      detail::read_opt(p, "speed", s.speed);
      detail::read_opt(p, "init_speed_std", s.init_speed_std);
      detail::read_opt(p, "coverage_radius", s.coverage_radius);
      if (p.contains("scanner")) {
        const auto v = p.at("scanner").get<std::vector<double>>();
        if (v.size() != 2) throw ConfigError("scanner must be [x, y]");
        s.scanner = {v[0], v[1]};
      }
      if (p.contains("obstacles")) {
        s.obstacles.clear();
        for (const auto& o : p.at("obstacles")) {
          const auto v = o.get<std::vector<double>>();
          if (v.size() != 4 || !(v[2] > v[0]) || !(v[3] > v[1]))
            throw ConfigError("obstacle must be [x0, y0, x1, y1] with x1 > x0, y1 > y0");
          s.obstacles.push_back({v[0], v[1], v[2], v[3]});
        }
      }
      if (!(s.sigma_obs > 0.0) || !(s.sigma_accel >= 0.0) || !(s.coverage_radius > 0.0))
        throw ConfigError("multimodal-track: need sigma_obs > 0, sigma_accel >= 0, coverage_radius > 0");
      return std::make_unique<MultimodalTrackScenario>(s);
    }
    // grid-localize-*
    detail::reject_unknown_keys(p, {"map", "resolution", "beams", "sensor_sigma", "model_sigma", "sigma_translation",
                                    "sigma_rotation", "speed", "max_range", "track_init_std", "track_init_yaw_std",
                                    "success_cells", "coverage_radius", "yaw_increments"},
                                "params");
    GridLocalizeScenario::Params s;
    s.global = c.scenario == "grid-localize-global";
    detail::read_opt(p, "beams", s.beams);
    detail::read_opt(p, "sensor_sigma", s.sensor_sigma);
    detail::read_opt(p, "model_sigma", s.model_sigma);
    detail::read_opt(p, "sigma_translation", s.sigma_translation);
    detail::read_opt(p, "sigma_rotation", s.sigma_rotation);
    detail::read_opt(p, "speed", s.speed);
    detail::read_opt(p, "max_range", s.max_range);
    detail::read_opt(p, "track_init_std", s.track_init_std);
    detail::read_opt(p, "track_init_yaw_std", s.track_init_yaw_std);
    detail::read_opt(p, "success_cells", s.success_cells);
    detail::read_opt(p, "coverage_radius", s.coverage_radius);
    detail::read_opt(p, "yaw_increments", s.yaw_increments);
    if (s.beams < 1 || !(s.model_sigma > 0.0) || !(s.sensor_sigma >= 0.0) || s.yaw_increments < 1)
      throw ConfigError("grid-localize: need beams >= 1, model_sigma > 0, sensor_sigma >= 0, yaw_increments >= 1");
    double resolution = 0.25;
    detail::read_opt(p, "resolution", resolution);
    if (p.contains("map")) {
      std::filesystem::path mp = p.at("map").get<std::string>();
      if (mp.is_relative()) mp = c.base_dir / mp;
      if (!std::filesystem::exists(mp)) throw ConfigError("map file not found: " + mp.string());
      return std::make_unique<GridLocalizeScenario>(GridMap2D::load(mp.string()), s);
    }
    return std::make_unique<GridLocalizeScenario>(make_two_room_map(resolution), s);
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(c.scenario + ": " + e.what());
  }
}

// ---------------------------------------------------------------------------
// Results

struct StepRow {
  long t = 0;
  bool observed = false;
  StateVector estimate;
  StateVector truth;
  double error = 0.0;         // norm of the scenario's error vector
  double rmse_to_date = 0.0;
  double ess = 0.0;
  std::optional<double> coverage;
  double mean_phi_norm = 0.0;
  std::size_t pair_rejections = 0;
  int reprojected = 0;
  int weight_resets = 0;
};

struct TimingRow {
  long t = 0;
  double ms_step = 0.0;
  double ms_per_iteration = 0.0;
};

/// Per-step comparison with the exact Kalman recursion started from the
/// filter's own initial particle moments.
struct OracleTrace {
  std::vector<StateVector> gap;       // particle mean - Kalman mean
  std::vector<StateVector> var_ratio; // particle variance / Kalman variance (diagonal)
};

struct TaskResult {
  int repeat = 0;
  std::size_t filter = 0;
  bool failed = false;
  std::string error_message;
  double rmse = std::numeric_limits<double>::quiet_NaN();
  std::optional<bool> success;
  std::vector<StepRow> rows;
  std::vector<TimingRow> timing;
  std::optional<OracleTrace> oracle;
  std::uint64_t observation_hash = 0;
};

struct RunResult {
  ScenarioConfig config;
  std::string scenario_name;
  Index state_dim = 0;
  std::vector<TaskResult> tasks;  // ordered by (repeat, filter)
  std::optional<Matrix> steady_state_cov;

  const TaskResult& task(int repeat, std::size_t filter) const {
    return tasks[static_cast<std::size_t>(repeat) * config.filters.size() + filter];
  }
};

/// FNV-1a over the presence flag and raw bits of each observation.
inline std::uint64_t hash_observations(const std::vector<std::optional<Observation>>& obs) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&](const void* data, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto& z : obs) {
    const unsigned char flag = z ? 1 : 0;
    mix(&flag, 1);
    if (z)
      for (Index i = 0; i < z->size(); ++i) {
        const double v = (*z)[i];
        mix(&v, sizeof v);
      }
  }
  return h;
}

/// Runs `fn(i)` for i in [0, count) on up to `threads` workers.
inline void parallel_for(std::size_t count, unsigned threads, const std::function<void(std::size_t)>& fn) {
  const unsigned workers = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(count)));
  if (workers == 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (unsigned w = 0; w < workers; ++w)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) fn(i);
    });
  for (auto& t : pool) t.join();
}

inline unsigned default_threads() { return std::max(1u, std::thread::hardware_concurrency()); }

// ---------------------------------------------------------------------------
// Running

namespace detail {

inline TaskResult run_task(const Scenario& sc, const Episode& ep, const FilterSpec& spec, std::uint64_t repeat_seed,
                           std::size_t filter_index, int repeat) {
  using clock = std::chrono::steady_clock;
  TaskResult res;
  res.repeat = repeat;
  res.filter = filter_index;
  const auto horizon = static_cast<long>(ep.truth.size());
  const RngStream rep(repeat_seed);
  RngStream init = rep.child(filter_index, Purpose::Init);
  const RngStream base = rep.child(filter_index, Purpose::Process);

  FilterState st;
  std::optional<Gaussian> kalman;
  std::optional<Gaussian> oracle;
  const LinearGaussianModel* lin = sc.linear_model();
  if (spec.type == FilterType::Kalman) {
    if (!lin || !sc.initial_gaussian()) throw std::runtime_error("Kalman filter needs a linear-Gaussian scenario");
    kalman = *sc.initial_gaussian();
  } else {
    st = FilterState(sc.initial_particles(spec.config.particles, ep, init));
    if (lin) {
      auto [m, c] = particle_mean_cov(st.particles);
      oracle = Gaussian{m, c};
      res.oracle = OracleTrace{};
    }
  }

  std::vector<std::optional<Observation>> consumed;
  double sq_sum = 0.0;
  long t = 0;
  try {
    for (t = 1; t <= horizon; ++t) {
      const auto k = static_cast<std::size_t>(t - 1);
      const ControlInput& u = ep.controls[k];
      const std::optional<Observation>& z = ep.observations[k];
      consumed.push_back(z);
      const auto obs = sc.observation_model(t);
      const auto t0 = clock::now();
      ParticleSet belief;
      if (kalman) {
        *kalman = kalman_predict(*lin, *kalman, u);
        if (z) *kalman = kalman_update(*lin, *kalman, *z);
        belief = ParticleSet(kalman->mean.transpose());
        st.step = t;
      } else if (spec.type == FilterType::Pf) {
        st = pf_step(st, u, z, sc.transition(), *obs, base, PfOptions{spec.resample});
        belief = st.particles;
      } else {
        st = spf_step(st, u, z, sc.transition(), *obs, spec.config, base);
        belief = st.particles;
      }
      const double ms = std::chrono::duration<double, std::milli>(clock::now() - t0).count();
      const int iters = (spec.type == FilterType::Spf && z) ? spec.config.iterations : 1;
      res.timing.push_back({t, ms, ms / iters});

      if (oracle) {
        *oracle = kalman_predict(*lin, *oracle, u);
        if (z) *oracle = kalman_update(*lin, *oracle, *z);
        auto [m, c] = particle_mean_cov(belief);
        res.oracle->gap.push_back(m - oracle->mean);
        res.oracle->var_ratio.push_back((c.diagonal().array() / oracle->cov.diagonal().array()).matrix());
      }

      StepRow row;
      row.t = t;
      row.observed = z.has_value();
      row.truth = ep.truth[k];
      row.estimate = sc.estimate(belief);
      const Eigen::VectorXd e = sc.error_vector(belief, ep.truth[k], t);
      row.error = e.norm();
      sq_sum += e.squaredNorm();
      row.rmse_to_date = std::sqrt(sq_sum / static_cast<double>(t));
      row.ess = kalman ? 1.0 : st.diagnostics.ess;
      if (!kalman) row.coverage = sc.coverage(belief, ep.truth[k]);
      row.mean_phi_norm = st.diagnostics.mean_phi_norm;
      row.pair_rejections = st.diagnostics.pair_rejections;
      row.reprojected = st.diagnostics.reprojected;
      row.weight_resets = st.diagnostics.weight_resets;
      res.rows.push_back(std::move(row));
      if (t == horizon) res.success = sc.success(belief, ep.truth[k]);
    }
    res.rmse = std::sqrt(sq_sum / static_cast<double>(horizon));
  } catch (const std::exception& ex) {
    res.failed = true;
    res.error_message = "step " + std::to_string(t) + ": " + ex.what();
    const double nan = std::numeric_limits<double>::quiet_NaN();
    for (long f = t; f <= horizon; ++f) {
      const auto k = static_cast<std::size_t>(f - 1);
      if (static_cast<long>(consumed.size()) < f) consumed.push_back(ep.observations[k]);
      StepRow row;
      row.t = f;
      row.observed = ep.observations[k].has_value();
      row.truth = ep.truth[k];
      row.estimate = StateVector::Constant(sc.state_dim(), nan);
      row.error = row.rmse_to_date = row.ess = nan;
      res.rows.push_back(std::move(row));
      res.timing.push_back({f, nan, nan});
    }
    if (sc.reports_success()) res.success = false;
  }
  res.observation_hash = hash_observations(consumed);
  return res;
}

}  // namespace detail

/// Simulates each repeat once and drives every configured filter over the
/// identical observation sequence. Work is spread over `threads` workers;
/// results are assembled in (repeat, filter) order.
inline RunResult run_scenario(const ScenarioConfig& cfg, unsigned threads = default_threads()) {
  const std::unique_ptr<Scenario> sc = make_scenario(cfg);
  for (const auto& f : cfg.filters)
    if (f.type == FilterType::Kalman && !sc->linear_model())
      throw ConfigError("filter '" + f.name + "': Kalman filter needs the lingauss-verify scenario");

  RunResult out;
  out.config = cfg;
  out.scenario_name = sc->name();
  out.state_dim = sc->state_dim();
  if (sc->linear_model()) out.steady_state_cov = steady_state_covariance(*sc->linear_model());

  const int repeats = cfg.repeat_count();
  std::vector<Episode> episodes(static_cast<std::size_t>(repeats));
  parallel_for(episodes.size(), threads, [&](std::size_t r) {
    episodes[r] = sc->simulate(cfg.horizon, RngStream(cfg.repeat_seed(static_cast<int>(r))).child(0, Purpose::Truth));
  });

  const std::size_t nf = cfg.filters.size();
  out.tasks.resize(static_cast<std::size_t>(repeats) * nf);
  parallel_for(out.tasks.size(), threads, [&](std::size_t i) {
    const auto r = static_cast<int>(i / nf);
    const std::size_t f = i % nf;
    out.tasks[i] = detail::run_task(*sc, episodes[static_cast<std::size_t>(r)], cfg.filters[f], cfg.repeat_seed(r), f, r);
  });

  for (int r = 0; r < repeats; ++r)
    for (std::size_t f = 1; f < nf; ++f)
      if (out.task(r, f).observation_hash != out.task(r, 0).observation_hash)
        throw std::runtime_error("observation sequences differ between filters in repeat " + std::to_string(r));
  return out;
}

// ---------------------------------------------------------------------------
// Summaries

struct FilterSummary {
  std::string name;
  int failed_repeats = 0;
  double rmse_mean = std::numeric_limits<double>::quiet_NaN();
  double rmse_std = std::numeric_limits<double>::quiet_NaN();
  double error_q10 = std::numeric_limits<double>::quiet_NaN();
  double error_q90 = std::numeric_limits<double>::quiet_NaN();
  double ms_per_step = std::numeric_limits<double>::quiet_NaN();
  double ms_per_iteration = std::numeric_limits<double>::quiet_NaN();
  std::optional<int> successes;
  std::optional<double> final_coverage;
  /// Pooled over repeats and steps: RMS of the mean gap per dimension,
  /// divided by the steady-state Kalman standard deviation.
  std::optional<std::vector<double>> oracle_gap;
  /// Final-step variance ratio per dimension, one list per repeat.
  std::optional<std::vector<std::vector<double>>> oracle_final_var_ratio;
};

inline double median_of(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  return quantiles(std::move(v), {0.5}).front();
}

inline std::vector<FilterSummary> summarize(const RunResult& run) {
  std::vector<FilterSummary> out;
  const int repeats = run.config.repeat_count();
  for (std::size_t f = 0; f < run.config.filters.size(); ++f) {
    FilterSummary s;
    s.name = run.config.filters[f].name;
    std::vector<double> rmses, errors, ms_step, ms_iter, coverage;
    int succ = 0;
    bool has_success = false;
    std::vector<double> gap_sq;
    std::size_t gap_n = 0;
    std::vector<std::vector<double>> final_ratio;
    for (int r = 0; r < repeats; ++r) {
      const TaskResult& t = run.task(r, f);
      if (t.success) {
        has_success = true;
        succ += *t.success ? 1 : 0;
      }
      if (t.failed) {
        ++s.failed_repeats;
        continue;
      }
      rmses.push_back(t.rmse);
      for (const auto& row : t.rows) errors.push_back(row.error);
      std::vector<double> step_ms, iter_ms;
      for (const auto& tr : t.timing) {
        step_ms.push_back(tr.ms_step);
        iter_ms.push_back(tr.ms_per_iteration);
      }
      ms_step.push_back(median_of(step_ms));
      ms_iter.push_back(median_of(iter_ms));
      if (t.rows.back().coverage) coverage.push_back(*t.rows.back().coverage);
      if (t.oracle && run.steady_state_cov) {
        const auto& g = t.oracle->gap;
        if (gap_sq.empty()) gap_sq.assign(static_cast<std::size_t>(run.state_dim), 0.0);
        for (const auto& v : g)
          for (Index i = 0; i < v.size(); ++i) gap_sq[static_cast<std::size_t>(i)] += v[i] * v[i];
        gap_n += g.size();
        const auto& last = t.oracle->var_ratio.back();
        final_ratio.emplace_back(last.data(), last.data() + last.size());
      }
    }
    if (!rmses.empty()) {
      const double mean = std::accumulate(rmses.begin(), rmses.end(), 0.0) / static_cast<double>(rmses.size());
      double var = 0.0;
      for (double v : rmses) var += (v - mean) * (v - mean);
      s.rmse_mean = mean;
      s.rmse_std = rmses.size() > 1 ? std::sqrt(var / static_cast<double>(rmses.size() - 1)) : 0.0;
      const auto q = quantiles(errors, {0.1, 0.9});
      s.error_q10 = q[0];
      s.error_q90 = q[1];
      s.ms_per_step = median_of(ms_step);
      s.ms_per_iteration = median_of(ms_iter);
    }
    if (has_success) s.successes = succ;
    if (!coverage.empty())
      s.final_coverage = std::accumulate(coverage.begin(), coverage.end(), 0.0) / static_cast<double>(coverage.size());
    if (gap_n > 0) {
      std::vector<double> g(gap_sq.size());
      for (std::size_t i = 0; i < g.size(); ++i)
        g[i] = std::sqrt(gap_sq[i] / static_cast<double>(gap_n)) /
               std::sqrt((*run.steady_state_cov)(static_cast<Index>(i), static_cast<Index>(i)));
      s.oracle_gap = g;
      s.oracle_final_var_ratio = final_ratio;
    }
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Output files

/// steps.csv: one row per (repeat, filter, t); no wall-clock columns.
inline void write_steps_csv(std::ostream& os, const RunResult& run) {
  os << "repeat,filter,t,observed";
  for (Index i = 0; i < run.state_dim; ++i) os << ",est_" << i;
  os << ",error,rmse_to_date,ess,coverage,mean_phi_norm,pair_rejections,reprojected,weight_resets,status\n";
  for (const auto& t : run.tasks) {
    const std::string& name = run.config.filters[t.filter].name;
    for (const auto& r : t.rows) {
      os << t.repeat << "," << name << "," << r.t << "," << (r.observed ? 1 : 0);
      for (Index i = 0; i < run.state_dim; ++i) os << "," << format_double(r.estimate[i]);
      os << "," << format_double(r.error) << "," << format_double(r.rmse_to_date) << "," << format_double(r.ess) << ","
         << (r.coverage ? format_double(*r.coverage) : std::string()) << "," << format_double(r.mean_phi_norm) << ","
         << r.pair_rejections << "," << r.reprojected << "," << r.weight_resets << ","
         << (std::isnan(r.error) && t.failed ? "failed" : "ok") << "\n";
    }
  }
}

/// timing.csv: wall-clock per update step and per inner iteration.
inline void write_timing_csv(std::ostream& os, const RunResult& run) {
  os << "repeat,filter,t,ms_step,ms_per_iteration\n";
  for (const auto& t : run.tasks)
    for (const auto& r : t.timing)
      os << t.repeat << "," << run.config.filters[t.filter].name << "," << r.t << "," << format_double(r.ms_step) << ","
         << format_double(r.ms_per_iteration) << "\n";
}

/// plot.csv: long format (repeat, filter, t, series, value).
inline void write_plot_csv(std::ostream& os, const RunResult& run) {
  os << "repeat,filter,t,series,value\n";
  for (const auto& t : run.tasks) {
    const std::string& name = run.config.filters[t.filter].name;
    for (const auto& r : t.rows) {
      auto put = [&](const std::string& series, double v) {
        os << t.repeat << "," << name << "," << r.t << "," << series << "," << format_double(v) << "\n";
      };
      put("error", r.error);
      put("rmse_to_date", r.rmse_to_date);
      put("ess", r.ess);
      if (r.coverage) put("coverage", *r.coverage);
      for (Index i = 0; i < run.state_dim; ++i) {
        put("est_" + std::to_string(i), r.estimate[i]);
        put("truth_" + std::to_string(i), r.truth[i]);
      }
    }
  }
}

inline json summary_json(const RunResult& run) {
  auto num = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
  json filters = json::array();
  const auto sums = summarize(run);
  for (std::size_t f = 0; f < sums.size(); ++f) {
    const FilterSummary& s = sums[f];
    json j = {{"name", s.name},
              {"rmse_mean", num(s.rmse_mean)},
              {"rmse_std", num(s.rmse_std)},
              {"error_q10", num(s.error_q10)},
              {"error_q90", num(s.error_q90)},
              {"ms_per_step_median", num(s.ms_per_step)},
              {"ms_per_iteration_median", num(s.ms_per_iteration)},
              {"failed_repeats", s.failed_repeats}};
    if (s.successes) j["successes"] = *s.successes;
    if (s.final_coverage) j["final_coverage_mean"] = *s.final_coverage;
    if (s.oracle_gap) {
      j["mean_gap_over_sqrt_steady_var"] = *s.oracle_gap;
      j["final_var_ratio"] = *s.oracle_final_var_ratio;
    }
    json reps = json::array();
    for (int r = 0; r < run.config.repeat_count(); ++r) {
      const TaskResult& t = run.task(r, f);
      json rj = {{"repeat", r}, {"rmse", num(t.rmse)}, {"failed", t.failed}};
      if (t.failed) rj["error"] = t.error_message;
      if (t.success) rj["success"] = *t.success;
      reps.push_back(std::move(rj));
    }
    j["repeats"] = std::move(reps);
    filters.push_back(std::move(j));
  }
  return {{"scenario", run.scenario_name}, {"config", to_json(run.config)}, {"filters", std::move(filters)}};
}

inline void write_text_file(const std::filesystem::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + p.string());
  os << text;
  if (!os) throw std::runtime_error("write failed for " + p.string());
}

inline void write_run_outputs(const RunResult& run, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ostringstream steps, timing, plot;
  write_steps_csv(steps, run);
  write_timing_csv(timing, run);
  write_plot_csv(plot, run);
  write_text_file(dir / "steps.csv", steps.str());
  write_text_file(dir / "timing.csv", timing.str());
  write_text_file(dir / "plot.csv", plot.str());
  write_text_file(dir / "summary.json", summary_json(run).dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Sweeps

/// Applies one sweep value to a copy of the config. "dimension" is the state
/// dimension (sine bank: two per function); "particle-count" sets N of every
/// particle filter.
inline ScenarioConfig apply_sweep_value(ScenarioConfig cfg, const std::string& axis, double value) {
  if (axis == "dimension") {
    const auto d = static_cast<Index>(std::llround(value));
    if (d < 1 || static_cast<double>(d) != value) throw ConfigError("dimension values must be positive integers");
    if (cfg.scenario == "sine-bank") {
      if (d % 2 != 0) throw ConfigError("sine-bank dimension must be even");
      cfg.params["n_fns"] = d / 2;
    } else if (cfg.scenario == "lingauss-verify") {
      cfg.params["dim"] = d;
    } else {
      throw ConfigError("scenario '" + cfg.scenario + "' has a fixed dimension");
    }
  } else if (axis == "particle-count") {
    const auto n = static_cast<Index>(std::llround(value));
    if (n < 1 || static_cast<double>(n) != value) throw ConfigError("particle counts must be positive integers");
    for (auto& f : cfg.filters)
      if (f.type != FilterType::Kalman) f.config.particles = n;
  } else {
    throw ConfigError("unknown sweep axis '" + axis + "' (expected dimension or particle-count)");
  }
  return cfg;
}

struct SweepRow {
  std::string axis_value;
  FilterSummary summary;
};

/// Runs one scenario per value; each run's outputs go to <dir>/<axis>=<value>/
/// and the aggregate table to <dir>/sweep.csv.
inline std::vector<SweepRow> run_sweep(const ScenarioConfig& cfg, const std::string& axis,
                                       const std::vector<std::string>& values, const std::filesystem::path& dir,
                                       unsigned threads = default_threads()) {
  if (values.empty()) throw ConfigError("sweep needs at least one value");
  std::vector<std::pair<std::string, ScenarioConfig>> runs;
  for (const auto& v : values) {
    double x = 0.0;
    try {
      x = parse_double(v);
    } catch (const std::exception&) {
      throw ConfigError("sweep value '" + v + "' is not a number");
    }
    runs.emplace_back(v, apply_sweep_value(cfg, axis, x));
    make_scenario(runs.back().second);  // validate before running anything
  }
  std::vector<SweepRow> rows;
  std::filesystem::create_directories(dir);
  for (const auto& [v, c] : runs) {
    const RunResult run = run_scenario(c, threads);
    write_run_outputs(run, dir / (axis + "=" + v));
    for (auto& s : summarize(run)) rows.push_back({v, std::move(s)});
  }
  std::ostringstream os;
  os << axis << ",filter,rmse_mean,rmse_std,q10,q90,ms_per_step\n";
  for (const auto& r : rows)
    os << r.axis_value << "," << r.summary.name << "," << format_double(r.summary.rmse_mean) << ","
       << format_double(r.summary.rmse_std) << "," << format_double(r.summary.error_q10) << ","
       << format_double(r.summary.error_q90) << "," << format_double(r.summary.ms_per_step) << "\n";
  write_text_file(dir / "sweep.csv", os.str());
  return rows;
}

}  // namespace spf
