#pragma once

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "spf/core.hpp"
#include "spf/grid_map.hpp"
#include "spf/kalman.hpp"
#include "spf/metrics.hpp"
#include "spf/models.hpp"

namespace spf {

/// Ground truth and sensor data for one run. Entry t (0-based) belongs to
/// filter step t + 1; a missing observation means the update is skipped.
struct Episode {
  StateVector initial_truth;
  std::vector<StateVector> truth;
  std::vector<ControlInput> controls;
  std::vector<std::optional<Observation>> observations;
};

/// A simulated estimation problem: models, ground-truth generator, initial
/// belief and the error measure reported for it.
class Scenario {
 public:
  virtual ~Scenario() = default;

  virtual std::string name() const = 0;
  virtual Index state_dim() const = 0;
  virtual const TransitionModel& transition() const = 0;
  /// Observation model in force at filter step t (1-based).
  virtual std::shared_ptr<const ObservationModel> observation_model(long t) const = 0;

  virtual Episode simulate(int horizon, RngStream rng) const = 0;
  virtual ParticleSet initial_particles(Index n, const Episode& ep, RngStream& rng) const = 0;

  /// Point estimate written to the per-step records.
  virtual StateVector estimate(const ParticleSet& p) const {
    StateVector m = particle_mean_cov(p).first;
    for (Index a : transition().angular_dims()) {
      double s = 0.0, c = 0.0;
      for (Index j = 0; j < p.size(); ++j) {
        const double w = p.weights ? (*p.weights)[j] : 1.0;
        s += w * std::sin(p.states(j, a));
        c += w * std::cos(p.states(j, a));
      }
      m[a] = std::atan2(s, c);
    }
    return m;
  }

  /// Error vector whose squared norm enters the RMSE at step t.
  virtual Eigen::VectorXd error_vector(const ParticleSet& p, const StateVector& truth, long /*t*/) const {
    Eigen::VectorXd e = estimate(p) - truth;
    for (Index a : transition().angular_dims()) e[a] = wrap_angle(e[a]);
    return e;
  }

  /// Fraction of particles near the true state, when meaningful.
  virtual std::optional<double> coverage(const ParticleSet&, const StateVector&) const { return std::nullopt; }

  /// Run-level success judged on the final belief, when meaningful.
  virtual std::optional<bool> success(const ParticleSet&, const StateVector&) const { return std::nullopt; }
  virtual bool reports_success() const { return false; }

  /// Exact linear-Gaussian model for the Kalman oracle, when one exists.
  virtual const LinearGaussianModel* linear_model() const { return nullptr; }
  /// The Gaussian the initial particles are drawn from, when there is one.
  virtual std::optional<Gaussian> initial_gaussian() const { return std::nullopt; }
};

// ---------------------------------------------------------------------------

/// Linear-Gaussian system with a Gaussian initial belief.
class LinGaussScenario : public Scenario {
 public:
  struct Params {
    Index dim = 1;
    double process_var = 1.0;
    double obs_var = 0.05;
    double prior_var = 1.0;
    double coupling = 0.5;  // position <- velocity coupling of each (pos, vel) pair when dim >= 2
  };

  std::optional<Gaussian> initial_gaussian() const override {
    return Gaussian{StateVector::Zero(p_.dim), p_.prior_var * Matrix::Identity(p_.dim, p_.dim)};
  }

  explicit LinGaussScenario(Params p) : p_(p), model_(build(p)) {}

  const Params& params() const { return p_; }
  std::string name() const override { return "lingauss-verify"; }
  Index state_dim() const override { return p_.dim; }
  const TransitionModel& transition() const override { return model_; }
  std::shared_ptr<const ObservationModel> observation_model(long) const override {
    return std::shared_ptr<const ObservationModel>(std::shared_ptr<const ObservationModel>{}, &model_);
  }
  const LinearGaussianModel* linear_model() const override { return &model_; }

  Episode simulate(int horizon, RngStream rng) const override {
    Episode ep;
    ep.initial_truth = std::sqrt(p_.prior_var) * rng.normal_vector(p_.dim);
    StateVector x = ep.initial_truth;
    for (int t = 0; t < horizon; ++t) {
      x = model_.propagate(x, ControlInput(), rng);
      ep.truth.push_back(x);
      ep.controls.emplace_back();
      ep.observations.emplace_back(model_.observe(x, rng));
    }
    return ep;
  }

  ParticleSet initial_particles(Index n, const Episode&, RngStream& rng) const override {
    Matrix s(n, p_.dim);
    for (Index j = 0; j < n; ++j) s.row(j) = std::sqrt(p_.prior_var) * rng.normal_vector(p_.dim).transpose();
    return ParticleSet(s);
  }

 private:
  // Consecutive (position, velocity) pairs with both components observed;
  // an odd trailing dimension is a plain random walk.
  static LinearGaussianModel build(const Params& p) {
    const Index d = p.dim;
    Matrix F = Matrix::Identity(d, d);
    for (Index i = 0; i + 1 < d; i += 2)
      F(i, i + 1) = p.coupling;
    return LinearGaussianModel(F, Matrix(d, 0), p.process_var * Matrix::Identity(d, d), Matrix::Identity(d, d),
                               p.obs_var * Matrix::Identity(d, d));
  }

  Params p_;
  LinearGaussianModel model_;
};

// ---------------------------------------------------------------------------

/// Tracking the amplitudes and phases of a bank of sines from one noisy
/// sample of each function per step. The reported error is the deviation of
/// the posterior-mean function values from the noise-free truth.
class SineBankScenario : public Scenario {
 public:
  struct Params {
    Index n_fns = 10;
    double sigma_z = 0.1;
    double sigma_amplitude = 0.02;
    double sigma_phase = 0.02;
    double dt = 0.3;
    double amplitude_min = 0.5;
    double amplitude_max = 5.0;
    double period = 1.0;  // k, shared by all functions
  };

  explicit SineBankScenario(Params p) : p_(p), model_(model_params(p)) {}

  const Params& params() const { return p_; }
  std::string name() const override { return "sine-bank"; }
  Index state_dim() const override { return 2 * p_.n_fns; }
  const TransitionModel& transition() const override { return model_; }
  std::shared_ptr<const ObservationModel> observation_model(long t) const override {
    return std::make_shared<SineBankModel>(model_.at_time(time_of(t)));
  }
  double time_of(long t) const { return static_cast<double>(t) * p_.dt; }
  const SineBankModel& model() const { return model_; }

  Episode simulate(int horizon, RngStream rng) const override {
    Episode ep;
    ep.initial_truth = draw_state(rng);
    StateVector x = ep.initial_truth;
    for (int t = 1; t <= horizon; ++t) {
      x = model_.propagate(x, ControlInput(), rng);
      const SineBankModel m = model_.at_time(time_of(t));
      Observation z = m.predict_observation(x);
      for (Index i = 0; i < z.size(); ++i) z[i] += p_.sigma_z * rng.normal();
      ep.truth.push_back(x);
      ep.controls.emplace_back();
      ep.observations.emplace_back(z);
    }
    return ep;
  }

  ParticleSet initial_particles(Index n, const Episode&, RngStream& rng) const override {
    Matrix s(n, state_dim());
    for (Index j = 0; j < n; ++j) s.row(j) = draw_state(rng).transpose();
    return ParticleSet(s);
  }

  Eigen::VectorXd error_vector(const ParticleSet& p, const StateVector& truth, long t) const override {
    const SineBankModel m = model_.at_time(time_of(t));
    Eigen::VectorXd mean_g = Eigen::VectorXd::Zero(p_.n_fns);
    double total = 0.0;
    for (Index j = 0; j < p.size(); ++j) {
      const double w = p.weights ? (*p.weights)[j] : 1.0;
      mean_g += w * m.predict_observation(p.particle(j));
      total += w;
    }
    return mean_g / total - m.predict_observation(truth);
  }

 private:
  static SineBankModel::Params model_params(const Params& p) {
    SineBankModel::Params m;
    m.n_fns = p.n_fns;
    m.sigma_z = p.sigma_z;
    m.sigma_amplitude = p.sigma_amplitude;
    m.sigma_phase = p.sigma_phase;
    m.periods.assign(static_cast<std::size_t>(p.n_fns), p.period);
    return m;
  }

  StateVector draw_state(RngStream& rng) const {
    StateVector x(state_dim());
    for (Index i = 0; i < p_.n_fns; ++i) {
      x[2 * i] = rng.uniform(p_.amplitude_min, p_.amplitude_max);
      x[2 * i + 1] = rng.uniform(0.0, 2.0 * std::numbers::pi / p_.period);
    }
    return x;
  }

  Params p_;
  SineBankModel model_;
};

// ---------------------------------------------------------------------------

struct Rect {
  double x0, y0, x1, y1;
  bool contains(const Eigen::Vector2d& p) const { return p.x() >= x0 && p.x() <= x1 && p.y() >= y0 && p.y() <= y1; }
};

/// True when segment a-b crosses the rectangle.
inline bool segment_hits_rect(const Eigen::Vector2d& a, const Eigen::Vector2d& b, const Rect& r) {
  // Liang-Barsky clipping.
  double t0 = 0.0, t1 = 1.0;
  const Eigen::Vector2d d = b - a;
  const double p[4] = {-d.x(), d.x(), -d.y(), d.y()};
  const double q[4] = {a.x() - r.x0, r.x1 - a.x(), a.y() - r.y0, r.y1 - a.y()};
  for (int i = 0; i < 4; ++i) {
    if (p[i] == 0.0) {
      if (q[i] < 0.0) return false;
      continue;
    }
    const double t = q[i] / p[i];
    if (p[i] < 0.0) t0 = std::max(t0, t);
    else t1 = std::min(t1, t);
    if (t0 > t1) return false;
  }
  return true;
}

/// A point robot observed by a static scanner, with two obstacles that
/// occlude it for part of its path. Observations are the robot's position
/// as measured by the scanner; occluded steps carry no observation. The
/// robot turns while hidden, which a constant-velocity prediction misses.
class MultimodalTrackScenario : public Scenario {
 public:
  struct Params {
    double sigma_accel = 0.05;
    double sigma_obs = 0.3;
    double width = 30.0;
    double height = 20.0;
    double speed = 0.5;
    double init_speed_std = 0.5;
    double coverage_radius = 1.0;
    Eigen::Vector2d scanner{2.0, 10.0};
    std::vector<Rect> obstacles{Rect{9.0, 8.0, 11.0, 12.0}, Rect{19.0, 3.0, 21.0, 17.0}};
  };

  explicit MultimodalTrackScenario(Params p)
      : p_(std::move(p)),
        cv_(p_.sigma_accel),
        obs_(Matrix::Identity(4, 4), Matrix(4, 0), Matrix::Zero(4, 4), position_selector(),
             p_.sigma_obs * p_.sigma_obs * Matrix::Identity(2, 2)),
        scanner_(p_.scanner),
        obstacles_(p_.obstacles) {}

  const Params& params() const { return p_; }

  std::string name() const override { return "multimodal-track"; }
  Index state_dim() const override { return 4; }
  const TransitionModel& transition() const override { return cv_; }
  std::shared_ptr<const ObservationModel> observation_model(long) const override {
    return std::shared_ptr<const ObservationModel>(std::shared_ptr<const ObservationModel>{}, &obs_);
  }
  const std::vector<Rect>& obstacles() const { return obstacles_; }
  const Eigen::Vector2d& scanner() const { return scanner_; }

  bool visible(const Eigen::Vector2d& p) const {
    return std::none_of(obstacles_.begin(), obstacles_.end(),
                        [&](const Rect& r) { return segment_hits_rect(scanner_, p, r); });
  }

  Episode simulate(int horizon, RngStream rng) const override {
    // Waypoints: pass the first obstacle on a randomly chosen side, then
    // turn behind the second one.
    const double side = rng.uniform() < 0.5 ? 1.0 : -1.0;
    const std::vector<Eigen::Vector2d> waypoints = {
        {5.0, 10.0}, {10.0, 10.0 + 3.5 * side}, {16.0, 10.0 + 3.5 * side}, {24.0, 10.0 + 3.0 * side},
        {24.0, 10.0 - 6.0 * side}, {28.0, 10.0 - 6.0 * side}};
    Episode ep;
    Eigen::Vector2d pos = waypoints.front();
    std::size_t next = 1;
    ep.initial_truth = StateVector(4);
    ep.initial_truth << pos, (waypoints[1] - pos).normalized() * p_.speed;
    for (int t = 0; t < horizon; ++t) {
      Eigen::Vector2d vel = Eigen::Vector2d::Zero();
      if (next < waypoints.size()) {
        Eigen::Vector2d to = waypoints[next] - pos;
        if (to.norm() <= p_.speed) {
          pos = waypoints[next];
          ++next;
          if (next < waypoints.size()) vel = (waypoints[next] - pos).normalized() * p_.speed;
        } else {
          vel = to.normalized() * p_.speed;
          pos += vel;
        }
      }
      StateVector x(4);
      x << pos, vel;
      ep.truth.push_back(x);
      ep.controls.emplace_back();
      if (visible(pos)) {
        Observation z = pos + p_.sigma_obs * rng.normal_vector(2);
        ep.observations.emplace_back(z);
      } else {
        ep.observations.emplace_back(std::nullopt);
      }
    }
    return ep;
  }

  ParticleSet initial_particles(Index n, const Episode&, RngStream& rng) const override {
    Matrix s(n, 4);
    for (Index j = 0; j < n; ++j) {
      s(j, 0) = rng.uniform(0.0, p_.width);
      s(j, 1) = rng.uniform(0.0, p_.height);
      s(j, 2) = p_.init_speed_std * rng.normal();
      s(j, 3) = p_.init_speed_std * rng.normal();
    }
    return ParticleSet(s);
  }

  Eigen::VectorXd error_vector(const ParticleSet& p, const StateVector& truth, long) const override {
    return (estimate(p) - truth).head<2>();
  }

  std::optional<double> coverage(const ParticleSet& p, const StateVector& truth) const override {
    ParticleSet pos(p.states.leftCols(2));
    return mode_coverage(pos, {truth.head<2>()}, p_.coverage_radius).front();
  }

 private:
  static Matrix position_selector() {
    Matrix h = Matrix::Zero(2, 4);
    h(0, 0) = h(1, 1) = 1.0;
    return h;
  }

  Params p_;
  ConstantVelocityModel cv_;
  LinearGaussianModel obs_;
  Eigen::Vector2d scanner_;
  std::vector<Rect> obstacles_;
};

// ---------------------------------------------------------------------------

/// Planar pose (px, py, theta) driven by odometry u = (forward, lateral,
/// dtheta) in the robot frame, with Gaussian noise on each component.
class PlanarOdometryModel : public TransitionModel {
 public:
  PlanarOdometryModel(double sigma_translation, double sigma_rotation)
      : sigma_t_(sigma_translation), sigma_r_(sigma_rotation) {}

  Index state_dim() const override { return 3; }
  std::vector<Index> angular_dims() const override { return {2}; }

  StateVector propagate_deterministic(const StateVector& x, const ControlInput& u) const override {
    StateVector out = x;
    if (u.size() == 3) {
      const double c = std::cos(x[2]), s = std::sin(x[2]);
      out[0] += c * u[0] - s * u[1];
      out[1] += s * u[0] + c * u[1];
      out[2] += u[2];
    }
    out[2] = wrap_angle(out[2]);
    return out;
  }

  StateVector propagate(const StateVector& x, const ControlInput& u, RngStream& rng) const override {
    ControlInput noisy = u.size() == 3 ? u : ControlInput(ControlInput::Zero(3));
    noisy[0] += sigma_t_ * rng.normal();
    noisy[1] += sigma_t_ * rng.normal();
    noisy[2] += sigma_r_ * rng.normal();
    return propagate_deterministic(x, noisy);
  }

  Matrix process_noise_cov() const override {
    return Eigen::Vector3d(sigma_t_ * sigma_t_, sigma_t_ * sigma_t_, sigma_r_ * sigma_r_).asDiagonal();
  }

 private:
  double sigma_t_, sigma_r_;
};

/// 64 x 64 map: a large room and a smaller one joined by a corridor, with
/// a few interior blocks so that no two places look alike.
inline GridMap2D make_two_room_map(double resolution = 0.25) {
  const int w = 64, h = 64;
  std::vector<std::uint8_t> occ(static_cast<std::size_t>(w * h), 1);
  auto set_free = [&](int x0, int y0, int x1, int y1) {
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) occ[static_cast<std::size_t>(y * w + x)] = 0;
  };
  auto set_occ = [&](int x0, int y0, int x1, int y1) {
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) occ[static_cast<std::size_t>(y * w + x)] = 1;
  };
  set_free(2, 2, 27, 61);   // room A
  set_free(38, 4, 61, 40);  // room B
  set_free(28, 20, 37, 26); // corridor
  set_occ(9, 42, 14, 47);   // pillar in A
  set_occ(18, 10, 21, 22);  // wall stub in A
  set_occ(48, 26, 58, 29);  // bar in B
  set_occ(44, 10, 46, 16);  // block in B
  return GridMap2D(w, h, resolution, std::move(occ));
}

/// Robot driving through a grid map with a ring of range beams. Beams report
/// the center of the first occupied cell they reach, perturbed by Gaussian
/// noise, in the sensor frame.
class GridLocalizeScenario : public Scenario {
 public:
  struct Params {
    bool global = true;
    int beams = 24;
    double sensor_sigma = 0.03;   // simulated endpoint noise (m)
    double model_sigma = 0.15;    // sigma used by the filters' likelihood (m)
    double sigma_translation = 0.03;
    double sigma_rotation = 0.02;
    double speed = 0.25;          // m per step
    double max_range = 40.0;
    double track_init_std = 0.2;  // tracking: initial spread around the truth
    double track_init_yaw_std = 0.05;
    double success_cells = 2.0;
    double coverage_radius = 0.5;
    int yaw_increments = 12;      // global: headings in 30 degree steps
  };

  GridLocalizeScenario(GridMap2D map, Params p)
      : p_(p),
        map_(std::make_shared<GridMap2D>(std::move(map))),
        odom_(p.sigma_translation, p.sigma_rotation),
        beam_(std::make_shared<BeamModel>(*map_, p.model_sigma)) {
    for (int y = 0; y < map_->height(); ++y)
      for (int x = 0; x < map_->width(); ++x)
        if (!map_->occupied(x, y) && map_->cell_distance(x, y) >= 2.0 * map_->resolution()) free_cells_.emplace_back(x, y);
    if (free_cells_.empty()) throw std::invalid_argument("map has no free space");
  }

  const Params& params() const { return p_; }
  const GridMap2D& map() const { return *map_; }
  std::string name() const override { return p_.global ? "grid-localize-global" : "grid-localize-track"; }
  Index state_dim() const override { return 3; }
  const TransitionModel& transition() const override { return odom_; }
  std::shared_ptr<const ObservationModel> observation_model(long) const override { return beam_; }

  /// Scan of the given pose, flattened; beams that never hit are dropped
  /// by placing them on the nearest occupied cell along the ray's end.
  Observation scan(const StateVector& pose, RngStream& rng) const {
    Observation z(2 * p_.beams);
    const Eigen::Vector2d origin = pose.head<2>();
    for (int i = 0; i < p_.beams; ++i) {
      const double rel = 2.0 * std::numbers::pi * i / p_.beams;
      auto hit = map_->cast_ray(origin, pose[2] + rel, p_.max_range);
      Eigen::Vector2d w = hit ? *hit : map_->nearest_occupied(origin);
      Eigen::Vector2d local = w - origin;
      const double c = std::cos(pose[2]), s = std::sin(pose[2]);
      Eigen::Vector2d b(c * local.x() + s * local.y(), -s * local.x() + c * local.y());
      b += p_.sensor_sigma * rng.normal_vector(2);
      z.segment<2>(2 * i) = b;
    }
    return z;
  }

  Episode simulate(int horizon, RngStream rng) const override {
    // Loop A -> corridor -> B and back with a random start along the loop.
    const double r = map_->resolution();
    const std::vector<Eigen::Vector2d> loop = {
        {6 * r, 6 * r},   {6 * r, 30 * r},  {15 * r, 36 * r}, {24 * r, 52 * r}, {6 * r, 55 * r},
        {5 * r, 38 * r},  {24 * r, 30 * r}, {25 * r, 23 * r}, {34 * r, 23 * r}, {42 * r, 23 * r},
        {55 * r, 20 * r}, {58 * r, 35 * r}, {42 * r, 36 * r}, {41 * r, 22 * r}, {52 * r, 7 * r},
        {40 * r, 6 * r},  {34 * r, 23 * r}, {25 * r, 23 * r}, {24 * r, 6 * r}};
    Episode ep;
    const std::size_t start = static_cast<std::size_t>(rng.below(loop.size()));
    Eigen::Vector2d pos = loop[start];
    std::size_t next = (start + 1) % loop.size();
    double yaw = std::atan2((loop[next] - pos).y(), (loop[next] - pos).x());
    ep.initial_truth = Eigen::Vector3d(pos.x(), pos.y(), yaw);
    StateVector prev = ep.initial_truth;
    for (int t = 0; t < horizon; ++t) {
      double remaining = p_.speed;
      while (remaining > 1e-12) {
        const Eigen::Vector2d to = loop[next] - pos;
        if (to.norm() <= remaining) {
          pos = loop[next];
          remaining -= to.norm();
          next = (next + 1) % loop.size();
        } else {
          pos += to.normalized() * remaining;
          remaining = 0.0;
        }
      }
      const Eigen::Vector2d to = loop[next] - pos;
      const double target_yaw = std::atan2(to.y(), to.x());
      yaw = wrap_angle(yaw + std::clamp(wrap_angle(target_yaw - yaw), -0.6, 0.6));
      StateVector x(3);
      x << pos.x(), pos.y(), yaw;
      // Odometry expressed in the previous robot frame.
      const double c = std::cos(prev[2]), s = std::sin(prev[2]);
      const Eigen::Vector2d dp = x.head<2>() - prev.head<2>();
      ControlInput u(3);
      u << c * dp.x() + s * dp.y(), -s * dp.x() + c * dp.y(), wrap_angle(x[2] - prev[2]);
      ep.truth.push_back(x);
      ep.controls.push_back(u);
      ep.observations.emplace_back(scan(x, rng));
      prev = x;
    }
    return ep;
  }

  ParticleSet initial_particles(Index n, const Episode& ep, RngStream& rng) const override {
    Matrix s(n, 3);
    for (Index j = 0; j < n; ++j) {
      if (p_.global) {
        const auto& [cx, cy] = free_cells_[static_cast<std::size_t>(rng.below(free_cells_.size()))];
        const Eigen::Vector2d c = map_->cell_center(cx, cy);
        const double r = map_->resolution();
        s(j, 0) = c.x() + rng.uniform(-0.5, 0.5) * r;
        s(j, 1) = c.y() + rng.uniform(-0.5, 0.5) * r;
        const auto k = static_cast<double>(rng.below(static_cast<std::uint64_t>(p_.yaw_increments)));
        s(j, 2) = wrap_angle(k * 2.0 * std::numbers::pi / p_.yaw_increments);
      } else {
        s(j, 0) = ep.initial_truth[0] + p_.track_init_std * rng.normal();
        s(j, 1) = ep.initial_truth[1] + p_.track_init_std * rng.normal();
        s(j, 2) = wrap_angle(ep.initial_truth[2] + p_.track_init_yaw_std * rng.normal());
      }
    }
    return ParticleSet(s);
  }

  Eigen::VectorXd error_vector(const ParticleSet& p, const StateVector& truth, long) const override {
    return (estimate(p) - truth).head<2>();
  }

  std::optional<double> coverage(const ParticleSet& p, const StateVector& truth) const override {
    ParticleSet pos(p.states.leftCols(2));
    return mode_coverage(pos, {truth.head<2>()}, p_.coverage_radius).front();
  }

  bool reports_success() const override { return true; }
  std::optional<bool> success(const ParticleSet& p, const StateVector& truth) const override {
    return (estimate(p) - truth).head<2>().norm() <= p_.success_cells * map_->resolution();
  }

 private:
  Params p_;
  std::shared_ptr<GridMap2D> map_;
  PlanarOdometryModel odom_;
  std::shared_ptr<BeamModel> beam_;
  std::vector<std::pair<int, int>> free_cells_;
};

}  // namespace spf
