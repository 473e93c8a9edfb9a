#pragma once

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "spf/core.hpp"

namespace spf {

/// Process model x_t = f(x_{t-1}, u_t, v_t).
class TransitionModel {
 public:
  virtual ~TransitionModel() = default;

  virtual Index state_dim() const = 0;
  virtual StateVector propagate_deterministic(const StateVector& x, const ControlInput& u) const = 0;
  virtual StateVector propagate(const StateVector& x, const ControlInput& u, RngStream& rng) const = 0;
  virtual Matrix process_noise_cov() const = 0;

  /// State components that are angles (wrapped to (-pi, pi]).
  virtual std::vector<Index> angular_dims() const { return {}; }
};

struct LogLikScore {
  double log_likelihood = 0.0;
  Eigen::VectorXd score;  // gradient of log_likelihood w.r.t. the state
};

/// Observation model p(z | x) with its score and, optionally, a PSD
/// curvature approximation of -d^2/dx^2 log p(z | x).
class ObservationModel {
 public:
  virtual ~ObservationModel() = default;

  virtual Index state_dim() const = 0;
  virtual LogLikScore evaluate(const StateVector& x, const Observation& z) const = 0;

  virtual double log_likelihood(const StateVector& x, const Observation& z) const {
    return evaluate(x, z).log_likelihood;
  }
  virtual Eigen::VectorXd score(const StateVector& x, const Observation& z) const {
    return evaluate(x, z).score;
  }

  virtual bool has_curvature() const { return false; }
  virtual Matrix curvature(const StateVector& /*x*/, const Observation& /*z*/) const {
    throw std::logic_error("observation model does not provide curvature");
  }
};

// ---------------------------------------------------------------------------

/// x' = F x + B u + v, v ~ N(0, Q);  z = Hm x + n, n ~ N(0, R).
class LinearGaussianModel : public TransitionModel, public ObservationModel {
 public:
  LinearGaussianModel(Matrix F, Matrix B, Matrix Q, Matrix Hm, Matrix R)
      : F_(std::move(F)), B_(std::move(B)), Q_(std::move(Q)), H_(std::move(Hm)), R_(std::move(R)) {
    const Index d = F_.rows();
    if (F_.cols() != d || Q_.rows() != d || Q_.cols() != d || H_.cols() != d || R_.rows() != H_.rows() ||
        R_.cols() != H_.rows() || (B_.size() > 0 && B_.rows() != d))
      throw std::invalid_argument("LinearGaussianModel: inconsistent matrix shapes");
    Eigen::LLT<Matrix> llt(R_);
    if (llt.info() != Eigen::Success) throw std::invalid_argument("LinearGaussianModel: R must be positive definite");
    R_inv_ = llt.solve(Matrix::Identity(R_.rows(), R_.rows()));
    log_norm_ = -0.5 * static_cast<double>(R_.rows()) * std::log(2.0 * std::numbers::pi) -
                Eigen::MatrixXd(llt.matrixL()).diagonal().array().log().sum();
    Q_sqrt_ = psd_sqrt(Q_);
  }

  /// Scalar-diagonal convenience constructor: F = I, B empty, Q = q I, Hm = I, R = r I.
  static LinearGaussianModel random_walk(Index d, double q, double r) {
    return LinearGaussianModel(Matrix::Identity(d, d), Matrix(d, 0), q * Matrix::Identity(d, d),
                               Matrix::Identity(d, d), r * Matrix::Identity(d, d));
  }

  const Matrix& F() const { return F_; }
  const Matrix& B() const { return B_; }
  const Matrix& Q() const { return Q_; }
  const Matrix& Hm() const { return H_; }
  const Matrix& R() const { return R_; }
  Index obs_dim() const { return H_.rows(); }

  Index state_dim() const override { return F_.rows(); }

  StateVector propagate_deterministic(const StateVector& x, const ControlInput& u) const override {
    StateVector out = F_ * x;
    if (B_.cols() > 0 && u.size() == B_.cols()) out += B_ * u;
    return out;
  }

  StateVector propagate(const StateVector& x, const ControlInput& u, RngStream& rng) const override {
    return propagate_deterministic(x, u) + Q_sqrt_ * rng.normal_vector(Q_sqrt_.cols());
  }

  Matrix process_noise_cov() const override { return Q_; }

  LogLikScore evaluate(const StateVector& x, const Observation& z) const override {
    const Eigen::VectorXd r = z - H_ * x;
    const Eigen::VectorXd Rr = R_inv_ * r;
    return {log_norm_ - 0.5 * r.dot(Rr), H_.transpose() * Rr};
  }

  bool has_curvature() const override { return true; }
  Matrix curvature(const StateVector&, const Observation&) const override {
    return H_.transpose() * R_inv_ * H_;
  }

  Observation observe(const StateVector& x, RngStream& rng) const {
    return H_ * x + psd_sqrt(R_) * rng.normal_vector(R_.rows());
  }

 private:
  Matrix F_, B_, Q_, H_, R_;
  Matrix R_inv_;
  Matrix Q_sqrt_;
  double log_norm_ = 0.0;
};

// ---------------------------------------------------------------------------

/// Planar constant-velocity model, state (px, py, vx, vy), one step per call.
/// A 2-vector control, when given, is added to the velocity.
class ConstantVelocityModel : public TransitionModel {
 public:
  explicit ConstantVelocityModel(double sigma_accel, double dt = 1.0) : sigma_a_(sigma_accel), dt_(dt) {
    if (sigma_accel < 0.0) throw std::invalid_argument("sigma_accel must be non-negative");
  }

  double sigma_accel() const { return sigma_a_; }
  Index state_dim() const override { return 4; }

  StateVector propagate_deterministic(const StateVector& x, const ControlInput& u) const override {
    if (x.size() != 4) throw std::invalid_argument("constant-velocity state must be (px, py, vx, vy)");
    StateVector out = x;
    out.head<2>() += dt_ * x.tail<2>();
    if (u.size() == 2) out.tail<2>() += u;
    return out;
  }

  StateVector propagate(const StateVector& x, const ControlInput& u, RngStream& rng) const override {
    StateVector out = propagate_deterministic(x, u);
    if (sigma_a_ > 0.0) {
      out[2] += sigma_a_ * rng.normal();
      out[3] += sigma_a_ * rng.normal();
    }
    return out;
  }

  Matrix process_noise_cov() const override {
    Matrix q = Matrix::Zero(4, 4);
    q(2, 2) = q(3, 3) = sigma_a_ * sigma_a_;
    return q;
  }

 private:
  double sigma_a_;
  double dt_;
};

// ---------------------------------------------------------------------------

/// Bank of sine functions g_i(t) = A_i sin(k_i (t + phi_i)). The state holds
/// (A_1, phi_1, ..., A_n, phi_n); one noisy sample per function per step.
/// The state drifts as a random walk between steps.
class SineBankModel : public TransitionModel, public ObservationModel {
 public:
  struct Params {
    Index n_fns = 1;
    double sigma_z = 0.1;
    double sigma_amplitude = 0.0;  // random-walk std per step
    double sigma_phase = 0.0;
    std::vector<double> periods;  // k_i; empty means all 1
  };

  explicit SineBankModel(Params p, double time = 0.0) : p_(std::move(p)), t_(time) {
    if (p_.n_fns < 1) throw std::invalid_argument("sine bank needs at least one function");
    if (p_.sigma_z <= 0.0) throw std::invalid_argument("sigma_z must be positive");
    if (p_.periods.empty()) p_.periods.assign(static_cast<std::size_t>(p_.n_fns), 1.0);
    if (static_cast<Index>(p_.periods.size()) != p_.n_fns)
      throw std::invalid_argument("one period per sine function required");
  }

  const Params& params() const { return p_; }
  double time() const { return t_; }
  Index n_fns() const { return p_.n_fns; }
  double period(Index i) const { return p_.periods[static_cast<std::size_t>(i)]; }

  SineBankModel at_time(double t) const { return SineBankModel(p_, t); }

  double value(const StateVector& x, Index i) const {
    return x[2 * i] * std::sin(period(i) * (t_ + x[2 * i + 1]));
  }

  Eigen::VectorXd predict_observation(const StateVector& x) const {
    Eigen::VectorXd g(p_.n_fns);
    for (Index i = 0; i < p_.n_fns; ++i) g[i] = value(x, i);
    return g;
  }

  Index state_dim() const override { return 2 * p_.n_fns; }

  StateVector propagate_deterministic(const StateVector& x, const ControlInput&) const override { return x; }

  StateVector propagate(const StateVector& x, const ControlInput&, RngStream& rng) const override {
    StateVector out = x;
    for (Index i = 0; i < p_.n_fns; ++i) {
      if (p_.sigma_amplitude > 0.0) out[2 * i] += p_.sigma_amplitude * rng.normal();
      if (p_.sigma_phase > 0.0) out[2 * i + 1] += p_.sigma_phase * rng.normal();
    }
    return out;
  }

  Matrix process_noise_cov() const override {
    Matrix q = Matrix::Zero(state_dim(), state_dim());
    for (Index i = 0; i < p_.n_fns; ++i) {
      q(2 * i, 2 * i) = p_.sigma_amplitude * p_.sigma_amplitude;
      q(2 * i + 1, 2 * i + 1) = p_.sigma_phase * p_.sigma_phase;
    }
    return q;
  }

  LogLikScore evaluate(const StateVector& x, const Observation& z) const override {
    check(x, z);
    const double inv_var = 1.0 / (p_.sigma_z * p_.sigma_z);
    LogLikScore out{0.0, Eigen::VectorXd::Zero(state_dim())};
    for (Index i = 0; i < p_.n_fns; ++i) {
      const double k = period(i);
      const double arg = k * (t_ + x[2 * i + 1]);
      const double s = std::sin(arg);
      const double c = std::cos(arg);
      const double r = z[i] - x[2 * i] * s;
      out.log_likelihood -= 0.5 * r * r * inv_var;
      out.score[2 * i] = r * s * inv_var;
      out.score[2 * i + 1] = r * x[2 * i] * k * c * inv_var;
    }
    return out;
  }

  /// Gauss-Newton curvature J^T J / sigma_z^2, block diagonal.
  bool has_curvature() const override { return true; }
  Matrix curvature(const StateVector& x, const Observation& z) const override {
    check(x, z);
    const double inv_var = 1.0 / (p_.sigma_z * p_.sigma_z);
    Matrix c = Matrix::Zero(state_dim(), state_dim());
    for (Index i = 0; i < p_.n_fns; ++i) {
      const double k = period(i);
      const double arg = k * (t_ + x[2 * i + 1]);
      Eigen::Vector2d j(std::sin(arg), x[2 * i] * k * std::cos(arg));
      c.block<2, 2>(2 * i, 2 * i) = j * j.transpose() * inv_var;
    }
    return c;
  }

 private:
  void check(const StateVector& x, const Observation& z) const {
    if (x.size() != state_dim() || z.size() != p_.n_fns)
      throw std::invalid_argument("sine bank: state/observation size mismatch");
  }

  Params p_;
  double t_;
};

// ---------------------------------------------------------------------------

/// Multi-hypothesis Gaussian likelihood: the observation places the state at
/// z + offset_c with probability weight_c and isotropic noise sigma_c.
/// Used for bimodal and ambiguous-measurement targets.
class GaussianMixtureObservation : public ObservationModel {
 public:
  struct Component {
    Eigen::VectorXd offset;
    double sigma = 1.0;
    double weight = 1.0;
  };

  explicit GaussianMixtureObservation(std::vector<Component> comps) : comps_(std::move(comps)) {
    if (comps_.empty()) throw std::invalid_argument("mixture needs at least one component");
    double total = 0.0;
    for (const auto& c : comps_) {
      if (c.sigma <= 0.0 || c.weight <= 0.0) throw std::invalid_argument("mixture sigma/weight must be positive");
      if (c.offset.size() != comps_.front().offset.size())
        throw std::invalid_argument("mixture components must share a dimension");
      total += c.weight;
    }
    for (auto& c : comps_) c.weight /= total;
  }

  Index state_dim() const override { return comps_.front().offset.size(); }

  LogLikScore evaluate(const StateVector& x, const Observation& z) const override {
    const auto d = static_cast<double>(state_dim());
    std::vector<double> logs(comps_.size());
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < comps_.size(); ++c) {
      const auto& comp = comps_[c];
      const double r2 = (x - z - comp.offset).squaredNorm();
      logs[c] = std::log(comp.weight) - 0.5 * r2 / (comp.sigma * comp.sigma) -
                d * std::log(comp.sigma) - 0.5 * d * std::log(2.0 * std::numbers::pi);
      best = std::max(best, logs[c]);
    }
    double total = 0.0;
    for (double l : logs) total += std::exp(l - best);
    LogLikScore out{best + std::log(total), Eigen::VectorXd::Zero(state_dim())};
    for (std::size_t c = 0; c < comps_.size(); ++c) {
      const double resp = std::exp(logs[c] - out.log_likelihood);
      const auto& comp = comps_[c];
      out.score -= resp * (x - z - comp.offset) / (comp.sigma * comp.sigma);
    }
    return out;
  }

  /// Responsibility-weighted component precisions (PSD).
  bool has_curvature() const override { return true; }
  Matrix curvature(const StateVector& x, const Observation& z) const override {
    const double ll = log_likelihood(x, z);
    const auto d = static_cast<double>(state_dim());
    double prec = 0.0;
    for (const auto& comp : comps_) {
      const double r2 = (x - z - comp.offset).squaredNorm();
      const double l = std::log(comp.weight) - 0.5 * r2 / (comp.sigma * comp.sigma) - d * std::log(comp.sigma) -
                       0.5 * d * std::log(2.0 * std::numbers::pi);
      prec += std::exp(l - ll) / (comp.sigma * comp.sigma);
    }
    return prec * Matrix::Identity(state_dim(), state_dim());
  }

 private:
  std::vector<Component> comps_;
};

/// Likelihood that ignores the observation entirely.
class FlatObservation : public ObservationModel {
 public:
  explicit FlatObservation(Index d) : d_(d) {}
  Index state_dim() const override { return d_; }
  LogLikScore evaluate(const StateVector&, const Observation&) const override {
    return {0.0, Eigen::VectorXd::Zero(d_)};
  }
  bool has_curvature() const override { return true; }
  Matrix curvature(const StateVector&, const Observation&) const override { return Matrix::Zero(d_, d_); }

 private:
  Index d_;
};

}  // namespace spf
