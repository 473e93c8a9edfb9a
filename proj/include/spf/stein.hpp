#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "spf/core.hpp"
#include "spf/kernels.hpp"
#include "spf/models.hpp"

namespace spf {

/// Density with gradient standing in for the predictive distribution.
class PriorApprox {
 public:
  virtual ~PriorApprox() = default;
  virtual LogLikScore evaluate(const StateVector& x) const = 0;
  /// PSD curvature of -log prior used for the kernel metric.
  virtual Matrix curvature(const StateVector& x) const = 0;
};

class FlatPrior : public PriorApprox {
 public:
  explicit FlatPrior(Index d) : d_(d) {}
  LogLikScore evaluate(const StateVector&) const override { return {0.0, StateVector::Zero(d_)}; }
  Matrix curvature(const StateVector&) const override { return Matrix::Zero(d_, d_); }

 private:
  Index d_;
};

/// Gaussian fit of the predicted particles. Angular components use the
/// circular mean and wrapped residuals.
class GaussianPrior : public PriorApprox {
 public:
  static constexpr double kRegularization = 1e-6;

  GaussianPrior(StateVector mean, Matrix cov, std::vector<Index> angular = {})
      : mean_(std::move(mean)), angular_(std::move(angular)) {
    init(std::move(cov));
  }

  static GaussianPrior fit(const ParticleSet& p, const std::vector<Index>& angular = {}) {
    const Index n = p.size();
    const Index d = p.dim();
    StateVector mean = StateVector::Zero(d);
    for (Index j = 0; j < n; ++j) mean += p.states.row(j).transpose();
    mean /= static_cast<double>(n);
    for (Index a : angular) {
      double s = 0.0, c = 0.0;
      for (Index j = 0; j < n; ++j) {
        s += std::sin(p.states(j, a));
        c += std::cos(p.states(j, a));
      }
      mean[a] = std::atan2(s, c);
    }
    Matrix cov = Matrix::Zero(d, d);
    for (Index j = 0; j < n; ++j) {
      StateVector r = p.states.row(j).transpose() - mean;
      for (Index a : angular) r[a] = wrap_angle(r[a]);
      cov += r * r.transpose();
    }
    cov /= static_cast<double>(n);
    return GaussianPrior(mean, cov, angular);
  }

  const StateVector& mean() const { return mean_; }
  const Matrix& cov() const { return cov_; }
  const Matrix& precision() const { return precision_; }

  LogLikScore evaluate(const StateVector& x) const override {
    StateVector r = x - mean_;
    for (Index a : angular_) r[a] = wrap_angle(r[a]);
    const StateVector pr = precision_ * r;
    return {log_norm_ - 0.5 * r.dot(pr), -pr};
  }

  Matrix curvature(const StateVector&) const override { return precision_; }

 private:
  void init(Matrix cov) {
    const Index d = mean_.size();
    cov_ = 0.5 * (cov + cov.transpose()) + kRegularization * Matrix::Identity(d, d);
    Eigen::LLT<Matrix> llt(cov_);
    if (llt.info() != Eigen::Success) throw std::runtime_error("GaussianPrior: covariance not positive definite");
    precision_ = llt.solve(Matrix::Identity(d, d));
    precision_ = 0.5 * (precision_ + precision_.transpose());
    const Matrix L = llt.matrixL();
    log_norm_ = -0.5 * static_cast<double>(d) * std::log(2.0 * std::numbers::pi) -
                L.diagonal().array().log().sum();
  }

  StateVector mean_;
  std::vector<Index> angular_;
  Matrix cov_;
  Matrix precision_;
  double log_norm_ = 0.0;
};

/// Kernel density estimate over the predicted particles, using the flow
/// kernel: log p(x) = log (1/N) sum_j k(x, x^j). The metric curvature falls
/// back to the Gaussian fit's precision.
class KdePrior : public PriorApprox {
 public:
  KdePrior(const ParticleSet& predicted, KernelSpec kernel)
      : centers_(predicted.states), kernel_(std::move(kernel)), gauss_(GaussianPrior::fit(predicted)) {}

  LogLikScore evaluate(const StateVector& x) const override {
    const Index n = centers_.rows();
    Eigen::VectorXd logk(n);
    Matrix grads(n, x.size());
    for (Index j = 0; j < n; ++j) {
      const StateVector delta = x - centers_.row(j).transpose();
      if (kernel_.is_isotropic()) {
        const double h = kernel_.iso().bandwidth;
        logk[j] = -delta.squaredNorm() / h;
        grads.row(j) = (-2.0 / h) * delta.transpose();
      } else {
        const auto& a = kernel_.aniso();
        const StateVector Md = a.metric * delta;
        logk[j] = -delta.dot(Md) / static_cast<double>(a.dim);
        grads.row(j) = (-2.0 / static_cast<double>(a.dim)) * Md.transpose();
      }
    }
    const double mx = logk.maxCoeff();
    const Eigen::VectorXd w = (logk.array() - mx).exp();
    const double total = w.sum();
    LogLikScore out{mx + std::log(total / static_cast<double>(n)), (grads.transpose() * w) / total};
    return out;
  }

  Matrix curvature(const StateVector& x) const override { return gauss_.curvature(x); }

 private:
  Matrix centers_;
  KernelSpec kernel_;
  GaussianPrior gauss_;
};

// ---------------------------------------------------------------------------

/// Per-particle log posterior (up to a constant) and its gradient.
struct PosteriorScore {
  Matrix scores;                // N x d
  Eigen::VectorXd log_density;  // N
  Eigen::VectorXd log_likelihood;  // N, observation term only (diagnostics)
};

/// Evaluates the unnormalized log target for particle j at position x.
/// Returns the total log density, the observation part, and the gradient.
struct TargetEval {
  double log_density = 0.0;
  double log_likelihood = 0.0;
  StateVector score;
};
using TargetFn = std::function<TargetEval(Index particle, const StateVector& x)>;

inline PosteriorScore score_batch(const ParticleSet& p, const TargetFn& target) {
  const Index n = p.size();
  PosteriorScore out{Matrix(n, p.dim()), Eigen::VectorXd(n), Eigen::VectorXd(n)};
  for (Index j = 0; j < n; ++j) {
    const TargetEval e = target(j, p.particle(j));
    if (e.score.size() != p.dim()) throw std::invalid_argument("score dimension mismatch");
    if (!e.score.allFinite() || !std::isfinite(e.log_density))
      throw std::runtime_error("non-finite posterior score at particle " + std::to_string(j));
    out.scores.row(j) = e.score.transpose();
    out.log_density[j] = e.log_density;
    out.log_likelihood[j] = e.log_likelihood;
  }
  return out;
}

/// Log posterior = log p(z | x) + log prior(x), the normalizer dropped.
inline PosteriorScore score_batch(const ParticleSet& p, const ObservationModel& obs, const PriorApprox& prior,
                                  const Observation& z) {
  return score_batch(p, [&](Index, const StateVector& x) {
    const LogLikScore l = obs.evaluate(x, z);
    const LogLikScore pr = prior.evaluate(x);
    return TargetEval{l.log_likelihood + pr.log_likelihood, l.log_likelihood, l.score + pr.score};
  });
}

/// Empirical steepest direction: row l = (1/N) sum_j [s_j K(j,l) + grad_j K(j,l)].
/// The sum runs over j in ascending order.
inline Matrix phi_hat(const ParticleSet& p, const PosteriorScore& s, const GramResult& g) {
  const Index n = p.size();
  const Index d = p.dim();
  if (s.scores.rows() != n || s.scores.cols() != d || g.K.rows() != n || g.grad.cols() != d)
    throw std::invalid_argument("phi_hat: inconsistent shapes");
  Matrix phi = Matrix::Zero(n, d);
  for (Index l = 0; l < n; ++l) {
    auto row = phi.row(l);
    for (Index j = 0; j < n; ++j) row += g.K(j, l) * s.scores.row(j) + g.grad.row(j * n + l);
  }
  phi /= static_cast<double>(n);
  return phi;
}

/// A test function phi: R^d -> R^d with its Jacobian.
struct TestFunctionValue {
  StateVector value;
  Matrix jacobian;
};
using TestFunction = std::function<TestFunctionValue(const StateVector&)>;

/// Mean over particles of trace(phi(x) score(x)^T + grad phi(x)).
inline double stein_trace_diagnostic(const ParticleSet& p, const PosteriorScore& s, const TestFunction& f) {
  double total = 0.0;
  for (Index j = 0; j < p.size(); ++j) {
    const TestFunctionValue v = f(p.particle(j));
    total += v.value.dot(s.scores.row(j).transpose()) + v.jacobian.trace();
  }
  return total / static_cast<double>(p.size());
}

}  // namespace spf
