#pragma once

#include <stdexcept>
#include <utility>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "spf/models.hpp"

namespace spf {

struct Gaussian {
  StateVector mean;
  Matrix cov;
};

/// Kalman predict step only.
inline Gaussian kalman_predict(const LinearGaussianModel& m, const Gaussian& g, const ControlInput& u) {
  Gaussian out{m.propagate_deterministic(g.mean, u), m.F() * g.cov * m.F().transpose() + m.Q()};
  out.cov = 0.5 * (out.cov + out.cov.transpose());
  return out;
}

/// Kalman measurement update (Joseph form). Throws std::runtime_error when
/// the innovation covariance is not invertible.
inline Gaussian kalman_update(const LinearGaussianModel& m, const Gaussian& g, const Observation& z) {
  const Matrix& H = m.Hm();
  const Matrix S = H * g.cov * H.transpose() + m.R();
  Eigen::LLT<Matrix> llt(0.5 * (S + S.transpose()));
  if (llt.info() != Eigen::Success) throw std::runtime_error("kalman_update: innovation covariance is singular");
  const Matrix K = llt.solve(H * g.cov).transpose();
  const Index d = g.mean.size();
  const Matrix IKH = Matrix::Identity(d, d) - K * H;
  Gaussian out{g.mean + K * (z - H * g.mean), IKH * g.cov * IKH.transpose() + K * m.R() * K.transpose()};
  out.cov = 0.5 * (out.cov + out.cov.transpose());
  return out;
}

/// One full predict/update recursion of the linear-Gaussian oracle.
inline Gaussian lingauss_step_oracle(const LinearGaussianModel& m, const Gaussian& prior, const ControlInput& u,
                                     const Observation& z) {
  return kalman_update(m, kalman_predict(m, prior, u), z);
}

/// Posterior covariance the filter settles to, by fixed-point iteration of
/// the Riccati recursion.
inline Matrix steady_state_covariance(const LinearGaussianModel& m, int max_iter = 10000, double tol = 1e-14) {
  const Index d = m.state_dim();
  Gaussian g{StateVector::Zero(d), Matrix::Identity(d, d)};
  const Observation z = Observation::Zero(m.obs_dim());
  for (int i = 0; i < max_iter; ++i) {
    const Gaussian next = lingauss_step_oracle(m, g, ControlInput(), z);
    const double change = (next.cov - g.cov).norm();
    g = next;
    if (change < tol) break;
  }
  return g.cov;
}

}  // namespace spf
