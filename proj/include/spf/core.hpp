#pragma once

#include <cmath>
#include <limits>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <Eigen/Eigenvalues>

#include "spf/rng.hpp"

namespace spf {

using Index = Eigen::Index;
using StateVector = Eigen::VectorXd;
using ControlInput = Eigen::VectorXd;
using Observation = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Wrap an angle to (-pi, pi].
inline double wrap_angle(double a) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  a = std::fmod(a, two_pi);
  if (a <= -std::numbers::pi) a += two_pi;
  if (a > std::numbers::pi) a -= two_pi;
  return a;
}

inline bool all_finite(const Eigen::Ref<const Matrix>& m) { return m.allFinite(); }

/// Nonparametric belief: one state per row, optional normalized weights.
struct ParticleSet {
  Matrix states;                          // N x d
  std::optional<Eigen::VectorXd> weights;  // length N when present

  ParticleSet() = default;
  explicit ParticleSet(Matrix s) : states(std::move(s)) {}
  ParticleSet(Matrix s, Eigen::VectorXd w) : states(std::move(s)), weights(std::move(w)) {}

  Index size() const { return states.rows(); }
  Index dim() const { return states.cols(); }

  StateVector particle(Index j) const { return states.row(j).transpose(); }

  /// Throws std::invalid_argument when a ParticleSet invariant is broken.
  void validate() const {
    if (states.rows() < 1 || states.cols() < 1)
      throw std::invalid_argument("particle set must hold at least one particle of dimension >= 1");
    if (!states.allFinite()) throw std::invalid_argument("particle set contains non-finite entries");
    if (weights) {
      if (weights->size() != states.rows())
        throw std::invalid_argument("weight count does not match particle count");
      if ((weights->array() < 0.0).any()) throw std::invalid_argument("negative particle weight");
      const double total = weights->sum();
      if (std::abs(total - 1.0) > 1e-12 * std::max(1.0, total))
        throw std::invalid_argument("particle weights are not normalized");
    }
  }
};

/// Weighted (or uniform) mean and population covariance.
/// A single particle yields the zero covariance.
inline std::pair<StateVector, Matrix> particle_mean_cov(const ParticleSet& p) {
  const Index n = p.size();
  const Index d = p.dim();
  if (n < 1) throw std::invalid_argument("particle_mean_cov: empty particle set");
  StateVector mean = StateVector::Zero(d);
  Matrix cov = Matrix::Zero(d, d);
  if (p.weights) {
    const Eigen::VectorXd& w = *p.weights;
    const double total = w.sum();
    for (Index j = 0; j < n; ++j) mean += w[j] * p.states.row(j).transpose();
    mean /= total;
    for (Index j = 0; j < n; ++j) {
      const StateVector c = p.states.row(j).transpose() - mean;
      cov += w[j] * c * c.transpose();
    }
    cov /= total;
  } else {
    for (Index j = 0; j < n; ++j) mean += p.states.row(j).transpose();
    mean /= static_cast<double>(n);
    for (Index j = 0; j < n; ++j) {
      const StateVector c = p.states.row(j).transpose() - mean;
      cov += c * c.transpose();
    }
    cov /= static_cast<double>(n);
  }
  cov = 0.5 * (cov + cov.transpose());
  return {mean, cov};
}

/// Smallest Euclidean distance between two distinct particles.
inline double min_pairwise_distance(const ParticleSet& p) {
  const Index n = p.size();
  if (n < 2) throw std::invalid_argument("min_pairwise_distance needs at least two particles");
  double best = std::numeric_limits<double>::infinity();
  for (Index j = 0; j < n; ++j)
    for (Index l = j + 1; l < n; ++l)
      best = std::min(best, (p.states.row(j) - p.states.row(l)).norm());
  return best;
}

/// Symmetric square root factor L with L L^T = S for a PSD matrix.
/// Tiny negative eigenvalues from round-off are treated as zero.
inline Matrix psd_sqrt(const Matrix& s) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (s + s.transpose()));
  const Eigen::VectorXd ev = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * ev.asDiagonal();
}

/// Clamp the spectrum of a symmetric matrix from below.
inline Matrix floor_eigenvalues(const Matrix& m, double floor) {
  Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (m + m.transpose()));
  const Eigen::VectorXd ev = eig.eigenvalues().cwiseMax(floor);
  Matrix out = eig.eigenvectors() * ev.asDiagonal() * eig.eigenvectors().transpose();
  return 0.5 * (out + out.transpose());
}

}  // namespace spf
