#pragma once

#include <cmath>
#include <cstddef>
#include <deque>
#include <optional>
#include <stdexcept>
#include <vector>

#include <Eigen/Core>

#include "spf/core.hpp"

namespace spf {

/// Limited-memory BFGS curvature pairs for one particle.
///
/// Pairs are stored with y as a difference of descent directions, so that
/// y^T s > 0 near a mode and the implied inverse Hessian is positive definite.
/// When y differences the interacting flow direction, neighbours' motion leaks
/// into y; the cosine test drops pairs whose y is nearly orthogonal to s.
class LbfgsHistory {
 public:
  static constexpr double kCurvatureThreshold = 1e-10;
  static constexpr double kDefaultMinCosine = 0.5;

  struct Pair {
    Eigen::VectorXd s;
    Eigen::VectorXd y;
    double rho;
  };

  /// Pairs need y^T s above the curvature threshold and, when min_cosine > 0,
  /// an angle between s and y with cosine at least min_cosine.
  explicit LbfgsHistory(std::size_t capacity = 10, double min_cosine = kDefaultMinCosine)
      : capacity_(capacity), min_cosine_(min_cosine) {
    if (capacity == 0) throw std::invalid_argument("L-BFGS capacity must be positive");
    if (!(min_cosine >= 0.0 && min_cosine < 1.0)) throw std::invalid_argument("L-BFGS min cosine must be in [0, 1)");
  }

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return pairs_.size(); }
  bool empty() const { return pairs_.empty(); }
  std::size_t rejected() const { return rejected_; }
  const std::deque<Pair>& pairs() const { return pairs_; }

  /// Returns true when the pair was stored.
  bool insert(const Eigen::VectorXd& s, const Eigen::VectorXd& y) {
    const double ys = y.dot(s);
    if (!(ys > kCurvatureThreshold) || !std::isfinite(ys) || ys < min_cosine_ * s.norm() * y.norm()) {
      ++rejected_;
      return false;
    }
    if (pairs_.size() == capacity_) pairs_.pop_front();
    pairs_.push_back({s, y, 1.0 / ys});
    return true;
  }

  void clear() {
    pairs_.clear();
    rejected_ = 0;
  }

  /// H g by the two-loop recursion. H0 = gamma I from the newest pair; with
  /// an empty history H0 is the optional diagonal seed, else the identity.
  Eigen::VectorXd direction(const Eigen::VectorXd& g,
                            const std::optional<Eigen::VectorXd>& diagonal_seed = std::nullopt) const {
    if (pairs_.empty()) {
      if (diagonal_seed) return diagonal_seed->cwiseProduct(g);
      return g;
    }
    const std::size_t m = pairs_.size();
    std::vector<double> alpha(m);
    Eigen::VectorXd q = g;
    for (std::size_t i = m; i-- > 0;) {
      const auto& p = pairs_[i];
      alpha[i] = p.rho * p.s.dot(q);
      q -= alpha[i] * p.y;
    }
    const auto& last = pairs_.back();
    const double gamma = last.s.dot(last.y) / last.y.squaredNorm();
    Eigen::VectorXd r = gamma * q;
    for (std::size_t i = 0; i < m; ++i) {
      const auto& p = pairs_[i];
      const double beta = p.rho * p.y.dot(r);
      r += (alpha[i] - beta) * p.s;
    }
    return r;
  }

 private:
  std::size_t capacity_;
  double min_cosine_;
  std::deque<Pair> pairs_;
  std::size_t rejected_ = 0;
};

/// Adam moments for ascent along a supplied direction.
struct AdamState {
  double lr = 0.05;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  Eigen::VectorXd m;
  Eigen::VectorXd v;
  long t = 0;

  explicit AdamState(Index d = 0, double learning_rate = 0.05)
      : lr(learning_rate), m(Eigen::VectorXd::Zero(d)), v(Eigen::VectorXd::Zero(d)) {}

  void reset() {
    m.setZero();
    v.setZero();
    t = 0;
  }
};

/// Bias-corrected Adam step; the returned step is added to the state.
inline Eigen::VectorXd adam_step(AdamState& st, const Eigen::VectorXd& g) {
  if (st.m.size() != g.size()) {
    st.m = Eigen::VectorXd::Zero(g.size());
    st.v = Eigen::VectorXd::Zero(g.size());
  }
  ++st.t;
  st.m = st.beta1 * st.m + (1.0 - st.beta1) * g;
  st.v = st.beta2 * st.v + (1.0 - st.beta2) * g.cwiseAbs2();
  const double c1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.t));
  const double c2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.t));
  const Eigen::ArrayXd mhat = st.m.array() / c1;
  const Eigen::ArrayXd vhat = st.v.array() / c2;
  return (st.lr * mhat / (vhat.sqrt() + st.eps)).matrix();
}

}  // namespace spf
