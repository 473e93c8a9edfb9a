#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include <Eigen/Core>

#include "spf/core.hpp"

namespace spf {

/// Dimensions compared by rmse_trajectory; empty means all.
struct ErrorDims {
  std::vector<Index> dims;
  std::vector<Index> angular;  // subset of dims compared with wrapped differences
};

inline double squared_error(const StateVector& est, const StateVector& truth, const ErrorDims& sel = {}) {
  if (est.size() != truth.size()) throw std::invalid_argument("estimate/truth dimension mismatch");
  auto is_angular = [&](Index i) { return std::find(sel.angular.begin(), sel.angular.end(), i) != sel.angular.end(); };
  double total = 0.0;
  auto add = [&](Index i) {
    double diff = est[i] - truth[i];
    if (is_angular(i)) diff = wrap_angle(diff);
    total += diff * diff;
  };
  if (sel.dims.empty()) {
    for (Index i = 0; i < est.size(); ++i) add(i);
  } else {
    for (Index i : sel.dims) add(i);
  }
  return total;
}

/// sqrt(mean_t |est_t - truth_t|^2) over the selected dimensions.
inline double rmse_trajectory(const std::vector<StateVector>& estimates, const std::vector<StateVector>& truth,
                              const ErrorDims& sel = {}) {
  if (estimates.size() != truth.size()) throw std::invalid_argument("rmse_trajectory: length mismatch");
  if (estimates.empty()) throw std::invalid_argument("rmse_trajectory: empty trajectory");
  double total = 0.0;
  for (std::size_t t = 0; t < estimates.size(); ++t) total += squared_error(estimates[t], truth[t], sel);
  return std::sqrt(total / static_cast<double>(estimates.size()));
}

/// Linear-interpolation quantiles (position q * (n - 1) in sorted order).
inline std::vector<double> quantiles(std::vector<double> values, const std::vector<double>& qs) {
  if (values.empty()) throw std::invalid_argument("quantiles: empty input");
  std::sort(values.begin(), values.end());
  std::vector<double> out;
  out.reserve(qs.size());
  const double last = static_cast<double>(values.size() - 1);
  for (double q : qs) {
    if (q < 0.0 || q > 1.0) throw std::invalid_argument("quantile fraction outside [0, 1]");
    const double pos = q * last;
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    out.push_back(values[lo] + frac * (values[hi] - values[lo]));
  }
  return out;
}

/// 1 / sum w^2 for normalized weights.
inline double effective_sample_size(const Eigen::VectorXd& w) { return 1.0 / w.squaredNorm(); }

/// Fraction of particles assigned to each mode: a particle counts for its
/// nearest mode (ties to the lower index) when it lies within the radius.
inline std::vector<double> mode_coverage(const ParticleSet& p, const std::vector<StateVector>& modes, double radius) {
  if (modes.empty()) throw std::invalid_argument("mode_coverage: no modes");
  if (!(radius > 0.0)) throw std::invalid_argument("mode_coverage: radius must be positive");
  std::vector<double> counts(modes.size(), 0.0);
  for (Index j = 0; j < p.size(); ++j) {
    const StateVector x = p.particle(j);
    std::size_t best = 0;
    double best_d = (x - modes[0]).norm();
    for (std::size_t m = 1; m < modes.size(); ++m) {
      const double dm = (x - modes[m]).norm();
      if (dm < best_d) {
        best_d = dm;
        best = m;
      }
    }
    if (best_d <= radius) counts[best] += 1.0;
  }
  for (double& c : counts) c /= static_cast<double>(p.size());
  return counts;
}

}  // namespace spf
