#pragma once

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <variant>
#include <vector>

#include <Eigen/Core>

#include "spf/core.hpp"

namespace spf {

inline constexpr double kMetricEigenFloor = 1e-8;

/// Isotropic RBF: k(x, x') = exp(-|x - x'|^2 / h).
struct IsotropicKernel {
  double bandwidth = 1.0;
};

/// Hessian-scaled RBF: k(x, x') = exp(-(x - x')^T M (x - x') / d).
struct AnisotropicKernel {
  Matrix metric;
  Index dim = 0;
};

class KernelSpec {
 public:
  static KernelSpec isotropic(double h) {
    if (!(h > 0.0)) throw std::invalid_argument("kernel bandwidth must be positive");
    return KernelSpec(IsotropicKernel{h});
  }

  /// Symmetrizes M and floors its spectrum at kMetricEigenFloor.
  static KernelSpec anisotropic(const Matrix& metric) {
    if (metric.rows() != metric.cols() || metric.rows() < 1)
      throw std::invalid_argument("kernel metric must be square");
    return KernelSpec(AnisotropicKernel{floor_eigenvalues(metric, kMetricEigenFloor), metric.rows()});
  }

  bool is_isotropic() const { return std::holds_alternative<IsotropicKernel>(k_); }
  const IsotropicKernel& iso() const { return std::get<IsotropicKernel>(k_); }
  const AnisotropicKernel& aniso() const { return std::get<AnisotropicKernel>(k_); }

 private:
  explicit KernelSpec(std::variant<IsotropicKernel, AnisotropicKernel> k) : k_(std::move(k)) {}
  std::variant<IsotropicKernel, AnisotropicKernel> k_;
};

/// Kernel matrix and its gradients. grad(j, l) = d/dx^j k(x^j, x^l).
struct GramResult {
  Matrix K;     // N x N
  Matrix grad;  // (N*N) x d, row j*N + l

  Index size() const { return K.rows(); }
  auto gradient(Index j, Index l) const { return grad.row(j * K.rows() + l); }
};

inline double rbf_eval(const StateVector& x, const StateVector& y, double h) {
  return std::exp(-(x - y).squaredNorm() / h);
}

inline double scaled_rbf_eval(const StateVector& x, const StateVector& y, const Matrix& M, Index d) {
  const StateVector delta = x - y;
  return std::exp(-delta.dot(M * delta) / static_cast<double>(d));
}

inline double kernel_eval(const KernelSpec& spec, const StateVector& x, const StateVector& y) {
  if (spec.is_isotropic()) return rbf_eval(x, y, spec.iso().bandwidth);
  return scaled_rbf_eval(x, y, spec.aniso().metric, spec.aniso().dim);
}

/// h = med^2 / ln N over pairwise distances; 1 when the median is zero.
inline double median_heuristic(const ParticleSet& p) {
  const Index n = p.size();
  if (n < 2) throw std::invalid_argument("median heuristic needs at least two particles");
  std::vector<double> dist;
  dist.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
  for (Index j = 0; j < n; ++j)
    for (Index l = j + 1; l < n; ++l) dist.push_back((p.states.row(j) - p.states.row(l)).norm());
  const std::size_t m = dist.size();
  std::sort(dist.begin(), dist.end());
  const double med = (m % 2 == 1) ? dist[m / 2] : 0.5 * (dist[m / 2 - 1] + dist[m / 2]);
  if (med == 0.0) return 1.0;
  return med * med / std::log(static_cast<double>(n));
}

/// M = mean of the curvature matrices, spectrum floored.
inline Matrix metric_from_curvature(const std::vector<Matrix>& curvatures) {
  if (curvatures.empty()) throw std::invalid_argument("metric_from_curvature: empty input");
  Matrix sum = Matrix::Zero(curvatures.front().rows(), curvatures.front().cols());
  for (const auto& c : curvatures) sum += c;
  sum /= static_cast<double>(curvatures.size());
  return floor_eigenvalues(sum, kMetricEigenFloor);
}

inline GramResult gram_and_grads(const ParticleSet& p, const KernelSpec& spec) {
  const Index n = p.size();
  const Index d = p.dim();
  GramResult g{Matrix::Identity(n, n), Matrix::Zero(n * n, d)};
  const bool iso = spec.is_isotropic();
  if (!iso && spec.aniso().dim != d) throw std::invalid_argument("kernel metric dimension mismatch");
  for (Index j = 0; j < n; ++j) {
    for (Index l = j + 1; l < n; ++l) {
      const StateVector delta = (p.states.row(j) - p.states.row(l)).transpose();
      double k;
      StateVector gjl;
      if (iso) {
        const double h = spec.iso().bandwidth;
        k = std::exp(-delta.squaredNorm() / h);
        gjl = (-2.0 / h) * k * delta;
      } else {
        const auto& a = spec.aniso();
        const StateVector Md = a.metric * delta;
        const double dd = static_cast<double>(a.dim);
        k = std::exp(-delta.dot(Md) / dd);
        gjl = (-2.0 / dd) * k * Md;
      }
      g.K(j, l) = g.K(l, j) = k;
      g.grad.row(j * n + l) = gjl.transpose();
      g.grad.row(l * n + j) = -gjl.transpose();
    }
  }
  return g;
}

}  // namespace spf
