#include <gtest/gtest.h>

#include <cmath>

#include "spf/kernels.hpp"
#include "spf/rng.hpp"

using namespace spf;

namespace {

StateVector vec(std::initializer_list<double> v) {
  StateVector x(static_cast<Index>(v.size()));
  Index i = 0;
  for (double e : v) x[i++] = e;
  return x;
}

ParticleSet random_set(Index n, Index d, std::uint64_t seed) {
  RngStream r(seed);
  return ParticleSet(r.normal_vector(n * d).reshaped(n, d));
}

}  // namespace

TEST(RbfKernel, Examples) {
  EXPECT_DOUBLE_EQ(rbf_eval(vec({0.0, 0.0}), vec({0.0, 0.0}), 2.0), 1.0);
  EXPECT_NEAR(rbf_eval(vec({0.0}), vec({1.0}), 1.0), std::exp(-1.0), 1e-15);
  EXPECT_NEAR(rbf_eval(vec({1.0, 1.0}), vec({0.0, 0.0}), 2.0), std::exp(-1.0), 1e-15);
}

TEST(ScaledRbfKernel, Example) {
  Matrix m(2, 2);
  m << 2.0, 0.0, 0.0, 0.5;
  EXPECT_NEAR(scaled_rbf_eval(vec({1.0, 1.0}), vec({0.0, 0.0}), m, 2), std::exp(-1.25), 1e-15);
}

TEST(MedianHeuristic, Examples) {
  ParticleSet two(Matrix::Zero(2, 1));
  two.states(1, 0) = 2.0;
  EXPECT_NEAR(median_heuristic(two), 4.0 / std::log(2.0), 1e-12);
  EXPECT_DOUBLE_EQ(median_heuristic(ParticleSet(Matrix::Ones(5, 3))), 1.0);
  EXPECT_THROW(median_heuristic(ParticleSet(Matrix::Zero(1, 2))), std::invalid_argument);
}

TEST(MedianHeuristic, ScalesQuadratically) {
  const ParticleSet p = random_set(15, 3, 4);
  ParticleSet q = p;
  q.states *= 3.0;
  EXPECT_NEAR(median_heuristic(q), 9.0 * median_heuristic(p), 1e-10);
}

TEST(MetricFromCurvature, MeanAndFloor) {
  Matrix a = Matrix::Zero(2, 2), b = Matrix::Zero(2, 2);
  a(0, 0) = 2.0;
  b(1, 1) = 2.0;
  EXPECT_LT((metric_from_curvature({a, b}) - Matrix::Identity(2, 2)).norm(), 1e-12);
  const Matrix f = metric_from_curvature({Matrix::Zero(2, 2)});
  EXPECT_NEAR(f(0, 0), kMetricEigenFloor, 1e-20);
  EXPECT_NEAR(f(1, 1), kMetricEigenFloor, 1e-20);
  EXPECT_THROW(metric_from_curvature({}), std::invalid_argument);
}

TEST(GramAndGrads, TwoParticleExample) {
  Matrix s(2, 1);
  s << 0.0, 2.0;
  const GramResult g = gram_and_grads(ParticleSet(s), KernelSpec::isotropic(1.0));
  EXPECT_DOUBLE_EQ(g.K(0, 0), 1.0);
  EXPECT_NEAR(g.K(0, 1), std::exp(-4.0), 1e-15);
  // d/dx0 exp(-(x0 - x1)^2) at x0 - x1 = -2 is 4 e^-4.
  EXPECT_NEAR(g.gradient(0, 1)[0], 4.0 * std::exp(-4.0), 1e-15);
  EXPECT_NEAR(g.gradient(1, 0)[0], -4.0 * std::exp(-4.0), 1e-15);
  EXPECT_DOUBLE_EQ(g.gradient(0, 0)[0], 0.0);
}

TEST(GramAndGrads, SymmetricPositiveDefinite) {
  const ParticleSet p = random_set(20, 3, 11);
  const GramResult g = gram_and_grads(p, KernelSpec::isotropic(median_heuristic(p)));
  EXPECT_LT((g.K - g.K.transpose()).norm(), 1e-15);
  Eigen::SelfAdjointEigenSolver<Matrix> eig(g.K);
  EXPECT_GT(eig.eigenvalues().minCoeff(), 0.0);
}

TEST(GramAndGrads, GradientsAreAntisymmetricAndMatchFiniteDifferences) {
  const ParticleSet p = random_set(6, 2, 12);
  Matrix m(2, 2);
  m << 2.0, 0.3, 0.3, 0.7;
  const KernelSpec spec = KernelSpec::anisotropic(m);
  const GramResult g = gram_and_grads(p, spec);
  const double h = 1e-6;
  for (Index j = 0; j < 6; ++j) {
    for (Index l = 0; l < 6; ++l) {
      EXPECT_LT((g.gradient(j, l) + g.gradient(l, j)).norm(), 1e-15);
      if (j == l) continue;
      for (Index i = 0; i < 2; ++i) {
        StateVector a = p.particle(j), b = p.particle(j);
        a[i] += h;
        b[i] -= h;
        const double fd = (kernel_eval(spec, a, p.particle(l)) - kernel_eval(spec, b, p.particle(l))) / (2 * h);
        EXPECT_NEAR(g.gradient(j, l)[i], fd, 1e-8);
      }
    }
  }
}

TEST(GramAndGrads, ScaledIdentityMetricEqualsIsotropic) {
  const ParticleSet p = random_set(8, 4, 13);
  const double h = 1.7;
  const GramResult iso = gram_and_grads(p, KernelSpec::isotropic(h));
  const GramResult an = gram_and_grads(p, KernelSpec::anisotropic((4.0 / h) * Matrix::Identity(4, 4)));
  EXPECT_LT((iso.K - an.K).norm(), 1e-12);
  EXPECT_LT((iso.grad - an.grad).norm(), 1e-12);
}

TEST(KernelSpec, RejectsInvalidParameters) {
  EXPECT_THROW(KernelSpec::isotropic(0.0), std::invalid_argument);
  EXPECT_THROW(KernelSpec::anisotropic(Matrix::Zero(2, 3)), std::invalid_argument);
  const ParticleSet p = random_set(3, 2, 1);
  EXPECT_THROW(gram_and_grads(p, KernelSpec::anisotropic(Matrix::Identity(3, 3))), std::invalid_argument);
}
