#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "spf/metrics.hpp"

using namespace spf;

namespace {

StateVector vec(std::initializer_list<double> v) {
  StateVector x(static_cast<Index>(v.size()));
  Index i = 0;
  for (double e : v) x[i++] = e;
  return x;
}

}  // namespace

TEST(Rmse, Examples) {
  EXPECT_DOUBLE_EQ(rmse_trajectory({vec({1.0}), vec({2.0})}, {vec({1.0}), vec({2.0})}), 0.0);
  EXPECT_DOUBLE_EQ(rmse_trajectory({vec({1.0}), vec({3.0})}, {vec({0.0}), vec({3.0})}), std::sqrt(0.5));
  EXPECT_DOUBLE_EQ(rmse_trajectory({vec({1.0, 1.0})}, {vec({0.0, 0.0})}), std::sqrt(2.0));
  EXPECT_DOUBLE_EQ(rmse_trajectory({vec({1.0, 5.0}), vec({-1.0, 7.0})}, {vec({0.0, 0.0}), vec({0.0, 0.0})},
                                   ErrorDims{{0}, {}}),
                   1.0);
}

TEST(Rmse, AngularDimensionsWrap) {
  const double pi = std::numbers::pi;
  EXPECT_NEAR(rmse_trajectory({vec({pi - 0.1})}, {vec({-pi + 0.1})}, ErrorDims{{0}, {0}}), 0.2, 1e-12);
}

TEST(Rmse, ConcatenationCombinesMeanSquares) {
  const std::vector<StateVector> e1{vec({1.0}), vec({2.0})}, t1{vec({0.0}), vec({0.0})};
  const std::vector<StateVector> e2{vec({3.0})}, t2{vec({0.5})};
  const double a = rmse_trajectory(e1, t1), b = rmse_trajectory(e2, t2);
  std::vector<StateVector> e = e1, t = t1;
  e.insert(e.end(), e2.begin(), e2.end());
  t.insert(t.end(), t2.begin(), t2.end());
  EXPECT_NEAR(rmse_trajectory(e, t), std::sqrt((2 * a * a + b * b) / 3.0), 1e-12);
}

TEST(Rmse, RejectsMismatchedInput) {
  EXPECT_THROW(rmse_trajectory({vec({1.0})}, {}), std::invalid_argument);
  EXPECT_THROW(rmse_trajectory({}, {}), std::invalid_argument);
  EXPECT_THROW(rmse_trajectory({vec({1.0})}, {vec({1.0, 2.0})}), std::invalid_argument);
}

TEST(Quantiles, LinearInterpolation) {
  std::vector<double> v(100);
  for (int i = 0; i < 100; ++i) v[static_cast<std::size_t>(i)] = i + 1;
  const auto q = quantiles(v, {0.0, 0.5, 1.0});
  EXPECT_DOUBLE_EQ(q[0], 1.0);
  EXPECT_DOUBLE_EQ(q[1], 50.5);
  EXPECT_DOUBLE_EQ(q[2], 100.0);
  EXPECT_THROW(quantiles({}, {0.5}), std::invalid_argument);
  EXPECT_THROW(quantiles({1.0}, {1.5}), std::invalid_argument);
}

TEST(EffectiveSampleSize, Examples) {
  EXPECT_DOUBLE_EQ(effective_sample_size(Eigen::VectorXd::Constant(50, 1.0 / 50)), 50.0);
  Eigen::VectorXd one_hot = Eigen::VectorXd::Zero(10);
  one_hot[3] = 1.0;
  EXPECT_DOUBLE_EQ(effective_sample_size(one_hot), 1.0);
  Eigen::VectorXd two = Eigen::VectorXd::Zero(4);
  two[0] = two[1] = 0.5;
  EXPECT_DOUBLE_EQ(effective_sample_size(two), 2.0);
}

TEST(ModeCoverage, CountsNearestModeWithinRadius) {
  Matrix s(100, 1);
  for (int i = 0; i < 54; ++i) s(i, 0) = -2.0 + 0.001 * i;
  for (int i = 54; i < 100; ++i) s(i, 0) = 2.0 - 0.001 * i;
  const auto c = mode_coverage(ParticleSet(s), {vec({-2.0}), vec({2.0})}, 0.5);
  EXPECT_DOUBLE_EQ(c[0], 0.54);
  EXPECT_DOUBLE_EQ(c[1], 0.46);
  const auto far = mode_coverage(ParticleSet(Matrix::Zero(4, 1)), {vec({-2.0}), vec({2.0})}, 0.5);
  EXPECT_DOUBLE_EQ(far[0] + far[1], 0.0);
}
