#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <sstream>

#include "spf/checks.hpp"
#include "spf/grid_map.hpp"
#include "spf/kalman.hpp"
#include "spf/models.hpp"
#include "spf/rng.hpp"
#include "spf/scenarios.hpp"

using namespace spf;

namespace {

StateVector vec(std::initializer_list<double> v) {
  StateVector x(static_cast<Index>(v.size()));
  Index i = 0;
  for (double e : v) x[i++] = e;
  return x;
}

// 20 x 20 cells of 0.1 m with a vertical wall in column 10 (center x = 1.05).
GridMap2D wall_map() {
  std::vector<std::uint8_t> occ(400, 0);
  for (int y = 0; y < 20; ++y) occ[static_cast<std::size_t>(y) * 20 + 10] = 1;
  return GridMap2D(20, 20, 0.1, occ);
}

}  // namespace

TEST(ConstantVelocity, DeterministicShift) {
  const ConstantVelocityModel cv(0.0);
  RngStream r(1);
  EXPECT_EQ(cv.propagate(vec({0, 0, 1, 0}), ControlInput(), r), vec({1, 0, 1, 0}));
  EXPECT_EQ(cv.propagate(vec({2, 3, 0, 0}), ControlInput(), r), vec({2, 3, 0, 0}));
}

TEST(ConstantVelocity, VelocityNoiseVariance) {
  const ConstantVelocityModel cv(0.1);
  RngStream r(2);
  const StateVector x = vec({0, 0, 1, 0});
  double sum = 0.0, sum2 = 0.0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    const double v = cv.propagate(x, ControlInput(), r)[2];
    sum += v;
    sum2 += v * v;
  }
  const double mean = sum / n;
  const double var = sum2 / n - mean * mean;
  EXPECT_GE(var, 0.008);
  EXPECT_LE(var, 0.012);
}

TEST(SineBank, PerfectPredictionIsCriticalPoint) {
  SineBankModel::Params p;
  p.sigma_z = 1.0;
  const SineBankModel m(p, std::numbers::pi / 2);
  const LogLikScore e = m.evaluate(vec({1.0, 0.0}), vec({1.0}));
  EXPECT_NEAR(e.score.norm(), 0.0, 1e-15);
}

TEST(SineBank, ZeroAmplitudeHasNoPhaseGradient) {
  const SineBankModel m(SineBankModel::Params{}, 0.7);
  EXPECT_DOUBLE_EQ(m.evaluate(vec({0.0, 1.3}), vec({0.4})).score[1], 0.0);
}

TEST(SineBank, PhaseIsPeriodic) {
  SineBankModel::Params p;
  p.n_fns = 2;
  const SineBankModel m(p, 1.1);
  const StateVector x = vec({2.0, 0.4, 1.5, -0.3});
  StateVector y = x;
  y[1] += 2.0 * std::numbers::pi;
  y[3] -= 4.0 * std::numbers::pi;
  EXPECT_NEAR((m.predict_observation(x) - m.predict_observation(y)).norm(), 0.0, 1e-12);
}

TEST(SineBank, ScoreMatchesFiniteDifferences) {
  SineBankModel::Params p;
  p.n_fns = 3;
  p.sigma_z = 0.5;
  RngStream r(3);
  for (int trial = 0; trial < 20; ++trial) {
    const SineBankModel m(p, r.uniform(0.0, 10.0));
    const StateVector x = r.normal_vector(6);
    const Observation z = r.normal_vector(3);
    const StateVector fd = finite_difference_gradient([&](const StateVector& s) { return m.log_likelihood(s, z); }, x, 1e-5);
    EXPECT_LE(gradient_rel_error(m.score(x, z), fd), 1e-5);
  }
}

TEST(GaussianMixture, ScoreMatchesFiniteDifferences) {
  const GaussianMixtureObservation m({{vec({-2.0}), 0.5, 1.0}, {vec({2.0}), 0.5, 1.0}});
  for (double x : {-3.0, -1.0, 0.0, 0.3, 2.5}) {
    const StateVector s = vec({x});
    const Observation z = vec({0.0});
    const StateVector fd = finite_difference_gradient([&](const StateVector& v) { return m.log_likelihood(v, z); }, s);
    EXPECT_LE(gradient_rel_error(m.score(s, z), fd), 1e-5);
  }
}

TEST(Kalman, ConjugateUpdate) {
  const auto m = LinearGaussianModel::random_walk(1, 0.0, 1.0);
  const Gaussian post = lingauss_step_oracle(m, {vec({0.0}), Matrix::Identity(1, 1)}, ControlInput(), vec({1.0}));
  EXPECT_NEAR(post.mean[0], 0.5, 1e-12);
  EXPECT_NEAR(post.cov(0, 0), 0.5, 1e-12);
}

TEST(Kalman, UninformativeObservationKeepsPrior) {
  const auto m = LinearGaussianModel::random_walk(2, 0.0, 1e12);
  const Gaussian prior{vec({0.3, -1.0}), 2.0 * Matrix::Identity(2, 2)};
  const Gaussian post = lingauss_step_oracle(m, prior, ControlInput(), vec({5.0, 5.0}));
  EXPECT_LT((post.mean - prior.mean).norm(), 1e-6);
  EXPECT_LT((post.cov - prior.cov).norm(), 1e-6);
}

TEST(Kalman, VarianceDecreasesWithoutProcessNoise) {
  const auto m = LinearGaussianModel::random_walk(1, 0.0, 0.1);
  Gaussian g{vec({0.0}), Matrix::Identity(1, 1)};
  for (int t = 0; t < 10; ++t) {
    const Gaussian next = lingauss_step_oracle(m, g, ControlInput(), vec({0.0}));
    EXPECT_LT(next.cov(0, 0), g.cov(0, 0));
    g = next;
  }
}

TEST(LinearGaussian, ScoreAndShapeChecks) {
  const auto m = LinearGaussianModel::random_walk(2, 1.0, 0.5);
  const LogLikScore e = m.evaluate(vec({1.0, 2.0}), vec({0.0, 0.0}));
  EXPECT_LT((e.score - vec({-2.0, -4.0})).norm(), 1e-12);
  EXPECT_THROW(LinearGaussianModel(Matrix::Identity(2, 2), Matrix(2, 0), Matrix::Identity(3, 3),
                                   Matrix::Identity(2, 2), Matrix::Identity(2, 2)),
               std::invalid_argument);
}

TEST(GridMap, ParseTopRowFirst) {
  std::istringstream in("3 2 0.5\n#..\n..#\n");
  const GridMap2D m = GridMap2D::parse(in);
  EXPECT_EQ(m.width(), 3);
  EXPECT_EQ(m.height(), 2);
  EXPECT_DOUBLE_EQ(m.resolution(), 0.5);
  EXPECT_TRUE(m.occupied(0, 1));
  EXPECT_TRUE(m.occupied(2, 0));
  EXPECT_FALSE(m.occupied(0, 0));
  EXPECT_DOUBLE_EQ(m.cell_distance(0, 1), 0.0);
  EXPECT_DOUBLE_EQ(m.cell_distance(1, 1), 0.5);
}

TEST(GridMap, ParseErrors) {
  const char* bad[] = {"", "3 x 0.5\n", "3 2 0.5\n#..\n", "3 2 0.5\n#..\n.#\n", "3 2 0.5\n#.x\n...\n",
                       "3 2 0.5\n...\n...\n", "1 1 0.5\n#\n", "2 2 0\n##\n##\n"};
  for (const char* text : bad) {
    std::istringstream in(text);
    EXPECT_ANY_THROW(GridMap2D::parse(in)) << text;
  }
}

TEST(GridMap, TextRoundTrip) {
  const GridMap2D m = make_two_room_map();
  std::istringstream in(m.to_text());
  EXPECT_EQ(GridMap2D::parse(in).to_text(), m.to_text());
}

TEST(GridMap, DistanceFieldIsEikonal) {
  const GridMap2D m = make_two_room_map();
  RngStream r(4);
  int checked = 0, unit = 0;
  while (checked < 500) {
    const Eigen::Vector2d p(r.uniform(0.0, m.extent_x()), r.uniform(0.0, m.extent_y()));
    const auto f = m.sample(p);
    if (f.distance < 2.0 * m.resolution()) continue;
    ++checked;
    EXPECT_GE(f.distance, 0.0);
    if (std::abs(f.gradient.norm() - 1.0) <= 0.05) ++unit;
  }
  EXPECT_GE(unit, 400);
}

TEST(GridMap, CastRayHitsWall) {
  const GridMap2D m = wall_map();
  const auto hit = m.cast_ray({0.5, 1.0}, 0.0, 10.0);
  ASSERT_TRUE(hit.has_value());
  EXPECT_NEAR(hit->x(), 1.05, 1e-12);
  EXPECT_FALSE(m.cast_ray({0.5, 1.0}, std::numbers::pi, 10.0).has_value());
  EXPECT_FALSE(m.cast_ray({0.5, 1.0}, 0.0, 0.2).has_value());
}

TEST(BeamModel, FlatWallOffset) {
  const GridMap2D m = wall_map();
  const double sigma = 0.1, delta = -0.03;
  const BeamModel model(m, sigma);
  BeamScan scan;
  scan.endpoints = {{0.55, 0.0}};
  scan.sigma = sigma;
  const auto e = model.evaluate_full(vec({0.5 + delta, 1.0, 0.0}), scan.flatten());
  EXPECT_NEAR(e.log_likelihood, -0.5 * delta * delta / (sigma * sigma), 1e-12);
  EXPECT_NEAR(e.score[0], -delta / (sigma * sigma), 1e-9);
  EXPECT_NEAR(e.score[1], 0.0, 1e-9);
}

TEST(BeamModel, TruePoseOnNoiseFreeScanIsMaximal) {
  const GridMap2D m = wall_map();
  const BeamModel model(m, 0.1);
  BeamScan scan;
  scan.endpoints = {{0.55, 0.0}, {0.55, 0.3}, {0.55, -0.4}};
  const auto e = model.evaluate_full(vec({0.5, 1.0, 0.0}), scan.flatten());
  EXPECT_NEAR(e.log_likelihood, 0.0, 1e-20);
  EXPECT_NEAR(e.score.norm(), 0.0, 1e-12);
}

TEST(BeamModel, InvariantToBeamOrder) {
  const GridMap2D m = make_two_room_map();
  const BeamModel model(m, 0.15);
  RngStream r(5);
  BeamScan scan;
  for (int i = 0; i < 12; ++i) scan.endpoints.emplace_back(r.uniform(-2.0, 2.0), r.uniform(-2.0, 2.0));
  BeamScan rev = scan;
  std::reverse(rev.endpoints.begin(), rev.endpoints.end());
  const StateVector pose = vec({m.extent_x() / 2, m.extent_y() / 2, 0.4});
  EXPECT_NEAR(model.log_likelihood(pose, scan.flatten()), model.log_likelihood(pose, rev.flatten()), 1e-9);
}

TEST(BeamModel, ScoreMatchesFiniteDifferences) {
  const GridMap2D m = make_two_room_map();
  const BeamModel model(m, 0.15);
  RngStream r(6);
  for (int trial = 0; trial < 30; ++trial) {
    BeamScan scan;
    for (int i = 0; i < 8; ++i) scan.endpoints.emplace_back(r.uniform(-1.5, 1.5), r.uniform(-1.5, 1.5));
    const Observation z = scan.flatten();
    const StateVector pose =
        vec({r.uniform(2.0, m.extent_x() - 2.0), r.uniform(2.0, m.extent_y() - 2.0), r.uniform(-3.0, 3.0)});
    const StateVector fd =
        finite_difference_gradient([&](const StateVector& x) { return model.log_likelihood(x, z); }, pose, 1e-6);
    EXPECT_LE(gradient_rel_error(model.score(pose, z), fd), 1e-3);
  }
}

TEST(BeamModel, OutsideBeamsAreCounted) {
  const GridMap2D m = wall_map();
  const BeamModel model(m, 0.1);
  BeamScan scan;
  scan.endpoints = {{5.0, 0.0}, {0.55, 0.0}};
  EXPECT_EQ(model.evaluate_full(vec({0.5, 1.0, 0.0}), scan.flatten()).outside_beams, 1);
}
