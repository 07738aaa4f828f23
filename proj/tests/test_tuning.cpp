#include "support.hpp"

#include <gtest/gtest.h>

using namespace hmcecs;
using hmcecs::test::rel_error;

namespace {

// Gradient of the logistic log-likelihood written from
// l = (1 - y) z - log(1 + e^z).
Vector naive_logistic_gradient(const Dataset& data, const Vector& theta) {
  Vector g = Vector::Zero(theta.size());
  for (Index k = 0; k < data.size(); ++k) {
    const double z = data.x.row(k).dot(theta);
    const double s = 1.0 / (1.0 + std::exp(-z));
    g += ((1.0 - data.y[k]) - s) * data.x.row(k).transpose();
  }
  return g;
}

Dataset one_point_gaussian() {
  Dataset d;
  d.x = RowMatrix::Ones(1, 1);
  d.y = Vector::Zero(1);
  return d;
}

}  // namespace

TEST(DualAveragingTest, HandComputedFirstSteps) {
  DualAveraging da(0.1);
  const double anchor = std::log(1.0);
  const double h1 = (0.8 - 0.5) / 11.0;
  const double x1 = anchor - 1.0 / 0.05 * h1;
  EXPECT_NEAR(da.update(0.5), std::exp(x1), 1e-14);
  EXPECT_NEAR(da.averaged_log_step_size(), x1, 1e-14);
  const double h2 = (1.0 - 1.0 / 12.0) * h1 + (0.8 - 0.9) / 12.0;
  const double x2 = anchor - std::sqrt(2.0) / 0.05 * h2;
  const double eta = std::pow(2.0, -0.75);
  EXPECT_NEAR(da.update(0.9), std::exp(x2), 1e-14);
  EXPECT_NEAR(da.averaged_log_step_size(), eta * x2 + (1.0 - eta) * x1, 1e-14);
  EXPECT_NEAR(da.final_step_size(), std::exp(eta * x2 + (1.0 - eta) * x1), 1e-14);
  EXPECT_EQ(da.iteration(), 2);
}

TEST(DualAveragingTest, TargetAcceptanceGivesFixedPoint) {
  DualAveraging da(0.3);
  double previous = std::log(da.step_size());
  for (int t = 0; t < 1000; ++t) {
    da.update(0.8);
    const double x = da.log_step_size();
    if (t == 999) EXPECT_LT(std::abs(x - previous), 1e-3);
    previous = x;
  }
}

TEST(DualAveragingTest, ZeroAcceptanceShrinksStrictly) {
  // The first update moves toward the anchor 10 * eps0; every later one must shrink.
  DualAveraging da(0.5);
  double previous = da.update(0.0);
  for (int t = 1; t < 500; ++t) {
    const double eps = da.update(0.0);
    EXPECT_LT(eps, previous);
    previous = eps;
  }
}

TEST(DualAveragingTest, ConvergesOnKnownAcceptanceCurve) {
  // alpha(eps) = exp(-eps^2) crosses 0.8 at sqrt(-log 0.8).
  DualAveraging da(1.0);
  double eps = 1.0;
  for (int t = 0; t < 3000; ++t) eps = da.update(std::exp(-eps * eps));
  EXPECT_NEAR(da.final_step_size(), std::sqrt(-std::log(0.8)), 0.05 * std::sqrt(-std::log(0.8)));
}

TEST(DualAveragingTest, NonFiniteAcceptanceCountsAsZero) {
  DualAveraging a(0.2), b(0.2);
  EXPECT_EQ(a.update(std::nan("")), b.update(0.0));
  EXPECT_EQ(a.update(0.7), b.update(0.7));
}

TEST(DualAveragingTest, SettingsValidation) {
  DualAveragingSettings s;
  EXPECT_NO_THROW(s.validate());
  s.kappa = 0.5;
  EXPECT_THROW(s.validate(), ConfigError);
  s = {};
  s.target_acceptance = 1.0;
  EXPECT_THROW(s.validate(), ConfigError);
  s = {};
  s.gamma = 0.0;
  EXPECT_THROW(s.validate(), ConfigError);
  s = {};
  s.t0 = -1.0;
  EXPECT_THROW(s.validate(), ConfigError);
  EXPECT_THROW(DualAveraging(0.0), ConfigError);
}

TEST(StepsForLength, RoundsAndClamps) {
  EXPECT_EQ(steps_for_length(2.0, 0.1, 1024), 20);
  EXPECT_EQ(steps_for_length(1.0, 0.3, 1024), 3);
  EXPECT_EQ(steps_for_length(2.0, 3.0, 1024), 1);
  EXPECT_EQ(steps_for_length(100.0, 0.01, 1024), 1024);
}

TEST(RegularizeMass, JitterOnlyWhenNeeded) {
  Matrix spd(2, 2);
  spd << 2.0, 0.3, 0.3, 1.0;
  EXPECT_EQ(regularize_mass(spd), spd);
  Matrix singular(2, 2);
  singular << 1.0, 1.0, 1.0, 1.0;
  const Matrix fixed = regularize_mass(singular);
  EXPECT_EQ(Eigen::LLT<Matrix>(fixed).info(), Eigen::Success);
  EXPECT_LT((fixed - singular).norm(), 1e-5);
  Matrix hopeless = Matrix::Zero(2, 2);
  hopeless.diagonal() << 1.0, -1e12;
  EXPECT_THROW(regularize_mass(hopeless), DivergenceError);
  Matrix nan = spd;
  nan(0, 1) = std::nan("");
  EXPECT_THROW(regularize_mass(nan), DivergenceError);
}

TEST(RefreshCenter, QuadraticModelGivesExactPrecision) {
  const Dataset d = test::random_gaussian_data(50, 3, 1);
  const GaussianModel model(d, 2.0);
  const Prior prior(0.5);
  Rng rng(2);
  std::vector<Vector> window;
  for (int i = 0; i < 5; ++i) window.push_back(test::random_vector(3, rng, 3.0));
  const CenterRefresh r = refresh_center(std::span<const Vector>(window), model, prior);
  Matrix expected = 2.0 * d.x.transpose() * d.x;
  expected.diagonal().array() += 0.25;
  EXPECT_LT(rel_error(r.mass, expected), 1e-12);
  EXPECT_EQ(r.cache.center, r.center);
}

TEST(RefreshCenter, LogisticMassMatchesFiniteDifferences) {
  const Dataset d = test::random_logistic_data(40, 2, 3);
  const LogisticModel model(d);
  const Prior prior(0.7);
  Rng rng(4);
  std::vector<Vector> window;
  for (int i = 0; i < 4; ++i) window.push_back(test::random_vector(2, rng, 0.5));
  const CenterRefresh r = refresh_center(std::span<const Vector>(window), model, prior);
  const Vector mean = (window[0] + window[1] + window[2] + window[3]) / 4.0;
  EXPECT_LT(rel_error(r.center, mean), 1e-15);
  const Matrix fd = test::fd_jacobian(
      [&](const Vector& t) { return Vector(-naive_logistic_gradient(d, t) + prior.precision() * t); }, mean);
  EXPECT_LT(rel_error(r.mass, fd), 1e-4);
}

TEST(RefreshCenter, IdenticalWindowAndEmptyWindow) {
  const Dataset d = test::random_logistic_data(30, 2, 5);
  const LogisticModel model(d);
  const Prior prior(1.0);
  Vector t(2);
  t << 0.3, -0.7;
  const std::vector<Vector> window(7, t);
  EXPECT_EQ(refresh_center(std::span<const Vector>(window), model, prior).center, t);
  const std::vector<Vector> empty;
  EXPECT_THROW(refresh_center(std::span<const Vector>(empty), model, prior), DomainError);
}

TEST(PosteriorMode, GradientVanishes) {
  const Dataset d = test::random_logistic_data(500, 4, 6);
  const LogisticModel model(d);
  const Prior prior(0.1);
  const Vector mode = find_posterior_mode(model, prior, Vector::Zero(4));
  const Vector g = naive_logistic_gradient(d, mode) - prior.precision() * mode;
  EXPECT_LT(g.norm(), 1e-6 * 500.0);
}

TEST(InitialStepSize, ShrinksForStiffTargets) {
  struct Quadratic {
    double k;
    EnergyEvaluation evaluate(const Vector& t) { return {0.5 * k * t.squaredNorm(), k * t}; }
  };
  auto mass = std::make_shared<const MassMatrix>(Matrix::Identity(2, 2));
  Rng rng(7);
  Quadratic soft{1.0}, stiff{1e4};
  const double a = find_initial_step_size(soft, mass, Vector::Ones(2), rng);
  const double b = find_initial_step_size(stiff, mass, Vector::Ones(2) * 0.01, rng);
  EXPECT_GT(a, 0.0);
  EXPECT_LT(b, 0.1);
  EXPECT_GT(a, 10.0 * b);
}

TEST(PilotTest, StandardGaussianPicksHalfPeriod) {
  const Dataset d = one_point_gaussian();
  const GaussianModel model(d);
  const Prior prior(1e-4);
  SamplerConfig base;
  base.seed = 11;
  PilotSettings settings;
  const PilotResult r = pilot_trajectory_length(base, model, prior, settings);
  EXPECT_GE(r.trajectory_length, 1.0);
  EXPECT_LE(r.trajectory_length, std::numbers::pi);
  EXPECT_EQ(r.candidates.size(), settings.grid.size());
  EXPECT_EQ(pilot_trajectory_length(base, model, prior, settings).trajectory_length, r.trajectory_length);
}

TEST(PilotTest, SingleValueGridAndFailures) {
  const Dataset d = one_point_gaussian();
  const GaussianModel model(d);
  const Prior prior(1e-4);
  SamplerConfig base;
  PilotSettings settings;
  settings.grid = {1.7};
  EXPECT_EQ(pilot_trajectory_length(base, model, prior, settings).trajectory_length, 1.7);
  settings.grid = {1.0, 2.0};
  settings.step_size = 1e3;
  EXPECT_THROW(pilot_trajectory_length(base, model, prior, settings), DivergenceError);
  settings.grid = {};
  EXPECT_THROW(pilot_trajectory_length(base, model, prior, settings), ConfigError);
}

TEST(PilotTest, DeskScaleLogisticNearTwo) {
  Vector truth(10);
  Rng rng(12);
  truth = test::random_vector(10, rng, 0.5);
  const Dataset d = generate_synthetic(100000, 10, truth, 13);
  const LogisticModel model(d);
  const Prior prior(0.1);
  SamplerConfig base;
  base.seed = 14;
  base.subsample_size = 1000;
  base.blocks = 20;
  PilotSettings settings;
  settings.sampler = SamplerKind::hmc_ecs;
  const PilotResult r = pilot_trajectory_length(base, model, prior, settings);
  EXPECT_GE(r.trajectory_length, 1.0);
  EXPECT_LE(r.trajectory_length, 4.0);
}
