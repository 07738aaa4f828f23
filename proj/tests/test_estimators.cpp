#include "support.hpp"

#include <gtest/gtest.h>

using namespace hmcecs;
using hmcecs::test::rel_error;

namespace {

struct Fixture {
  Dataset data;
  LogisticModel model;
  ControlVariateCache cache;

  Fixture(Index n, Index d, std::uint64_t seed, double center_scale = 0.3)
      : data(test::random_logistic_data(n, d, seed)), model(data) {
    Rng rng(seed + 1000);
    cache = build_cache(model, test::random_vector(d, rng, center_scale));
  }
};

std::vector<Index> random_u(Index n, Index m, Rng& rng) { return draw_indices(n, m, rng); }

double variance(const std::vector<double>& x) {
  double mean = 0.0;
  for (double v : x) mean += v;
  mean /= static_cast<double>(x.size());
  double ss = 0.0;
  for (double v : x) ss += (v - mean) * (v - mean);
  return ss / static_cast<double>(x.size() - 1);
}

}  // namespace

TEST(LoglikEstimate, ExactAtCenter) {
  Fixture f(200, 3, 1);
  Rng rng(2);
  const auto u = random_u(200, 20, rng);
  const LogLikEstimate e = loglik_estimate(f.cache, f.model, f.cache.center, u);
  EXPECT_EQ(e.ell_hat, full_loglik(f.model, f.cache.center));
  EXPECT_EQ(e.sigma2_hat, 0.0);
}

TEST(LoglikEstimate, HandEnumeratedTwoObservationExample) {
  // l = (-1, -3), q = (-1.5, -2.5): sum_q = -4, residuals e = (0.5, -0.5).
  const double sum_q = -4.0;
  const LogLikEstimate first = estimate_from_moments(sum_q, ResidualMoments::of(std::vector<double>{0.5}), 2);
  const LogLikEstimate second = estimate_from_moments(sum_q, ResidualMoments::of(std::vector<double>{-0.5}), 2);
  EXPECT_DOUBLE_EQ(first.ell_hat, -3.0);
  EXPECT_DOUBLE_EQ(second.ell_hat, -5.0);
  EXPECT_DOUBLE_EQ(0.5 * (first.ell_hat + second.ell_hat), -4.0);
  const LogLikEstimate both = estimate_from_moments(sum_q, ResidualMoments::of(std::vector<double>{0.5, -0.5}), 2);
  EXPECT_DOUBLE_EQ(both.sigma2_hat, 0.5);
  EXPECT_DOUBLE_EQ(both.ell_hat, -4.0);
}

TEST(LoglikEstimate, SingleIndexExpectationIsExact) {
  Fixture f(1000, 5, 3);
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const Vector t = test::random_vector(5, rng, 0.5);
    double avg = 0.0;
    for (Index k = 0; k < 1000; ++k) {
      const std::vector<Index> u{k};
      avg += loglik_estimate(f.cache, f.model, t, u).ell_hat;
    }
    avg /= 1000.0;
    EXPECT_LT(rel_error(avg, test::naive_loglik(f.data, t)), 1e-10);
  }
}

TEST(LoglikEstimate, ClosedFormAgainstDefinition) {
  Fixture f(100, 3, 5);
  Rng rng(6);
  const Vector t = test::random_vector(3, rng);
  const auto u = random_u(100, 7, rng);
  std::vector<double> e;
  for (Index k : u) e.push_back(test::naive_logistic_loglik(f.data.y[k], f.data.x.row(k).dot(t)) - proxy(f.cache, f.model, t, k));
  double mean = 0.0;
  for (double v : e) mean += v / 7.0;
  double ss = 0.0;
  for (double v : e) ss += (v - mean) * (v - mean);
  double sum_q = 0.0;
  for (Index k = 0; k < 100; ++k) sum_q += proxy(f.cache, f.model, t, k);
  const LogLikEstimate est = loglik_estimate(f.cache, f.model, t, u);
  EXPECT_LT(rel_error(est.ell_hat, sum_q + 100.0 / 7.0 * mean * 7.0), 1e-10);
  EXPECT_LT(rel_error(est.sigma2_hat, 100.0 * 100.0 / 49.0 * ss), 1e-8);
}

TEST(LoglikEstimate, DuplicateIndicesCountPerOccurrence) {
  Fixture f(50, 3, 7);
  Rng rng(8);
  const Vector t = test::random_vector(3, rng);
  const std::vector<Index> twice{4, 4};
  const std::vector<Index> once{4};
  EXPECT_NEAR(loglik_estimate(f.cache, f.model, t, twice).ell_hat, loglik_estimate(f.cache, f.model, t, once).ell_hat,
              1e-9);
  EXPECT_EQ(loglik_estimate(f.cache, f.model, t, twice).sigma2_hat, 0.0);
}

TEST(LoglikEstimate, InvalidSubsamples) {
  Fixture f(50, 3, 9);
  const std::vector<Index> empty;
  EXPECT_THROW(loglik_estimate(f.cache, f.model, Vector::Zero(3), empty), DomainError);
  const std::vector<Index> bad{0, 50};
  EXPECT_THROW(loglik_estimate(f.cache, f.model, Vector::Zero(3), bad), DomainError);
}

TEST(GradLoglikEstimate, CenterGradientAndFiniteDifferences) {
  Fixture f(300, 4, 10);
  Rng rng(11);
  const auto u0 = random_u(300, 30, rng);
  EXPECT_LT(rel_error(grad_loglik_estimate(f.cache, f.model, f.cache.center, u0), f.cache.gradient_sum), 1e-12);
  for (int trial = 0; trial < 20; ++trial) {
    const Vector t = test::random_vector(4, rng, 0.7);
    const auto u = random_u(300, 30, rng);
    const Vector fd = test::fd_gradient([&](const Vector& x) { return loglik_estimate(f.cache, f.model, x, u).ell_hat; }, t);
    EXPECT_LT(rel_error(grad_loglik_estimate(f.cache, f.model, t, u), fd), 1e-5);
  }
}

TEST(GradLoglikEstimate, EnumerationGivesFullGradient) {
  Fixture f(20, 3, 12);
  Rng rng(13);
  const Vector t = test::random_vector(3, rng);
  Vector avg = Vector::Zero(3);
  for (Index k = 0; k < 20; ++k) {
    const std::vector<Index> u{k};
    avg += grad_loglik_estimate(f.cache, f.model, t, u) / 20.0;
  }
  EXPECT_LT(rel_error(avg, test::fd_gradient([&](const Vector& x) { return test::naive_loglik(f.data, x); }, t)), 1e-6);
  EXPECT_LT(rel_error(avg, full_loglik_and_gradient(f.model, t).gradient), 1e-10);
}

TEST(GradVarEstimate, VanishesAtCenterAndForSingleIndex) {
  Fixture f(100, 3, 14);
  Rng rng(15);
  const auto u = random_u(100, 10, rng);
  EXPECT_EQ(grad_var_estimate(f.cache, f.model, f.cache.center, u).norm(), 0.0);
  const Vector t = test::random_vector(3, rng);
  const std::vector<Index> one{7};
  EXPECT_EQ(grad_var_estimate(f.cache, f.model, t, one).norm(), 0.0);
}

TEST(GradVarEstimate, FiniteDifferences) {
  Fixture f(300, 4, 16);
  Rng rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    const Vector t = test::random_vector(4, rng, 0.7);
    const auto u = random_u(300, 25, rng);
    const Vector fd =
        test::fd_gradient([&](const Vector& x) { return loglik_estimate(f.cache, f.model, x, u).sigma2_hat; }, t);
    EXPECT_LT(rel_error(grad_var_estimate(f.cache, f.model, t, u), fd), 1e-5);
  }
}

TEST(Potential, CenterValueAndGradient) {
  Fixture f(300, 4, 18);
  const Prior prior(0.1);
  Rng rng(19);
  const auto u = random_u(300, 30, rng);
  EXPECT_NEAR(potential(f.cache, f.model, prior, f.cache.center, u),
              -full_loglik(f.model, f.cache.center) - log_prior(prior, f.cache.center), 1e-12);
  for (int trial = 0; trial < 20; ++trial) {
    const Vector t = test::random_vector(4, rng, 0.7);
    const auto v = random_u(300, 30, rng);
    const Vector fd = test::fd_gradient([&](const Vector& x) { return potential(f.cache, f.model, prior, x, v); }, t);
    EXPECT_LT(rel_error(grad_potential(f.cache, f.model, prior, t, v), fd), 1e-5);
  }
}

TEST(Potential, ExactProxiesGiveConstantOffset) {
  const Dataset d = test::random_gaussian_data(100, 3, 20);
  const GaussianModel model(d);
  const Prior prior(0.5);
  Rng rng(21);
  const ControlVariateCache cache = build_cache(model, test::random_vector(3, rng));
  const auto u = random_u(100, 10, rng);
  double first = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    const Vector t = test::random_vector(3, rng, 2.0);
    const double offset =
        potential(cache, model, prior, t, u) - (-full_loglik(model, t) - log_prior(prior, t));
    if (trial == 0) first = offset;
    EXPECT_NEAR(offset, first, 1e-9);
  }
  EXPECT_NEAR(first, 0.0, 1e-9);
}

TEST(EstimatorVariance, HalvesWhenSubsampleDoubles) {
  Fixture f(2000, 3, 22, 0.0);
  Rng rng(23);
  Vector t(3);
  t << 0.4, -0.3, 0.2;
  auto mc_var = [&](Index m) {
    std::vector<double> v;
    for (int r = 0; r < 10000; ++r) v.push_back(loglik_estimate(f.cache, f.model, t, random_u(2000, m, rng)).ell_hat);
    return variance(v);
  };
  const double ratio = mc_var(50) / mc_var(100);
  EXPECT_GT(ratio, 1.5);
  EXPECT_LT(ratio, 2.5);
}

TEST(EstimatorVariance, VarianceEstimateTracksMonteCarloVariance) {
  Fixture f(2000, 3, 24, 0.0);
  Rng rng(25);
  Vector t(3);
  t << 0.3, 0.2, -0.4;
  for (Index m : {100, 200}) {
    std::vector<double> ell;
    double mean_s2 = 0.0;
    for (int r = 0; r < 10000; ++r) {
      const LogLikEstimate e = loglik_estimate(f.cache, f.model, t, random_u(2000, m, rng));
      ell.push_back(e.ell_hat);
      mean_s2 += e.sigma2_hat / 10000.0;
    }
    const double ratio = mean_s2 / variance(ell);
    EXPECT_GT(ratio, 0.85) << "m=" << m;
    EXPECT_LT(ratio, 1.15) << "m=" << m;
  }
}

TEST(ResidualMomentsTest, MergeEqualsDirect) {
  Rng rng(26);
  std::normal_distribution<double> normal(3.0, 2.0);
  std::vector<double> all;
  ResidualMoments a, b;
  for (int i = 0; i < 37; ++i) {
    const double v = normal(rng);
    all.push_back(v);
    (i < 20 ? a : b).add(v);
  }
  const ResidualMoments direct = ResidualMoments::of(all);
  const ResidualMoments merged = ResidualMoments::merge(a, b);
  EXPECT_EQ(merged.count, direct.count);
  EXPECT_NEAR(merged.mean, direct.mean, 1e-13);
  EXPECT_NEAR(merged.m2, direct.m2, 1e-11);
}
