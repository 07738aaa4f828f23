#include "support.hpp"

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/poisson.hpp>
#include <gtest/gtest.h>

using namespace hmcecs;
using hmcecs::test::rel_error;

namespace {

struct Small {
  Dataset data = test::random_logistic_data(100, 3, 31);
  LogisticModel model{data};
  ControlVariateCache cache;
  Vector theta;

  explicit Small(double offset) {
    Rng rng(32);
    cache = build_cache(model, test::random_vector(3, rng, 0.3));
    theta = cache.center + Vector::Constant(3, offset);
  }
};

// Pearson statistic of Poisson(mu) draws with the upper tail pooled.
double pearson_statistic(const std::vector<Index>& draws, double mu, int& dof) {
  const boost::math::poisson_distribution<double> pois(mu);
  Index top = 0;
  while (static_cast<double>(draws.size()) * (1.0 - boost::math::cdf(pois, static_cast<double>(top))) >= 5.0) ++top;
  std::vector<double> observed(static_cast<std::size_t>(top + 1), 0.0);
  for (Index g : draws) observed[static_cast<std::size_t>(std::min(g, top))] += 1.0;
  double stat = 0.0;
  for (Index k = 0; k <= top; ++k) {
    const double p = k < top ? boost::math::pdf(pois, static_cast<double>(k))
                             : 1.0 - boost::math::cdf(pois, static_cast<double>(top - 1));
    const double expected = p * static_cast<double>(draws.size());
    const double o = observed[static_cast<std::size_t>(k)];
    stat += (o - expected) * (o - expected) / expected;
  }
  dof = static_cast<int>(top);
  return stat;
}

}  // namespace

TEST(PoissonEstimateTest, EmptyProductConvention) {
  Small s(0.1);
  const std::vector<std::vector<Index>> none;
  const PoissonEstimate e = poisson_estimate(s.cache, s.model, s.theta, 2.5, -70.0, std::span(none));
  EXPECT_EQ(e.sign, 1);
  EXPECT_EQ(e.draws, 0);
  EXPECT_DOUBLE_EQ(e.log_abs, -70.0 + 2.5);
  EXPECT_FALSE(e.degenerate);
}

TEST(PoissonEstimateTest, PositiveFactorsGivePositiveSign) {
  Small s(0.1);
  Rng rng(1);
  for (int r = 0; r < 200; ++r) {
    const PoissonEstimate e = poisson_estimate(s.cache, s.model, s.theta, 3.0, -1e6, 10, rng);
    EXPECT_EQ(e.sign, 1);
  }
}

TEST(PoissonEstimateTest, MatchesDefinitionAndFlagsZeroFactor) {
  Small s(0.2);
  Rng rng(2);
  const std::vector<std::vector<Index>> sets{draw_indices(100, 10, rng), draw_indices(100, 10, rng)};
  const double l1 = loglik_estimate(s.cache, s.model, s.theta, sets[0]).ell_hat;
  const double l2 = loglik_estimate(s.cache, s.model, s.theta, sets[1]).ell_hat;
  const double a = 0.5 * (l1 + l2);
  const PoissonEstimate e = poisson_estimate(s.cache, s.model, s.theta, 1.7, a, std::span(sets));
  const double product = std::exp(a + 1.7) * (l1 - a) / 1.7 * (l2 - a) / 1.7;
  EXPECT_EQ(e.sign, product < 0 ? -1 : 1);
  EXPECT_LT(rel_error(e.log_abs, std::log(std::abs(product))), 1e-12);
  const PoissonEstimate z = poisson_estimate(s.cache, s.model, s.theta, 1.7, l1, std::span(sets));
  EXPECT_TRUE(z.degenerate);
  EXPECT_EQ(z.sign, 1);
  EXPECT_EQ(z.log_abs, -std::numeric_limits<double>::infinity());
}

TEST(PoissonEstimateTest, UnbiasedForTheLikelihood) {
  Small s(0.15);
  const double ell = full_loglik(s.model, s.theta);
  const double a = ell - 3.0;
  Rng rng(3);
  const int reps = 100000;
  double sum = 0.0, sum_sq = 0.0;
  for (int r = 0; r < reps; ++r) {
    const PoissonEstimate e = poisson_estimate(s.cache, s.model, s.theta, 3.0, a, 10, rng);
    const double w = e.sign * std::exp(e.log_abs - ell);
    sum += w;
    sum_sq += w * w;
  }
  const double mean = sum / reps;
  const double se = std::sqrt((sum_sq / reps - mean * mean) / reps);
  EXPECT_LT(std::abs(mean - 1.0), 3.0 * se) << "mean " << mean << " se " << se;
}

TEST(PoissonEstimateTest, LowerBoundControlsSigns) {
  Small s(0.8);
  const double ell = full_loglik(s.model, s.theta);
  Rng probe(4);
  std::vector<double> ells;
  for (int r = 0; r < 2000; ++r) ells.push_back(loglik_estimate(s.cache, s.model, s.theta, draw_indices(100, 10, probe)).ell_hat);
  double var = 0.0;
  for (double v : ells) var += (v - ell) * (v - ell) / 2000.0;
  const double sd = std::sqrt(var);
  ASSERT_GT(sd, 0.1);
  std::vector<double> fraction;
  for (double k : {2.0, 1.0, 0.5, 0.0, -0.5, -1.0, -2.0, -3.0}) {
    const double a = ell + k * sd;
    Rng rng(5);
    int positive = 0;
    for (int r = 0; r < 10000; ++r) positive += poisson_estimate(s.cache, s.model, s.theta, 2.0, a, 10, rng).sign > 0;
    fraction.push_back(positive / 10000.0);
  }
  for (std::size_t i = 1; i < fraction.size(); ++i) {
    const double p = fraction[i - 1];
    const double se = std::sqrt(std::max(p * (1.0 - p), 1e-4) / 10000.0);
    EXPECT_GE(fraction[i], fraction[i - 1] - 2.0 * se) << "grid point " << i;
  }
  EXPECT_GT(fraction.back(), 0.99);
  EXPECT_LT(fraction.front(), 0.8);
}

TEST(PoissonEstimateTest, LogAbsVarianceDecreasesWithMean) {
  // With a = l - mu every factor is 1 + (l_hat - l) / mu, so Var(log|estimate|) is about
  // sigma^2 / mu once mu clearly exceeds sigma, the sd of one batch estimate.
  // Below that the factors straddle zero and the variance grows with mu instead.
  Small s(0.8);
  const double ell = full_loglik(s.model, s.theta);
  Rng probe(5);
  std::uniform_int_distribution<Index> pick(0, s.data.size() - 1);
  double sigma2 = 0.0;
  for (int r = 0; r < 20000; ++r) {
    std::vector<Index> u(10);
    for (auto& k : u) k = pick(probe);
    const double e = loglik_estimate(s.cache, s.model, s.theta, u).ell_hat - ell;
    sigma2 += e * e / 20000.0;
  }
  const double sigma = std::sqrt(sigma2);
  double previous = std::numeric_limits<double>::infinity();
  for (double ratio : {4.0, 8.0, 16.0, 32.0}) {
    const double mu = ratio * sigma;
    Rng rng(6);
    std::vector<double> v;
    for (int r = 0; r < 10000; ++r) v.push_back(poisson_estimate(s.cache, s.model, s.theta, mu, ell - mu, 10, rng).log_abs);
    double mean = 0.0;
    for (double x : v) mean += x / 10000.0;
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean) / 9999.0;
    EXPECT_LT(var, previous) << "mu " << mu;
    EXPECT_NEAR(var, sigma2 / mu, 0.5 * sigma2 / mu) << "mu " << mu;
    previous = var;
  }
}

TEST(PoissonEstimateTest, LogAbsConcentratesUnderFixedBudget) {
  // mu * m_b held at 80: the leading variance term s^2 / budget is constant and the
  // remaining terms fall like 1 / mu.
  Small s(0.5);
  const double ell = full_loglik(s.model, s.theta);
  double previous = std::numeric_limits<double>::infinity();
  for (Index batch : {80, 40, 20, 10}) {
    const double mu = 80.0 / static_cast<double>(batch);
    Rng rng(6);
    std::vector<double> v;
    for (int r = 0; r < 20000; ++r) {
      v.push_back(poisson_estimate(s.cache, s.model, s.theta, mu, ell - mu, batch, rng).log_abs);
    }
    const double var = sample_sd(v) * sample_sd(v);
    EXPECT_LT(var, previous) << "mu " << mu;
    previous = var;
  }
}

TEST(CorrelatedPoisson, IndependentDrawsFollowPoisson) {
  for (double mu : {0.7, 5.0}) {
    Rng rng(7);
    std::vector<Index> draws;
    double latent = 0.0;
    for (int i = 0; i < 100000; ++i) draws.push_back(correlate_poisson_draw(latent, 0.0, mu, rng).draw);
    int dof = 0;
    const double stat = pearson_statistic(draws, mu, dof);
    const double critical = boost::math::quantile(boost::math::chi_squared(dof), 0.99);
    EXPECT_LT(stat, critical) << "mu " << mu;
  }
}

TEST(CorrelatedPoisson, StationaryChainKeepsPoissonMarginal) {
  Rng rng(8);
  std::normal_distribution<double> normal(0.0, 1.0);
  double latent = normal(rng);
  std::vector<Index> draws;
  for (int i = 0; i < 1000000; ++i) {
    const CorrelatedPoissonDraw g = correlate_poisson_draw(latent, 0.5, 3.0, rng);
    latent = g.latent;
    if (i % 10 == 0) draws.push_back(g.draw);
  }
  int dof = 0;
  const double stat = pearson_statistic(draws, 3.0, dof);
  EXPECT_LT(stat, boost::math::quantile(boost::math::chi_squared(dof), 0.99));
}

TEST(CorrelatedPoisson, HighCorrelationRepeatsDraws) {
  Rng rng(9);
  std::normal_distribution<double> normal(0.0, 1.0);
  int same = 0;
  const int trials = 10000;
  for (int i = 0; i < trials; ++i) {
    const double z = normal(rng);
    const Index g0 = poisson_quantile(standard_normal_cdf(z), 5.0);
    same += correlate_poisson_draw(z, 0.9999, 5.0, rng).draw == g0;
  }
  EXPECT_GT(same, 0.95 * trials);
}

TEST(CorrelatedPoisson, QuantileFloorAndErrors) {
  const double p0 = std::exp(-2.0);
  EXPECT_EQ(poisson_quantile(0.5 * p0, 2.0), 0);
  EXPECT_EQ(poisson_quantile(0.0, 2.0), 0);
  EXPECT_EQ(poisson_quantile(p0 * 1.0001, 2.0), 1);
  EXPECT_THROW(poisson_quantile(0.5, 0.0), DomainError);
  Rng rng(1);
  EXPECT_THROW(correlate_poisson_draw(0.0, 1.0, 2.0, rng), DomainError);
}

TEST(PoissonPotentialTest, GradientMatchesFiniteDifferences) {
  Small s(0.3);
  const Prior prior(0.1);
  PoissonSettings settings;
  settings.mu = 2.0;
  settings.subsample_size = 10;
  settings.blocks = 2;
  for (auto kind : {LowerBoundRule::Kind::pilot, LowerBoundRule::Kind::fixed}) {
    settings.rule.kind = kind;
    settings.rule.value = full_loglik(s.model, s.theta) - 5.0;
    Rng rng(10);
    for (int trial = 0; trial < 10; ++trial) {
      PoissonAuxiliary aux = draw_poisson_auxiliary(100, settings, rng);
      while (aux.draws < 2) aux = draw_poisson_auxiliary(100, settings, rng);
      const Vector t = s.theta + test::random_vector(3, rng, 0.1);
      const auto eval = evaluate_poisson_potential(s.cache, s.model, prior, t, aux, settings);
      const Vector fd = test::fd_gradient(
          [&](const Vector& x) { return evaluate_poisson_potential(s.cache, s.model, prior, x, aux, settings, false).value; }, t);
      EXPECT_LT(rel_error(eval.gradient, fd), 1e-5);
    }
  }
}

TEST(PoissonAuxiliaryTest, ProposalRefreshesOneBlock) {
  PoissonSettings settings;
  settings.mu = 3.0;
  settings.subsample_size = 20;
  settings.blocks = 4;
  settings.rho = 0.999999;
  Rng rng(11);
  PoissonAuxiliary aux = draw_poisson_auxiliary(1000, settings, rng);
  for (int i = 0; i < 50; ++i) {
    const PoissonAuxiliary next = propose_poisson_auxiliary(aux, 1000, settings, rng);
    Index changed = 0;
    for (std::size_t k = 0; k < aux.pilot.size(); ++k) changed += aux.pilot[k] != next.pilot[k];
    for (Index h = 0; h < std::min(aux.draws, next.draws); ++h) {
      for (std::size_t k = 0; k < 20; ++k) changed += aux.pool[static_cast<std::size_t>(h)][k] != next.pool[static_cast<std::size_t>(h)][k];
    }
    EXPECT_LE(changed, 5);
    aux = next;
  }
}
