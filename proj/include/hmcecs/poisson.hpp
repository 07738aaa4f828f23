#ifndef HMCECS_POISSON_HPP
#define HMCECS_POISSON_HPP

#include <hmcecs/estimators.hpp>

#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

namespace hmcecs {

/// Signed Poisson estimate of the likelihood,
///   L_hat = exp(a + mu) * prod_{h=1..G} (l_hat^(h) - a) / mu,
/// stored as log|L_hat| and a sign.
struct PoissonEstimate {
  double log_abs = 0.0;
  int sign = 1;
  Index draws = 0;           // G
  double lower_bound = 0.0;  // a
  double mean = 1.0;         // mu
  bool degenerate = false;   // some factor was exactly zero
};

inline double standard_normal_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

/// Smallest k with P(G <= k) >= p for G ~ Poisson(mu).
inline Index poisson_quantile(double p, double mu) {
  if (!(mu > 0.0) || mu > 700.0) throw DomainError("poisson_quantile: mean must be in (0, 700]");
  if (!(p >= 0.0 && p <= 1.0)) throw DomainError("poisson_quantile: probability outside [0, 1]");
  double pmf = std::exp(-mu);
  double cdf = pmf;
  Index k = 0;
  const auto cap = static_cast<Index>(mu + 40.0 * std::sqrt(mu) + 100.0);
  while (cdf < p && k < cap) {
    ++k;
    pmf *= mu / static_cast<double>(k);
    cdf += pmf;
  }
  return k;
}

struct CorrelatedPoissonDraw {
  Index draw;
  double latent;
};

/// Gaussian-copula correlated Poisson variate: latent' = rho latent +
/// sqrt(1 - rho^2) xi, G = F^{-1}(Phi(latent')). When latent is standard
/// normal, G is exactly Poisson(mu) marginally.
inline CorrelatedPoissonDraw correlate_poisson_draw(double latent, double rho, double mu, Rng& rng) {
  if (!(std::abs(rho) < 1.0)) throw DomainError("correlate_poisson_draw: |rho| must be < 1");
  std::normal_distribution<double> normal(0.0, 1.0);
  const double next = rho * latent + std::sqrt(1.0 - rho * rho) * normal(rng);
  return {poisson_quantile(standard_normal_cdf(next), mu), next};
}

inline std::vector<Index> draw_indices(Index population, Index count, Rng& rng) {
  std::uniform_int_distribution<Index> pick(0, population - 1);
  std::vector<Index> out(static_cast<std::size_t>(count));
  for (auto& k : out) k = pick(rng);
  return out;
}

namespace detail {

inline PoissonEstimate combine_poisson_factors(std::span<const double> estimates, double mu, double a) {
  PoissonEstimate out;
  out.draws = static_cast<Index>(estimates.size());
  out.lower_bound = a;
  out.mean = mu;
  out.log_abs = a + mu;
  const double log_mu = std::log(mu);
  for (double ell : estimates) {
    const double factor = ell - a;
    if (factor == 0.0) {
      out.degenerate = true;
      out.sign = 1;
      out.log_abs = -std::numeric_limits<double>::infinity();
      return out;
    }
    if (factor < 0.0) out.sign = -out.sign;
    out.log_abs += std::log(std::abs(factor)) - log_mu;
  }
  return out;
}

}  // namespace detail

/// Poisson estimate from explicitly supplied index sets, one per factor; the
/// number of sets is G. Inner estimates carry no variance correction.
template <LinearPredictorModel M>
PoissonEstimate poisson_estimate(const ControlVariateCache& cache, const M& model, const Vector& theta, double mu,
                                 double a, std::span<const std::vector<Index>> sets) {
  if (!(mu > 0.0)) throw DomainError("poisson_estimate: mu must be positive");
  std::vector<double> inner;
  inner.reserve(sets.size());
  for (const auto& set : sets) inner.push_back(loglik_estimate(cache, model, theta, set).ell_hat);
  return detail::combine_poisson_factors(inner, mu, a);
}

/// Draws G ~ Poisson(mu) and G independent subsamples of size m_b.
template <LinearPredictorModel M>
PoissonEstimate poisson_estimate(const ControlVariateCache& cache, const M& model, const Vector& theta, double mu,
                                 double a, Index subsample_size, Rng& rng) {
  if (!(mu > 0.0)) throw DomainError("poisson_estimate: mu must be positive");
  if (subsample_size < 1) throw DomainError("poisson_estimate: m_b must be >= 1");
  std::poisson_distribution<Index> poisson(mu);
  const Index g = poisson(rng);
  std::vector<std::vector<Index>> sets;
  sets.reserve(static_cast<std::size_t>(g));
  for (Index h = 0; h < g; ++h) sets.push_back(draw_indices(model.data().size(), subsample_size, rng));
  return poisson_estimate(cache, model, theta, mu, a, std::span<const std::vector<Index>>(sets));
}

/// How the lower-bound constant a is chosen.
///  pilot: a(theta) = l_hat_p(theta) - c * sigma_hat_p(theta) from a pilot
///         subsample that is part of the auxiliary randomness, so a is a
///         smooth function of theta for fixed randomness.
///  fixed: a = value.
struct LowerBoundRule {
  enum class Kind { pilot, fixed };
  Kind kind = Kind::pilot;
  double c = 3.0;
  double value = 0.0;
};

/// Auxiliary randomness of the signed estimator: the latent Gaussian that
/// drives G, the pilot subsample and a pool of subsamples of which the first
/// G are active. Pool entries beyond G never enter the estimate.
struct PoissonAuxiliary {
  double latent = 0.0;
  Index draws = 0;
  std::vector<Index> pilot;
  std::vector<std::vector<Index>> pool;

  std::span<const std::vector<Index>> active() const {
    return {pool.data(), static_cast<std::size_t>(draws)};
  }
};

struct PoissonSettings {
  double mu = 1.0;
  Index subsample_size = 1;  // m_b
  Index blocks = 1;          // blocks per subsample refreshed by the auxiliary update
  double rho = 0.99;         // latent correlation between successive G
  LowerBoundRule rule;
};

inline PoissonAuxiliary draw_poisson_auxiliary(Index population, const PoissonSettings& s, Rng& rng) {
  PoissonAuxiliary aux;
  std::normal_distribution<double> normal(0.0, 1.0);
  aux.latent = normal(rng);
  aux.draws = poisson_quantile(standard_normal_cdf(aux.latent), s.mu);
  aux.pilot = draw_indices(population, s.subsample_size, rng);
  for (Index h = 0; h < aux.draws; ++h) aux.pool.push_back(draw_indices(population, s.subsample_size, rng));
  return aux;
}

/// Proposal for the auxiliary update. The latent moves by an AR(1) step that
/// leaves N(0,1) invariant; then one block of one subsample, chosen uniformly
/// among the pilot and the min(G, G') subsamples active on both sides, is
/// redrawn. Both pieces are reversible with respect to the auxiliary prior,
/// so the acceptance ratio reduces to |L_hat'| / |L_hat|.
inline PoissonAuxiliary propose_poisson_auxiliary(const PoissonAuxiliary& current, Index population,
                                                  const PoissonSettings& s, Rng& rng) {
  PoissonAuxiliary next = current;
  const CorrelatedPoissonDraw g = correlate_poisson_draw(current.latent, s.rho, s.mu, rng);
  next.latent = g.latent;
  next.draws = g.draw;
  while (static_cast<Index>(next.pool.size()) < next.draws) {
    next.pool.push_back(draw_indices(population, s.subsample_size, rng));
  }
  const Index shared = std::min(current.draws, next.draws);
  std::uniform_int_distribution<Index> pick_set(0, shared);
  const Index which = pick_set(rng);
  auto& target = which == 0 ? next.pilot : next.pool[static_cast<std::size_t>(which - 1)];
  const Index block_size = s.subsample_size / s.blocks;
  std::uniform_int_distribution<Index> pick_block(0, s.blocks - 1);
  const Index block = pick_block(rng);
  std::uniform_int_distribution<Index> pick(0, population - 1);
  for (Index i = 0; i < block_size; ++i) target[static_cast<std::size_t>(block * block_size + i)] = pick(rng);
  return next;
}

struct PoissonPotentialEvaluation {
  double value = 0.0;  // -log|L_hat| - log p(theta)
  PoissonEstimate estimate;
  Vector gradient;
};

namespace detail {

constexpr double kPilotVarianceFloor = 1e-12;

struct DifferenceTerms {
  double ell_hat;
  double sigma2_hat;
  Vector grad_ell;
  Vector grad_sigma2;
};

template <LinearPredictorModel M>
DifferenceTerms difference_terms(const ControlVariateCache& cache, const M& model, const Vector& theta,
                                 std::span<const Index> u, bool with_gradient) {
  const SubsampleResiduals r = subsample_residuals(cache, model, theta, u);
  const ResidualMoments mom = ResidualMoments::of({r.value.data(), static_cast<std::size_t>(r.value.size())});
  const LogLikEstimate est = estimate_from_moments(sum_proxy(cache, theta), mom, model.data().size());
  DifferenceTerms out{est.ell_hat, est.sigma2_hat, {}, {}};
  if (with_gradient) {
    const double n = static_cast<double>(model.data().size());
    const double m = static_cast<double>(u.size());
    out.grad_ell = sum_proxy_gradient(cache, theta) + (n / m) * weighted_row_sum(model, u, r.slope);
    const Vector w = (r.value.array() - mom.mean).matrix().cwiseProduct(r.slope);
    out.grad_sigma2 = (2.0 * n * n / (m * m)) * weighted_row_sum(model, u, w);
  }
  return out;
}

}  // namespace detail

/// Potential -log|L_hat(theta)| - log p(theta) for fixed auxiliary randomness,
/// with its exact gradient (including the theta-dependence of a under the
/// pilot rule).
template <LinearPredictorModel M>
PoissonPotentialEvaluation evaluate_poisson_potential(const ControlVariateCache& cache, const M& model,
                                                      const Prior& prior, const Vector& theta,
                                                      const PoissonAuxiliary& aux, const PoissonSettings& s,
                                                      bool with_gradient = true) {
  cache.verify(model.data());
  require_finite(theta, "evaluate_poisson_potential");
  const Index d = theta.size();
  double a = s.rule.value;
  Vector grad_a = Vector::Zero(d);
  if (s.rule.kind == LowerBoundRule::Kind::pilot) {
    const auto p = detail::difference_terms(cache, model, theta, aux.pilot, with_gradient);
    const double sd = std::sqrt(p.sigma2_hat + detail::kPilotVarianceFloor);
    a = p.ell_hat - s.rule.c * sd;
    if (with_gradient) grad_a = p.grad_ell - (s.rule.c / (2.0 * sd)) * p.grad_sigma2;
  }
  std::vector<double> inner;
  std::vector<Vector> inner_grad;
  for (const auto& set : aux.active()) {
    auto t = detail::difference_terms(cache, model, theta, set, with_gradient);
    inner.push_back(t.ell_hat);
    if (with_gradient) inner_grad.push_back(std::move(t.grad_ell));
  }
  PoissonPotentialEvaluation out;
  out.estimate = detail::combine_poisson_factors(inner, s.mu, a);
  out.value = -out.estimate.log_abs - log_prior(prior, theta);
  if (with_gradient) {
    Vector grad_log_abs = grad_a;
    if (!out.estimate.degenerate) {
      for (std::size_t h = 0; h < inner.size(); ++h) grad_log_abs += (inner_grad[h] - grad_a) / (inner[h] - a);
    }
    out.gradient = -grad_log_abs - grad_log_prior(prior, theta);
  }
  return out;
}

}  // namespace hmcecs

#endif  // HMCECS_POISSON_HPP
