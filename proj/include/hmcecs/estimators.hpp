#ifndef HMCECS_ESTIMATORS_HPP
#define HMCECS_ESTIMATORS_HPP

#include <hmcecs/control_variates.hpp>

#include <span>

namespace hmcecs {

/// Difference estimate of the log-likelihood and its estimated variance for
/// one subsample u (indices drawn uniformly with replacement).
struct LogLikEstimate {
  double ell_hat = 0.0;
  double sigma2_hat = 0.0;
  std::uint64_t subsample_fingerprint = 0;
};

inline std::uint64_t subsample_fingerprint(std::span<const Index> u) {
  Fnv1a h;
  h.add(static_cast<std::uint64_t>(u.size()));
  h.add_bytes(u.data(), u.size_bytes());
  return h.value();
}

/// Count, mean and sum of squared deviations of residuals; mergeable so that
/// block-wise partial results combine without cancellation.
struct ResidualMoments {
  Index count = 0;
  double mean = 0.0;
  double m2 = 0.0;

  void add(double value) {
    ++count;
    const double delta = value - mean;
    mean += delta / static_cast<double>(count);
    m2 += delta * (value - mean);
  }

  static ResidualMoments merge(const ResidualMoments& a, const ResidualMoments& b) {
    if (a.count == 0) return b;
    if (b.count == 0) return a;
    ResidualMoments out;
    out.count = a.count + b.count;
    const double delta = b.mean - a.mean;
    const double wb = static_cast<double>(b.count) / static_cast<double>(out.count);
    out.mean = a.mean + delta * wb;
    out.m2 = a.m2 + b.m2 + delta * delta * static_cast<double>(a.count) * wb;
    return out;
  }

  static ResidualMoments of(std::span<const double> values) {
    ResidualMoments out;
    for (double v : values) out.add(v);
    return out;
  }
};

/// l_hat = sum_q + (n/m) sum e_i,  sigma2_hat = (n^2/m^2) sum (e_i - e_bar)^2.
inline LogLikEstimate estimate_from_moments(double sum_q, const ResidualMoments& moments, Index population) {
  const double n = static_cast<double>(population);
  const double m = static_cast<double>(moments.count);
  LogLikEstimate est;
  est.ell_hat = sum_q + n * moments.mean;
  est.sigma2_hat = (n * n) / (m * m) * moments.m2;
  if (est.sigma2_hat < 0.0) est.sigma2_hat = 0.0;
  return est;
}

/// Residuals e_{u_i} and their gradient scalars s_{u_i} (grad e = s * x).
struct SubsampleResiduals {
  Vector value;
  Vector slope;
};

namespace detail {

inline void require_nonempty(std::span<const Index> u) {
  if (u.empty()) throw DomainError("subsample estimator: empty subsample");
}

inline void require_in_range(std::span<const Index> u, Index n) {
  for (Index k : u) {
    if (k < 0 || k >= n) throw DomainError("subsample estimator: index " + std::to_string(k) + " out of range");
  }
}

}  // namespace detail

/// One likelihood and proxy evaluation per sampled index; duplicates are
/// evaluated once per occurrence.
template <LinearPredictorModel M>
SubsampleResiduals subsample_residuals(const ControlVariateCache& cache, const M& model, const Vector& theta,
                                       std::span<const Index> u) {
  detail::require_nonempty(u);
  const Dataset& data = model.data();
  detail::require_in_range(u, data.size());
  SubsampleResiduals out{Vector(static_cast<Index>(u.size())), Vector(static_cast<Index>(u.size()))};
  for (std::size_t i = 0; i < u.size(); ++i) {
    const Index k = u[i];
    const auto row = data.x.row(k);
    const ProxyResidual r =
        proxy_residual_from_predictors(model, data.y[k], row.dot(theta), row.dot(cache.center), cache.order);
    out.value[static_cast<Index>(i)] = r.value;
    out.slope[static_cast<Index>(i)] = r.slope;
  }
  return out;
}

/// sum_i w_i x_{u_i}
template <LinearPredictorModel M>
Vector weighted_row_sum(const M& model, std::span<const Index> u, const Vector& weights) {
  const Dataset& data = model.data();
  Vector acc = Vector::Zero(data.dim());
  for (std::size_t i = 0; i < u.size(); ++i) {
    acc.noalias() += weights[static_cast<Index>(i)] * data.x.row(u[i]).transpose();
  }
  return acc;
}

template <LinearPredictorModel M>
LogLikEstimate loglik_estimate(const ControlVariateCache& cache, const M& model, const Vector& theta,
                               std::span<const Index> u) {
  cache.verify(model.data());
  require_finite(theta, "loglik_estimate");
  const SubsampleResiduals r = subsample_residuals(cache, model, theta, u);
  const ResidualMoments mom = ResidualMoments::of({r.value.data(), static_cast<std::size_t>(r.value.size())});
  LogLikEstimate est = estimate_from_moments(sum_proxy(cache, theta), mom, model.data().size());
  est.subsample_fingerprint = subsample_fingerprint(u);
  return est;
}

/// A + B(theta - theta*) + (n/m) sum_i (grad l_{u_i} - grad q_{u_i}).
template <LinearPredictorModel M>
Vector grad_loglik_estimate(const ControlVariateCache& cache, const M& model, const Vector& theta,
                            std::span<const Index> u) {
  cache.verify(model.data());
  require_finite(theta, "grad_loglik_estimate");
  const SubsampleResiduals r = subsample_residuals(cache, model, theta, u);
  const double scale = static_cast<double>(model.data().size()) / static_cast<double>(u.size());
  return sum_proxy_gradient(cache, theta) + scale * weighted_row_sum(model, u, r.slope);
}

/// Exact gradient of sigma2_hat(theta; u) at fixed u:
/// (2 n^2 / m^2) sum_i (e_i - e_bar) grad e_i.
template <LinearPredictorModel M>
Vector grad_var_estimate(const ControlVariateCache& cache, const M& model, const Vector& theta,
                         std::span<const Index> u) {
  cache.verify(model.data());
  require_finite(theta, "grad_var_estimate");
  const SubsampleResiduals r = subsample_residuals(cache, model, theta, u);
  const double n = static_cast<double>(model.data().size());
  const double m = static_cast<double>(u.size());
  const Vector weights = (r.value.array() - r.value.mean()).matrix().cwiseProduct(r.slope);
  return (2.0 * n * n / (m * m)) * weighted_row_sum(model, u, weights);
}

/// Estimated potential energy U_hat = -l_hat + sigma2_hat / 2 - log p(theta),
/// optionally with its gradient, from a single pass over u.
struct PotentialEvaluation {
  double value = 0.0;
  LogLikEstimate estimate;
  Vector gradient;
  Vector residuals;  // e_{u_i}, kept so callers can refresh block caches
};

template <LinearPredictorModel M>
PotentialEvaluation evaluate_potential(const ControlVariateCache& cache, const M& model, const Prior& prior,
                                       const Vector& theta, std::span<const Index> u, bool with_gradient = true) {
  cache.verify(model.data());
  require_finite(theta, "evaluate_potential");
  const SubsampleResiduals r = subsample_residuals(cache, model, theta, u);
  const ResidualMoments mom = ResidualMoments::of({r.value.data(), static_cast<std::size_t>(r.value.size())});
  const Index population = model.data().size();
  PotentialEvaluation out;
  out.estimate = estimate_from_moments(sum_proxy(cache, theta), mom, population);
  out.estimate.subsample_fingerprint = subsample_fingerprint(u);
  out.value = -out.estimate.ell_hat + 0.5 * out.estimate.sigma2_hat - log_prior(prior, theta);
  if (with_gradient) {
    const double n = static_cast<double>(population);
    const double m = static_cast<double>(u.size());
    // d/dtheta [-(n/m) sum e_i + (n^2/m^2) sum (e_i - e_bar)^2 / 2]
    const Vector weights =
        (-(n / m) + (n * n / (m * m)) * (r.value.array() - mom.mean)).matrix().cwiseProduct(r.slope);
    out.gradient = -sum_proxy_gradient(cache, theta) + weighted_row_sum(model, u, weights) -
                   grad_log_prior(prior, theta);
  }
  out.residuals = r.value;
  return out;
}

template <LinearPredictorModel M>
double potential(const ControlVariateCache& cache, const M& model, const Prior& prior, const Vector& theta,
                 std::span<const Index> u) {
  return evaluate_potential(cache, model, prior, theta, u, false).value;
}

template <LinearPredictorModel M>
Vector grad_potential(const ControlVariateCache& cache, const M& model, const Prior& prior, const Vector& theta,
                      std::span<const Index> u) {
  return evaluate_potential(cache, model, prior, theta, u, true).gradient;
}

}  // namespace hmcecs

#endif  // HMCECS_ESTIMATORS_HPP
