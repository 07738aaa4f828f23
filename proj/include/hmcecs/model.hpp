#ifndef HMCECS_MODEL_HPP
#define HMCECS_MODEL_HPP

#include <hmcecs/types.hpp>

#include <algorithm>
#include <cmath>
#include <concepts>
#include <numbers>
#include <string>

namespace hmcecs {

/// Covariates and responses, immutable once loaded. Observation indices are
/// zero-based throughout the library.
struct Dataset {
  RowMatrix x;
  Vector y;

  Index size() const { return x.rows(); }
  Index dim() const { return x.cols(); }

  void validate() const {
    if (x.rows() < 1 || x.cols() < 1) throw DomainError("dataset must have n >= 1 and d >= 1");
    if (y.size() != x.rows()) throw DomainError("dataset: response length does not match covariate rows");
    if (!x.allFinite()) throw DomainError("dataset: non-finite covariate entry");
    if (!y.allFinite()) throw DomainError("dataset: non-finite response entry");
  }

  void validate_binary() const {
    validate();
    for (Index k = 0; k < y.size(); ++k) {
      if (y[k] != 0.0 && y[k] != 1.0) {
        throw DomainError("dataset: response at row " + std::to_string(k) + " is not 0/1");
      }
    }
  }

  /// Cheap content hash: shape plus the bytes of up to 65 evenly spaced rows
  /// (always including the first and last). Cost is O(d), independent of n.
  std::uint64_t fingerprint() const {
    Fnv1a h;
    h.add(size());
    h.add(dim());
    const Index n = size();
    constexpr Index kProbes = 64;
    for (Index i = 0; i <= kProbes && n > 0; ++i) {
      const Index k = (n - 1) * i / kProbes;
      for (Index j = 0; j < dim(); ++j) h.add(x(k, j));
      h.add(y[k]);
    }
    return h.value();
  }
};

/// Gaussian prior N(0, I / lambda^2).
class Prior {
 public:
  explicit Prior(double lambda) : lambda_(lambda) {
    if (!(lambda > 0.0) || !std::isfinite(lambda)) throw DomainError("prior: lambda must be positive");
  }
  double lambda() const { return lambda_; }
  double precision() const { return lambda_ * lambda_; }

 private:
  double lambda_;
};

inline double log_prior(const Prior& prior, const Vector& theta) {
  const double d = static_cast<double>(theta.size());
  return -0.5 * d * std::log(2.0 * std::numbers::pi) + d * std::log(prior.lambda()) -
         0.5 * prior.precision() * theta.squaredNorm();
}

inline Vector grad_log_prior(const Prior& prior, const Vector& theta) { return -prior.precision() * theta; }

inline Matrix hess_log_prior(const Prior& prior, Index dim) {
  return -prior.precision() * Matrix::Identity(dim, dim);
}

/// Value and first two derivatives of a per-observation log-likelihood with
/// respect to its linear predictor z = x_k' theta.
struct LinkTerms {
  double value;
  double slope;
  double curvature;
};

/// Observation models whose log-likelihood depends on theta only through the
/// linear predictor. The gradient is then slope * x_k and the Hessian
/// curvature * x_k x_k', so no per-observation d x d matrix is ever stored.
template <typename M>
concept LinearPredictorModel = requires(const M& model, double y, double z) {
  { model.data() } -> std::same_as<const Dataset&>;
  { model.link(y, z) } -> std::same_as<LinkTerms>;
  { model.link_value(y, z) } -> std::convertible_to<double>;
};

namespace detail {

/// Standard logistic 1 / (1 + e^{-t}).
inline double sigmoid(double t) {
  if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

}  // namespace detail

/// Logistic regression with P(y = 1 | x) = 1 / (1 + exp(x' theta)).
///
/// Note the sign: a positive linear predictor makes y = 1 *less* likely, the
/// reverse of the usual convention. Coefficients therefore carry the opposite
/// sign to a standard logit fit on the same data.
class LogisticModel {
 public:
  explicit LogisticModel(const Dataset& data) : data_(&data) { data.validate_binary(); }

  const Dataset& data() const { return *data_; }

  // Same arithmetic as link().value so that sums agree bit for bit.
  static double link_value(double y, double z) {
    const double tail = std::log1p(std::exp(-std::abs(z)));
    return -y * (std::max(z, 0.0) + tail) - (1.0 - y) * (std::max(-z, 0.0) + tail);
  }

  // Single exponential: with e = exp(-|z|), softplus(+-z) = max(+-z, 0) + log1p(e).
  LinkTerms link(double y, double z) const {
    const double e = std::exp(-std::abs(z));
    const double tail = std::log1p(e);
    const double big = 1.0 / (1.0 + e);
    const double small = e * big;
    const double s_pos = z >= 0.0 ? big : small;  // sigmoid(z)
    const double s_neg = z >= 0.0 ? small : big;  // sigmoid(-z)
    const double value = -y * (std::max(z, 0.0) + tail) - (1.0 - y) * (std::max(-z, 0.0) + tail);
    return {value, -y * s_pos + (1.0 - y) * s_neg, -s_pos * s_neg};
  }

 private:
  const Dataset* data_;
};

/// Linear-Gaussian observations y ~ N(x' theta, 1 / tau). Its log-likelihood is
/// exactly quadratic, so second-order control variates reproduce it exactly.
class GaussianModel {
 public:
  explicit GaussianModel(const Dataset& data, double noise_precision = 1.0)
      : data_(&data), tau_(noise_precision) {
    data.validate();
    if (!(noise_precision > 0.0)) throw DomainError("gaussian model: noise precision must be positive");
  }

  const Dataset& data() const { return *data_; }
  double noise_precision() const { return tau_; }

  double link_value(double y, double z) const {
    const double r = y - z;
    return -0.5 * tau_ * r * r - 0.5 * std::log(2.0 * std::numbers::pi / tau_);
  }

  LinkTerms link(double y, double z) const { return {link_value(y, z), tau_ * (y - z), -tau_}; }

 private:
  const Dataset* data_;
  double tau_;
};

template <LinearPredictorModel M>
double linear_predictor(const M& model, const Vector& theta, Index k) {
  return model.data().x.row(k).dot(theta);
}

template <LinearPredictorModel M>
double loglik_point(const M& model, const Vector& theta, Index k) {
  require_finite(theta, "loglik_point");
  return model.link_value(model.data().y[k], linear_predictor(model, theta, k));
}

template <LinearPredictorModel M>
Vector grad_loglik_point(const M& model, const Vector& theta, Index k) {
  require_finite(theta, "grad_loglik_point");
  const LinkTerms t = model.link(model.data().y[k], linear_predictor(model, theta, k));
  return t.slope * model.data().x.row(k).transpose();
}

/// Materialized rank-one Hessian; only for inspection and tests.
template <LinearPredictorModel M>
Matrix hess_loglik_point(const M& model, const Vector& theta, Index k) {
  require_finite(theta, "hess_loglik_point");
  const LinkTerms t = model.link(model.data().y[k], linear_predictor(model, theta, k));
  const Vector xk = model.data().x.row(k).transpose();
  return t.curvature * xk * xk.transpose();
}

/// Full-data log-likelihood sum.
template <LinearPredictorModel M>
double full_loglik(const M& model, const Vector& theta) {
  require_finite(theta, "full_loglik");
  const Dataset& data = model.data();
  const Vector z = data.x * theta;
  double sum = 0.0;
  for (Index k = 0; k < data.size(); ++k) sum += model.link_value(data.y[k], z[k]);
  return sum;
}

struct LoglikAndGradient {
  double value;
  Vector gradient;
};

template <LinearPredictorModel M>
LoglikAndGradient full_loglik_and_gradient(const M& model, const Vector& theta) {
  require_finite(theta, "full_loglik_and_gradient");
  const Dataset& data = model.data();
  const Vector z = data.x * theta;
  Vector slopes(data.size());
  double sum = 0.0;
  for (Index k = 0; k < data.size(); ++k) {
    const LinkTerms t = model.link(data.y[k], z[k]);
    sum += t.value;
    slopes[k] = t.slope;
  }
  return {sum, data.x.transpose() * slopes};
}

template <LinearPredictorModel M>
Matrix full_hessian(const M& model, const Vector& theta) {
  require_finite(theta, "full_hessian");
  const Dataset& data = model.data();
  const Vector z = data.x * theta;
  Vector curv(data.size());
  for (Index k = 0; k < data.size(); ++k) curv[k] = model.link(data.y[k], z[k]).curvature;
  Matrix h = data.x.transpose() * curv.asDiagonal() * data.x;
  return 0.5 * (h + h.transpose());
}

/// Synthetic logistic data: intercept column of ones, remaining covariates
/// i.i.d. standard normal, responses from LogisticModel at theta_true.
inline Dataset generate_synthetic(Index n, Index d, const Vector& theta_true, std::uint64_t seed) {
  if (n < 1 || d < 1) throw DomainError("generate_synthetic: n and d must be >= 1");
  if (theta_true.size() != d) throw DomainError("generate_synthetic: theta_true has wrong dimension");
  Rng rng = make_rng(seed, 0);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Dataset data{RowMatrix(n, d), Vector(n)};
  for (Index k = 0; k < n; ++k) {
    data.x(k, 0) = 1.0;
    for (Index j = 1; j < d; ++j) data.x(k, j) = normal(rng);
    const double z = data.x.row(k).dot(theta_true);
    const double p_one = detail::sigmoid(-z);
    data.y[k] = unif(rng) < p_one ? 1.0 : 0.0;
  }
  return data;
}

/// Synthetic linear-Gaussian data for GaussianModel.
inline Dataset generate_synthetic_gaussian(Index n, Index d, const Vector& theta_true, double noise_precision,
                                           std::uint64_t seed) {
  if (n < 1 || d < 1) throw DomainError("generate_synthetic_gaussian: n and d must be >= 1");
  if (theta_true.size() != d) throw DomainError("generate_synthetic_gaussian: theta_true has wrong dimension");
  Rng rng = make_rng(seed, 0);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double noise_sd = 1.0 / std::sqrt(noise_precision);
  Dataset data{RowMatrix(n, d), Vector(n)};
  for (Index k = 0; k < n; ++k) {
    data.x(k, 0) = 1.0;
    for (Index j = 1; j < d; ++j) data.x(k, j) = normal(rng);
    data.y[k] = data.x.row(k).dot(theta_true) + noise_sd * normal(rng);
  }
  return data;
}

}  // namespace hmcecs

#endif  // HMCECS_MODEL_HPP
