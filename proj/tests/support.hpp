// Independent oracles shared by the test suites. Nothing here calls into the
// library's likelihood or estimator code.
#ifndef HMCECS_TESTS_SUPPORT_HPP
#define HMCECS_TESTS_SUPPORT_HPP

#include <hmcecs/hmcecs.hpp>

#include <Eigen/LU>

#include <cmath>
#include <functional>
#include <random>

namespace hmcecs::test {

inline Vector random_vector(Index d, Rng& rng, double sd = 1.0) {
  std::normal_distribution<double> normal(0.0, sd);
  Vector v(d);
  for (Index j = 0; j < d; ++j) v[j] = normal(rng);
  return v;
}

inline double fd_step(double x) { return 1e-5 * (1.0 + std::abs(x)); }

/// Central finite-difference gradient.
inline Vector fd_gradient(const std::function<double(const Vector&)>& f, const Vector& x) {
  Vector g(x.size());
  for (Index j = 0; j < x.size(); ++j) {
    const double h = fd_step(x[j]);
    Vector a = x, b = x;
    a[j] += h;
    b[j] -= h;
    g[j] = (f(a) - f(b)) / (2.0 * h);
  }
  return g;
}

/// Central finite-difference Jacobian; column j is d g / d x_j.
inline Matrix fd_jacobian(const std::function<Vector(const Vector&)>& g, const Vector& x) {
  const Index rows = g(x).size();
  Matrix jac(rows, x.size());
  for (Index j = 0; j < x.size(); ++j) {
    const double h = fd_step(x[j]);
    Vector a = x, b = x;
    a[j] += h;
    b[j] -= h;
    jac.col(j) = (g(a) - g(b)) / (2.0 * h);
  }
  return jac;
}

inline double rel_error(const Eigen::MatrixXd& got, const Eigen::MatrixXd& want) {
  return (got - want).norm() / std::max(want.norm(), 1e-300);
}

inline double rel_error(double got, double want) { return std::abs(got - want) / std::max(std::abs(want), 1e-300); }

/// log P(y | z) under P(y = 1) = 1 / (1 + e^z), written directly from the
/// probabilities. Extended precision keeps log(1 - p) accurate up to |z| ~ 30.
inline double naive_logistic_loglik(double y, double z) {
  const long double p_one = 1.0L / (1.0L + std::exp(static_cast<long double>(z)));
  return static_cast<double>(y * std::log(p_one) + (1.0L - y) * std::log(1.0L - p_one));
}

/// Full-data log-likelihood of a logistic dataset from the naive formula.
inline double naive_loglik(const Dataset& data, const Vector& theta) {
  double s = 0.0;
  for (Index k = 0; k < data.size(); ++k) s += naive_logistic_loglik(data.y[k], data.x.row(k).dot(theta));
  return s;
}

/// Small random logistic dataset with an intercept column, independent of
/// the library's generator.
inline Dataset random_logistic_data(Index n, Index d, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, scale);
  std::bernoulli_distribution coin(0.5);
  Dataset data;
  data.x.resize(n, d);
  data.y.resize(n);
  for (Index k = 0; k < n; ++k) {
    data.x(k, 0) = 1.0;
    for (Index j = 1; j < d; ++j) data.x(k, j) = normal(rng);
    data.y[k] = coin(rng) ? 1.0 : 0.0;
  }
  return data;
}

/// Linear-Gaussian dataset (quadratic log-likelihood).
inline Dataset random_gaussian_data(Index n, Index d, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Dataset data;
  data.x.resize(n, d);
  data.y.resize(n);
  for (Index k = 0; k < n; ++k) {
    for (Index j = 0; j < d; ++j) data.x(k, j) = normal(rng);
    data.y[k] = normal(rng);
  }
  return data;
}

inline std::vector<Index> all_indices(Index n) {
  std::vector<Index> u(static_cast<std::size_t>(n));
  for (Index k = 0; k < n; ++k) u[static_cast<std::size_t>(k)] = k;
  return u;
}

/// Stationary AR(1) series x_t = phi x_{t-1} + e_t.
inline std::vector<double> ar1_series(std::size_t n, double phi, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> x(n);
  double v = normal(rng) / std::sqrt(1.0 - phi * phi);
  for (auto& e : x) {
    v = phi * v + normal(rng);
    e = v;
  }
  return x;
}

}  // namespace hmcecs::test

#endif  // HMCECS_TESTS_SUPPORT_HPP
