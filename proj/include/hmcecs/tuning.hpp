#ifndef HMCECS_TUNING_HPP
#define HMCECS_TUNING_HPP

#include <hmcecs/control_variates.hpp>
#include <hmcecs/hamiltonian.hpp>

#include <Eigen/Cholesky>

#include <cmath>
#include <span>
#include <vector>

namespace hmcecs {

struct DualAveragingSettings {
  double target_acceptance = 0.8;  // delta
  double gamma = 0.05;
  double t0 = 10.0;
  double kappa = 0.75;

  void validate() const {
    if (!(target_acceptance > 0.0 && target_acceptance < 1.0)) throw ConfigError("dual averaging: delta must be in (0,1)");
    if (!(gamma > 0.0)) throw ConfigError("dual averaging: gamma must be > 0");
    if (!(t0 >= 0.0)) throw ConfigError("dual averaging: t0 must be >= 0");
    if (!(kappa > 0.5 && kappa <= 1.0)) throw ConfigError("dual averaging: kappa must be in (0.5, 1]");
  }
};

/// Step-size adaptation toward a target acceptance rate:
///   H_t = (1 - 1/(t + t0)) H_{t-1} + (delta - alpha_t) / (t + t0)
///   x_t = mu - sqrt(t) / gamma * H_t
///   xbar_t = t^-kappa x_t + (1 - t^-kappa) xbar_{t-1}
/// with anchor mu = log(10 eps0).
class DualAveraging {
 public:
  explicit DualAveraging(double initial_step_size, DualAveragingSettings settings = {})
      : settings_(settings), anchor_(std::log(10.0 * initial_step_size)), x_(std::log(initial_step_size)) {
    settings_.validate();
    if (!(initial_step_size > 0.0)) throw ConfigError("dual averaging: initial step size must be > 0");
  }

  double update(double acceptance) {
    if (!(acceptance >= 0.0 && acceptance <= 1.0)) acceptance = 0.0;
    ++t_;
    const double t = static_cast<double>(t_);
    const double w = 1.0 / (t + settings_.t0);
    h_bar_ = (1.0 - w) * h_bar_ + w * (settings_.target_acceptance - acceptance);
    x_ = anchor_ - std::sqrt(t) / settings_.gamma * h_bar_;
    const double eta = std::pow(t, -settings_.kappa);
    x_bar_ = eta * x_ + (1.0 - eta) * x_bar_;
    return step_size();
  }

  Index iteration() const { return t_; }
  double log_step_size() const { return x_; }
  double averaged_log_step_size() const { return x_bar_; }
  double statistic() const { return h_bar_; }
  double step_size() const { return std::exp(x_); }
  /// Step size to freeze at the end of training.
  double final_step_size() const { return t_ == 0 ? std::exp(x_) : std::exp(x_bar_); }
  const DualAveragingSettings& settings() const { return settings_; }

 private:
  DualAveragingSettings settings_;
  double anchor_;
  Index t_ = 0;
  double x_;
  double x_bar_ = 0.0;
  double h_bar_ = 0.0;
};

/// Number of leapfrog steps giving trajectory length ~ `length` at `step_size`.
inline Index steps_for_length(double length, double step_size, Index max_steps) {
  const double raw = std::round(length / step_size);
  if (!(raw >= 1.0)) return 1;
  return raw > static_cast<double>(max_steps) ? max_steps : static_cast<Index>(raw);
}

/// Makes `mass` positive definite by adding jitter 1e-8 (1 + max diag) I,
/// escalated tenfold, at most 10 times.
inline Matrix regularize_mass(const Matrix& mass) {
  Matrix m = 0.5 * (mass + mass.transpose());
  if (!m.allFinite()) throw DivergenceError("mass matrix has non-finite entries");
  Eigen::LLT<Matrix> llt(m);
  if (llt.info() == Eigen::Success) return m;
  double jitter = 1e-8 * (1.0 + m.diagonal().maxCoeff());
  for (int attempt = 0; attempt < 10; ++attempt) {
    Matrix trial = m;
    trial.diagonal().array() += jitter;
    llt.compute(trial);
    if (llt.info() == Eigen::Success) return trial;
    jitter *= 10.0;
  }
  throw DivergenceError("mass matrix is not positive definite even after jitter");
}

/// Negative log-posterior Hessian from the cached likelihood Hessian sum.
inline Matrix mass_from_cache(const ControlVariateCache& cache, const Prior& prior) {
  if (cache.order != ProxyOrder::second) {
    throw ConfigError("mass_from_cache needs a second-order cache");
  }
  Matrix m = -cache.hessian_sum;
  m.diagonal().array() += prior.precision();
  return regularize_mass(m);
}

struct CenterRefresh {
  Vector center;
  Matrix mass;
  ControlVariateCache cache;
};

/// New center = mean of `window`; the mass matrix is the negative
/// log-posterior Hessian at the center (one full pass); the control-variate
/// cache is rebuilt at the same center so the two always agree.
template <LinearPredictorModel M>
CenterRefresh refresh_center(std::span<const Vector> window, const M& model, const Prior& prior,
                             ProxyOrder order = ProxyOrder::second) {
  if (window.empty()) throw DomainError("refresh_center: empty window");
  // Mean as front + average deviation, so a constant window returns that value exactly.
  const Vector& front = window.front();
  Vector shift = Vector::Zero(front.size());
  for (const auto& theta : window) shift += theta - front;
  const Vector center = front + shift / static_cast<double>(window.size());
  CenterRefresh out;
  out.center = center;
  ControlVariateCache hessian_cache = build_cache(model, center, {ProxyOrder::second});
  out.mass = mass_from_cache(hessian_cache, prior);
  out.cache = order == ProxyOrder::second ? std::move(hessian_cache) : build_cache(model, center, {order});
  return out;
}

/// Newton iterations with step halving on the full-data log posterior.
template <LinearPredictorModel M>
Vector find_posterior_mode(const M& model, const Prior& prior, const Vector& start, int max_iterations = 100,
                           double gradient_tolerance = 1e-8) {
  Vector theta = start;
  auto objective = [&](const Vector& t) { return full_loglik(model, t) + log_prior(prior, t); };
  double value = objective(theta);
  for (int it = 0; it < max_iterations; ++it) {
    const LoglikAndGradient lg = full_loglik_and_gradient(model, theta);
    const Vector grad = lg.gradient + grad_log_prior(prior, theta);
    const double scale = 1.0 + static_cast<double>(model.data().size());
    if (grad.norm() <= gradient_tolerance * scale) break;
    Matrix neg_hess = -full_hessian(model, theta);
    neg_hess.diagonal().array() += prior.precision();
    const Vector step = regularize_mass(neg_hess).llt().solve(grad);
    double t = 1.0;
    bool improved = false;
    for (int halving = 0; halving < 40; ++halving, t *= 0.5) {
      const Vector trial = theta + t * step;
      const double v = objective(trial);
      if (std::isfinite(v) && v >= value) {
        theta = trial;
        value = v;
        improved = true;
        break;
      }
    }
    if (!improved) break;
  }
  return theta;
}

/// Initial step size by doubling/halving until one leapfrog step from theta
/// crosses acceptance 1/2.
template <PotentialTarget Target>
double find_initial_step_size(Target& target, std::shared_ptr<const MassMatrix> mass, const Vector& theta, Rng& rng,
                              double start = 1.0) {
  double eps = start;
  const Vector p0 = mass->sample_momentum(rng);
  const EnergyEvaluation e0 = target.evaluate(theta);
  const double h0 = e0.potential + mass->kinetic(p0);
  auto log_accept = [&](double step) {
    const HamiltonianSpec spec(mass, step, 1);
    const LeapfrogResult lf = leapfrog(spec, PhasePoint{theta, p0}, [&](const Vector& x) {
      return x == theta ? e0.gradient : target.evaluate(x).gradient;
    });
    if (lf.diverged) return -std::numeric_limits<double>::infinity();
    const double h1 = target.evaluate(lf.end.position).potential + mass->kinetic(lf.end.momentum);
    const double v = h0 - h1;
    return std::isfinite(v) ? v : -std::numeric_limits<double>::infinity();
  };
  double la = log_accept(eps);
  const double direction = la > std::log(0.5) ? 1.0 : -1.0;
  for (int i = 0; i < 100; ++i) {
    if (direction > 0 ? !(la > std::log(0.5)) : !(la < std::log(0.5))) break;
    eps *= std::pow(2.0, direction);
    if (eps < 1e-12 || eps > 1e6) break;
    la = log_accept(eps);
  }
  if (eps < 1e-12) throw DivergenceError("initial step size search collapsed below 1e-12");
  return eps;
}

}  // namespace hmcecs

#endif  // HMCECS_TUNING_HPP
