#ifndef HMCECS_SAMPLER_HPP
#define HMCECS_SAMPLER_HPP

#include <hmcecs/hamiltonian.hpp>
#include <hmcecs/poisson.hpp>
#include <hmcecs/subsample.hpp>
#include <hmcecs/trace.hpp>
#include <hmcecs/tuning.hpp>

#include <chrono>
#include <memory>
#include <optional>
#include <sstream>

namespace hmcecs {

enum class InitialCenter { mode, theta0 };

inline PoissonSettings default_poisson_settings() {
  PoissonSettings s;
  s.mu = 1.0;
  s.subsample_size = 0;  // 0: same as m
  s.blocks = 10;
  s.rho = 0.99;
  return s;
}

struct SamplerConfig {
  std::uint64_t seed = 1;
  std::uint64_t chain = 0;  // chains with the same seed use disjoint streams
  Index n_train = 1000;
  Index n_iter = 1000;
  Index subsample_size = 1000;  // m
  Index blocks = 100;           // G
  Index u_updates = 1;          // block updates of u per iteration
  BlockSelection block_selection = BlockSelection::random;
  ProxyOrder proxy_order = ProxyOrder::second;
  double trajectory_length = 2.0;  // epsilon * L
  std::optional<double> step_size;
  std::optional<Matrix> mass;
  std::optional<Vector> center;
  std::optional<Vector> theta0;
  InitialCenter initial_center = InitialCenter::mode;
  Index refresh_period = 100;
  double window_fraction = 0.1;
  bool adapt_center = true;  // false: keep the initial center and mass for the whole run
  DualAveragingSettings dual_averaging;
  bool jitter_steps = false;
  Index max_steps = 1024;
  double divergence_threshold = 1000.0;
  double min_step_size = 1e-10;
  Index thin = 1;
  bool store_draws = true;
  PoissonSettings poisson = default_poisson_settings();
  bool adapt_poisson_mean = true;
  TraceSink sink;

  Index poisson_subsample_size() const {
    return poisson.subsample_size > 0 ? poisson.subsample_size : subsample_size;
  }

  void validate(SamplerKind kind, Index n, Index d) const {
    auto fail = [](const std::string& msg) { throw ConfigError(msg); };
    if (n_train < 0 || n_iter < 0) fail("N and N_train must be >= 0");
    if (thin < 1) fail("thin must be >= 1");
    if (!(trajectory_length > 0.0) || !std::isfinite(trajectory_length)) fail("trajectory length must be > 0");
    if (max_steps < 1) fail("max_steps must be >= 1");
    if (refresh_period < 1) fail("refresh period must be >= 1");
    if (n_train > 0 && refresh_period > n_train) fail("refresh period must not exceed N_train");
    if (!(window_fraction > 0.0 && window_fraction <= 1.0)) fail("window fraction must be in (0, 1]");
    if (!(divergence_threshold > 0.0)) fail("divergence threshold must be > 0");
    dual_averaging.validate();
    if (step_size && (!(*step_size > 0.0) || !std::isfinite(*step_size))) fail("step size must be > 0");
    if (mass && (mass->rows() != d || mass->cols() != d)) fail("mass matrix must be d x d");
    if (center && (center->size() != d || !center->allFinite())) fail("center must be a finite d-vector");
    if (theta0 && (theta0->size() != d || !theta0->allFinite())) fail("theta0 must be a finite d-vector");
    if (kind == SamplerKind::hmc_ecs) {
      if (subsample_size < 1 || subsample_size > n) fail("m must satisfy 1 <= m <= n");
      if (blocks < 1) fail("G must be >= 1");
      if (subsample_size % blocks != 0) {
        fail("m = " + std::to_string(subsample_size) + " is not divisible by G = " + std::to_string(blocks));
      }
      if (u_updates < 0) fail("u updates per iteration must be >= 0");
    }
    if (kind == SamplerKind::hmc_ecs_poisson) {
      const Index mb = poisson_subsample_size();
      if (mb < 1 || mb > n) fail("m_b must satisfy 1 <= m_b <= n");
      if (poisson.blocks < 1 || mb % poisson.blocks != 0) fail("m_b must be divisible by the Poisson block count");
      if (!(poisson.mu > 0.0 && poisson.mu <= 700.0)) fail("mu must be in (0, 700]");
      if (!(std::abs(poisson.rho) < 1.0)) fail("|rho| must be < 1");
      if (!(poisson.rule.c >= 0.0)) fail("lower-bound constant c must be >= 0");
    }
  }
};

/// Exact potential -l(theta) - log p(theta); each evaluation costs n.
template <LinearPredictorModel M>
class FullDataPotential {
 public:
  FullDataPotential(const M& model, const Prior& prior) : model_(&model), prior_(&prior) {}

  EnergyEvaluation evaluate(const Vector& theta) {
    evaluations += static_cast<std::uint64_t>(model_->data().size());
    const LoglikAndGradient lg = full_loglik_and_gradient(*model_, theta);
    return {-lg.value - log_prior(*prior_, theta), -lg.gradient - grad_log_prior(*prior_, theta)};
  }

  std::uint64_t evaluations = 0;

 private:
  const M* model_;
  const Prior* prior_;
};

/// Estimated potential at a fixed subsample u; keeps the last evaluation so
/// the residuals at the trajectory end can be reused.
template <LinearPredictorModel M>
class SubsamplePotential {
 public:
  SubsamplePotential(const ControlVariateCache& cache, const M& model, const Prior& prior, std::span<const Index> u)
      : cache_(&cache), model_(&model), prior_(&prior), u_(u) {}

  EnergyEvaluation evaluate(const Vector& theta) {
    evaluations += static_cast<std::uint64_t>(u_.size());
    last = evaluate_potential(*cache_, *model_, *prior_, theta, u_, true);
    last_theta = theta;
    return {last.value, last.gradient};
  }

  std::uint64_t evaluations = 0;
  PotentialEvaluation last;
  Vector last_theta;

 private:
  const ControlVariateCache* cache_;
  const M* model_;
  const Prior* prior_;
  std::span<const Index> u_;
};

/// -log|L_hat| - log p at fixed auxiliary randomness.
template <LinearPredictorModel M>
class PoissonPotential {
 public:
  PoissonPotential(const ControlVariateCache& cache, const M& model, const Prior& prior, const PoissonAuxiliary& aux,
                   const PoissonSettings& settings)
      : cache_(&cache), model_(&model), prior_(&prior), aux_(&aux), settings_(&settings) {}

  EnergyEvaluation evaluate(const Vector& theta) {
    evaluations += static_cast<std::uint64_t>((aux_->draws + 1) * settings_->subsample_size);
    last = evaluate_poisson_potential(*cache_, *model_, *prior_, theta, *aux_, *settings_, true);
    return {last.value, last.gradient};
  }

  std::uint64_t evaluations = 0;
  PoissonPotentialEvaluation last;

 private:
  const ControlVariateCache* cache_;
  const M* model_;
  const Prior* prior_;
  const PoissonAuxiliary* aux_;
  const PoissonSettings* settings_;
};

struct ThetaUpdate {
  TransitionResult transition;
  std::uint64_t evaluations = 0;
};

/// Step 2 of the Gibbs sweep for the perturbed target: HMC on the estimated
/// potential with u held fixed. On acceptance `state` is moved to the new
/// theta using the residuals already computed at the trajectory end.
template <LinearPredictorModel M>
ThetaUpdate gibbs_update_theta_p(SubsampleState& state, const HamiltonianSpec& spec, const ControlVariateCache& cache,
                                 const M& model, const Prior& prior, const Vector& theta, Rng& rng,
                                 double divergence_threshold = 1000.0) {
  state.check_consistent(cache, theta);
  SubsamplePotential<M> target(cache, model, prior, state.indices());
  ThetaUpdate out;
  out.transition = hmc_transition(spec, theta, target, rng, divergence_threshold);
  out.evaluations = target.evaluations;
  if (out.transition.accepted) {
    if (target.last_theta != out.transition.position) {
      throw ConsistencyError("trajectory end does not match the last potential evaluation");
    }
    const Vector& r = target.last.residuals;
    state.assign(cache, out.transition.position, sum_proxy(cache, out.transition.position),
                 {r.data(), static_cast<std::size_t>(r.size())});
  }
  return out;
}

namespace detail {

inline std::string describe_state(Index iteration, double step_size, const Vector& theta) {
  std::ostringstream os;
  os.precision(17);
  os << "iteration " << iteration << ", step size " << step_size << ", theta = [";
  for (Index j = 0; j < theta.size(); ++j) os << (j ? ", " : "") << theta[j];
  os << "]";
  return os.str();
}

inline std::shared_ptr<const MassMatrix> make_mass(const Matrix& m, bool supplied) {
  try {
    return std::make_shared<const MassMatrix>(m);
  } catch (const DomainError& e) {
    if (supplied) throw ConfigError(std::string("supplied mass matrix: ") + e.what());
    throw DivergenceError(e.what());
  }
}

/// Re-derives G from the latent after a change of mu and extends the pool.
inline void rescale_poisson_auxiliary(PoissonAuxiliary& aux, Index population, const PoissonSettings& s, Rng& rng) {
  aux.draws = poisson_quantile(standard_normal_cdf(aux.latent), s.mu);
  while (static_cast<Index>(aux.pool.size()) < aux.draws) {
    aux.pool.push_back(draw_indices(population, s.subsample_size, rng));
  }
}

template <LinearPredictorModel M>
double pilot_variance(const ControlVariateCache& cache, const M& model, std::span<const Vector> window,
                      std::span<const Index> pilot) {
  const std::size_t probes = std::min<std::size_t>(10, window.size());
  double total = 0.0;
  for (std::size_t i = 0; i < probes; ++i) {
    const Vector& theta = window[window.size() - 1 - i * window.size() / probes];
    total += difference_terms(cache, model, theta, pilot, false).sigma2_hat;
  }
  return total / static_cast<double>(probes);
}

template <LinearPredictorModel M>
ChainTrace run_chain(SamplerKind kind, const SamplerConfig& config, const M& model, const Prior& prior) {
  using clock = std::chrono::steady_clock;
  const auto started = clock::now();
  auto elapsed = [&] { return std::chrono::duration<double>(clock::now() - started).count(); };

  const Dataset& data = model.data();
  const Index n = data.size();
  const Index d = data.dim();
  config.validate(kind, n, d);

  // Shared-seed protocol: theta, momentum, accept draws on one stream, u (or
  // Poisson randomness) on another, so samplers that differ only in Step 1
  // consume identical theta randomness.
  Rng theta_rng = make_rng(config.seed, 2 * config.chain);
  Rng aux_rng = make_rng(config.seed, 2 * config.chain + 1);

  ChainTrace trace(kind, d);
  trace.population = n;
  trace.trajectory_length = config.trajectory_length;
  std::uint64_t setup_evaluations = 0;

  Vector theta = config.theta0 ? *config.theta0 : Vector::Zero(d);
  Vector center;
  if (config.center) {
    center = *config.center;
  } else if (config.initial_center == InitialCenter::mode) {
    center = find_posterior_mode(model, prior, theta);
  } else {
    center = theta;
  }

  ControlVariateCache cache;
  Matrix mass;
  if (kind == SamplerKind::hmc && config.mass) {
    mass = *config.mass;
  } else {
    ControlVariateCache hessian_cache = build_cache(model, center, {ProxyOrder::second});
    setup_evaluations += static_cast<std::uint64_t>(n);
    mass = config.mass ? *config.mass : mass_from_cache(hessian_cache, prior);
    if (config.proxy_order == ProxyOrder::second) {
      cache = std::move(hessian_cache);
    } else {
      cache = build_cache(model, center, {config.proxy_order});
      setup_evaluations += static_cast<std::uint64_t>(n);
    }
  }
  auto mass_ptr = make_mass(mass, config.mass.has_value());

  PoissonSettings poisson = config.poisson;
  poisson.subsample_size = config.poisson_subsample_size();

  std::optional<SubsampleState> state;
  PoissonAuxiliary aux;
  PoissonPotentialEvaluation poisson_current;
  auto evaluate_poisson_current = [&]() {
    poisson_current = evaluate_poisson_potential(cache, model, prior, theta, aux, poisson, false);
    return static_cast<std::uint64_t>((aux.draws + 1) * poisson.subsample_size);
  };

  if (kind == SamplerKind::hmc_ecs) {
    state.emplace(n, config.subsample_size, config.blocks, aux_rng);
    state->evaluate(cache, model, theta);
    setup_evaluations += static_cast<std::uint64_t>(config.subsample_size);
  } else if (kind == SamplerKind::hmc_ecs_poisson) {
    for (int attempt = 0;; ++attempt) {
      aux = draw_poisson_auxiliary(n, poisson, aux_rng);
      setup_evaluations += evaluate_poisson_current();
      if (!poisson_current.estimate.degenerate) break;
      if (attempt >= 100) throw DivergenceError("could not draw a non-degenerate initial Poisson estimate");
    }
  }

  // Step-size initialisation.
  double eps = 0.0;
  if (config.step_size) {
    eps = *config.step_size;
  } else if (kind == SamplerKind::hmc) {
    FullDataPotential<M> target(model, prior);
    eps = find_initial_step_size(target, mass_ptr, theta, theta_rng);
    setup_evaluations += target.evaluations;
  } else if (kind == SamplerKind::hmc_ecs) {
    SubsamplePotential<M> target(cache, model, prior, state->indices());
    eps = find_initial_step_size(target, mass_ptr, theta, theta_rng);
    setup_evaluations += target.evaluations;
  } else {
    PoissonPotential<M> target(cache, model, prior, aux, poisson);
    eps = find_initial_step_size(target, mass_ptr, theta, theta_rng);
    setup_evaluations += target.evaluations;
  }
  trace.training_totals.evaluations += setup_evaluations;

  std::optional<DualAveraging> adapt;
  if (config.n_train > 0) adapt.emplace(eps, config.dual_averaging);

  std::vector<Vector> training_draws;
  training_draws.reserve(static_cast<std::size_t>(config.n_train));
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::uint64_t pending = 0;
  const Index total = config.n_train + config.n_iter;

  for (Index it = 0; it < total; ++it) {
    const bool training = it < config.n_train;
    if (it == config.n_train && adapt) eps = adapt->final_step_size();
    PhaseTotals& phase = training ? trace.training_totals : trace.sampling_totals;
    TraceRow row;
    row.iteration = it;
    row.training = training;
    std::uint64_t evals = 0;

    // Step 1: auxiliary randomness given theta.
    if (kind == SamplerKind::hmc_ecs) {
      double alpha_sum = 0.0;
      for (Index r = 0; r < config.u_updates; ++r) {
        const SubsampleUpdate upd = gibbs_update_u(*state, cache, model, theta, aux_rng, config.block_selection);
        evals += static_cast<std::uint64_t>(state->block_size());
        alpha_sum += upd.acceptance_probability;
        row.accepted_u = row.accepted_u || upd.accepted;
      }
      row.alpha_u = config.u_updates > 0 ? alpha_sum / static_cast<double>(config.u_updates) : 1.0;
    } else if (kind == SamplerKind::hmc_ecs_poisson) {
      const PoissonAuxiliary proposal = propose_poisson_auxiliary(aux, n, poisson, aux_rng);
      const PoissonPotentialEvaluation cand =
          evaluate_poisson_potential(cache, model, prior, theta, proposal, poisson, false);
      evals += static_cast<std::uint64_t>((proposal.draws + 1) * poisson.subsample_size);
      const double draw = unif(aux_rng);
      if (cand.estimate.degenerate) {
        ++phase.degenerate_proposals;
        row.alpha_u = 0.0;
      } else {
        const double log_ratio = cand.estimate.log_abs - poisson_current.estimate.log_abs;
        row.alpha_u = std::isnan(log_ratio) ? 0.0 : std::min(1.0, std::exp(log_ratio));
        if (draw < row.alpha_u) {
          aux = proposal;
          poisson_current = cand;
          row.accepted_u = true;
        }
      }
    }

    // Step 2: theta and momentum given the auxiliary randomness.
    Index steps = steps_for_length(config.trajectory_length, eps, config.max_steps);
    if (config.jitter_steps) {
      const double factor = 0.9 + 0.2 * unif(theta_rng);
      steps = std::max<Index>(1, static_cast<Index>(std::lround(static_cast<double>(steps) * factor)));
    }
    const HamiltonianSpec spec(mass_ptr, eps, steps);
    TransitionResult tr;
    if (kind == SamplerKind::hmc) {
      FullDataPotential<M> target(model, prior);
      tr = hmc_transition(spec, theta, target, theta_rng, config.divergence_threshold);
      evals += target.evaluations;
    } else if (kind == SamplerKind::hmc_ecs) {
      const ThetaUpdate upd =
          gibbs_update_theta_p(*state, spec, cache, model, prior, theta, theta_rng, config.divergence_threshold);
      tr = upd.transition;
      evals += upd.evaluations;
    } else {
      PoissonPotential<M> target(cache, model, prior, aux, poisson);
      tr = hmc_transition(spec, theta, target, theta_rng, config.divergence_threshold);
      evals += target.evaluations;
      if (tr.accepted) {
        poisson_current = target.last;
        poisson_current.gradient = Vector();
      }
    }
    theta = tr.position;

    row.theta = theta;
    row.accepted_theta = tr.accepted;
    row.alpha_theta = tr.acceptance_probability;
    row.step_size = eps;
    row.steps = steps;
    row.energy_change = tr.energy_change;
    row.diverged = tr.diverged;

    // Adaptation (training only).
    if (training) {
      const double next = adapt->update(tr.acceptance_probability);
      trace.adaptation.push_back({it, next, std::exp(adapt->averaged_log_step_size()), steps,
                                  tr.acceptance_probability});
      if (!(next >= config.min_step_size) || !std::isfinite(next)) {
        throw DivergenceError("step size collapsed during adaptation at " + describe_state(it, next, theta));
      }
      eps = next;
      training_draws.push_back(theta);
      const Index done = it + 1;
      if (config.adapt_center && done % config.refresh_period == 0) {
        const auto window_size = static_cast<Index>(
            std::ceil(config.window_fraction * static_cast<double>(done) - 1e-9));
        const std::span<const Vector> window(training_draws.data() + (done - std::max<Index>(1, window_size)),
                                             static_cast<std::size_t>(std::max<Index>(1, window_size)));
        CenterRefresh refreshed;
        try {
          refreshed = refresh_center(window, model, prior, config.proxy_order);
        } catch (const DivergenceError& e) {
          throw DivergenceError(std::string(e.what()) + " at " + describe_state(it, eps, theta));
        }
        evals += static_cast<std::uint64_t>(n) * (config.proxy_order == ProxyOrder::second ? 1 : 2);
        cache = std::move(refreshed.cache);
        center = refreshed.center;
        if (!config.mass) mass_ptr = make_mass(refreshed.mass, false);
        if (kind == SamplerKind::hmc_ecs) {
          state->evaluate(cache, model, theta);
          evals += static_cast<std::uint64_t>(config.subsample_size);
        } else if (kind == SamplerKind::hmc_ecs_poisson) {
          if (config.adapt_poisson_mean) {
            const double var = pilot_variance(cache, model, window, aux.pilot);
            evals += static_cast<std::uint64_t>(std::min<std::size_t>(10, window.size())) *
                     static_cast<std::uint64_t>(poisson.subsample_size);
            const double c = poisson.rule.c;
            poisson.mu = std::clamp(std::sqrt(c * c + 1.0) * std::sqrt(var), 0.1, 700.0);
            rescale_poisson_auxiliary(aux, n, poisson, aux_rng);
          }
          evals += evaluate_poisson_current();
          if (poisson_current.estimate.degenerate) {
            throw DivergenceError("degenerate Poisson estimate after refresh at " + describe_state(it, eps, theta));
          }
        }
        trace.refreshes.push_back({done, center, eps, poisson.mu});
      }
    }

    if (kind == SamplerKind::hmc_ecs) {
      row.ell_hat = state->estimate().ell_hat;
      row.sigma2_hat = state->estimate().sigma2_hat;
    } else if (kind == SamplerKind::hmc_ecs_poisson) {
      row.sign = poisson_current.estimate.sign;
      row.ell_hat = poisson_current.estimate.log_abs;
      row.poisson_draws = aux.draws;
    }

    ++phase.iterations;
    phase.evaluations += evals;
    phase.alpha_u_sum += row.alpha_u;
    phase.alpha_theta_sum += row.alpha_theta;
    phase.accepted_u += row.accepted_u ? 1 : 0;
    phase.accepted_theta += row.accepted_theta ? 1 : 0;
    phase.divergences += row.diverged ? 1 : 0;
    phase.negative_signs += row.sign < 0 ? 1 : 0;

    pending += evals;
    if (it % config.thin == 0) {
      row.evaluations = pending;
      pending = 0;
      row.wall_seconds = elapsed();
      if (config.sink) config.sink(row);
      if (config.store_draws) trace.push(row);
    }
  }

  trace.final_step_size = eps;
  trace.final_steps = steps_for_length(config.trajectory_length, eps, config.max_steps);
  trace.mass = mass_ptr->matrix();
  trace.center = center;
  if (kind != SamplerKind::hmc || !config.mass) trace.cache = cache;
  trace.poisson_mean = kind == SamplerKind::hmc_ecs_poisson ? poisson.mu : 0.0;
  trace.subsample_size = kind == SamplerKind::hmc       ? n
                         : kind == SamplerKind::hmc_ecs ? config.subsample_size
                                                        : poisson.subsample_size;
  trace.wall_seconds_total = elapsed();
  return trace;
}

}  // namespace detail

/// Full-data HMC with the same adaptation schedule as the subsampling samplers.
template <LinearPredictorModel M>
ChainTrace run_hmc_full(const SamplerConfig& config, const M& model, const Prior& prior) {
  return detail::run_chain(SamplerKind::hmc, config, model, prior);
}

/// HMC-within-Gibbs on the perturbed target: block update of u, then HMC on
/// the estimated Hamiltonian with u fixed.
template <LinearPredictorModel M>
ChainTrace run_hmc_ecs(const SamplerConfig& config, const M& model, const Prior& prior) {
  return detail::run_chain(SamplerKind::hmc_ecs, config, model, prior);
}

/// Exact variant on |L_hat| with recorded signs.
template <LinearPredictorModel M>
ChainTrace run_hmc_ecs_poisson(const SamplerConfig& config, const M& model, const Prior& prior) {
  return detail::run_chain(SamplerKind::hmc_ecs_poisson, config, model, prior);
}

template <LinearPredictorModel M>
ChainTrace run_sampler(SamplerKind kind, const SamplerConfig& config, const M& model, const Prior& prior) {
  return detail::run_chain(kind, config, model, prior);
}

}  // namespace hmcecs

#endif  // HMCECS_SAMPLER_HPP
