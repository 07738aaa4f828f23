#ifndef HMCECS_PILOT_HPP
#define HMCECS_PILOT_HPP

#include <hmcecs/diagnostics.hpp>
#include <hmcecs/sampler.hpp>

#include <vector>

namespace hmcecs {

struct PilotSettings {
  std::vector<double> grid{0.5, 1.0, 1.5, 2.0, 2.5, 3.0};
  double step_size = 0.1;
  Index iterations = 500;
  SamplerKind sampler = SamplerKind::hmc;
};

struct PilotCandidate {
  double trajectory_length = 0.0;
  double mean_ess = 0.0;
  std::uint64_t evaluations = 0;
  double ess_per_evaluation = 0.0;
  bool failed = false;
  std::string failure;
};

struct PilotResult {
  double trajectory_length = 0.0;
  std::vector<PilotCandidate> candidates;
};

/// Short fixed-step runs over a grid of trajectory lengths; picks the one with
/// the highest mean ESS per density evaluation. Adaptation is off in the
/// pilots; the mass matrix comes from `base` (or the curvature at the center).
template <LinearPredictorModel M>
PilotResult pilot_trajectory_length(const SamplerConfig& base, const M& model, const Prior& prior,
                                    const PilotSettings& settings = {}) {
  if (settings.grid.empty()) throw ConfigError("pilot: empty trajectory-length grid");
  if (settings.iterations < kMinSeriesLength) {
    throw ConfigError("pilot: need at least " + std::to_string(kMinSeriesLength) + " iterations per pilot");
  }
  PilotResult result;
  double best = -1.0;
  for (double length : settings.grid) {
    if (!(length > 0.0)) throw ConfigError("pilot: trajectory lengths must be > 0");
    PilotCandidate cand;
    cand.trajectory_length = length;
    SamplerConfig cfg = base;
    cfg.trajectory_length = length;
    cfg.step_size = settings.step_size;
    cfg.n_train = 0;
    cfg.n_iter = settings.iterations;
    cfg.thin = 1;
    cfg.store_draws = true;
    cfg.sink = nullptr;
    try {
      const ChainTrace trace = run_sampler(settings.sampler, cfg, model, prior);
      if (trace.sampling_totals.divergences == trace.sampling_totals.iterations) {
        throw DivergenceError("every transition diverged");
      }
      const EfficiencyReport report = summarize(trace);
      cand.mean_ess = report.mean_ess;
      cand.evaluations = report.evaluations;
      cand.ess_per_evaluation = report.mean_ess / static_cast<double>(report.evaluations);
    } catch (const DivergenceError& e) {
      cand.failed = true;
      cand.failure = e.what();
    } catch (const DomainError& e) {
      cand.failed = true;
      cand.failure = e.what();
    }
    if (!cand.failed && cand.ess_per_evaluation > best) {
      best = cand.ess_per_evaluation;
      result.trajectory_length = length;
    }
    result.candidates.push_back(std::move(cand));
  }
  if (best < 0.0) {
    throw DivergenceError("pilot: every pilot run diverged; set the trajectory length (epsilon * L) manually");
  }
  return result;
}

}  // namespace hmcecs

#endif  // HMCECS_PILOT_HPP
