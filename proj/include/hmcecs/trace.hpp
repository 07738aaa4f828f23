#ifndef HMCECS_TRACE_HPP
#define HMCECS_TRACE_HPP

#include <hmcecs/control_variates.hpp>

#include <algorithm>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace hmcecs {

enum class SamplerKind { hmc, hmc_ecs, hmc_ecs_poisson };

inline std::string to_string(SamplerKind kind) {
  switch (kind) {
    case SamplerKind::hmc: return "hmc";
    case SamplerKind::hmc_ecs: return "hmc-ecs";
    case SamplerKind::hmc_ecs_poisson: return "hmc-ecs-poisson";
  }
  return "unknown";
}

inline SamplerKind parse_sampler_kind(const std::string& s) {
  if (s == "hmc") return SamplerKind::hmc;
  if (s == "hmc-ecs") return SamplerKind::hmc_ecs;
  if (s == "hmc-ecs-poisson") return SamplerKind::hmc_ecs_poisson;
  throw ConfigError("unknown sampler mode '" + s + "' (expected hmc, hmc-ecs or hmc-ecs-poisson)");
}

/// One recorded iteration. `evaluations` counts per-observation density
/// evaluations since the previous recorded row, so totals stay exact under
/// thinning. For the signed variant `ell_hat` holds log|L_hat| and
/// `sigma2_hat` is 0.
struct TraceRow {
  Index iteration = 0;
  Vector theta;
  int sign = 1;
  bool accepted_u = false;
  bool accepted_theta = false;
  double alpha_u = 1.0;
  double alpha_theta = 0.0;
  double ell_hat = 0.0;
  double sigma2_hat = 0.0;
  Index poisson_draws = 0;
  std::uint64_t evaluations = 0;
  double step_size = 0.0;
  Index steps = 0;
  double energy_change = 0.0;
  bool diverged = false;
  bool training = false;
  double wall_seconds = 0.0;
};

struct RefreshEvent {
  Index iteration = 0;  // refresh happened after this many iterations
  Vector center;
  double step_size = 0.0;
  double poisson_mean = 0.0;
};

struct AdaptationRecord {
  Index iteration = 0;
  double step_size = 0.0;
  double averaged_step_size = 0.0;
  Index steps = 0;
  double acceptance = 0.0;
};

/// Per-phase running totals over every iteration, recorded or not.
struct PhaseTotals {
  Index iterations = 0;
  std::uint64_t evaluations = 0;
  double alpha_u_sum = 0.0;
  double alpha_theta_sum = 0.0;
  Index accepted_u = 0;
  Index accepted_theta = 0;
  Index divergences = 0;
  Index negative_signs = 0;
  Index degenerate_proposals = 0;

  double mean_alpha_u() const { return iterations ? alpha_u_sum / static_cast<double>(iterations) : 0.0; }
  double mean_alpha_theta() const { return iterations ? alpha_theta_sum / static_cast<double>(iterations) : 0.0; }
};

/// Column-oriented chain history.
class ChainTrace {
 public:
  ChainTrace() = default;
  ChainTrace(SamplerKind kind, Index dim) : kind_(kind), dim_(dim) {}

  SamplerKind kind() const { return kind_; }
  Index dim() const { return dim_; }
  Index size() const { return static_cast<Index>(iteration_.size()); }

  void push(const TraceRow& row) {
    if (row.theta.size() != dim_) throw ConsistencyError("trace: draw dimension mismatch");
    iteration_.push_back(row.iteration);
    theta_.insert(theta_.end(), row.theta.data(), row.theta.data() + dim_);
    sign_.push_back(row.sign);
    accepted_u_.push_back(row.accepted_u);
    accepted_theta_.push_back(row.accepted_theta);
    alpha_u_.push_back(row.alpha_u);
    alpha_theta_.push_back(row.alpha_theta);
    ell_hat_.push_back(row.ell_hat);
    sigma2_hat_.push_back(row.sigma2_hat);
    poisson_draws_.push_back(row.poisson_draws);
    evaluations_.push_back(row.evaluations);
    step_size_.push_back(row.step_size);
    steps_.push_back(row.steps);
    energy_change_.push_back(row.energy_change);
    diverged_.push_back(row.diverged);
    training_.push_back(row.training);
    wall_seconds_.push_back(row.wall_seconds);
  }

  TraceRow row(Index i) const {
    TraceRow r;
    const auto k = static_cast<std::size_t>(i);
    r.iteration = iteration_[k];
    r.theta = draw(i);
    r.sign = sign_[k];
    r.accepted_u = accepted_u_[k];
    r.accepted_theta = accepted_theta_[k];
    r.alpha_u = alpha_u_[k];
    r.alpha_theta = alpha_theta_[k];
    r.ell_hat = ell_hat_[k];
    r.sigma2_hat = sigma2_hat_[k];
    r.poisson_draws = poisson_draws_[k];
    r.evaluations = evaluations_[k];
    r.step_size = step_size_[k];
    r.steps = steps_[k];
    r.energy_change = energy_change_[k];
    r.diverged = diverged_[k];
    r.training = training_[k];
    r.wall_seconds = wall_seconds_[k];
    return r;
  }

  Vector draw(Index i) const {
    return Eigen::Map<const Vector>(theta_.data() + static_cast<std::size_t>(i * dim_), dim_);
  }

  /// Index of the first recorded row of the sampling phase.
  Index sampling_begin() const {
    Index i = 0;
    while (i < size() && training_[static_cast<std::size_t>(i)]) ++i;
    return i;
  }

  /// Coordinate j of every row in [begin, end).
  std::vector<double> coordinate(Index j, Index begin, Index end) const {
    std::vector<double> out;
    out.reserve(static_cast<std::size_t>(std::max<Index>(0, end - begin)));
    for (Index i = begin; i < end; ++i) out.push_back(theta_[static_cast<std::size_t>(i * dim_ + j)]);
    return out;
  }
  std::vector<double> sampling_coordinate(Index j) const { return coordinate(j, sampling_begin(), size()); }

  const std::vector<Index>& iterations() const { return iteration_; }
  const std::vector<int>& signs() const { return sign_; }
  const std::vector<double>& alpha_u() const { return alpha_u_; }
  const std::vector<double>& alpha_theta() const { return alpha_theta_; }
  const std::vector<double>& ell_hat() const { return ell_hat_; }
  const std::vector<double>& sigma2_hat() const { return sigma2_hat_; }
  const std::vector<Index>& poisson_draws() const { return poisson_draws_; }
  const std::vector<std::uint64_t>& evaluations() const { return evaluations_; }
  const std::vector<double>& step_sizes() const { return step_size_; }
  const std::vector<Index>& steps() const { return steps_; }
  const std::vector<double>& energy_changes() const { return energy_change_; }
  const std::vector<bool>& accepted_u() const { return accepted_u_; }
  const std::vector<bool>& accepted_theta() const { return accepted_theta_; }
  const std::vector<bool>& diverged() const { return diverged_; }
  const std::vector<bool>& training() const { return training_; }
  const std::vector<double>& wall_seconds() const { return wall_seconds_; }

  // Run-level results.
  PhaseTotals training_totals;
  PhaseTotals sampling_totals;
  std::vector<RefreshEvent> refreshes;
  std::vector<AdaptationRecord> adaptation;
  double final_step_size = 0.0;
  Index final_steps = 0;
  double trajectory_length = 0.0;
  Matrix mass;
  Vector center;
  std::optional<ControlVariateCache> cache;
  double poisson_mean = 0.0;
  Index population = 0;
  Index subsample_size = 0;
  double wall_seconds_total = 0.0;

 private:
  SamplerKind kind_ = SamplerKind::hmc;
  Index dim_ = 0;
  std::vector<Index> iteration_;
  std::vector<double> theta_;
  std::vector<int> sign_;
  std::vector<bool> accepted_u_;
  std::vector<bool> accepted_theta_;
  std::vector<double> alpha_u_;
  std::vector<double> alpha_theta_;
  std::vector<double> ell_hat_;
  std::vector<double> sigma2_hat_;
  std::vector<Index> poisson_draws_;
  std::vector<std::uint64_t> evaluations_;
  std::vector<double> step_size_;
  std::vector<Index> steps_;
  std::vector<double> energy_change_;
  std::vector<bool> diverged_;
  std::vector<bool> training_;
  std::vector<double> wall_seconds_;
};

using TraceSink = std::function<void(const TraceRow&)>;

}  // namespace hmcecs

#endif  // HMCECS_TRACE_HPP
