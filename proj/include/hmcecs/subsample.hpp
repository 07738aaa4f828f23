#ifndef HMCECS_SUBSAMPLE_HPP
#define HMCECS_SUBSAMPLE_HPP

#include <hmcecs/estimators.hpp>
#include <hmcecs/poisson.hpp>

#include <algorithm>
#include <cmath>
#include <vector>

namespace hmcecs {

enum class BlockSelection { random, cyclic };

/// Subsample indices u stored as G contiguous blocks of m / G indices, with
/// per-block residual moments at the current (theta, u). Refreshing one block
/// only touches m / G observations; the block moments are merged, never
/// updated by subtraction, so the maintained estimate does not drift.
class SubsampleState {
 public:
  SubsampleState(Index population, Index size, Index blocks, Rng& rng)
      : SubsampleState(population, validated_draw(population, size, blocks, rng), blocks) {}

  SubsampleState(Index population, std::vector<Index> indices, Index blocks)
      : population_(population), indices_(std::move(indices)), blocks_(blocks) {
    const auto m = static_cast<Index>(indices_.size());
    validate_shape(population, m, blocks);
    for (Index k : indices_) {
      if (k < 0 || k >= population) throw DomainError("subsample state: index out of range");
    }
    block_moments_.resize(static_cast<std::size_t>(blocks_));
  }

  Index population() const { return population_; }
  Index size() const { return static_cast<Index>(indices_.size()); }
  Index block_count() const { return blocks_; }
  Index block_size() const { return size() / blocks_; }
  Index cursor() const { return cursor_; }

  std::span<const Index> indices() const { return indices_; }
  std::span<const Index> block(Index b) const {
    return std::span<const Index>(indices_).subspan(static_cast<std::size_t>(b * block_size()),
                                                     static_cast<std::size_t>(block_size()));
  }

  bool has_estimate() const { return has_estimate_; }
  const LogLikEstimate& estimate() const { return estimate_; }
  const Vector& evaluated_at() const { return theta_; }

  /// Recomputes every block at theta.
  template <LinearPredictorModel M>
  void evaluate(const ControlVariateCache& cache, const M& model, const Vector& theta) {
    const SubsampleResiduals r = subsample_residuals(cache, model, theta, indices());
    assign(cache, theta, sum_proxy(cache, theta), {r.value.data(), static_cast<std::size_t>(r.value.size())});
  }

  /// Installs residuals for the current indices computed elsewhere (e.g. the
  /// last gradient evaluation of a trajectory) at theta.
  void assign(const ControlVariateCache& cache, const Vector& theta, double sum_q, std::span<const double> residuals) {
    if (static_cast<Index>(residuals.size()) != size()) throw ConsistencyError("subsample state: residual count");
    for (Index b = 0; b < blocks_; ++b) {
      block_moments_[static_cast<std::size_t>(b)] = ResidualMoments::of(
          residuals.subspan(static_cast<std::size_t>(b * block_size()), static_cast<std::size_t>(block_size())));
    }
    theta_ = theta;
    center_ = cache.center;
    sum_q_ = sum_q;
    has_estimate_ = true;
    refresh_estimate();
  }

  void check_consistent(const ControlVariateCache& cache, const Vector& theta) const {
    if (!has_estimate_) throw ConsistencyError("subsample state has no estimate");
    if (theta_.size() != theta.size() || theta_ != theta) {
      throw ConsistencyError("subsample state estimate does not correspond to the current theta");
    }
    if (center_ != cache.center) {
      throw ConsistencyError("subsample state estimate was computed with a different control-variate center");
    }
  }

  /// Moments of all blocks with block `replaced` substituted.
  ResidualMoments merged_moments(Index replaced, const ResidualMoments& substitute) const {
    ResidualMoments total;
    for (Index b = 0; b < blocks_; ++b) {
      total = ResidualMoments::merge(total, b == replaced ? substitute : block_moments_[static_cast<std::size_t>(b)]);
    }
    return total;
  }

  double sum_q() const { return sum_q_; }

  /// Swaps in new indices for one block together with their moments at the
  /// stored theta.
  void replace_block(Index b, std::span<const Index> indices, const ResidualMoments& moments) {
    std::copy(indices.begin(), indices.end(), indices_.begin() + b * block_size());
    block_moments_[static_cast<std::size_t>(b)] = moments;
    refresh_estimate();
  }

  void advance_cursor() { cursor_ = (cursor_ + 1) % blocks_; }

 private:
  static void validate_shape(Index population, Index m, Index blocks) {
    if (population < 1) throw ConfigError("subsample: population must be >= 1");
    if (m < 1) throw ConfigError("subsample: size m must be >= 1");
    if (blocks < 1) throw ConfigError("subsample: block count G must be >= 1");
    if (m % blocks != 0) {
      throw ConfigError("subsample: m = " + std::to_string(m) + " is not divisible by G = " + std::to_string(blocks));
    }
  }

  static std::vector<Index> validated_draw(Index population, Index size, Index blocks, Rng& rng) {
    validate_shape(population, size, blocks);
    return draw_indices(population, size, rng);
  }

  void refresh_estimate() {
    const ResidualMoments total = merged_moments(-1, {});
    estimate_ = estimate_from_moments(sum_q_, total, population_);
    estimate_.subsample_fingerprint = subsample_fingerprint(indices());
  }

  Index population_;
  std::vector<Index> indices_;
  Index blocks_;
  Index cursor_ = 0;
  std::vector<ResidualMoments> block_moments_;
  bool has_estimate_ = false;
  Vector theta_;
  Vector center_;
  double sum_q_ = 0.0;
  LogLikEstimate estimate_;
};

/// Replacement for one block; all other blocks are shared with the current u.
struct BlockProposal {
  Index block = 0;
  std::vector<Index> replacement;

  std::vector<Index> indices(const SubsampleState& state) const {
    std::vector<Index> out(state.indices().begin(), state.indices().end());
    std::copy(replacement.begin(), replacement.end(), out.begin() + block * state.block_size());
    return out;
  }
};

inline BlockProposal propose_block(const SubsampleState& state, Rng& rng,
                                   BlockSelection selection = BlockSelection::random) {
  BlockProposal p;
  if (selection == BlockSelection::random) {
    std::uniform_int_distribution<Index> pick_block(0, state.block_count() - 1);
    p.block = pick_block(rng);
  } else {
    p.block = state.cursor();
  }
  p.replacement = draw_indices(state.population(), state.block_size(), rng);
  return p;
}

struct SubsampleUpdate {
  bool accepted = false;
  double acceptance_probability = 0.0;
  LogLikEstimate proposed;
};

/// Metropolis-Hastings step for u given theta with acceptance probability
/// min{1, exp[(l' - s2'/2) - (l - s2/2)]}. Only the proposed block is evaluated.
template <LinearPredictorModel M>
SubsampleUpdate apply_block_proposal(SubsampleState& state, const BlockProposal& proposal,
                                     const ControlVariateCache& cache, const M& model, const Vector& theta,
                                     Rng& rng) {
  state.check_consistent(cache, theta);
  const SubsampleResiduals r = subsample_residuals(cache, model, theta, proposal.replacement);
  const ResidualMoments block =
      ResidualMoments::of({r.value.data(), static_cast<std::size_t>(r.value.size())});
  const LogLikEstimate proposed =
      estimate_from_moments(state.sum_q(), state.merged_moments(proposal.block, block), state.population());
  const LogLikEstimate& current = state.estimate();
  const double log_ratio =
      (proposed.ell_hat - 0.5 * proposed.sigma2_hat) - (current.ell_hat - 0.5 * current.sigma2_hat);
  SubsampleUpdate out;
  out.proposed = proposed;
  out.acceptance_probability = std::isnan(log_ratio) ? 0.0 : std::min(1.0, std::exp(log_ratio));
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double draw = unif(rng);
  if (draw < out.acceptance_probability) {
    state.replace_block(proposal.block, proposal.replacement, block);
    out.accepted = true;
  }
  return out;
}

template <LinearPredictorModel M>
SubsampleUpdate gibbs_update_u(SubsampleState& state, const ControlVariateCache& cache, const M& model,
                               const Vector& theta, Rng& rng, BlockSelection selection = BlockSelection::random) {
  const BlockProposal proposal = propose_block(state, rng, selection);
  if (selection == BlockSelection::cyclic) state.advance_cursor();
  return apply_block_proposal(state, proposal, cache, model, theta, rng);
}

}  // namespace hmcecs

#endif  // HMCECS_SUBSAMPLE_HPP
