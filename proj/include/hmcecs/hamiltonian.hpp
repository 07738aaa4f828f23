#ifndef HMCECS_HAMILTONIAN_HPP
#define HMCECS_HAMILTONIAN_HPP

#include <hmcecs/types.hpp>

#include <Eigen/Cholesky>

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

namespace hmcecs {

/// Symmetric positive-definite mass matrix with its Cholesky factor M = L L'.
class MassMatrix {
 public:
  explicit MassMatrix(const Matrix& mass) : mass_(0.5 * (mass + mass.transpose())), llt_(mass_) {
    if (mass_.rows() != mass_.cols() || mass_.rows() < 1) throw DomainError("mass matrix must be square");
    if (llt_.info() != Eigen::Success || !llt_.matrixLLT().allFinite()) {
      throw DomainError("mass matrix is not symmetric positive definite");
    }
  }

  static MassMatrix identity(Index d) { return MassMatrix(Matrix::Identity(d, d)); }

  Index dim() const { return mass_.rows(); }
  const Matrix& matrix() const { return mass_; }

  /// M^{-1} p
  Vector velocity(const Vector& momentum) const { return llt_.solve(momentum); }

  /// K(p) = p' M^{-1} p / 2
  double kinetic(const Vector& momentum) const {
    const Vector w = llt_.matrixL().solve(momentum);
    return 0.5 * w.squaredNorm();
  }

  /// p ~ N(0, M)
  Vector sample_momentum(Rng& rng) const {
    std::normal_distribution<double> normal(0.0, 1.0);
    Vector xi(dim());
    for (Index i = 0; i < dim(); ++i) xi[i] = normal(rng);
    return llt_.matrixL() * xi;
  }

 private:
  Matrix mass_;
  Eigen::LLT<Matrix> llt_;
};

/// Mass matrix, step size and number of leapfrog steps.
class HamiltonianSpec {
 public:
  HamiltonianSpec(std::shared_ptr<const MassMatrix> mass, double step_size, Index steps)
      : mass_(std::move(mass)), step_size_(step_size), steps_(steps) {
    if (!mass_) throw DomainError("hamiltonian spec: missing mass matrix");
    if (!(step_size > 0.0) || !std::isfinite(step_size)) throw DomainError("hamiltonian spec: step size must be > 0");
    if (steps < 1) throw DomainError("hamiltonian spec: step count must be >= 1");
  }
  HamiltonianSpec(const Matrix& mass, double step_size, Index steps)
      : HamiltonianSpec(std::make_shared<const MassMatrix>(mass), step_size, steps) {}

  const MassMatrix& mass() const { return *mass_; }
  std::shared_ptr<const MassMatrix> shared_mass() const { return mass_; }
  double step_size() const { return step_size_; }
  Index steps() const { return steps_; }
  double trajectory_length() const { return step_size_ * static_cast<double>(steps_); }

  double kinetic(const Vector& momentum) const { return mass_->kinetic(momentum); }
  Vector sample_momentum(Rng& rng) const { return mass_->sample_momentum(rng); }

 private:
  std::shared_ptr<const MassMatrix> mass_;
  double step_size_;
  Index steps_;
};

struct PhasePoint {
  Vector position;
  Vector momentum;
};

struct LeapfrogResult {
  PhasePoint end;
  bool diverged = false;
  Index gradient_evaluations = 0;
};

/// L leapfrog steps: half momentum step, alternating full position and
/// momentum steps, closing half momentum step, then momentum negation.
/// Uses exactly L + 1 gradient evaluations unless the state turns non-finite,
/// in which case integration stops and the result is flagged.
template <typename GradFn>
LeapfrogResult leapfrog(const HamiltonianSpec& spec, const PhasePoint& start, GradFn&& grad_potential) {
  const double eps = spec.step_size();
  LeapfrogResult out;
  Vector theta = start.position;
  Vector p = start.momentum;
  Vector g = grad_potential(static_cast<const Vector&>(theta));
  ++out.gradient_evaluations;
  p -= 0.5 * eps * g;
  for (Index l = 1; l <= spec.steps(); ++l) {
    theta += eps * spec.mass().velocity(p);
    if (!theta.allFinite()) {
      out.diverged = true;
      break;
    }
    g = grad_potential(static_cast<const Vector&>(theta));
    ++out.gradient_evaluations;
    if (!g.allFinite()) {
      out.diverged = true;
      break;
    }
    p -= (l < spec.steps() ? eps : 0.5 * eps) * g;
  }
  if (!p.allFinite()) out.diverged = true;
  out.end = {std::move(theta), -p};
  return out;
}

/// Potential energy function with gradient; `evaluate` returns both so a
/// single data pass serves the integrator and the acceptance test.
struct EnergyEvaluation {
  double potential;
  Vector gradient;
};

template <typename T>
concept PotentialTarget = requires(T& target, const Vector& theta) {
  { target.evaluate(theta) } -> std::convertible_to<EnergyEvaluation>;
};

struct TransitionResult {
  Vector position;
  bool accepted = false;
  bool diverged = false;
  double acceptance_probability = 0.0;
  double energy_change = 0.0;  // H(end) - H(start)
  Index gradient_evaluations = 0;
  EnergyEvaluation start_energy;
  EnergyEvaluation end_energy;
};

/// One HMC update of theta under `target`, with Metropolis acceptance
/// min{1, exp(H_start - H_end)}. Exactly d standard normals and one uniform
/// are consumed from `rng` per call, regardless of the outcome.
template <PotentialTarget Target>
TransitionResult hmc_transition(const HamiltonianSpec& spec, const Vector& theta, Target& target, Rng& rng,
                                double divergence_threshold = 1000.0) {
  TransitionResult out;
  const Vector p0 = spec.sample_momentum(rng);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  out.start_energy = target.evaluate(theta);
  const double h0 = out.start_energy.potential + spec.kinetic(p0);
  bool first = true;
  EnergyEvaluation last;
  auto grad = [&](const Vector& x) -> Vector {
    if (first) {
      first = false;
      return out.start_energy.gradient;
    }
    last = target.evaluate(x);
    return last.gradient;
  };
  LeapfrogResult lf = leapfrog(spec, PhasePoint{theta, p0}, grad);
  out.gradient_evaluations = lf.gradient_evaluations;
  const double u = unif(rng);

  double h1 = std::numeric_limits<double>::infinity();
  if (!lf.diverged) {
    out.end_energy = last;
    h1 = last.potential + spec.kinetic(lf.end.momentum);
  }
  out.energy_change = h1 - h0;
  if (lf.diverged || !std::isfinite(out.energy_change) || std::abs(out.energy_change) > divergence_threshold) {
    out.diverged = true;
    out.acceptance_probability = 0.0;
    out.position = theta;
    return out;
  }
  out.acceptance_probability = std::min(1.0, std::exp(-out.energy_change));
  if (u < out.acceptance_probability) {
    out.accepted = true;
    out.position = std::move(lf.end.position);
  } else {
    out.position = theta;
  }
  return out;
}

}  // namespace hmcecs

#endif  // HMCECS_HAMILTONIAN_HPP
