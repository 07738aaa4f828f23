#ifndef HMCECS_DIAGNOSTICS_HPP
#define HMCECS_DIAGNOSTICS_HPP

#include <hmcecs/estimators.hpp>
#include <hmcecs/poisson.hpp>
#include <hmcecs/trace.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <numeric>
#include <span>
#include <vector>

namespace hmcecs {

constexpr Index kMinSeriesLength = 100;

/// IF = 1 + 2 sum_l rho_l, summing empirical autocorrelations up to (not
/// including) the first nonpositive one. No floor is applied.
inline double inefficiency_factor(std::span<const double> series) {
  const auto n = static_cast<Index>(series.size());
  if (n < kMinSeriesLength) {
    throw DomainError("inefficiency_factor: need at least " + std::to_string(kMinSeriesLength) + " values, got " +
                      std::to_string(n));
  }
  const double mean = std::accumulate(series.begin(), series.end(), 0.0) / static_cast<double>(n);
  std::vector<double> c(series.size());
  for (std::size_t i = 0; i < series.size(); ++i) c[i] = series[i] - mean;
  double c0 = 0.0;
  for (double v : c) c0 += v * v;
  if (!(c0 > 0.0) || !std::isfinite(c0)) throw DomainError("inefficiency_factor: constant or non-finite series");
  double sum = 0.0;
  for (Index lag = 1; lag < n; ++lag) {
    double acc = 0.0;
    for (Index i = 0; i + lag < n; ++i) acc += c[static_cast<std::size_t>(i)] * c[static_cast<std::size_t>(i + lag)];
    const double rho = acc / c0;
    if (!(rho > 0.0)) break;
    sum += rho;
  }
  return 1.0 + 2.0 * sum;
}

/// ESS = N / IF.
inline double ess(std::span<const double> series) {
  return static_cast<double>(series.size()) / inefficiency_factor(series);
}

inline double sample_mean(std::span<const double> x) {
  if (x.empty()) throw DomainError("sample_mean: empty input");
  return std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(x.size());
}

inline double sample_sd(std::span<const double> x) {
  if (x.size() < 2) throw DomainError("sample_sd: need at least two values");
  const double m = sample_mean(x);
  double ss = 0.0;
  for (double v : x) ss += (v - m) * (v - m);
  return std::sqrt(ss / static_cast<double>(x.size() - 1));
}

struct SignCorrectedMean {
  double value = 0.0;
  double negative_fraction = 0.0;
};

/// sum psi_j s_j / sum s_j.
inline SignCorrectedMean sign_corrected_mean(std::span<const double> values, std::span<const int> signs) {
  if (values.size() != signs.size()) throw DomainError("sign_corrected_mean: length mismatch");
  if (values.empty()) throw DomainError("sign_corrected_mean: empty input");
  double num = 0.0;
  long long den = 0;
  std::size_t negative = 0;
  for (std::size_t i = 0; i < values.size(); ++i) {
    num += values[i] * signs[i];
    den += signs[i];
    if (signs[i] < 0) ++negative;
  }
  if (den == 0) throw DomainError("sign_corrected_mean: signs sum to zero, estimator undefined");
  return {num / static_cast<double>(den), static_cast<double>(negative) / static_cast<double>(values.size())};
}

/// Sign-corrected expectation of psi(theta) over the sampling phase of a trace.
inline SignCorrectedMean sign_corrected_mean(const ChainTrace& trace, const std::function<double(const Vector&)>& psi) {
  const Index begin = trace.sampling_begin();
  std::vector<double> values;
  std::vector<int> signs;
  for (Index i = begin; i < trace.size(); ++i) {
    values.push_back(psi(trace.draw(i)));
    signs.push_back(trace.signs()[static_cast<std::size_t>(i)]);
  }
  return sign_corrected_mean(values, signs);
}

struct EfficiencyReport {
  std::string sampler;
  Index draws = 0;
  Index dim = 0;
  std::vector<double> inefficiency;
  std::vector<double> effective_sample_size;
  double mean_if = 0.0, min_if = 0.0, max_if = 0.0;
  double mean_ess = 0.0, min_ess = 0.0, max_ess = 0.0;
  double alpha_u = 0.0;
  double alpha_theta = 0.0;
  std::uint64_t evaluations = 0;           // sampling phase
  std::uint64_t training_evaluations = 0;  // training phase incl. setup
  double step_size = 0.0;
  Index steps = 0;
  double trajectory_length = 0.0;
  double negative_sign_fraction = 0.0;
  Index divergences = 0;
  double wall_seconds = 0.0;
};

/// Efficiency summary over the sampling phase of a trace.
inline EfficiencyReport summarize(const ChainTrace& trace) {
  EfficiencyReport r;
  r.sampler = to_string(trace.kind());
  r.dim = trace.dim();
  r.draws = trace.size() - trace.sampling_begin();
  for (Index j = 0; j < trace.dim(); ++j) {
    const std::vector<double> x = trace.sampling_coordinate(j);
    const double f = inefficiency_factor(x);
    r.inefficiency.push_back(f);
    r.effective_sample_size.push_back(static_cast<double>(x.size()) / f);
  }
  if (!r.inefficiency.empty()) {
    auto stats = [](const std::vector<double>& v, double& mean, double& lo, double& hi) {
      mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
      lo = *std::min_element(v.begin(), v.end());
      hi = *std::max_element(v.begin(), v.end());
    };
    stats(r.inefficiency, r.mean_if, r.min_if, r.max_if);
    stats(r.effective_sample_size, r.mean_ess, r.min_ess, r.max_ess);
  }
  const PhaseTotals& s = trace.sampling_totals;
  r.alpha_u = s.mean_alpha_u();
  r.alpha_theta = s.mean_alpha_theta();
  r.evaluations = s.evaluations;
  r.training_evaluations = trace.training_totals.evaluations;
  r.step_size = trace.final_step_size;
  r.steps = trace.final_steps;
  r.trajectory_length = trace.trajectory_length;
  r.negative_sign_fraction =
      s.iterations ? static_cast<double>(s.negative_signs) / static_cast<double>(s.iterations) : 0.0;
  r.divergences = s.divergences;
  r.wall_seconds = trace.wall_seconds_total;
  return r;
}

/// Per-parameter CT = IF_j x per-observation density evaluations.
inline std::vector<double> computational_time(const EfficiencyReport& report) {
  if (report.evaluations == 0) throw DomainError("computational_time: no density evaluations recorded");
  std::vector<double> out;
  for (double f : report.inefficiency) out.push_back(f * static_cast<double>(report.evaluations));
  return out;
}

/// RCT_j = CT_j(reference) / CT_j(candidate), e.g. reference = full HMC.
inline std::vector<double> relative_ct(const EfficiencyReport& reference, const EfficiencyReport& candidate) {
  const std::vector<double> a = computational_time(reference);
  const std::vector<double> b = computational_time(candidate);
  if (a.size() != b.size()) throw DomainError("relative_ct: dimension mismatch");
  std::vector<double> out(a.size());
  for (std::size_t j = 0; j < a.size(); ++j) out[j] = a[j] / b[j];
  return out;
}

struct PerturbationEstimate {
  double estimate = 0.0;
  double std_error = 0.0;
};

/// Monte-Carlo estimate of E_u[exp(l_hat - sigma2_hat/2)] / exp(l(theta)) - 1
/// over R subsamples of size m. With X = l_hat - l and V = sigma2_hat, each
/// replicate contributes
///   expm1(X - V/2) - X - (X^2 - E X^2)/2 + (V - E V)/2,
/// where the subtracted terms have exactly known means (E X = 0,
/// E X^2 = n^2 s2/m, E V = n^2 (m-1) s2/m^2 with s2 the population variance
/// of the residuals). They remove the leading-order noise so the O(1/m^2)
/// signal is resolvable with moderate R.
template <LinearPredictorModel M>
PerturbationEstimate perturbation_error(const ControlVariateCache& cache, const M& model, const Vector& theta,
                                        Index m, Index replications, Rng& rng) {
  if (replications < 100) throw DomainError("perturbation_error: need at least 100 replications");
  if (m < 1) throw DomainError("perturbation_error: m must be >= 1");
  cache.verify(model.data());
  require_finite(theta, "perturbation_error");
  const Index n = model.data().size();
  std::vector<Index> all(static_cast<std::size_t>(n));
  std::iota(all.begin(), all.end(), Index{0});
  const SubsampleResiduals full = subsample_residuals(cache, model, theta, all);
  const Vector& e = full.value;
  const double nn = static_cast<double>(n);
  const double mm = static_cast<double>(m);
  const ResidualMoments pop = ResidualMoments::of({e.data(), static_cast<std::size_t>(n)});
  const double s2 = pop.m2 / nn;
  const double ex2 = nn * nn * s2 / mm;
  const double ev = nn * nn * (mm - 1.0) * s2 / (mm * mm);

  std::uniform_int_distribution<Index> pick(0, n - 1);
  double sum = 0.0, sum_sq = 0.0;
  for (Index r = 0; r < replications; ++r) {
    ResidualMoments mom;
    for (Index i = 0; i < m; ++i) mom.add(e[pick(rng)]);
    const double x = nn * (mom.mean - pop.mean);
    const double v = nn * nn / (mm * mm) * mom.m2;
    const double val = std::expm1(x - 0.5 * v) - x - 0.5 * (x * x - ex2) + 0.5 * (v - ev);
    sum += val;
    sum_sq += val * val;
  }
  const double R = static_cast<double>(replications);
  PerturbationEstimate out;
  out.estimate = sum / R;
  const double var = std::max(0.0, (sum_sq - R * out.estimate * out.estimate) / (R - 1.0));
  out.std_error = std::sqrt(var / R);
  return out;
}

/// Normal-reference bandwidth 1.06 sd N^{-1/5}.
inline double kde_bandwidth(std::span<const double> x) {
  const double sd = sample_sd(x);
  if (!(sd > 0.0)) throw DomainError("kde_bandwidth: zero spread");
  return 1.06 * sd * std::pow(static_cast<double>(x.size()), -0.2);
}

/// Grid of `points` values spanning pooled mean +- 4 pooled sd.
inline std::vector<double> shared_kde_grid(std::span<const std::span<const double>> samples, Index points = 512) {
  if (points < 2) throw DomainError("shared_kde_grid: need at least two points");
  std::vector<double> pooled;
  for (auto s : samples) pooled.insert(pooled.end(), s.begin(), s.end());
  const double m = sample_mean(pooled);
  const double sd = sample_sd(pooled);
  std::vector<double> grid(static_cast<std::size_t>(points));
  const double lo = m - 4.0 * sd;
  const double step = 8.0 * sd / static_cast<double>(points - 1);
  for (Index i = 0; i < points; ++i) grid[static_cast<std::size_t>(i)] = lo + step * static_cast<double>(i);
  return grid;
}

/// Gaussian-kernel density estimate of x evaluated on grid. With signs, each
/// draw is weighted by s_i / sum(s) so that signed draws estimate the target.
inline std::vector<double> kde_density(std::span<const double> x, std::span<const double> grid,
                                       std::span<const int> signs = {}) {
  if (!signs.empty() && signs.size() != x.size()) throw DomainError("kde_density: signs length mismatch");
  const double h = kde_bandwidth(x);
  double total = static_cast<double>(x.size());
  if (!signs.empty()) {
    total = 0.0;
    for (int s : signs) total += s;
    if (total == 0.0) throw DomainError("kde_density: signs sum to zero");
  }
  const double norm = 1.0 / (total * h * std::sqrt(2.0 * std::numbers::pi));
  std::vector<double> out(grid.size(), 0.0);
  for (std::size_t g = 0; g < grid.size(); ++g) {
    double acc = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double t = (grid[g] - x[i]) / h;
      const double w = std::exp(-0.5 * t * t);
      acc += signs.empty() ? w : signs[i] * w;
    }
    out[g] = acc * norm;
  }
  return out;
}

/// Sign-weighted mean and sd of one coordinate (plain moments when all signs
/// are +1).
struct CoordinateMoments {
  double mean = 0.0;
  double sd = 0.0;
};

inline CoordinateMoments coordinate_moments(const ChainTrace& trace, Index j) {
  const std::vector<double> x = trace.sampling_coordinate(j);
  const Index begin = trace.sampling_begin();
  const std::span<const int> s(trace.signs().data() + begin, x.size());
  const double mean = sign_corrected_mean(x, s).value;
  std::vector<double> sq(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) sq[i] = (x[i] - mean) * (x[i] - mean);
  const double var = sign_corrected_mean(sq, s).value;
  const double n = static_cast<double>(x.size());
  return {mean, std::sqrt(std::max(0.0, var) * n / (n - 1.0))};
}

struct TraceComparison {
  std::vector<double> mean_a, mean_b, sd_a, sd_b;
  std::vector<double> mean_delta;  // (mean_b - mean_a) / sd_a
  std::vector<double> sd_ratio;    // sd_b / sd_a
  std::vector<double> rct;         // CT_a / CT_b
  double max_abs_mean_delta = 0.0;
};

inline TraceComparison compare_traces(const ChainTrace& a, const ChainTrace& b) {
  if (a.dim() != b.dim()) {
    throw DomainError("compare: dimension mismatch (" + std::to_string(a.dim()) + " vs " + std::to_string(b.dim()) +
                      ")");
  }
  TraceComparison c;
  for (Index j = 0; j < a.dim(); ++j) {
    const CoordinateMoments ma = coordinate_moments(a, j);
    const CoordinateMoments mb = coordinate_moments(b, j);
    c.mean_a.push_back(ma.mean);
    c.mean_b.push_back(mb.mean);
    c.sd_a.push_back(ma.sd);
    c.sd_b.push_back(mb.sd);
    c.mean_delta.push_back((mb.mean - ma.mean) / ma.sd);
    c.sd_ratio.push_back(mb.sd / ma.sd);
    c.max_abs_mean_delta = std::max(c.max_abs_mean_delta, std::abs(c.mean_delta.back()));
  }
  c.rct = relative_ct(summarize(a), summarize(b));
  return c;
}

}  // namespace hmcecs

#endif  // HMCECS_DIAGNOSTICS_HPP
