#ifndef HMCECS_SPLINES_HPP
#define HMCECS_SPLINES_HPP

#include <hmcecs/model.hpp>

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace hmcecs {

/// Truncated-linear spline basis: per covariate, a linear term and one hinge
/// max(x - knot, 0) per knot.
struct SplineSpec {
  std::vector<std::vector<double>> knots;  // one ascending list per raw covariate

  void validate(Index covariates) const {
    if (static_cast<Index>(knots.size()) != covariates) {
      throw DomainError("spline spec: expected knots for " + std::to_string(covariates) + " covariates");
    }
    for (std::size_t j = 0; j < knots.size(); ++j) {
      for (std::size_t i = 1; i < knots[j].size(); ++i) {
        if (!(knots[j][i] > knots[j][i - 1])) {
          throw DomainError("spline spec: knots of covariate " + std::to_string(j) + " are not strictly increasing");
        }
      }
    }
  }

  Index expanded_dim() const {
    Index d = 1;
    for (const auto& k : knots) d += 1 + static_cast<Index>(k.size());
    return d;
  }
};

/// Knots at the empirical quantiles j / (count + 1), j = 1..count, of each
/// column. Duplicate quantiles (heavily tied data) are dropped.
inline SplineSpec quantile_knots(const RowMatrix& raw, Index count) {
  if (count < 1) throw DomainError("quantile_knots: count must be positive");
  SplineSpec spec;
  spec.knots.resize(static_cast<std::size_t>(raw.cols()));
  for (Index j = 0; j < raw.cols(); ++j) {
    std::vector<double> col(raw.col(j).begin(), raw.col(j).end());
    std::sort(col.begin(), col.end());
    auto& out = spec.knots[static_cast<std::size_t>(j)];
    for (Index q = 1; q <= count; ++q) {
      const double pos = static_cast<double>(q) / static_cast<double>(count + 1) * static_cast<double>(col.size() - 1);
      const auto lo = static_cast<std::size_t>(std::floor(pos));
      const auto hi = std::min(lo + 1, col.size() - 1);
      const double value = col[lo] + (pos - static_cast<double>(lo)) * (col[hi] - col[lo]);
      if (out.empty() || value > out.back()) out.push_back(value);
    }
  }
  return spec;
}

struct SplineExpansion {
  Dataset data;
  std::vector<std::string> warnings;
};

/// Column order: intercept, then for each raw covariate its linear term
/// followed by the hinge terms with knots in ascending order.
inline SplineExpansion expand_splines(const RowMatrix& raw, const Vector& y, const SplineSpec& spec) {
  spec.validate(raw.cols());
  if (y.size() != raw.rows()) throw DomainError("expand_splines: response length does not match rows");
  SplineExpansion out;
  const Index n = raw.rows();
  out.data.x.resize(n, spec.expanded_dim());
  out.data.y = y;
  out.data.x.col(0).setOnes();
  Index col = 1;
  for (Index j = 0; j < raw.cols(); ++j) {
    const auto& knots = spec.knots[static_cast<std::size_t>(j)];
    const double lo = n > 0 ? raw.col(j).minCoeff() : 0.0;
    const double hi = n > 0 ? raw.col(j).maxCoeff() : 0.0;
    out.data.x.col(col++) = raw.col(j);
    for (double knot : knots) {
      if (knot < lo || knot > hi) {
        out.warnings.push_back("covariate " + std::to_string(j) + ": knot " + std::to_string(knot) +
                               " outside observed range");
      }
      out.data.x.col(col++) = (raw.col(j).array() - knot).max(0.0).matrix();
    }
  }
  return out;
}

}  // namespace hmcecs

#endif  // HMCECS_SPLINES_HPP
