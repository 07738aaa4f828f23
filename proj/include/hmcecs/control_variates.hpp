#ifndef HMCECS_CONTROL_VARIATES_HPP
#define HMCECS_CONTROL_VARIATES_HPP

#include <hmcecs/model.hpp>

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>

namespace hmcecs {

/// Order of the Taylor expansion used as the per-observation proxy q_k.
/// Second order is the default; first order exists for experiments where the
/// proxies must not be exact for a quadratic log-likelihood.
enum class ProxyOrder : std::uint32_t { first = 1, second = 2 };

/// Full-data summaries at a center theta*: sum of log-likelihoods (l*), of
/// gradients (A) and of Hessians (B). Per-observation proxy ingredients are
/// recomputed on demand from the center; nothing of size n is stored.
struct ControlVariateCache {
  Vector center;
  double loglik_sum = 0.0;
  Vector gradient_sum;
  Matrix hessian_sum;
  ProxyOrder order = ProxyOrder::second;
  Index data_size = 0;
  std::uint64_t data_fingerprint = 0;
  std::int64_t build_time = 0;

  Index dim() const { return center.size(); }

  void verify(const Dataset& data) const {
    if (data.size() != data_size || data.dim() != dim() || data.fingerprint() != data_fingerprint) {
      throw ConsistencyError("control-variate cache was built for a different dataset");
    }
  }
};

struct CacheOptions {
  ProxyOrder order = ProxyOrder::second;
  Index max_dim = 512;
};

/// Residual e_k = l_k - q_k of one observation and the scalar s_k such that
/// grad e_k = s_k * x_k.
struct ProxyResidual {
  double value;
  double slope;
};

/// Residual from the linear predictors at theta (z) and at the center (z_center).
template <LinearPredictorModel M>
ProxyResidual proxy_residual_from_predictors(const M& model, double y, double z, double z_center, ProxyOrder order) {
  const LinkTerms at = model.link(y, z);
  const LinkTerms ref = model.link(y, z_center);
  const double delta = z - z_center;
  if (order == ProxyOrder::second) {
    return {at.value - (ref.value + ref.slope * delta + 0.5 * ref.curvature * delta * delta),
            at.slope - ref.slope - ref.curvature * delta};
  }
  return {at.value - (ref.value + ref.slope * delta), at.slope - ref.slope};
}

/// One full pass over the data at `center`.
template <LinearPredictorModel M>
ControlVariateCache build_cache(const M& model, const Vector& center, const CacheOptions& options = {}) {
  const Dataset& data = model.data();
  if (center.size() != data.dim()) throw DomainError("build_cache: center has wrong dimension");
  if (!center.allFinite()) throw DomainError("build_cache: non-finite center");
  if (data.dim() > options.max_dim) {
    throw DomainError("build_cache: dimension " + std::to_string(data.dim()) + " exceeds dense limit " +
                      std::to_string(options.max_dim));
  }
  const Vector z = data.x * center;
  Vector slopes(data.size());
  Vector curv(data.size());
  double sum = 0.0;
  for (Index k = 0; k < data.size(); ++k) {
    const LinkTerms t = model.link(data.y[k], z[k]);
    if (!std::isfinite(t.value) || !std::isfinite(t.slope) || !std::isfinite(t.curvature)) {
      throw DomainError("build_cache: non-finite log-likelihood terms at observation " + std::to_string(k));
    }
    sum += t.value;
    slopes[k] = t.slope;
    curv[k] = t.curvature;
  }
  ControlVariateCache cache;
  cache.center = center;
  cache.loglik_sum = sum;
  cache.gradient_sum = data.x.transpose() * slopes;
  if (options.order == ProxyOrder::second) {
    Matrix b = data.x.transpose() * curv.asDiagonal() * data.x;
    cache.hessian_sum = 0.5 * (b + b.transpose());
  } else {
    cache.hessian_sum = Matrix::Zero(data.dim(), data.dim());
  }
  cache.order = options.order;
  cache.data_size = data.size();
  cache.data_fingerprint = data.fingerprint();
  cache.build_time =
      std::chrono::duration_cast<std::chrono::seconds>(std::chrono::system_clock::now().time_since_epoch()).count();
  if (!std::isfinite(cache.loglik_sum) || !cache.gradient_sum.allFinite() || !cache.hessian_sum.allFinite()) {
    throw DomainError("build_cache: non-finite summary");
  }
  return cache;
}

/// Control variate q_k(theta).
template <LinearPredictorModel M>
double proxy(const ControlVariateCache& cache, const M& model, const Vector& theta, Index k) {
  const Dataset& data = model.data();
  const double y = data.y[k];
  const double zc = data.x.row(k).dot(cache.center);
  const double delta = data.x.row(k).dot(theta) - zc;
  const LinkTerms ref = model.link(y, zc);
  double q = ref.value + ref.slope * delta;
  if (cache.order == ProxyOrder::second) q += 0.5 * ref.curvature * delta * delta;
  return q;
}

template <LinearPredictorModel M>
Vector proxy_gradient(const ControlVariateCache& cache, const M& model, const Vector& theta, Index k) {
  const Dataset& data = model.data();
  const double zc = data.x.row(k).dot(cache.center);
  const double delta = data.x.row(k).dot(theta) - zc;
  const LinkTerms ref = model.link(data.y[k], zc);
  double s = ref.slope;
  if (cache.order == ProxyOrder::second) s += ref.curvature * delta;
  return s * data.x.row(k).transpose();
}

/// Sum over all n proxies in O(d^2), without touching the data.
inline double sum_proxy(const ControlVariateCache& cache, const Vector& theta) {
  const Vector delta = theta - cache.center;
  return cache.loglik_sum + cache.gradient_sum.dot(delta) + 0.5 * delta.dot(cache.hessian_sum * delta);
}

inline Vector sum_proxy_gradient(const ControlVariateCache& cache, const Vector& theta) {
  return cache.gradient_sum + cache.hessian_sum * (theta - cache.center);
}

namespace detail {

constexpr char kCacheMagic[8] = {'H', 'M', 'C', 'E', 'C', 'S', 'C', 'V'};
constexpr std::uint32_t kCacheVersion = 1;

template <typename T>
void write_le(std::ostream& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
T read_le(std::istream& in) {
  unsigned char bytes[sizeof(T)];
  in.read(reinterpret_cast<char*>(bytes), sizeof(T));
  if (!in) throw IoError("control-variate cache file is truncated");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

}  // namespace detail

/// Binary sidecar: magic, version, order, d, n, fingerprint, build time, then
/// center, l*, A and B (row-major) as little-endian doubles.
inline void save_cache(const std::filesystem::path& path, const ControlVariateCache& cache) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write cache file " + path.string());
  out.write(detail::kCacheMagic, sizeof(detail::kCacheMagic));
  detail::write_le<std::uint32_t>(out, detail::kCacheVersion);
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(cache.order));
  detail::write_le<std::uint64_t>(out, static_cast<std::uint64_t>(cache.dim()));
  detail::write_le<std::uint64_t>(out, static_cast<std::uint64_t>(cache.data_size));
  detail::write_le<std::uint64_t>(out, cache.data_fingerprint);
  detail::write_le<std::int64_t>(out, cache.build_time);
  for (Index i = 0; i < cache.dim(); ++i) detail::write_le(out, cache.center[i]);
  detail::write_le(out, cache.loglik_sum);
  for (Index i = 0; i < cache.dim(); ++i) detail::write_le(out, cache.gradient_sum[i]);
  for (Index i = 0; i < cache.dim(); ++i)
    for (Index j = 0; j < cache.dim(); ++j) detail::write_le(out, cache.hessian_sum(i, j));
  if (!out) throw IoError("write failed for cache file " + path.string());
}

inline ControlVariateCache load_cache(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open cache file " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, detail::kCacheMagic, sizeof(magic)) != 0) {
    throw IoError(path.string() + " is not a control-variate cache file");
  }
  const auto version = detail::read_le<std::uint32_t>(in);
  if (version != detail::kCacheVersion) throw IoError("unsupported cache file version " + std::to_string(version));
  ControlVariateCache cache;
  const auto order = detail::read_le<std::uint32_t>(in);
  if (order != 1 && order != 2) throw IoError("cache file has invalid proxy order");
  cache.order = static_cast<ProxyOrder>(order);
  const auto d = static_cast<Index>(detail::read_le<std::uint64_t>(in));
  cache.data_size = static_cast<Index>(detail::read_le<std::uint64_t>(in));
  cache.data_fingerprint = detail::read_le<std::uint64_t>(in);
  cache.build_time = detail::read_le<std::int64_t>(in);
  if (d < 1 || d > 1 << 16) throw IoError("cache file has implausible dimension");
  cache.center.resize(d);
  cache.gradient_sum.resize(d);
  cache.hessian_sum.resize(d, d);
  for (Index i = 0; i < d; ++i) cache.center[i] = detail::read_le<double>(in);
  cache.loglik_sum = detail::read_le<double>(in);
  for (Index i = 0; i < d; ++i) cache.gradient_sum[i] = detail::read_le<double>(in);
  for (Index i = 0; i < d; ++i)
    for (Index j = 0; j < d; ++j) cache.hessian_sum(i, j) = detail::read_le<double>(in);
  return cache;
}

}  // namespace hmcecs

#endif  // HMCECS_CONTROL_VARIATES_HPP
