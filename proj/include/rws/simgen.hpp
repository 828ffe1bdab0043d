#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "rws/types.hpp"

namespace rws {

namespace detail {

inline std::uint64_t mix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// Φ⁻¹(p): Acklam's rational approximation polished by one Halley step
/// with erfc, good to a few ulp over (0, 1).
inline double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw std::domain_error("normal_quantile: p must be in (0,1)");
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                 -2.759285104469687e+02, 1.383577518672690e+02,
                                 -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                 -1.556989798598866e+02, 6.680131188771972e+01,
                                 -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                 -2.400758277161838e+00, -2.549732539343734e+00,
                                 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                 2.445134137142996e+00, 3.754408661907416e+00};
  constexpr double plow = 0.02425;
  double x;
  if (p < plow) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - plow) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log(1.0 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  // Halley refinement on Φ(x) − p
  const double e = 0.5 * std::erfc(-x * std::numbers::sqrt2 / 2.0) - p;
  const double u = e * std::numbers::sqrt2 * std::sqrt(std::numbers::pi) *
                   std::exp(0.5 * x * x);
  x -= u / (1.0 + 0.5 * x * u);
  return x;
}

}  // namespace detail

/// Counter-based per-point random stream. The state is seeded by hashing
/// (seed, replication, point) and advanced splitmix-style, so any point of
/// any replication can be generated independently and in any order;
/// batching never consumes extra randomness.
class PointRng {
 public:
  PointRng(std::uint64_t seed, std::uint64_t replication, std::uint64_t point)
      : state_(detail::mix64(detail::mix64(detail::mix64(seed) ^ replication) ^ point)) {}

  std::uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Uniform on the open interval (0, 1).
  double uniform() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  /// Standard normal by inverse CDF (one uniform per variate).
  double normal() { return detail::normal_quantile(uniform()); }

 private:
  std::uint64_t state_;
};

/// Gamma(shape, scale 1) by Marsaglia–Tsang squeeze/rejection; shapes
/// below one go through the boosting transform G(a) = G(a+1)·U^(1/a).
inline double gamma_sample(double shape, PointRng& rng) {
  if (!(shape > 0.0)) throw std::domain_error("gamma_sample: shape must be positive");
  if (shape < 1.0) {
    const double g = gamma_sample(shape + 1.0, rng);
    return g * std::pow(rng.uniform(), 1.0 / shape);
  }
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x, v;
    do {
      x = rng.normal();
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = rng.uniform();
    const double x2 = x * x;
    if (u < 1.0 - 0.0331 * x2 * x2) return d * v;
    if (std::log(u) < 0.5 * x2 + d * (1.0 - v + std::log(v))) return d * v;
  }
}

enum class ModelFamily { Homoscedastic, Heteroscedastic, GammaLaw };

/// One of the three synthetic data laws, together with its estimand
/// α⁰(x) and covariate support.
struct ModelSpec {
  ModelFamily family = ModelFamily::Homoscedastic;

  static ModelSpec homoscedastic() { return {ModelFamily::Homoscedastic}; }
  static ModelSpec heteroscedastic() { return {ModelFamily::Heteroscedastic}; }
  static ModelSpec gamma_law() { return {ModelFamily::GammaLaw}; }

  int dim() const { return family == ModelFamily::Heteroscedastic ? 2 : 1; }
  double support_lo() const { return family == ModelFamily::Homoscedastic ? -3.0 : -1.0; }
  double support_hi() const { return family == ModelFamily::Homoscedastic ? 3.0 : 1.0; }

  const char* name() const {
    switch (family) {
      case ModelFamily::Homoscedastic: return "homo";
      case ModelFamily::Heteroscedastic: return "hetero";
      case ModelFamily::GammaLaw: return "gamma";
    }
    return "?";
  }

  /// α⁰(x); writes dim() components.
  void truth(double x, double* out) const {
    switch (family) {
      case ModelFamily::Homoscedastic:
        out[0] = std::sin(2.0 * x);
        break;
      case ModelFamily::Heteroscedastic: {
        out[0] = x + std::cos(std::numbers::pi * x);
        const double s = std::exp(x) - 0.25;
        out[1] = s * s;
        break;
      }
      case ModelFamily::GammaLaw:
        out[0] = std::exp(0.5 * std::cos(x));
        break;
    }
  }

  /// One observation from the per-point stream.
  void draw(PointRng& rng, double& x, double& y) const {
    x = support_lo() + (support_hi() - support_lo()) * rng.uniform();
    switch (family) {
      case ModelFamily::Homoscedastic:
        y = std::sin(2.0 * x) + 0.2 * rng.normal();
        break;
      case ModelFamily::Heteroscedastic:
        y = x + std::cos(std::numbers::pi * x) + (std::exp(x) - 0.25) * rng.normal();
        break;
      case ModelFamily::GammaLaw:
        y = gamma_sample(std::exp(0.5 * std::cos(x)), rng);
        break;
    }
  }
};

inline ModelSpec model_from_name(const std::string& name) {
  if (name == "homo") return ModelSpec::homoscedastic();
  if (name == "hetero") return ModelSpec::heteroscedastic();
  if (name == "gamma") return ModelSpec::gamma_law();
  throw std::invalid_argument("unknown model '" + name + "'");
}

/// Stream layout: total size, batch size and the (seed, replication) key
/// that pins every value bit-exactly.
struct StreamPlan {
  std::int64_t total_n = 0;
  std::int64_t batch_size = 0;
  std::uint64_t seed = 0;
  std::uint64_t replication_id = 0;
};

/// Deterministic batched stream. Point identity is its global position,
/// so any partition of the same plan yields the same concatenated data.
inline std::vector<Batch> generate_stream(const ModelSpec& model, const StreamPlan& plan) {
  if (plan.total_n < 1) throw std::invalid_argument("generate_stream: total_n must be >= 1");
  if (plan.batch_size < 1) throw std::invalid_argument("generate_stream: batch_size must be >= 1");
  std::vector<Batch> batches;
  std::int64_t produced = 0;
  int index = 1;
  while (produced < plan.total_n) {
    const std::int64_t m = std::min(plan.batch_size, plan.total_n - produced);
    Batch b;
    b.index = index++;
    b.xs.resize(m);
    b.ys.resize(m);
    for (std::int64_t i = 0; i < m; ++i) {
      PointRng rng(plan.seed, plan.replication_id, static_cast<std::uint64_t>(produced + i));
      model.draw(rng, b.xs[i], b.ys[i]);
    }
    produced += m;
    batches.push_back(std::move(b));
  }
  return batches;
}

}  // namespace rws
