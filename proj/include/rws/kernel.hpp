#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

#include "rws/types.hpp"

namespace rws {

enum class KernelKind { Gaussian, Epanechnikov };

/// A kernel function together with the constants that show up in the
/// estimator's bias and variance: mu2 = ∫u²K(u)du and l2norm = ∫K²(u)du.
struct KernelSpec {
  KernelKind kind = KernelKind::Gaussian;
  double mu2 = 1.0;
  double l2norm = 0.0;

  static KernelSpec gaussian() {
    return {KernelKind::Gaussian, 1.0, 0.5 * std::numbers::inv_sqrtpi};
  }
  static KernelSpec epanechnikov() { return {KernelKind::Epanechnikov, 0.2, 0.6}; }

  /// K(u). Symmetric, integrates to one.
  double operator()(double u) const {
    switch (kind) {
      case KernelKind::Gaussian:
        return std::exp(-0.5 * u * u) *
               (0.5 * std::numbers::inv_sqrtpi * std::numbers::sqrt2);
      case KernelKind::Epanechnikov:
        return std::abs(u) < 1.0 ? 0.75 * (1.0 - u * u) : 0.0;
    }
    return 0.0;
  }

  const char* name() const {
    return kind == KernelKind::Gaussian ? "gaussian" : "epanechnikov";
  }
};

inline KernelSpec kernel_from_name(const std::string& name) {
  if (name == "gaussian") return KernelSpec::gaussian();
  if (name == "epanechnikov") return KernelSpec::epanechnikov();
  throw std::invalid_argument("unknown kernel '" + name + "'");
}

/// K_h(u) = K(u/h)/h.
inline double kernel_weight(const KernelSpec& k, double u, double h) {
  if (!(h > 0.0) || !std::isfinite(h))
    throw std::invalid_argument("kernel_weight: bandwidth must be positive");
  return k(u / h) / h;
}

/// h(N) = c·N^(−1/5). The exponent is pinned; only the constant varies.
struct BandwidthSchedule {
  double constant = 1.0;
  static constexpr double exponent = -0.2;

  explicit BandwidthSchedule(double c) : constant(c) {
    if (!(c > 0.0) || !std::isfinite(c))
      throw std::invalid_argument("bandwidth schedule: constant must be positive");
  }

  double bandwidth(std::int64_t cumulative_n) const {
    if (cumulative_n < 1)
      throw std::invalid_argument("bandwidth schedule: cumulative count must be >= 1");
    return constant * std::pow(static_cast<double>(cumulative_n), exponent);
  }
};

inline double schedule_bandwidth(const BandwidthSchedule& s, std::int64_t cumulative_n) {
  return s.bandwidth(cumulative_n);
}

/// Geometric 16-point grid over [0.1, 5.0], the default candidate set for
/// the CV constant.
inline std::vector<double> default_cv_candidates() {
  std::vector<double> c(16);
  for (int i = 0; i < 16; ++i) c[i] = 0.1 * std::pow(50.0, i / 15.0);
  return c;
}

/// Picks the constant c minimizing the mean leave-one-out squared
/// prediction error of the N-W estimator with bandwidth c·n^(−1/5) over
/// the sample. Observations whose leave-one-out denominator falls below
/// the degeneracy threshold are skipped; ties break toward the smaller c.
inline double select_cv_constant(const std::vector<double>& xs, const std::vector<double>& ys,
                                 const KernelSpec& kernel, std::vector<double> candidates) {
  const std::size_t n = xs.size();
  if (n != ys.size()) throw std::invalid_argument("cv: xs and ys must have equal length");
  if (n < 10) throw std::invalid_argument("cv: need at least 10 observations");
  if (candidates.empty()) throw std::invalid_argument("cv: empty candidate list");
  std::sort(candidates.begin(), candidates.end());

  const double n_scale = std::pow(static_cast<double>(n), -0.2);
  double best_c = 0.0;
  double best_score = std::numeric_limits<double>::infinity();
  std::vector<double> num(n), den(n);

  for (double c : candidates) {
    if (!(c > 0.0)) throw std::invalid_argument("cv: candidates must be positive");
    const double h = c * n_scale;
    std::fill(num.begin(), num.end(), 0.0);
    std::fill(den.begin(), den.end(), 0.0);
    // leave-one-out sums; K_h(x_j − x_i) is symmetric, so each pair is
    // evaluated once and credited to both rows
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        const double w = kernel_weight(kernel, xs[j] - xs[i], h);
        num[i] += ys[j] * w;
        den[i] += w;
        num[j] += ys[i] * w;
        den[j] += w;
      }
    }
    double err = 0.0;
    std::size_t scored = 0;
    for (std::size_t i = 0; i < n; ++i) {
      if (den[i] < kDegeneracyThreshold) continue;
      const double r = ys[i] - num[i] / den[i];
      err += r * r;
      ++scored;
    }
    if (scored == 0) continue;
    const double score = err / static_cast<double>(scored);
    if (score < best_score) {
      best_score = score;
      best_c = c;
    }
  }
  if (!(best_c > 0.0))
    throw std::runtime_error("cv: no valid bandwidth (all candidates degenerate)");
  return best_c;
}

inline double select_cv_constant(const Batch& data, const KernelSpec& kernel,
                                 const std::vector<double>& candidates) {
  return select_cv_constant(data.xs, data.ys, kernel, candidates);
}

}  // namespace rws
