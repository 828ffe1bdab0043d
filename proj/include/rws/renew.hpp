#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "rws/estfun.hpp"
#include "rws/kernel.hpp"
#include "rws/types.hpp"

namespace rws {

namespace detail {

/// In-place Gaussian elimination with partial pivoting; A is d×d
/// row-major, b is overwritten by the solution. Returns false when the
/// pivot chain collapses.
inline bool solve_small(std::span<double> a, std::span<double> b, int d) {
  for (int col = 0; col < d; ++col) {
    int piv = col;
    double best = std::abs(a[col * d + col]);
    for (int r = col + 1; r < d; ++r) {
      const double v = std::abs(a[r * d + col]);
      if (v > best) {
        best = v;
        piv = r;
      }
    }
    if (!(best > 0.0) || !std::isfinite(best)) return false;
    if (piv != col) {
      for (int c = col; c < d; ++c) std::swap(a[piv * d + c], a[col * d + c]);
      std::swap(b[piv], b[col]);
    }
    const double inv_p = 1.0 / a[col * d + col];
    for (int r = col + 1; r < d; ++r) {
      const double m = a[r * d + col] * inv_p;
      if (m == 0.0) continue;
      for (int c = col; c < d; ++c) a[r * d + c] -= m * a[col * d + c];
      b[r] -= m * b[col];
    }
  }
  for (int r = d - 1; r >= 0; --r) {
    double s = b[r];
    for (int c = r + 1; c < d; ++c) s -= a[r * d + c] * b[c];
    b[r] = s / a[r * d + r];
    if (!std::isfinite(b[r])) return false;
  }
  return true;
}

inline double norm2(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

/// Smallest leading principal minor of a d×d row-major matrix, by
/// unpivoted elimination (the minors are the running pivot products).
inline double smallest_leading_minor(std::span<const double> m, int d) {
  if (d == 1) return m[0];
  std::vector<double> a(m.begin(), m.end());
  double minor = a[0];
  double smallest = minor;
  for (int col = 0; col + 1 < d; ++col) {
    const double p = a[col * d + col];
    if (p == 0.0) return std::min(smallest, 0.0);
    for (int r = col + 1; r < d; ++r) {
      const double f = a[r * d + col] / p;
      for (int c = col; c < d; ++c) a[r * d + c] -= f * a[col * d + c];
    }
    minor *= a[(col + 1) * d + (col + 1)];
    smallest = std::min(smallest, minor);
  }
  return smallest;
}

}  // namespace detail

/// Per-grid-point renewable state: the accumulated weight matrix, the
/// current estimate and the stream counters. Updating reads only the state
/// and the incoming batch, never historical raw data; a state streamed
/// through d₁…d_k is identical no matter how earlier batches were split or
/// discarded.
class RenewableState {
 public:
  RenewableState(EvaluationGrid grid, int dim)
      : grid_(std::move(grid)),
        dim_(dim),
        weight_sum_(grid_.size() * dim * dim, 0.0),
        estimate_(grid_.size() * dim, 0.0),
        solved_(grid_.size(), 0) {
    if (dim < 1) throw std::invalid_argument("renewable state: dim must be >= 1");
  }

  const EvaluationGrid& grid() const { return grid_; }
  int dim() const { return dim_; }
  int batch_count() const { return batch_count_; }
  std::int64_t cumulative_n() const { return cumulative_n_; }
  std::int64_t newton_failures() const { return newton_failures_; }

  std::span<const double> weight_sum(std::size_t point) const {
    return {weight_sum_.data() + point * dim_ * dim_, static_cast<std::size_t>(dim_ * dim_)};
  }
  std::span<const double> estimate(std::size_t point) const {
    return {estimate_.data() + point * dim_, static_cast<std::size_t>(dim_)};
  }

  /// Defined = last solve succeeded and the accumulated weight is
  /// non-degenerate (all leading principal minors above the threshold).
  bool defined(std::size_t point) const {
    return solved_[point] != 0 &&
           detail::smallest_leading_minor(weight_sum(point), dim_) >= kDegeneracyThreshold;
  }

  GridEstimate to_grid_estimate() const {
    GridEstimate out(grid_.size(), dim_);
    out.values = estimate_;
    for (std::size_t i = 0; i < grid_.size(); ++i) out.defined[i] = defined(i) ? 1 : 0;
    return out;
  }

  /// Raw per-point solve flags, as persisted by snapshots.
  const std::vector<char>& solve_flags() const { return solved_; }

  /// Rebuilds a state from persisted parts (snapshot loading).
  static RenewableState restore(EvaluationGrid grid, int dim, std::vector<double> weight_sum,
                                std::vector<double> estimate, std::vector<char> solve_flags,
                                int batch_count, std::int64_t cumulative_n,
                                std::int64_t newton_failures) {
    RenewableState s(std::move(grid), dim);
    const std::size_t g = s.grid_.size();
    if (weight_sum.size() != g * dim * dim || estimate.size() != g * dim ||
        solve_flags.size() != g)
      throw std::invalid_argument("renewable state: restore size mismatch");
    if (batch_count < 0 || cumulative_n < 0 || newton_failures < 0)
      throw std::invalid_argument("renewable state: restore negative counters");
    s.weight_sum_ = std::move(weight_sum);
    s.estimate_ = std::move(estimate);
    s.solved_ = std::move(solve_flags);
    s.batch_count_ = batch_count;
    s.cumulative_n_ = cumulative_n;
    s.newton_failures_ = newton_failures;
    return s;
  }

  /// Piecewise-linear interpolation between the two nearest defined grid
  /// points; empty outside the span of defined points.
  std::optional<std::vector<double>> evaluate(double x) const {
    if (!std::isfinite(x)) return std::nullopt;
    const auto& pts = grid_.points();
    std::ptrdiff_t left = -1, right = -1;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      if (!defined(i)) continue;
      if (pts[i] <= x) left = static_cast<std::ptrdiff_t>(i);
      if (pts[i] >= x && right < 0) right = static_cast<std::ptrdiff_t>(i);
    }
    if (left < 0 || right < 0) return std::nullopt;
    auto el = estimate(static_cast<std::size_t>(left));
    if (left == right) return std::vector<double>(el.begin(), el.end());
    auto er = estimate(static_cast<std::size_t>(right));
    const double t = (x - pts[left]) / (pts[right] - pts[left]);
    std::vector<double> out(dim_);
    for (int c = 0; c < dim_; ++c) out[c] = el[c] + t * (er[c] - el[c]);
    return out;
  }

  // Mutation is reserved for the update functions below.
  friend RenewableState update_closed_form(const RenewableState&, const Batch&, double,
                                           const KernelSpec&);
  friend RenewableState update_newton(const RenewableState&, const Batch&, double,
                                      const KernelSpec&, const EstimatingFunction&, double, int);

 private:
  EvaluationGrid grid_;
  int dim_;
  std::vector<double> weight_sum_;  // point-major dim×dim blocks
  std::vector<double> estimate_;    // point-major dim blocks
  std::vector<char> solved_;
  int batch_count_ = 0;
  std::int64_t cumulative_n_ = 0;
  std::int64_t newton_failures_ = 0;
};

/// Mean-regression update: the estimating equation is affine in α, so the
/// new estimate is the weighted average of the previous estimate and the
/// batch's kernel sums. Exactly reproduces the pooled N-W estimator under
/// a shared bandwidth, and the weighted pooled form under per-batch
/// bandwidths.
inline RenewableState update_closed_form(const RenewableState& state, const Batch& batch,
                                         double h, const KernelSpec& kernel) {
  if (state.dim() != 1)
    throw std::invalid_argument("update_closed_form: requires dim 1 (mean regression)");
  validate_batch(batch);
  if (!(h > 0.0)) throw std::invalid_argument("update_closed_form: bandwidth must be positive");

  RenewableState next = state;
  const auto& pts = state.grid().points();
  const std::size_t n = batch.size();
  for (std::size_t g = 0; g < pts.size(); ++g) {
    const double x = pts[g];
    double sw = 0.0, sy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double w = kernel_weight(kernel, batch.xs[i] - x, h);
      sw += w;
      sy += batch.ys[i] * w;
    }
    const double jprev = next.weight_sum_[g];
    const double total = jprev + sw;
    if (total > 0.0) {
      next.estimate_[g] = (next.estimate_[g] * jprev + sy) / total;
      next.solved_[g] = 1;
    }
    next.weight_sum_[g] = total;
  }
  next.batch_count_ += 1;
  next.cumulative_n_ += static_cast<std::int64_t>(n);
  return next;
}

/// Solves, per grid point, the incremental estimating equation
///   Ĵ_{k−1}(x)(α − α̂_{k−1}(x)) − Σ_{i∈batch} U(α; Y_i, X_i) K_h(X_i − x) = 0
/// by damped Newton started at the previous estimate, then accumulates the
/// batch's J-weight at the converged root. On the first batch the Gamma
/// score starts from the local method-of-moments shape (points within 3h,
/// fallback 1); everything else starts at the zero convention.
///
/// A point where Newton cannot make progress is marked undefined and
/// counted in newton_failures(); a point with no information at all (zero
/// residual, singular weight) is skipped silently.
inline RenewableState update_newton(const RenewableState& state, const Batch& batch, double h,
                                    const KernelSpec& kernel, const EstimatingFunction& f,
                                    double tol = 1e-8, int max_iter = 50) {
  validate_batch(batch);
  if (!(h > 0.0)) throw std::invalid_argument("update_newton: bandwidth must be positive");
  if (f.dim != state.dim())
    throw std::invalid_argument("update_newton: estimating function dim mismatch");
  if (!(tol > 0.0) || max_iter < 1)
    throw std::invalid_argument("update_newton: bad tolerance or iteration cap");

  const int d = state.dim();
  RenewableState next = state;
  const auto& pts = state.grid().points();
  const std::size_t n = batch.size();
  const bool first_batch = state.batch_count() == 0;
  const bool gamma_like = f.name == "gamma-shape";

  std::vector<double> w(n);
  std::vector<double> alpha(d), alpha_try(d), resid(d), resid_try(d), step(d);
  std::vector<double> mat(d * d), rhs(d), uval(d), jval(d * d);

  // residual of the incremental equation at alpha
  auto eval_residual = [&](std::span<const double> a, std::span<const double> jprev,
                           std::span<const double> prev, std::span<double> out) {
    for (int r = 0; r < d; ++r) {
      double s = 0.0;
      for (int c = 0; c < d; ++c) s += jprev[r * d + c] * (a[c] - prev[c]);
      out[r] = s;
    }
    for (std::size_t i = 0; i < n; ++i) {
      if (w[i] == 0.0) continue;
      f.u(a, batch.ys[i], batch.xs[i], uval);
      for (int r = 0; r < d; ++r) out[r] -= w[i] * uval[r];
    }
  };

  for (std::size_t g = 0; g < pts.size(); ++g) {
    const double x = pts[g];
    double wtotal = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      w[i] = kernel_weight(kernel, batch.xs[i] - x, h);
      wtotal += w[i];
    }

    const std::span<const double> jprev = state.weight_sum(g);
    const std::span<const double> prev = state.estimate(g);

    // warm start
    if (first_batch && gamma_like) {
      double s = 0.0;
      std::size_t m = 0;
      for (std::size_t i = 0; i < n; ++i) {
        if (std::abs(batch.xs[i] - x) <= 3.0 * h) {
          s += batch.ys[i];
          ++m;
        }
      }
      alpha[0] = (m > 0 && s > 0.0) ? s / static_cast<double>(m) : 1.0;
    } else {
      std::copy(prev.begin(), prev.end(), alpha.begin());
      if (!f.alpha_ok(alpha)) alpha.assign(d, 1.0);  // previous batches left no valid root
    }

    eval_residual(alpha, jprev, prev, resid);
    double rnorm = detail::norm2(resid);

    bool converged = false, failed = false;
    for (int iter = 0; iter < max_iter; ++iter) {
      // curvature: Ĵ_{k−1} + Σ J(α)w
      std::copy(jprev.begin(), jprev.end(), mat.begin());
      for (std::size_t i = 0; i < n; ++i) {
        if (w[i] == 0.0) continue;
        f.j(alpha, batch.ys[i], batch.xs[i], jval);
        for (int c = 0; c < d * d; ++c) mat[c] += w[i] * jval[c];
      }
      std::copy(resid.begin(), resid.end(), rhs.begin());
      if (!detail::solve_small(mat, rhs, d)) {
        if (rnorm == 0.0) break;  // no data near this point: nothing to solve
        failed = true;
        break;
      }

      // damping: halve until the residual shrinks and the iterate stays
      // in-domain
      double lambda = 1.0;
      bool accepted = false;
      for (int t = 0; t <= 30; ++t) {
        for (int c = 0; c < d; ++c) {
          step[c] = lambda * rhs[c];
          alpha_try[c] = alpha[c] - step[c];
        }
        if (f.alpha_ok(alpha_try)) {
          eval_residual(alpha_try, jprev, prev, resid_try);
          const double rn = detail::norm2(resid_try);
          if (rn < rnorm || rn <= tol) {
            alpha.swap(alpha_try);
            resid.swap(resid_try);
            rnorm = rn;
            accepted = true;
            break;
          }
        }
        lambda *= 0.5;
      }
      if (!accepted) {
        failed = true;
        break;
      }
      if (detail::norm2(step) <= tol || rnorm <= tol) {
        converged = true;
        break;
      }
    }

    if (converged) {
      std::copy(alpha.begin(), alpha.end(),
                next.estimate_.begin() + static_cast<std::ptrdiff_t>(g) * d);
      next.solved_[g] = 1;
      // accumulate the batch weight at the converged root
      for (std::size_t i = 0; i < n; ++i) {
        if (w[i] == 0.0) continue;
        f.j(alpha, batch.ys[i], batch.xs[i], jval);
        for (int c = 0; c < d * d; ++c)
          next.weight_sum_[g * d * d + static_cast<std::size_t>(c)] += w[i] * jval[c];
      }
    } else if (failed || wtotal > 0.0) {
      next.solved_[g] = 0;
      next.newton_failures_ += 1;
    }
    // else: zero weight everywhere and nothing accumulated — leave as-is
  }

  next.batch_count_ += 1;
  next.cumulative_n_ += static_cast<std::int64_t>(n);
  return next;
}

}  // namespace rws
