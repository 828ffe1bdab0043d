#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "rws/estfun.hpp"
#include "rws/kernel.hpp"
#include "rws/renew.hpp"
#include "rws/spline.hpp"
#include "rws/types.hpp"

namespace rws {

/// Full-data N-W ratio estimator on the grid. Points whose denominator
/// stays below the degeneracy threshold are undefined.
inline GridEstimate nw_full(const PooledDataset& data, double h, const KernelSpec& kernel,
                            const EvaluationGrid& grid) {
  if (data.n() == 0) throw std::invalid_argument("nw_full: empty data");
  if (!(h > 0.0)) throw std::invalid_argument("nw_full: bandwidth must be positive");
  GridEstimate out(grid.size(), 1);
  for (std::size_t g = 0; g < grid.size(); ++g) {
    const double x = grid[g];
    double sw = 0.0, sy = 0.0;
    for (std::size_t i = 0; i < data.n(); ++i) {
      const double w = kernel_weight(kernel, data.xs[i] - x, h);
      sw += w;
      sy += data.ys[i] * w;
    }
    if (sw >= kDegeneracyThreshold) {
      out.values[g] = sy / sw;
      out.defined[g] = 1;
    }
  }
  return out;
}

/// Arithmetic mean of the per-batch N-W estimates; a grid point undefined
/// in some batch is excluded from that batch's contribution and the
/// divisor adjusts. batches_used reports the per-point divisor.
struct BatchAverage {
  GridEstimate estimate;
  std::vector<int> batches_used;
};

inline BatchAverage nw_batch_average(const std::vector<Batch>& batches,
                                     const std::vector<double>& per_batch_h,
                                     const KernelSpec& kernel, const EvaluationGrid& grid) {
  if (batches.empty()) throw std::invalid_argument("nw_batch_average: no batches");
  if (batches.size() != per_batch_h.size())
    throw std::invalid_argument("nw_batch_average: need one bandwidth per batch");

  BatchAverage out{GridEstimate(grid.size(), 1), std::vector<int>(grid.size(), 0)};
  std::vector<double> acc(grid.size(), 0.0);
  for (std::size_t b = 0; b < batches.size(); ++b) {
    PooledDataset one;
    one.append(batches[b]);
    const GridEstimate est = nw_full(one, per_batch_h[b], kernel, grid);
    for (std::size_t g = 0; g < grid.size(); ++g) {
      if (!est.is_defined(g)) continue;
      acc[g] += est.values[g];
      out.batches_used[g] += 1;
    }
  }
  for (std::size_t g = 0; g < grid.size(); ++g) {
    if (out.batches_used[g] == 0) continue;
    out.estimate.values[g] = acc[g] / out.batches_used[g];
    out.estimate.defined[g] = 1;
  }
  return out;
}

/// Full-data estimating-equation root at each grid point: solves
/// Σ_i U(α; Y_i, X_i)K_h(X_i − x) = 0 by the same damped Newton as the
/// renewable engine (this is its single-batch, zero-history case). With a
/// likelihood score this is the pooled nonparametric MLE; with the
/// mean-variance function it is the pooled N-W mean/variance pair.
inline GridEstimate nml_full(const PooledDataset& data, double h, const KernelSpec& kernel,
                             const EstimatingFunction& f, const EvaluationGrid& grid,
                             double tol = 1e-8, int max_iter = 50) {
  if (data.n() == 0) throw std::invalid_argument("nml_full: empty data");
  Batch all;
  all.xs = data.xs;
  all.ys = data.ys;
  all.index = 1;
  RenewableState state(grid, f.dim);
  state = update_newton(state, all, h, kernel, f, tol, max_iter);
  return state.to_grid_estimate();
}

/// Mean of per-batch estimating-equation roots, divisor adjusted exactly
/// like nw_batch_average.
inline BatchAverage nml_batch_average(const std::vector<Batch>& batches,
                                      const std::vector<double>& per_batch_h,
                                      const KernelSpec& kernel, const EstimatingFunction& f,
                                      const EvaluationGrid& grid, double tol = 1e-8,
                                      int max_iter = 50) {
  if (batches.empty()) throw std::invalid_argument("nml_batch_average: no batches");
  if (batches.size() != per_batch_h.size())
    throw std::invalid_argument("nml_batch_average: need one bandwidth per batch");

  const int d = f.dim;
  BatchAverage out{GridEstimate(grid.size(), d), std::vector<int>(grid.size(), 0)};
  std::vector<double> acc(grid.size() * d, 0.0);
  for (std::size_t b = 0; b < batches.size(); ++b) {
    PooledDataset one;
    one.append(batches[b]);
    const GridEstimate est = nml_full(one, per_batch_h[b], kernel, f, grid, tol, max_iter);
    for (std::size_t g = 0; g < grid.size(); ++g) {
      if (!est.is_defined(g)) continue;
      for (int c = 0; c < d; ++c) acc[g * d + c] += est.value(g, c);
      out.batches_used[g] += 1;
    }
  }
  for (std::size_t g = 0; g < grid.size(); ++g) {
    if (out.batches_used[g] == 0) continue;
    for (int c = 0; c < d; ++c)
      out.estimate.values[g * d + c] = acc[g * d + c] / out.batches_used[g];
    out.estimate.defined[g] = 1;
  }
  return out;
}

/// Pooled least-squares spline fit: assembles the normal equations over
/// the full data in one pass and solves.
inline std::vector<double> spline_full(const PooledDataset& data, const SplineBasis& basis,
                                       double ridge = 0.0) {
  if (data.n() == 0) throw std::invalid_argument("spline_full: empty data");
  SplineState state(basis);
  Batch all;
  all.xs = data.xs;
  all.ys = data.ys;
  state = update_spline(state, all);
  return solve_spline(state, ridge);
}

/// Mean of per-batch spline coefficient vectors on a shared basis; batches
/// whose solve is singular are skipped and reported through the divisor.
struct SplineAverage {
  std::vector<double> gamma;
  int batches_used = 0;
};

inline SplineAverage spline_batch_average(const std::vector<Batch>& batches,
                                          const SplineBasis& basis, double ridge = 0.0) {
  if (batches.empty()) throw std::invalid_argument("spline_batch_average: no batches");
  SplineAverage out;
  out.gamma.assign(basis.dim(), 0.0);
  for (const Batch& b : batches) {
    PooledDataset one;
    one.append(b);
    try {
      const std::vector<double> gamma = spline_full(one, basis, ridge);
      for (int c = 0; c < basis.dim(); ++c) out.gamma[c] += gamma[c];
      out.batches_used += 1;
    } catch (const SingularSystemError&) {
      continue;
    }
  }
  if (out.batches_used == 0)
    throw std::runtime_error("spline_batch_average: every batch fit was singular");
  for (double& c : out.gamma) c /= out.batches_used;
  return out;
}

/// Evaluates spline coefficients on a grid (always defined).
inline GridEstimate spline_on_grid(const SplineBasis& basis, std::span<const double> gamma,
                                   const EvaluationGrid& grid) {
  GridEstimate out(grid.size(), 1);
  for (std::size_t g = 0; g < grid.size(); ++g) {
    out.values[g] = spline_predict(basis, gamma, grid[g]);
    out.defined[g] = 1;
  }
  return out;
}

}  // namespace rws
