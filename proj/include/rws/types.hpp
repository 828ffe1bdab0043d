#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

namespace rws {

/// Accumulated kernel weight below which a grid point is treated as
/// undefined instead of being computed by near-zero division. Shared by
/// the renewable engine, the baselines and the CV scorer.
inline constexpr double kDegeneracyThreshold = 1e-8;

/// One streaming data chunk: paired covariate/response vectors.
struct Batch {
  std::vector<double> xs;
  std::vector<double> ys;
  int index = 1;  // position in the stream, 1-based

  std::size_t size() const { return xs.size(); }
};

inline void validate_batch(const Batch& b) {
  if (b.xs.size() != b.ys.size())
    throw std::invalid_argument("batch: xs and ys must have equal length");
  if (b.xs.empty()) throw std::invalid_argument("batch: empty");
  for (std::size_t i = 0; i < b.xs.size(); ++i) {
    if (!std::isfinite(b.xs[i]) || !std::isfinite(b.ys[i]))
      throw std::invalid_argument("batch: non-finite value at row " + std::to_string(i + 1));
  }
}

/// The entire stream retained in memory, for the full-data reference
/// estimators.
struct PooledDataset {
  std::vector<double> xs;
  std::vector<double> ys;

  std::size_t n() const { return xs.size(); }

  void append(const Batch& b) {
    xs.insert(xs.end(), b.xs.begin(), b.xs.end());
    ys.insert(ys.end(), b.ys.begin(), b.ys.end());
  }
};

/// Fixed evaluation abscissae plus the covariate support and the
/// boundary trim fraction used when scoring (interior evaluation only).
class EvaluationGrid {
 public:
  EvaluationGrid(std::vector<double> points, double lo, double hi, double boundary_trim)
      : points_(std::move(points)), lo_(lo), hi_(hi), trim_(boundary_trim) {
    if (!(lo_ < hi_)) throw std::invalid_argument("grid: support must satisfy lo < hi");
    if (!(trim_ >= 0.0 && trim_ < 0.5))
      throw std::invalid_argument("grid: boundary trim must be in [0, 0.5)");
    if (points_.empty()) throw std::invalid_argument("grid: no points");
    for (std::size_t i = 0; i < points_.size(); ++i) {
      if (points_[i] < lo_ || points_[i] > hi_)
        throw std::invalid_argument("grid: point outside support");
      if (i > 0 && !(points_[i - 1] < points_[i]))
        throw std::invalid_argument("grid: points must be strictly increasing");
    }
    if (interior_count() == 0) throw std::invalid_argument("grid: empty interior");
  }

  static EvaluationGrid uniform(double lo, double hi, int n_points, double boundary_trim) {
    if (n_points < 2) throw std::invalid_argument("grid: need at least 2 points");
    std::vector<double> pts(n_points);
    for (int i = 0; i < n_points; ++i)
      pts[i] = lo + (hi - lo) * static_cast<double>(i) / (n_points - 1);
    pts.back() = hi;
    return EvaluationGrid(std::move(pts), lo, hi, boundary_trim);
  }

  const std::vector<double>& points() const { return points_; }
  std::size_t size() const { return points_.size(); }
  double operator[](std::size_t i) const { return points_[i]; }
  double lo() const { return lo_; }
  double hi() const { return hi_; }
  double trim() const { return trim_; }

  double interior_lo() const { return lo_ + trim_ * (hi_ - lo_); }
  double interior_hi() const { return hi_ - trim_ * (hi_ - lo_); }
  bool interior(double x) const { return x >= interior_lo() && x <= interior_hi(); }

  std::size_t interior_count() const {
    std::size_t c = 0;
    for (double p : points_) c += interior(p);
    return c;
  }

  bool operator==(const EvaluationGrid& o) const {
    return points_ == o.points_ && lo_ == o.lo_ && hi_ == o.hi_ && trim_ == o.trim_;
  }

 private:
  std::vector<double> points_;
  double lo_, hi_, trim_;
};

/// Per-grid-point curve values (dim components per point) plus the
/// defined mask. The common currency between estimators and scoring.
struct GridEstimate {
  int dim = 1;
  std::vector<double> values;   // size() * dim, point-major
  std::vector<char> defined;    // size()

  GridEstimate() = default;
  GridEstimate(std::size_t n_points, int d)
      : dim(d), values(n_points * d, 0.0), defined(n_points, 0) {}

  std::size_t size() const { return defined.size(); }
  double value(std::size_t point, int component = 0) const {
    return values[point * dim + component];
  }
  bool is_defined(std::size_t point) const { return defined[point] != 0; }
};

}  // namespace rws
