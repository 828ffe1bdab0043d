#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "rws/errors.hpp"
#include "rws/types.hpp"

namespace rws {

/// Cubic truncated power basis B(x) = (1, x, x², x³, (x−t_1)₊³, …) on a
/// fixed knot layout. The public basis is in raw coordinates; accumulation
/// and solving happen on a copy of the basis rescaled to [−1, 1], which
/// keeps many-knot fits numerically sane, and coefficients are mapped back
/// so that predictions are γ̂ᵀB(x) against the raw basis.
class SplineBasis {
 public:
  SplineBasis(std::vector<double> knots, double lo, double hi)
      : knots_(std::move(knots)), lo_(lo), hi_(hi) {
    if (!(lo_ < hi_)) throw std::invalid_argument("spline basis: support must satisfy lo < hi");
    for (std::size_t i = 0; i < knots_.size(); ++i) {
      if (!(knots_[i] > lo_ && knots_[i] < hi_))
        throw std::invalid_argument("spline basis: knots must lie strictly inside the support");
      if (i > 0 && !(knots_[i - 1] < knots_[i]))
        throw std::invalid_argument("spline basis: knots must be strictly increasing");
    }
  }

  /// Equidistant interior knots: t_m = lo + m·(hi−lo)/(count+1).
  static SplineBasis equidistant(int knot_count, double lo, double hi) {
    if (knot_count < 0) throw std::invalid_argument("spline basis: negative knot count");
    std::vector<double> t(knot_count);
    for (int m = 1; m <= knot_count; ++m)
      t[m - 1] = lo + (hi - lo) * static_cast<double>(m) / (knot_count + 1);
    return SplineBasis(std::move(t), lo, hi);
  }

  int dim() const { return 4 + static_cast<int>(knots_.size()); }
  const std::vector<double>& knots() const { return knots_; }
  double lo() const { return lo_; }
  double hi() const { return hi_; }

  /// Raw truncated power basis at x.
  void eval(double x, std::span<double> out) const {
    out[0] = 1.0;
    out[1] = x;
    out[2] = x * x;
    out[3] = out[2] * x;
    for (std::size_t m = 0; m < knots_.size(); ++m) {
      const double u = x - knots_[m];
      out[4 + m] = u > 0.0 ? u * u * u : 0.0;
    }
  }

  std::vector<double> eval(double x) const {
    std::vector<double> out(dim());
    eval(x, out);
    return out;
  }

  double scaled(double x) const { return (2.0 * x - (lo_ + hi_)) / (hi_ - lo_); }

  /// Basis in the rescaled coordinate z(x); same span, better Gram
  /// conditioning.
  void eval_scaled(double x, std::span<double> out) const {
    const double z = scaled(x);
    out[0] = 1.0;
    out[1] = z;
    out[2] = z * z;
    out[3] = out[2] * z;
    for (std::size_t m = 0; m < knots_.size(); ++m) {
      const double u = z - scaled(knots_[m]);
      out[4 + m] = u > 0.0 ? u * u * u : 0.0;
    }
  }

  /// A with B_raw(x) = A·B_scaled(z(x)); lets scaled-space coefficients be
  /// mapped back to the raw basis (γ_raw = A⁻ᵀ γ_scaled).
  Eigen::MatrixXd raw_from_scaled() const {
    const int d = dim();
    const double w = 0.5 * (hi_ - lo_);
    const double m = 0.5 * (hi_ + lo_);
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(d, d);
    a(0, 0) = 1.0;
    a(1, 0) = m;
    a(1, 1) = w;
    a(2, 0) = m * m;
    a(2, 1) = 2.0 * m * w;
    a(2, 2) = w * w;
    a(3, 0) = m * m * m;
    a(3, 1) = 3.0 * m * m * w;
    a(3, 2) = 3.0 * m * w * w;
    a(3, 3) = w * w * w;
    for (int j = 4; j < d; ++j) a(j, j) = w * w * w;
    return a;
  }

  bool operator==(const SplineBasis& o) const {
    return knots_ == o.knots_ && lo_ == o.lo_ && hi_ == o.hi_;
  }

 private:
  std::vector<double> knots_;
  double lo_, hi_;
};

/// Accumulated normal equations of the renewable spline: the Gram matrix
/// and moment vector of everything seen so far. Partition-invariant by
/// construction; solving is a pure read.
class SplineState {
 public:
  explicit SplineState(SplineBasis basis)
      : basis_(std::move(basis)),
        bmat_(Eigen::MatrixXd::Zero(basis_.dim(), basis_.dim())),
        vvec_(Eigen::VectorXd::Zero(basis_.dim())) {}

  const SplineBasis& basis() const { return basis_; }
  const Eigen::MatrixXd& bmat() const { return bmat_; }
  const Eigen::VectorXd& vvec() const { return vvec_; }
  int batch_count() const { return batch_count_; }
  std::int64_t cumulative_n() const { return cumulative_n_; }

  friend SplineState update_spline(const SplineState&, const Batch&);

 private:
  SplineBasis basis_;
  Eigen::MatrixXd bmat_;
  Eigen::VectorXd vvec_;
  int batch_count_ = 0;
  std::int64_t cumulative_n_ = 0;
};

/// Adds the batch's outer products B(X)B(X)ᵀ and moments B(X)Y to the
/// accumulated normal equations. Does not solve.
inline SplineState update_spline(const SplineState& state, const Batch& batch) {
  validate_batch(batch);
  SplineState next = state;
  const int d = next.basis_.dim();
  Eigen::VectorXd b(d);
  for (std::size_t i = 0; i < batch.size(); ++i) {
    next.basis_.eval_scaled(batch.xs[i], {b.data(), static_cast<std::size_t>(d)});
    next.bmat_.noalias() += b * b.transpose();
    next.vvec_.noalias() += batch.ys[i] * b;
  }
  next.batch_count_ += 1;
  next.cumulative_n_ += static_cast<std::int64_t>(batch.size());
  return next;
}

/// Solves (B + ridge·I)γ = V and maps the coefficients to the raw basis.
/// The ridge is purely a numerical safeguard and defaults to zero so the
/// streamed and pooled routes agree exactly.
inline std::vector<double> solve_spline(const SplineState& state, double ridge = 0.0) {
  if (ridge < 0.0) throw std::invalid_argument("solve_spline: ridge must be non-negative");
  const int d = state.basis().dim();
  Eigen::MatrixXd m = state.bmat();
  if (ridge > 0.0) m.diagonal().array() += ridge;

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m);
  const double smallest = eig.eigenvalues().minCoeff();
  const double floor = 1e-12 * m.trace() / d;
  if (!(smallest > floor))
    throw SingularSystemError("solve_spline: normal equations numerically singular", smallest);

  Eigen::VectorXd gamma_scaled = eig.eigenvectors() *
      (eig.eigenvalues().cwiseInverse().asDiagonal() *
       (eig.eigenvectors().transpose() * state.vvec()));

  // back to raw-basis coefficients: Aᵀ γ_raw = γ_scaled
  Eigen::MatrixXd at = state.basis().raw_from_scaled().transpose();
  Eigen::VectorXd gamma = at.triangularView<Eigen::Upper>().solve(gamma_scaled);
  return {gamma.data(), gamma.data() + d};
}

/// r̂(x) = γ̂ᵀB(x) against the raw basis.
inline double spline_predict(const SplineBasis& basis, std::span<const double> gamma, double x) {
  std::vector<double> b(basis.dim());
  basis.eval(x, b);
  double s = 0.0;
  for (int c = 0; c < basis.dim(); ++c) s += gamma[c] * b[c];
  return s;
}

/// Leave-one-out CV over knot counts for a least-squares spline fit, via
/// the hat-matrix shortcut e_i/(1−H_ii). Candidates whose basis dimension
/// reaches the sample size are skipped; ties break toward fewer knots.
inline int select_knot_count(const std::vector<double>& xs, const std::vector<double>& ys,
                             double lo, double hi, int kn_min = 2, int kn_max = 20) {
  const std::size_t n = xs.size();
  if (n != ys.size()) throw std::invalid_argument("knot cv: xs and ys must have equal length");
  if (n < 10) throw std::invalid_argument("knot cv: need at least 10 observations");
  if (kn_min < 0 || kn_max < kn_min) throw std::invalid_argument("knot cv: bad candidate range");

  int best_kn = -1;
  double best_score = std::numeric_limits<double>::infinity();
  for (int kn = kn_min; kn <= kn_max; ++kn) {
    const SplineBasis basis = SplineBasis::equidistant(kn, lo, hi);
    const int d = basis.dim();
    if (static_cast<std::size_t>(d) >= n) continue;

    Eigen::MatrixXd gram = Eigen::MatrixXd::Zero(d, d);
    Eigen::VectorXd mom = Eigen::VectorXd::Zero(d);
    Eigen::MatrixXd bx(n, d);
    Eigen::VectorXd row(d);
    for (std::size_t i = 0; i < n; ++i) {
      basis.eval_scaled(xs[i], {row.data(), static_cast<std::size_t>(d)});
      bx.row(i) = row;
      gram.noalias() += row * row.transpose();
      mom.noalias() += ys[i] * row;
    }
    Eigen::LDLT<Eigen::MatrixXd> ldlt(gram);
    if (ldlt.info() != Eigen::Success) continue;
    Eigen::VectorXd gamma = ldlt.solve(mom);

    double err = 0.0;
    bool usable = true;
    for (std::size_t i = 0; i < n; ++i) {
      const double fit = bx.row(i).dot(gamma);
      const double hii = bx.row(i).dot(ldlt.solve(bx.row(i).transpose()));
      const double denom = 1.0 - hii;
      if (!(denom > 1e-10)) {
        usable = false;
        break;
      }
      const double r = (ys[i] - fit) / denom;
      err += r * r;
    }
    if (!usable) continue;
    if (err / static_cast<double>(n) < best_score) {
      best_score = err / static_cast<double>(n);
      best_kn = kn;
    }
  }
  if (best_kn < 0) throw std::runtime_error("knot cv: no usable knot count");
  return best_kn;
}

}  // namespace rws
