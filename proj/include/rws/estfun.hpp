#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace rws {

/// ψ(a), absolute accuracy ~1e−14 for a > 0. Upward recurrence shifts the
/// argument to >= 10, then the asymptotic series in 1/a² takes over.
inline double digamma(double a) {
  if (!(a > 0.0)) throw std::domain_error("digamma: argument must be positive");
  double result = 0.0;
  while (a < 10.0) {
    result -= 1.0 / a;
    a += 1.0;
  }
  const double inv = 1.0 / a;
  const double inv2 = inv * inv;
  // ln a − 1/(2a) − Σ B_{2n}/(2n a^{2n}), truncated after a^{-12}
  double series = inv2 * (1.0 / 12.0 - inv2 * (1.0 / 120.0 - inv2 * (1.0 / 252.0 -
                  inv2 * (1.0 / 240.0 - inv2 * (1.0 / 132.0 - inv2 * (691.0 / 32760.0))))));
  return result + std::log(a) - 0.5 * inv - series;
}

/// ψ′(a), same scheme: recurrence ψ′(a) = ψ′(a+1) + 1/a², then the
/// asymptotic series.
inline double trigamma(double a) {
  if (!(a > 0.0)) throw std::domain_error("trigamma: argument must be positive");
  double result = 0.0;
  while (a < 10.0) {
    result += 1.0 / (a * a);
    a += 1.0;
  }
  const double inv = 1.0 / a;
  const double inv2 = inv * inv;
  double series = 1.0 + inv * (0.5 + inv * (1.0 / 6.0 - inv2 * (1.0 / 30.0 - inv2 *
                  (1.0 / 42.0 - inv2 * (1.0 / 30.0 - inv2 * (5.0 / 66.0))))));
  return result + inv * series;
}

/// The pair (U, J): an unbiased estimating function and its negated
/// α-derivative. J doubles as the Newton curvature and the accumulated
/// weight of the renewable update. `u` writes dim values, `j` writes a
/// dim×dim row-major matrix. `in_domain` guards iterates during damping.
struct EstimatingFunction {
  int dim = 1;
  std::string name;
  std::function<void(std::span<const double> alpha, double y, double x,
                     std::span<double> u_out)> u;
  std::function<void(std::span<const double> alpha, double y, double x,
                     std::span<double> j_out)> j;
  std::function<bool(std::span<const double> alpha)> in_domain;

  std::vector<double> eval_u(std::span<const double> alpha, double y, double x) const {
    check(alpha);
    std::vector<double> out(dim);
    u(alpha, y, x, out);
    return out;
  }

  std::vector<double> eval_j(std::span<const double> alpha, double y, double x) const {
    check(alpha);
    std::vector<double> out(dim * dim);
    j(alpha, y, x, out);
    return out;
  }

  bool alpha_ok(std::span<const double> alpha) const {
    return !in_domain || in_domain(alpha);
  }

 private:
  void check(std::span<const double> alpha) const {
    if (static_cast<int>(alpha.size()) != dim)
      throw std::invalid_argument("estimating function: alpha has wrong length");
    if (!alpha_ok(alpha))
      throw std::domain_error("estimating function: alpha outside domain");
  }
};

/// U = y − α, J = 1. Mean regression; the renewable update has a closed form.
inline EstimatingFunction mean_regression() {
  EstimatingFunction f;
  f.dim = 1;
  f.name = "mean";
  f.u = [](std::span<const double> a, double y, double, std::span<double> out) {
    out[0] = y - a[0];
  };
  f.j = [](std::span<const double>, double, double, std::span<double> out) { out[0] = 1.0; };
  return f;
}

/// α = (r, σ²), U = (y − r, (y−r)² − σ²). J is lower triangular with unit
/// diagonal, so the accumulated weight is always invertible.
inline EstimatingFunction mean_variance() {
  EstimatingFunction f;
  f.dim = 2;
  f.name = "mean-variance";
  f.u = [](std::span<const double> a, double y, double, std::span<double> out) {
    const double r = y - a[0];
    out[0] = r;
    out[1] = r * r - a[1];
  };
  f.j = [](std::span<const double> a, double y, double, std::span<double> out) {
    out[0] = 1.0;
    out[1] = 0.0;
    out[2] = 2.0 * (y - a[0]);
    out[3] = 1.0;
  };
  return f;
}

/// Score of Gamma(a, scale 1) in the shape: U = log y − ψ(a), J = ψ′(a).
/// Requires a > 0 and y > 0.
inline EstimatingFunction gamma_shape_score() {
  EstimatingFunction f;
  f.dim = 1;
  f.name = "gamma-shape";
  f.u = [](std::span<const double> a, double y, double, std::span<double> out) {
    if (!(y > 0.0)) throw std::domain_error("gamma score: response must be positive");
    out[0] = std::log(y) - digamma(a[0]);
  };
  f.j = [](std::span<const double> a, double, double, std::span<double> out) {
    out[0] = trigamma(a[0]);
  };
  f.in_domain = [](std::span<const double> a) { return a[0] > 0.0; };
  return f;
}

inline EstimatingFunction estimating_function_from_name(const std::string& name) {
  if (name == "mean") return mean_regression();
  if (name == "mean-variance") return mean_variance();
  if (name == "gamma-shape") return gamma_shape_score();
  throw std::invalid_argument("unknown estimating function '" + name + "'");
}

/// Central finite-difference J for user-supplied U without an analytic
/// derivative. Step 1e−6·(1+|α_c|) per coordinate.
inline EstimatingFunction with_finite_difference_j(EstimatingFunction f) {
  const int d = f.dim;
  auto u = f.u;
  f.j = [u, d](std::span<const double> alpha, double y, double x, std::span<double> out) {
    std::vector<double> ap(alpha.begin(), alpha.end());
    std::vector<double> up(d), um(d);
    for (int c = 0; c < d; ++c) {
      const double step = 1e-6 * (1.0 + std::abs(alpha[c]));
      const double saved = ap[c];
      ap[c] = saved + step;
      u(ap, y, x, up);
      ap[c] = saved - step;
      u(ap, y, x, um);
      ap[c] = saved;
      for (int r = 0; r < d; ++r)
        out[r * d + c] = -(up[r] - um[r]) / (2.0 * step);  // J = −∂U/∂α
    }
  };
  return f;
}

}  // namespace rws
