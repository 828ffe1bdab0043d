#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "rws/simgen.hpp"

namespace {

using rws::Batch;
using rws::ModelSpec;
using rws::PointRng;
using rws::StreamPlan;

TEST(NormalQuantile, KnownValuesAndRoundTrip) {
  EXPECT_NEAR(rws::detail::normal_quantile(0.5), 0.0, 1e-15);
  EXPECT_NEAR(rws::detail::normal_quantile(0.975), 1.959963984540054, 1e-12);
  EXPECT_NEAR(rws::detail::normal_quantile(0.0013498980316300945), -3.0, 1e-11);
  for (double p : {1e-12, 1e-6, 0.01, 0.3, 0.5, 0.77, 0.999, 1.0 - 1e-9}) {
    const double x = rws::detail::normal_quantile(p);
    const double back = 0.5 * std::erfc(-x / std::numbers::sqrt2);
    EXPECT_NEAR(back, p, 1e-14 + 1e-12 * p);
  }
  EXPECT_THROW(rws::detail::normal_quantile(0.0), std::domain_error);
  EXPECT_THROW(rws::detail::normal_quantile(1.0), std::domain_error);
}

TEST(Stream, DeterministicInSeedAndReplication) {
  const StreamPlan plan{100, 30, 42, 3};
  const auto a = rws::generate_stream(ModelSpec::heteroscedastic(), plan);
  const auto b = rws::generate_stream(ModelSpec::heteroscedastic(), plan);
  ASSERT_EQ(a.size(), b.size());
  ASSERT_EQ(a.size(), 4u);  // 30+30+30+10
  EXPECT_EQ(a.back().size(), 10u);
  for (std::size_t j = 0; j < a.size(); ++j) {
    EXPECT_EQ(a[j].xs, b[j].xs);
    EXPECT_EQ(a[j].ys, b[j].ys);
    EXPECT_EQ(a[j].index, static_cast<int>(j) + 1);
  }
}

TEST(Stream, PartitionInvariance) {
  for (auto family : {ModelSpec::homoscedastic(), ModelSpec::gamma_law()}) {
    const auto whole = rws::generate_stream(family, {97, 97, 7, 1});
    const auto parts = rws::generate_stream(family, {97, 13, 7, 1});
    std::vector<double> xs, ys;
    for (const Batch& b : parts) {
      xs.insert(xs.end(), b.xs.begin(), b.xs.end());
      ys.insert(ys.end(), b.ys.begin(), b.ys.end());
    }
    EXPECT_EQ(whole.front().xs, xs);
    EXPECT_EQ(whole.front().ys, ys);
  }
}

TEST(Stream, DistinctReplicationsDecorrelated) {
  const int reps = 100, m = 200;
  std::vector<std::vector<double>> ys(reps);
  for (int r = 0; r < reps; ++r) {
    const auto s = rws::generate_stream(ModelSpec::homoscedastic(),
                                        {m, m, 2021, static_cast<std::uint64_t>(r)});
    ys[r] = s.front().ys;
  }
  for (int r = 0; r + 1 < reps; ++r) {
    double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
    for (int i = 0; i < m; ++i) {
      sx += ys[r][i];
      sy += ys[r + 1][i];
      sxx += ys[r][i] * ys[r][i];
      syy += ys[r + 1][i] * ys[r + 1][i];
      sxy += ys[r][i] * ys[r + 1][i];
    }
    const double cov = sxy / m - (sx / m) * (sy / m);
    const double corr =
        cov / std::sqrt((sxx / m - sx / m * sx / m) * (syy / m - sy / m * sy / m));
    EXPECT_LT(std::abs(corr), 4.5 / std::sqrt(static_cast<double>(m)));
  }
}

TEST(Stream, HomoscedasticMeanNearZero) {
  const auto s = rws::generate_stream(ModelSpec::homoscedastic(), {100000, 100000, 11, 0});
  double sum = 0.0, sq = 0.0;
  for (double y : s.front().ys) {
    sum += y;
    sq += y * y;
  }
  const int n = 100000;
  const double mean = sum / n;
  const double sd = std::sqrt(sq / n - mean * mean);
  EXPECT_LE(std::abs(mean), 4.0 * sd / std::sqrt(static_cast<double>(n)));
}

TEST(Stream, GammaBandMeanAtCenter) {
  // E[Y | X = 0] = exp(1/2); condition on a narrow band via rejection
  const auto s = rws::generate_stream(ModelSpec::gamma_law(), {400000, 400000, 23, 0});
  double sum = 0.0, sq = 0.0;
  int n = 0;
  for (std::size_t i = 0; i < s.front().size(); ++i) {
    if (std::abs(s.front().xs[i]) > 0.02) continue;
    sum += s.front().ys[i];
    sq += s.front().ys[i] * s.front().ys[i];
    ++n;
  }
  ASSERT_GT(n, 1000);
  const double mean = sum / n;
  const double sd = std::sqrt(sq / n - mean * mean);
  EXPECT_NEAR(mean, std::exp(0.5), 4.0 * sd / std::sqrt(static_cast<double>(n)));
}

TEST(Stream, ValidatesPlan) {
  EXPECT_THROW(rws::generate_stream(ModelSpec::homoscedastic(), {0, 10, 1, 0}),
               std::invalid_argument);
  EXPECT_THROW(rws::generate_stream(ModelSpec::homoscedastic(), {10, 0, 1, 0}),
               std::invalid_argument);
}

TEST(GammaSample, MomentsAtShapeTwo) {
  PointRng rng(99, 0, 0);
  const int n = 1000000;
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double g = rws::gamma_sample(2.0, rng);
    ASSERT_GT(g, 0.0);
    sum += g;
    sq += g * g;
  }
  const double mean = sum / n;
  const double var = sq / n - mean * mean;
  // E = shape, Var = shape; se of the sample variance ≈ √((μ4 − σ⁴)/n) = √(20/n)
  EXPECT_NEAR(mean, 2.0, 4.0 * std::sqrt(2.0 / n));
  EXPECT_NEAR(var, 2.0, 4.0 * std::sqrt(20.0 / n));
}

TEST(GammaSample, BoostingPathForSmallShapes) {
  PointRng rng(100, 0, 0);
  const int n = 400000;
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double g = rws::gamma_sample(0.5, rng);
    ASSERT_GT(g, 0.0);
    sum += g;
    sq += g * g;
  }
  const double mean = sum / n;
  const double var = sq / n - mean * mean;
  EXPECT_NEAR(mean, 0.5, 4.0 * std::sqrt(0.5 / n));
  EXPECT_NEAR(var, 0.5, 4.0 * std::sqrt(4.0 / n));
  EXPECT_THROW(rws::gamma_sample(0.0, rng), std::domain_error);
  EXPECT_THROW(rws::gamma_sample(-1.0, rng), std::domain_error);
}

TEST(ModelSpec, TruthFunctions) {
  double out[2];
  ModelSpec::homoscedastic().truth(0.7, out);
  EXPECT_DOUBLE_EQ(out[0], std::sin(1.4));
  ModelSpec::heteroscedastic().truth(0.3, out);
  EXPECT_DOUBLE_EQ(out[0], 0.3 + std::cos(0.3 * std::numbers::pi));
  const double s = std::exp(0.3) - 0.25;
  EXPECT_DOUBLE_EQ(out[1], s * s);
  ModelSpec::gamma_law().truth(-0.4, out);
  EXPECT_DOUBLE_EQ(out[0], std::exp(0.5 * std::cos(0.4)));
}

}  // namespace
