#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "mfsys/stats.hpp"

using namespace mfsys;

namespace {

JobClassSpec make(PlacementKind kind, int d, int k, double rate, SizeFamily sizes) {
  JobClassSpec c;
  c.kind = kind;
  c.d = d;
  c.k = k;
  c.rate = rate;
  c.sizes = ComponentDistribution(std::move(sizes), k);
  return c;
}

FspEstimate oracle_of(std::vector<double> grid, std::vector<double> values, std::vector<double> se) {
  FspEstimate e;
  e.tail.grid = std::move(grid);
  e.tail.values = std::move(values);
  e.se = std::move(se);
  return e;
}

}  // namespace

TEST(Tail, Examples) {
  const std::vector<double> w{0, 0, 1, 3};
  const std::vector<double> grid{0, 0.5, 1, 2, 3};
  const auto t = empirical_tail(w, grid);
  EXPECT_EQ(t.values, (std::vector<double>{0.5, 0.5, 0.25, 0.25, 0.0}));
  const std::vector<double> inf(5, kInf);
  for (double x : empirical_tail(inf, grid).values) EXPECT_EQ(x, 1.0);
  const std::vector<double> bad{1, 1};
  EXPECT_THROW(empirical_tail(w, bad), std::invalid_argument);
}

TEST(Tail, NonIncreasingAndBounded) {
  RngStream rng(1);
  std::vector<double> grid;
  for (double v = 0; v <= 5; v += 0.1) grid.push_back(v);
  for (int rep = 0; rep < 100; ++rep) {
    std::vector<double> w(50);
    for (double& x : w) x = rng.uniform01() < 0.3 ? 0.0 : rng.exponential(1.0);
    const auto t = empirical_tail(w, grid);
    for (std::size_t g = 0; g < grid.size(); ++g) {
      EXPECT_GE(t.values[g], 0.0);
      EXPECT_LE(t.values[g], 1.0);
      if (g > 0) {
        EXPECT_LE(t.values[g], t.values[g - 1]);
      }
    }
  }
}

TEST(Distance, MetricProperties) {
  RngStream rng(2);
  const std::vector<double> grid{0, 1, 2, 3};
  auto random_tail = [&] {
    std::vector<double> w(20);
    for (double& x : w) x = rng.exponential(1.5);
    return empirical_tail(w, grid);
  };
  for (int rep = 0; rep < 100; ++rep) {
    const auto a = random_tail();
    const auto b = random_tail();
    const auto c = random_tail();
    EXPECT_EQ(ks_distance(a, a), 0.0);
    EXPECT_EQ(ks_distance(a, b), ks_distance(b, a));
    EXPECT_LE(ks_distance(a, c), ks_distance(a, b) + ks_distance(b, c) + 1e-15);
  }
}

TEST(Distance, ShiftedExponentialTails) {
  // e^{-w} against e^{-(w - s)} capped at 1: the gap peaks at w = s.
  const double s = 0.5;
  std::vector<double> grid;
  for (double v = 0; v <= 6; v += 0.01) grid.push_back(v);
  EmpiricalTail a{grid, {}};
  EmpiricalTail b{grid, {}};
  for (double v : grid) {
    a.values.push_back(std::exp(-v));
    b.values.push_back(std::min(1.0, std::exp(-(v - s))));
  }
  EXPECT_NEAR(ks_distance(a, b), 1.0 - std::exp(-s), 1e-9);
  EXPECT_LE(ks_distance(a, b), s);
}

TEST(Independence, SingleServerVarianceIsBernoulli) {
  RngStream rng(3);
  const double p = 0.3;
  std::vector<std::vector<double>> samples;
  for (int r = 0; r < 20000; ++r) samples.push_back({rng.uniform01() < p ? 1.0 : 0.0});
  const std::vector<double> grid{0};
  const auto rep = independence_from_samples(samples, grid, 1);
  EXPECT_NEAR(rep.variance[0], p * (1 - p), 4 * rep.variance_se[0]);
  EXPECT_TRUE(std::isnan(rep.pair_covariance[0]));
}

TEST(Independence, FullyDependentServers) {
  // All n indicators equal: x is 0 or 1, so every pair has covariance p(1-p).
  RngStream rng(4);
  const double p = 0.4;
  std::vector<std::vector<double>> samples;
  for (int r = 0; r < 20000; ++r) samples.push_back({rng.uniform01() < p ? 1.0 : 0.0});
  const std::vector<double> grid{0};
  const auto rep = independence_from_samples(samples, grid, 50);
  EXPECT_NEAR(rep.pair_covariance[0], p * (1 - p), 4 * rep.pair_covariance_se[0]);
}

TEST(Independence, IidServersHaveNoCovariance) {
  RngStream rng(5);
  const std::size_t n = 200;
  const double p = 0.25;
  std::vector<std::vector<double>> samples;
  for (int r = 0; r < 2000; ++r) {
    int hits = 0;
    for (std::size_t i = 0; i < n; ++i) hits += rng.uniform01() < p;
    samples.push_back({static_cast<double>(hits) / n});
  }
  const std::vector<double> grid{0};
  const auto rep = independence_from_samples(samples, grid, n);
  EXPECT_NEAR(rep.variance[0], p * (1 - p) / n, 4 * rep.variance_se[0]);
  EXPECT_NEAR(rep.pair_covariance[0], 0.0, 4 * rep.pair_covariance_se[0]);
}

TEST(Independence, NeedsEnoughReplications) {
  SystemConfig cfg;
  cfg.n = 10;
  cfg.classes = {make(PlacementKind::LeastLoad, 2, 1, 0.5, Exponential{1.0})};
  const std::vector<double> grid{0};
  EXPECT_THROW(independence_test(cfg, grid, 29, RngStream(1)), std::invalid_argument);
}

TEST(Independence, FiniteSystemCovarianceIsSmall) {
  SystemConfig cfg;
  cfg.n = 500;
  cfg.classes = {make(PlacementKind::LeastLoad, 2, 1, 0.5, Exponential{1.0})};
  const std::vector<double> grid{0, 1};
  IndependenceOptions opt;
  opt.warmup = 30;
  const auto rep = independence_test(cfg, grid, 100, RngStream(6), opt);
  for (std::size_t g = 0; g < grid.size(); ++g)
    EXPECT_LT(std::abs(rep.pair_covariance[g]), 4 * rep.pair_covariance_se[g] + 0.005);
}

TEST(Oracle, IdenticalTails) {
  const std::vector<double> grid{0, 1, 2};
  const auto o = oracle_of(grid, {0.5, 0.2, 0.1}, {0.01, 0.01, 0.01});
  const auto cmp = compare_to_oracle(o.tail, o.se, o);
  EXPECT_EQ(cmp.sup_gap, 0.0);
  EXPECT_EQ(cmp.max_abs_z, 0.0);
  EXPECT_FALSE(cmp.flagged);
}

TEST(Oracle, ExactOracleWithMismatchIsFlagged) {
  const std::vector<double> grid{0, 1};
  const auto o = oracle_of(grid, {0.5, 0.2}, {0.0, 0.0});
  const EmpiricalTail finite{grid, {0.5, 0.3}};
  const auto cmp = compare_to_oracle(finite, {}, o);
  EXPECT_NEAR(cmp.sup_gap, 0.1, 1e-15);
  EXPECT_TRUE(std::isinf(cmp.z[1]));
  EXPECT_TRUE(cmp.flagged);
  const EmpiricalTail other_grid{{0, 2}, {0.5, 0.3}};
  EXPECT_THROW(compare_to_oracle(other_grid, {}, o), std::invalid_argument);
}

// A steady-state run against the M/M/1 tail passes, and the same run
// against a system with a different arrival rate is flagged.
TEST(Oracle, DetectsWrongArrivalRate) {
  SystemConfig cfg;
  cfg.n = 5000;
  cfg.classes = {make(PlacementKind::LeastLoad, 1, 1, 0.5, Exponential{1.0})};
  SteadyStateOptions opt;
  opt.grid = {0, 0.5, 1, 2};
  const auto est = steady_state(cfg, opt, RngStream(7));
  auto exact = [&](double rho) {
    std::vector<double> v;
    for (double w : opt.grid) v.push_back(rho * std::exp(-(1 - rho) * w));
    return oracle_of(opt.grid, v, std::vector<double>(opt.grid.size(), 1e-3));
  };
  const auto right = compare_to_oracle(est.tail, est.se, exact(0.5));
  EXPECT_FALSE(right.flagged);
  const auto wrong = compare_to_oracle(est.tail, est.se, exact(0.6));
  EXPECT_TRUE(wrong.flagged);
}

TEST(Oracle, BinomialStandardError) {
  EXPECT_DOUBLE_EQ(binomial_se(0.5, 100), 0.05);
  EXPECT_EQ(binomial_se(0.0, 100), 0.0);
  EXPECT_EQ(binomial_se(1.0, 100), 0.0);
}
