#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <vector>

#include <gtest/gtest.h>

#include "mfsys/finite_sim.hpp"

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

SystemConfig mm1_config(std::size_t n) {
  SystemConfig cfg;
  cfg.n = n;
  cfg.classes = {make(PlacementKind::LeastLoad, 1, 1, 0.5, Exponential{1.0})};
  return cfg;
}

SystemConfig mixed_config(std::size_t n) {
  SystemConfig cfg;
  cfg.n = n;
  cfg.classes = {make(PlacementKind::WaterFill, 3, 2, 0.2, Exponential{1.0}),
                 make(PlacementKind::LeastLoad, 2, 1, 0.3, Uniform{0.0, 2.0})};
  return cfg;
}

}  // namespace

TEST(Run, ZeroRatesStayEmpty) {
  SystemConfig cfg;
  cfg.n = 100;
  cfg.classes = {make(PlacementKind::LeastLoad, 2, 1, 0.0, Exponential{1.0})};
  cfg.horizon = 10;
  cfg.snapshots = {{0, {0, 1}}, {5, {0, 1}}, {10, {0, 1}}};
  const auto res = run(cfg, RngStream(1));
  ASSERT_EQ(res.snapshots.size(), 3U);
  for (const auto& s : res.snapshots)
    for (double x : s.tail.values) EXPECT_EQ(x, 0.0);
  EXPECT_EQ(res.summary.arrivals, 0U);
}

TEST(Run, PureDecay) {
  SystemConfig cfg;
  cfg.n = 50;
  cfg.initial = {{1.0, 5.0}};
  cfg.horizon = 6;
  cfg.snapshots = {{3, {1.5, 2.0}}, {6, {0.0}}};
  const auto res = run(cfg, RngStream(1));
  EXPECT_EQ(res.snapshots[0].tail.values, (std::vector<double>{1.0, 0.0}));
  EXPECT_DOUBLE_EQ(res.snapshots[0].total_work, 100.0);
  EXPECT_EQ(res.snapshots[1].tail.values[0], 0.0);
  EXPECT_EQ(res.snapshots[1].total_work, 0.0);
}

TEST(Run, SnapshotsAreReturnedInTimeOrder) {
  auto cfg = mm1_config(100);
  cfg.horizon = 5;
  cfg.snapshots = {{4, {0}}, {1, {0}}, {2.5, {0}}};
  const auto res = run(cfg, RngStream(3));
  EXPECT_EQ(res.snapshots[0].time, 1.0);
  EXPECT_EQ(res.snapshots[1].time, 2.5);
  EXPECT_EQ(res.snapshots[2].time, 4.0);
}

TEST(Run, SingleServerSelectionBusyFraction) {
  // d = 1 routes uniformly, so each server is an M/M/1 queue at load 0.5.
  auto cfg = mm1_config(10000);
  cfg.horizon = 200;
  const auto res = run(cfg, RngStream(5));
  EXPECT_NEAR(res.summary.time_avg_busy, 0.5, 0.02);
}

TEST(Run, WorkConservation) {
  for (double cap : {kInf, 2.0}) {
    auto cfg = mixed_config(2000);
    cfg.truncation = cap;
    const double inf_share = is_inf(cap) ? 0.1 : 0.0;
    cfg.initial = {{0.5, 0.0}, {0.3, 1.0}, {0.2 - inf_share, 1.5}};
    if (inf_share > 0) cfg.initial.push_back({inf_share, kInf});
    cfg.horizon = 50;
    const auto res = run(cfg, RngStream(7));
    const auto& s = res.summary;
    const double in = s.initial_work + s.arrived_work;
    // infinite servers are busy throughout but process nothing finite
    const double out = s.lost_work + s.absorbed_work + s.final_work + s.processed_work -
                       inf_share * static_cast<double>(cfg.n) * cfg.horizon;
    EXPECT_NEAR(in, out, 1e-6 * in) << "cap " << cap;
    if (is_inf(cap)) EXPECT_EQ(s.lost_work, 0.0);
    else EXPECT_GT(s.lost_work, 0.0);
  }
}

TEST(Run, InfiniteFractionIsConstant) {
  auto cfg = mixed_config(1000);
  cfg.initial = {{0.8, 0.0}, {0.2, kInf}};
  cfg.horizon = 30;
  for (double t = 0; t <= 30; t += 3) cfg.snapshots.push_back({t, {0, 1}});
  const auto res = run(cfg, RngStream(8));
  for (const auto& s : res.snapshots) EXPECT_DOUBLE_EQ(s.infinite_fraction, 0.2);
}

TEST(Run, DeterministicGivenSeed) {
  auto cfg = mixed_config(500);
  cfg.horizon = 20;
  for (double t = 0; t <= 20; t += 2) cfg.snapshots.push_back({t, {0, 0.5, 1, 2}});
  const auto a = run(cfg, RngStream(9));
  const auto b = run(cfg, RngStream(9));
  ASSERT_EQ(a.snapshots.size(), b.snapshots.size());
  for (std::size_t i = 0; i < a.snapshots.size(); ++i) {
    EXPECT_EQ(a.snapshots[i].tail.values, b.snapshots[i].tail.values);
    EXPECT_EQ(a.snapshots[i].total_work, b.snapshots[i].total_work);
  }
  const auto c = run(cfg, RngStream(10));
  EXPECT_NE(a.snapshots.back().total_work, c.snapshots.back().total_work);
}

TEST(Run, WarnsWhenUntruncatedAndOverloaded) {
  SystemConfig cfg;
  cfg.n = 10;
  cfg.classes = {make(PlacementKind::LeastLoad, 1, 1, 1.5, Exponential{1.0})};
  cfg.horizon = 1;
  EXPECT_FALSE(run(cfg, RngStream(1)).summary.warnings.empty());
  cfg.truncation = 3;
  EXPECT_TRUE(run(cfg, RngStream(1)).summary.warnings.empty());
}

TEST(SampleSelection, FullSet) {
  RngStream rng(1);
  auto s = sample_selection(6, 6, rng);
  std::sort(s.begin(), s.end());
  EXPECT_EQ(s, (std::vector<std::size_t>{0, 1, 2, 3, 4, 5}));
  EXPECT_THROW(sample_selection(3, 4, rng), std::invalid_argument);
  EXPECT_THROW(sample_selection(3, 0, rng), std::invalid_argument);
}

TEST(SampleSelection, SingleIndexChiSquare) {
  RngStream rng(2);
  Selector sel(10);
  std::vector<int> counts(10, 0);
  const int m = 1000000;
  for (int i = 0; i < m; ++i) ++counts[sel.draw(1, rng)[0]];
  double chi2 = 0.0;
  for (int c : counts) chi2 += (c - m / 10.0) * (c - m / 10.0) / (m / 10.0);
  EXPECT_LT(chi2, 27.88);  // p = 0.001 at 9 degrees of freedom
}

TEST(SampleSelection, PairsAreUniform) {
  RngStream rng(3);
  Selector sel(4);
  std::map<std::pair<std::size_t, std::size_t>, int> counts;
  const int m = 600000;
  for (int i = 0; i < m; ++i) {
    const auto s = sel.draw(2, rng);
    ASSERT_NE(s[0], s[1]);
    ++counts[{std::min(s[0], s[1]), std::max(s[0], s[1])}];
  }
  ASSERT_EQ(counts.size(), 6U);
  const double p = 1.0 / 6.0;
  const double se = std::sqrt(p * (1 - p) / m);
  for (const auto& [pair, c] : counts) EXPECT_NEAR(c / static_cast<double>(m), p, 3.5 * se);
}

TEST(InitialWorkloads, BlocksFollowFractions) {
  SystemConfig cfg;
  cfg.n = 10;
  cfg.initial = {{0.3, 1.0}, {0.5, 2.0}, {0.2, kInf}};
  const auto w = initial_workloads(cfg);
  EXPECT_EQ(std::count(w.begin(), w.end(), 1.0), 3);
  EXPECT_EQ(std::count(w.begin(), w.end(), 2.0), 5);
  EXPECT_EQ(std::count(w.begin(), w.end(), kInf), 2);
}

TEST(SteadyState, ZeroTruncationIsEmpty) {
  auto cfg = mixed_config(500);
  cfg.truncation = 0.0;
  SteadyStateOptions opt;
  opt.warmup = 5;
  opt.batches = 5;
  opt.batch_len = 5;
  opt.grid = {0.0, 1.0};
  const auto est = steady_state(cfg, opt, RngStream(4));
  for (double x : est.tail.values) EXPECT_EQ(x, 0.0);
}

TEST(SteadyState, SingleServerSelectionMatchesMM1) {
  auto cfg = mm1_config(10000);
  SteadyStateOptions opt;
  opt.grid = {0, 0.5, 1, 2, 4};
  const auto est = steady_state(cfg, opt, RngStream(6));
  for (std::size_t g = 0; g < opt.grid.size(); ++g)
    EXPECT_NEAR(est.tail.values[g], 0.5 * std::exp(-0.5 * opt.grid[g]), 4 * est.se[g] + 1e-3) << opt.grid[g];
  EXPECT_NEAR(est.busy_fraction, 0.5, 0.01);
  EXPECT_DOUBLE_EQ(est.warmup, 40.0);
}

TEST(SteadyState, BusyFractionEqualsLoad) {
  auto cfg = mixed_config(5000);
  SteadyStateOptions opt;
  opt.grid = {0};
  const auto est = steady_state(cfg, opt, RngStream(12));
  EXPECT_NEAR(est.busy_fraction, cfg.rho(), 0.01);
  EXPECT_NEAR(est.tail.values[0], est.busy_fraction, 1e-12);
}

TEST(SteadyState, RejectsUnstableUntruncated) {
  SystemConfig cfg;
  cfg.n = 10;
  cfg.classes = {make(PlacementKind::LeastLoad, 1, 1, 1.0, Exponential{1.0})};
  SteadyStateOptions opt;
  opt.grid = {0};
  EXPECT_THROW(steady_state(cfg, opt, RngStream(1)), std::invalid_argument);
}

TEST(Coupling, IdenticalConfigsGiveIdenticalPaths) {
  auto cfg = mixed_config(300);
  cfg.horizon = 20;
  for (double t = 1; t <= 20; t += 1) cfg.snapshots.push_back({t, {0}});
  const auto res = run_coupled(cfg, cfg, RngStream(1));
  ASSERT_EQ(res.snapshots.size(), 20U);
  for (const auto& s : res.snapshots) EXPECT_EQ(s.sorted_a, s.sorted_b);
  EXPECT_GT(res.events, 0U);
}

TEST(Coupling, TruncationIsDominated) {
  auto b = mixed_config(300);
  b.horizon = 30;
  for (double t = 1; t <= 30; t += 1) b.snapshots.push_back({t, {0}});
  auto a = b;
  a.truncation = 5.0;
  const auto res = run_coupled(a, b, RngStream(2));
  EXPECT_EQ(res.dominance_violations, 0U);
  bool differs = false;
  for (const auto& s : res.snapshots) {
    EXPECT_TRUE(sorted_dominated(s.sorted_a, s.sorted_b));
    differs = differs || s.sorted_a != s.sorted_b;
  }
  EXPECT_TRUE(differs);
}

TEST(Coupling, ExtraInitialWorkIsDominating) {
  auto a = mixed_config(300);
  a.horizon = 30;
  for (double t = 1; t <= 30; t += 1) a.snapshots.push_back({t, {0}});
  auto b = a;
  b.initial = {{0.5, 0.0}, {0.5, 3.0}};
  const auto res = run_coupled(a, b, RngStream(3));
  EXPECT_EQ(res.dominance_violations, 0U);
}

TEST(Coupling, PreconditionsAreChecked) {
  auto a = mixed_config(100);
  auto b = a;
  a.truncation = 5;
  b.truncation = 2;
  EXPECT_THROW(run_coupled(a, b, RngStream(1)), std::invalid_argument);
  b.truncation = kInf;
  a.initial = {{1.0, 1.0}};
  EXPECT_THROW(run_coupled(a, b, RngStream(1)), std::invalid_argument);
  a.initial = {{1.0, 0.0}};
  b.n = 50;
  EXPECT_THROW(run_coupled(a, b, RngStream(1)), std::invalid_argument);
}

TEST(Coupling, EqualityPersistsBelowTheCapMinusElapsedTime) {
  auto b = mixed_config(500);
  b.classes[0].rate = 0.5;
  b.initial = {{0.5, 0.0}, {0.3, 3.0}, {0.2, 6.0}};
  const double c = 6.0;
  const double w = 4.0;
  b.horizon = w;
  for (double t = 0; t <= w; t += 0.5) b.snapshots.push_back({t, {0}});
  auto a = b;
  a.truncation = c;
  std::vector<double> grid;
  for (double v = 0; v <= w; v += 0.25) grid.push_back(v);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto res = run_coupled(a, b, RngStream(seed));
    for (const auto& s : res.snapshots) {
      const auto ta = empirical_tail(s.sorted_a, grid);
      const auto tb = empirical_tail(s.sorted_b, grid);
      for (std::size_t g = 0; g < grid.size() && grid[g] <= w - s.time; ++g)
        EXPECT_EQ(ta.values[g], tb.values[g]) << "t=" << s.time << " v=" << grid[g];
    }
  }
}

TEST(TaggedSurvival, NoArrivals) {
  SystemConfig cfg;
  cfg.n = 100;
  cfg.classes = {make(PlacementKind::LeastLoad, 2, 1, 0.0, Exponential{1.0})};
  const std::vector<double> times{0.5, 1, 2};
  const auto s = tagged_survival(cfg, 0.3, times, RngStream(1));
  for (double f : s.fraction) EXPECT_DOUBLE_EQ(f, 0.3);
}

TEST(TaggedSurvival, NothingTagged) {
  SystemConfig cfg;
  cfg.n = 100;
  cfg.classes = {make(PlacementKind::LeastLoad, 2, 1, 0.5, Exponential{1.0})};
  const std::vector<double> times{0.5, 1, 2};
  for (double f : tagged_survival(cfg, 0.0, times, RngStream(1)).fraction) EXPECT_EQ(f, 0.0);
  EXPECT_THROW(tagged_survival(cfg, 1.5, times, RngStream(1)), std::invalid_argument);
}

TEST(TaggedSurvival, AboveTheExponentialBound) {
  SystemConfig cfg;
  cfg.n = 10000;
  cfg.classes = {make(PlacementKind::LeastLoad, 2, 1, 0.5, Exponential{1.0})};
  const std::vector<double> times{1.0};
  const double f = tagged_survival(cfg, 0.5, times, RngStream(2)).fraction[0];
  const double se = std::sqrt(f * (1 - f) / cfg.n);
  EXPECT_GE(f, 0.5 * std::exp(-0.5 * 4 * 1) - 3 * se);
  // Each server is hit at rate lambda d, so the survivors concentrate near a e^{-1}.
  EXPECT_NEAR(f, 0.5 * std::exp(-1.0), 0.02);
}

TEST(Replay, MatchesDirectApplication) {
  const std::vector classes{make(PlacementKind::WaterFill, 2, 2, 1.0, Exponential{1.0})};
  const std::vector<ArrivalRecord> arrivals{{0.5, 0, {0, 1}, {1.0, 0.5}}, {1.0, 0, {1, 2}, {2.0, 1.0}}};
  const auto out = replay(classes, kInf, std::vector<double>(3, 0.0), arrivals);
  ASSERT_EQ(out.size(), 2U);
  EXPECT_EQ(out[0], (std::vector<double>{0.5, 1.0, 0.0}));
  // At t = 1 the selection holds (0.5, 0). The first component levels both
  // to 1.25, the tie excludes position 0 and the second lands on server 2.
  EXPECT_EQ(out[1], (std::vector<double>{0.0, 1.25, 2.25}));
}
