#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "mfsys/meanfield.hpp"

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

const std::vector<InitialMass> kEmpty{{1.0, 0.0}};

std::vector<JobClassSpec> mixed() {
  return {make(PlacementKind::WaterFill, 3, 2, 0.15, Exponential{1.0}),
          make(PlacementKind::LeastLoad, 2, 1, 0.2, Exponential{1.0})};
}

}  // namespace

TEST(Tree, RootOnlyAtTimeZeroOrWithoutArrivals) {
  RngStream rng(1);
  const auto classes = mixed();
  EXPECT_EQ(grow_tree(0.0, classes, rng).size(), 1U);
  const std::vector quiet{make(PlacementKind::LeastLoad, 3, 1, 0.0, Exponential{1.0})};
  const auto tree = grow_tree(10.0, quiet, rng);
  EXPECT_EQ(tree.size(), 1U);
  EXPECT_TRUE(tree.events.empty());
  EXPECT_THROW(grow_tree(-1.0, classes, rng), std::invalid_argument);
}

TEST(Tree, SingleSelectionNeverBranches) {
  RngStream rng(2);
  const std::vector classes{make(PlacementKind::LeastLoad, 1, 1, 2.0, Exponential{1.0})};
  const auto tree = grow_tree(5.0, classes, rng);
  EXPECT_EQ(tree.size(), 1U);
  EXPECT_GT(tree.events.size(), 0U);
}

TEST(Tree, EventsAreOrderedAndInsideLifetimes) {
  RngStream rng(3);
  const auto classes = mixed();
  for (int rep = 0; rep < 50; ++rep) {
    const auto tree = grow_tree(4.0, classes, rng);
    for (std::size_t i = 0; i < tree.size(); ++i) {
      double prev = 0.0;
      for (const auto& ev : tree.events_of(i)) {
        EXPECT_GE(ev.time, prev);
        EXPECT_LT(ev.time, tree.nodes[i].spawn);
        prev = ev.time;
        for (int c = 0; c + 1 < classes[ev.cls].d; ++c) EXPECT_EQ(tree.nodes[ev.first_child + c].spawn, ev.time);
      }
    }
  }
}

// The population is a Yule-type process: each node sees class-j events at
// rate lambda_j d_j, each adding d_j - 1 nodes, so E size = e^{gamma t}.
TEST(Tree, MeanSizeGrowsExponentially) {
  const std::vector<std::vector<JobClassSpec>> cases{
      {make(PlacementKind::LeastLoad, 2, 1, 0.5, Exponential{1.0})},
      {make(PlacementKind::WaterFill, 3, 2, 0.1, Exponential{1.0})},
      mixed()};
  const int m = 40000;
  for (const auto& classes : cases) {
    const double gamma = branching_rate(classes);
    for (double gt : {0.5, 1.5, 2.5}) {
      const double t = gt / gamma;
      RngStream rng(static_cast<std::uint64_t>(gt * 10));
      DependenceTree tree;
      double sum = 0.0;
      double sum2 = 0.0;
      for (int i = 0; i < m; ++i) {
        grow_tree(tree, t, classes, rng);
        const auto s = static_cast<double>(tree.size());
        sum += s;
        sum2 += s * s;
      }
      const double mean = sum / m;
      const double se = std::sqrt((sum2 / m - mean * mean) / m);
      EXPECT_NEAR(mean, std::exp(gt), 4 * se) << "gamma t = " << gt;
    }
  }
}

TEST(Tree, NodeCapIsEnforced) {
  RngStream rng(4);
  const std::vector classes{make(PlacementKind::LeastLoad, 2, 1, 1.0, Exponential{1.0})};
  EXPECT_THROW(grow_tree(6.0, classes, rng, 10), TreeCapExceeded);
}

TEST(RootWorkload, DecaysWithoutEvents) {
  DependenceTree tree;
  tree.nodes.push_back({3.0, 0, 0});
  const std::vector<JobClassSpec> classes;
  const std::vector<InitialMass> five{{1.0, 5.0}};
  EXPECT_DOUBLE_EQ(sample_u1(tree, five, classes, kInf, RngStream(1)), 2.0);
  tree.nodes[0].spawn = 6.0;
  EXPECT_EQ(sample_u1(tree, five, classes, kInf, RngStream(1)), 0.0);
}

TEST(RootWorkload, InfiniteInitialStaysInfinite) {
  RngStream rng(5);
  const auto classes = mixed();
  const std::vector<InitialMass> all_inf{{1.0, kInf}};
  for (int i = 0; i < 100; ++i) {
    const auto tree = grow_tree(3.0, classes, rng);
    EXPECT_TRUE(is_inf(sample_u1(tree, all_inf, classes, kInf, rng.child(static_cast<std::uint64_t>(i)))));
  }
}

// Per-node values are not monotone in the cap for a fixed tree (a capped
// sibling can push a component onto the root), but the laws are ordered.
TEST(RootWorkload, NeverAboveTheCap) {
  RngStream rng(6);
  const auto classes = mixed();
  for (int i = 0; i < 2000; ++i) {
    const auto tree = grow_tree(4.0, classes, rng);
    const RngStream eval = rng.child(static_cast<std::uint64_t>(i));
    EXPECT_LE(sample_u1(tree, kEmpty, classes, 1.0, eval), 1.0);
    EXPECT_LE(sample_u1(tree, kEmpty, classes, 3.0, eval), 3.0);
  }
}

TEST(Fsp, StochasticallyIncreasingInTruncation) {
  const auto classes = mixed();
  const std::vector<double> grid{0, 0.25, 0.5, 0.75, 1.5, 2.5};
  std::vector<FspEstimate> est;
  for (double cap : {1.0, 3.0, kInf}) est.push_back(estimate_fsp(classes, 4.0, cap, kEmpty, grid, 40000, RngStream(16)));
  for (std::size_t c = 0; c + 1 < est.size(); ++c) {
    for (std::size_t g = 0; g < grid.size(); ++g) {
      EXPECT_LE(est[c].tail.values[g], est[c + 1].tail.values[g] + 3 * std::hypot(est[c].se[g], est[c + 1].se[g]))
          << "cap index " << c << " w=" << grid[g];
    }
  }
}

TEST(Fsp, SingleSampleIsAStep) {
  const std::vector<double> grid{0, 0.5, 1, 2, 4, 8};
  const auto est = estimate_fsp(mixed(), 3.0, kInf, kEmpty, grid, 1, RngStream(7));
  bool dropped = false;
  for (double x : est.tail.values) {
    EXPECT_TRUE(x == 0.0 || x == 1.0);
    if (dropped) {
      EXPECT_EQ(x, 0.0);
    }
    dropped = dropped || x == 0.0;
  }
  for (double s : est.se) EXPECT_EQ(s, 0.0);
}

TEST(Fsp, TimeZeroReturnsTheInitialLaw) {
  const std::vector<InitialMass> law{{0.25, 0.0}, {0.5, 2.0}, {0.25, kInf}};
  const std::vector<double> grid{0, 1, 3};
  const auto est = estimate_fsp(mixed(), 0.0, kInf, law, grid, 40000, RngStream(8));
  EXPECT_NEAR(est.tail.values[0], 0.75, 4 * est.se[0]);
  EXPECT_NEAR(est.tail.values[1], 0.75, 4 * est.se[1]);
  EXPECT_NEAR(est.tail.values[2], 0.25, 4 * est.se[2]);
}

TEST(Fsp, ZeroTruncationGivesZero) {
  const std::vector<double> grid{0, 1};
  const auto est = estimate_fsp(mixed(), 4.0, 0.0, kEmpty, grid, 2000, RngStream(9));
  for (double x : est.tail.values) EXPECT_EQ(x, 0.0);
}

TEST(Fsp, NothingAboveTheCap) {
  const double cap = 2.0;
  const std::vector<double> grid{0, 1, cap, 3};
  const auto est = estimate_fsp(mixed(), 4.0, cap, kEmpty, grid, 5000, RngStream(10));
  EXPECT_GT(est.tail.values[0], 0.0);
  EXPECT_EQ(est.tail.values[2], 0.0);
  EXPECT_EQ(est.tail.values[3], 0.0);
}

TEST(Fsp, GrowsFromEmptyInTime) {
  const auto classes = mixed();
  const std::vector<double> grid{0, 0.5, 1, 2, 3};
  const auto a = estimate_fsp(classes, 1.0, kInf, kEmpty, grid, 40000, RngStream(11));
  const auto b = estimate_fsp(classes, 4.0, kInf, kEmpty, grid, 40000, RngStream(12));
  for (std::size_t g = 0; g < grid.size(); ++g)
    EXPECT_GE(b.tail.values[g], a.tail.values[g] - 3 * std::hypot(a.se[g], b.se[g])) << grid[g];
}

TEST(Fsp, GammaTimeGuard) {
  const std::vector<double> grid{0};
  const auto classes = mixed();  // gamma = 0.15*6 + 0.2*2 = 1.3
  EXPECT_THROW(estimate_fsp(classes, 6.0, kInf, kEmpty, grid, 10, RngStream(1)), std::domain_error);
  FspOptions opt;
  opt.max_gamma_t = 8.0;
  EXPECT_NO_THROW(estimate_fsp(classes, 6.0, kInf, kEmpty, grid, 10, RngStream(1), opt));
}

TEST(Fsp, NodeCapFailureIsReported) {
  const std::vector<double> grid{0};
  FspOptions opt;
  opt.node_cap = 3;
  EXPECT_THROW(estimate_fsp(mixed(), 4.0, kInf, kEmpty, grid, 200, RngStream(1), opt), TreeCapExceeded);
}

TEST(Fsp, DeterministicAcrossWorkerCounts) {
  const std::vector<double> grid{0, 0.5, 1, 2};
  FspOptions one;
  one.workers = 1;
  FspOptions four;
  four.workers = 4;
  const auto a = estimate_fsp(mixed(), 3.0, kInf, kEmpty, grid, 3000, RngStream(13), one);
  const auto b = estimate_fsp(mixed(), 3.0, kInf, kEmpty, grid, 3000, RngStream(13), four);
  EXPECT_EQ(a.tail.values, b.tail.values);
  EXPECT_EQ(a.mean_tree_size, b.mean_tree_size);
}

// With d = 1 every tree is a single server fed by a Poisson stream, so the
// root workload is the M/M/1 workload, whose tail is rho e^{-(1-rho) w}.
TEST(Fsp, SingleSelectionConvergesToMM1) {
  const std::vector classes{make(PlacementKind::LeastLoad, 1, 1, 0.5, Exponential{1.0})};
  const std::vector<double> grid{0, 0.5, 1, 2, 4};
  const auto est = estimate_fsp(classes, 60.0, kInf, kEmpty, grid, 40000, RngStream(14));
  for (std::size_t g = 0; g < grid.size(); ++g)
    EXPECT_NEAR(est.tail.values[g], 0.5 * std::exp(-0.5 * grid[g]), 4 * est.se[g] + 2e-3) << grid[g];
}

TEST(FixedPoint, RejectsOverloadWithoutTruncation) {
  const std::vector classes{make(PlacementKind::LeastLoad, 2, 1, 1.0, Exponential{1.0})};
  const std::vector<double> grid{0};
  const std::vector<double> schedule{1, 2};
  EXPECT_THROW(estimate_fixed_point(classes, kInf, grid, schedule, 10, RngStream(1)), std::domain_error);
}

TEST(FixedPoint, ConvergesForALightSystem) {
  const std::vector classes{make(PlacementKind::LeastLoad, 2, 1, 0.2, Exponential{1.0})};
  const std::vector<double> grid{0, 0.5, 1, 2};
  const std::vector<double> schedule{2, 4, 8, 12};
  const auto fp = estimate_fixed_point(classes, kInf, grid, schedule, 20000, RngStream(15), 0.01);
  EXPECT_TRUE(fp.converged);
  EXPECT_EQ(fp.increments.size() + 1, fp.path.size());
  // Busy fraction equals the offered load.
  EXPECT_NEAR(fp.estimate.tail.values[0], 0.2, 4 * fp.estimate.se[0] + 0.01);
}
