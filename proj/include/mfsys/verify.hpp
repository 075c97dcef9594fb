#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "mfsys/core.hpp"
#include "mfsys/finite_sim.hpp"
#include "mfsys/meanfield.hpp"
#include "mfsys/parallel.hpp"
#include "mfsys/placement.hpp"
#include "mfsys/redundancy.hpp"
#include "mfsys/rng.hpp"
#include "mfsys/stats.hpp"
#include "mfsys/tail.hpp"

// End-to-end acceptance suites, shared by the CLI and the acceptance test.
namespace mfsys::verify {

using json = nlohmann::json;

struct CriterionResult {
  int id = 0;
  std::string suite;
  bool pass = false;
  std::string detail;
  json metrics = json::object();
};

inline json to_json(const CriterionResult& r) {
  return {{"id", r.id}, {"suite", r.suite}, {"pass", r.pass}, {"detail", r.detail}, {"metrics", r.metrics}};
}

struct VerifyOptions {
  std::uint64_t seed = 20240601;
  unsigned workers = default_workers();
};

namespace detail {

inline JobClassSpec make_class(int id, PlacementKind kind, int d, int k, double rate, SizeFamily sizes) {
  JobClassSpec c;
  c.id = id;
  c.kind = kind;
  c.d = d;
  c.k = k;
  c.rate = rate;
  c.sizes = ComponentDistribution(std::move(sizes), k);
  return c;
}

inline std::vector<JobClassSpec> mm1_classes() {
  return {make_class(0, PlacementKind::LeastLoad, 1, 1, 0.5, Exponential{1.0})};
}

inline std::vector<JobClassSpec> pair_least_load_classes() {
  return {make_class(0, PlacementKind::LeastLoad, 2, 1, 0.5, Exponential{1.0})};
}

// One water-filling and one least-load class; rho = 0.3, gamma = 0.4.
inline std::vector<JobClassSpec> mixed_classes() {
  return {make_class(0, PlacementKind::WaterFill, 2, 2, 0.1, Exponential{1.0}),
          make_class(1, PlacementKind::LeastLoad, 2, 1, 0.1, Exponential{1.0})};
}

inline std::vector<double> linspace(double lo, double hi, double step) {
  std::vector<double> out;
  for (int i = 0; lo + i * step <= hi + 1e-12; ++i) out.push_back(lo + i * step);
  return out;
}

// Level solving sum (L - x_i)^+ = v by bisection over finite levels.
inline double bisection_level(const std::vector<double>& levels, double volume) {
  double lo = *std::min_element(levels.begin(), levels.end());
  double hi = lo + volume;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    double fill = 0.0;
    for (double x : levels) fill += std::max(mid - x, 0.0);
    (fill < volume ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

inline CriterionResult criterion(int id, std::string suite) {
  CriterionResult r;
  r.id = id;
  r.suite = std::move(suite);
  return r;
}

inline std::string fmt(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4g", x);
  return buf;
}

// The busy coordinate has to land within 0.01 of rho, so the stopping rule
// runs tighter than its default and on more trees.
inline constexpr std::size_t kFixedPointSamples = 100000;
inline constexpr double kFixedPointTol = 0.002;

// Fixed point of the mixed configuration, shared by criteria 5 and 13.
struct Cache {
  std::optional<FixedPointResult> mixed_fixed_point;
};

inline const std::vector<double>& mixed_grid() {
  static const std::vector<double> grid{0.0, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0, 6.0};
  return grid;
}

inline const FixedPointResult& mixed_fixed_point(Cache& cache, const VerifyOptions& opt) {
  if (!cache.mixed_fixed_point) {
    FspOptions fo;
    fo.workers = opt.workers;
    fo.max_gamma_t = 8.0;
    const std::vector<double> schedule{4, 8, 12, 16};
    cache.mixed_fixed_point = estimate_fixed_point(mixed_classes(), kInf, mixed_grid(), schedule, kFixedPointSamples,
                                                   RngStream(opt.seed).child("mixed-fixed-point"),
                                                   kFixedPointTol, fo);
  }
  return *cache.mixed_fixed_point;
}

}  // namespace detail

inline CriterionResult placement_golden(const VerifyOptions&) {
  auto r = detail::criterion(1, "placement-golden");
  const std::vector<double> w{5, 12, 7, 16};
  const auto first = place_water_fill(w, std::vector<double>{10});
  const auto both = place_water_fill(w, std::vector<double>{10, 5});
  const std::vector<double> want_first{11, 12, 11, 16};
  const std::vector<double> want_final{11, 14, 14, 16};
  r.pass = first.new_workloads == want_first && both.new_workloads == want_final && both.lost_to_truncation == 0.0;
  r.metrics = {{"intermediate", first.new_workloads}, {"final", both.new_workloads}};
  r.detail = "water-fill (5,12,7,16) with (10,5): intermediate (" + detail::fmt(first.new_workloads[0]) + "," +
             detail::fmt(first.new_workloads[1]) + "," + detail::fmt(first.new_workloads[2]) + "," +
             detail::fmt(first.new_workloads[3]) + "), final (" + detail::fmt(both.new_workloads[0]) + "," +
             detail::fmt(both.new_workloads[1]) + "," + detail::fmt(both.new_workloads[2]) + "," +
             detail::fmt(both.new_workloads[3]) + ")";
  return r;
}

inline CriterionResult water_level_oracle(const VerifyOptions& opt) {
  auto r = detail::criterion(2, "water-level");
  RngStream rng = RngStream(opt.seed).child("water-level");
  double max_err = 0.0;
  const int instances = 100000;
  for (int i = 0; i < instances; ++i) {
    const auto d = static_cast<std::size_t>(1 + rng.below(8));
    std::vector<double> levels(d);
    for (double& x : levels) x = rng.uniform(0.0, 20.0);
    const double volume = rng.exponential(5.0);
    const double got = water_level(levels, volume);
    max_err = std::max(max_err, std::abs(got - detail::bisection_level(levels, volume)));
  }
  r.pass = max_err <= 1e-10;
  r.metrics = {{"instances", instances}, {"max_abs_error", max_err}};
  r.detail = "max |sort-and-scan - bisection| over 1e5 instances = " + detail::fmt(max_err) + " (limit 1e-10)";
  return r;
}

inline CriterionResult tree_growth(const VerifyOptions& opt) {
  auto r = detail::criterion(3, "tree-growth");
  const auto classes = detail::pair_least_load_classes();
  const std::size_t M = 100000;
  r.pass = true;
  json rows = json::array();
  for (double t : {0.5, 1.0, 2.0}) {
    const RngStream base = RngStream(opt.seed).child("tree-growth").child(static_cast<std::uint64_t>(t * 1000));
    std::vector<double> sizes(M);
    parallel_for(M, opt.workers, [&](std::size_t i) {
      RngStream s = base.child(i);
      DependenceTree tree;
      grow_tree(tree, t, classes, s);
      sizes[i] = static_cast<double>(tree.size());
    });
    double mean = 0.0;
    double se = 0.0;
    mfsys::detail::mean_and_se(sizes, mean, se);
    const double want = std::exp(t);
    const bool ok = std::abs(mean - want) <= 3.0 * se;
    r.pass = r.pass && ok;
    rows.push_back({{"t", t}, {"mean", mean}, {"se", se}, {"expected", want}});
    r.detail += "t=" + detail::fmt(t) + ": " + detail::fmt(mean) + " vs " + detail::fmt(want) + " (3SE " +
                detail::fmt(3 * se) + ")  ";
  }
  r.metrics = {{"trees", M}, {"rows", rows}};
  return r;
}

inline CriterionResult finite_vs_meanfield(const VerifyOptions& opt) {
  auto r = detail::criterion(4, "finite-vs-meanfield");
  const auto classes = detail::pair_least_load_classes();
  const double t = 10.0;
  const auto grid = detail::linspace(0.0, 5.0, 0.5);
  const RngStream base = RngStream(opt.seed).child("finite-vs-meanfield");

  FspOptions fo;
  fo.workers = opt.workers;
  fo.max_gamma_t = 10.0;
  const std::vector<InitialMass> empty{{1.0, 0.0}};
  const auto fsp = estimate_fsp(classes, t, kInf, empty, grid, 20000, base.child("fsp"), fo);

  SystemConfig cfg;
  cfg.n = 10000;
  cfg.classes = classes;
  cfg.horizon = t;
  cfg.snapshots = {{t, grid}};
  const std::size_t R = 10;
  std::vector<std::vector<double>> runs(R);
  parallel_for(R, opt.workers, [&](std::size_t i) { runs[i] = run(cfg, base.child("finite").child(i)).snapshots[0].tail.values; });
  EmpiricalTail finite{grid, std::vector<double>(grid.size(), 0.0)};
  std::vector<double> finite_se(grid.size());
  for (std::size_t g = 0; g < grid.size(); ++g) {
    std::vector<double> col;
    for (const auto& v : runs) col.push_back(v[g]);
    mfsys::detail::mean_and_se(col, finite.values[g], finite_se[g]);
  }
  const auto cmp = compare_to_oracle(finite, finite_se, fsp);
  r.pass = cmp.sup_gap <= 0.02;
  r.metrics = {{"n", cfg.n},          {"t", t},
               {"trees", fsp.samples}, {"finite_runs", R},
               {"grid", grid},         {"finite", finite.values},
               {"meanfield", fsp.tail.values}, {"meanfield_se", fsp.se},
               {"sup_gap", cmp.sup_gap}, {"max_abs_z", cmp.max_abs_z},
               {"mean_tree_size", fsp.mean_tree_size}};
  r.detail = "sup |x^n - x_hat| at t=10 = " + detail::fmt(cmp.sup_gap) + " (limit 0.02), mean tree size " +
             detail::fmt(fsp.mean_tree_size);
  return r;
}

inline CriterionResult conservation(const VerifyOptions& opt, detail::Cache& cache) {
  auto r = detail::criterion(5, "conservation");
  struct Case {
    std::string name;
    std::vector<JobClassSpec> classes;
    std::vector<double> schedule;
  };
  std::vector<Case> cases{
      {"mm1", detail::mm1_classes(), {8, 16, 32, 64, 128}},
      {"hyperexponential-d1",
       {detail::make_class(0, PlacementKind::LeastLoad, 1, 1, 0.3,
                           HyperExponential{{0.5, 0.5}, {0.5, 3.5}})},
       {16, 32, 64, 128, 256}},
      {"waterfill+leastload", detail::mixed_classes(), {}},
  };
  r.pass = true;
  json rows = json::array();
  for (std::size_t i = 0; i < cases.size(); ++i) {
    const auto& c = cases[i];
    SystemConfig cfg;
    cfg.n = 10000;
    cfg.classes = c.classes;
    const double rho = cfg.rho();
    SteadyStateOptions so;
    so.grid = {0.0};
    const auto ss = steady_state(cfg, so, RngStream(opt.seed).child("conservation").child(i));
    FixedPointResult fp;
    if (c.schedule.empty()) {
      fp = detail::mixed_fixed_point(cache, opt);
    } else {
      FspOptions fo;
      fo.workers = opt.workers;
      fp = estimate_fixed_point(c.classes, kInf, std::vector<double>{0.0}, c.schedule, detail::kFixedPointSamples,
                                RngStream(opt.seed).child("conservation-fp").child(i), detail::kFixedPointTol, fo);
    }
    const double x0 = fp.estimate.tail.values[0];
    const bool ok = std::abs(ss.busy_fraction - rho) <= 0.01 && std::abs(x0 - rho) <= 0.01;
    r.pass = r.pass && ok;
    rows.push_back({{"case", c.name},
                    {"rho", rho},
                    {"busy_fraction", ss.busy_fraction},
                    {"busy_se", ss.busy_se},
                    {"fixed_point_x0", x0},
                    {"fixed_point_se", fp.estimate.se[0]},
                    {"fixed_point_t", fp.estimate.t},
                    {"converged", fp.converged}});
    r.detail += c.name + ": rho " + detail::fmt(rho) + ", busy " + detail::fmt(ss.busy_fraction) + ", x*0 " +
                detail::fmt(x0) + " (t=" + detail::fmt(fp.estimate.t) + ")  ";
  }
  r.metrics = {{"cases", rows}};
  return r;
}

inline CriterionResult mm1(const VerifyOptions& opt) {
  auto r = detail::criterion(6, "mm1");
  const std::vector<double> grid{0, 1, 2, 4};
  SystemConfig cfg;
  cfg.n = 10000;
  cfg.classes = detail::mm1_classes();
  SteadyStateOptions so;
  so.grid = grid;
  const auto ss = steady_state(cfg, so, RngStream(opt.seed).child("mm1-finite"));
  FspOptions fo;
  fo.workers = opt.workers;
  const std::vector<double> schedule{8, 16, 32, 64, 128};
  const auto fp =
      estimate_fixed_point(cfg.classes, kInf, grid, schedule, 20000, RngStream(opt.seed).child("mm1-fp"), 0.01, fo);
  double gap_finite = 0.0;
  double gap_fp = 0.0;
  std::vector<double> exact;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    exact.push_back(0.5 * std::exp(-0.5 * grid[g]));
    gap_finite = std::max(gap_finite, std::abs(ss.tail.values[g] - exact[g]));
    gap_fp = std::max(gap_fp, std::abs(fp.estimate.tail.values[g] - exact[g]));
  }
  r.pass = gap_finite <= 0.02 && gap_fp <= 0.02;
  r.metrics = {{"grid", grid},
               {"exact", exact},
               {"finite", ss.tail.values},
               {"fixed_point", fp.estimate.tail.values},
               {"fixed_point_t", fp.estimate.t},
               {"gap_finite", gap_finite},
               {"gap_fixed_point", gap_fp}};
  r.detail = "max gap to 0.5 exp(-0.5 w): finite " + detail::fmt(gap_finite) + ", fixed point " +
             detail::fmt(gap_fp) + " (limit 0.02)";
  return r;
}

inline CriterionResult monotone_coupling(const VerifyOptions& opt) {
  auto r = detail::criterion(7, "monotone-coupling");
  struct Pair {
    double ca, cb;
    std::vector<InitialMass> ia, ib;
  };
  const std::vector<Pair> pairs{
      {5.0, kInf, {{1.0, 0.0}}, {{1.0, 0.0}}},
      {2.0, 6.0, {{1.0, 0.0}}, {{1.0, 0.0}}},
      {kInf, kInf, {{1.0, 0.0}}, {{0.7, 0.0}, {0.3, 4.0}}},
      {3.0, kInf, {{0.8, 0.0}, {0.2, 1.0}}, {{0.5, 2.0}, {0.5, 5.0}}},
      {4.0, 4.0, {{1.0, 0.0}}, {{0.9, 1.0}, {0.1, kInf}}},
  };
  const std::vector<JobClassSpec> classes{
      detail::make_class(0, PlacementKind::WaterFill, 3, 2, 0.3, Exponential{1.0}),
      detail::make_class(1, PlacementKind::LeastLoad, 2, 1, 0.3, Uniform{0.0, 2.0}),
      detail::make_class(2, PlacementKind::LeastLoad, 3, 3, 0.05, PermutedVector{{0.5, 1.0, 2.5}})};
  const std::size_t runs = 100;
  std::vector<std::uint64_t> violations(runs, 0);
  std::vector<std::uint64_t> events(runs, 0);
  parallel_for(runs, opt.workers, [&](std::size_t i) {
    const auto& p = pairs[i % pairs.size()];
    SystemConfig a;
    a.n = 200;
    a.classes = classes;
    a.horizon = 30.0;
    for (double t = 0.0; t <= 30.0; t += 1.0) a.snapshots.push_back({t, {0.0}});
    SystemConfig b = a;
    a.truncation = p.ca;
    a.initial = p.ia;
    b.truncation = p.cb;
    b.initial = p.ib;
    const auto res = run_coupled(a, b, RngStream(opt.seed).child("monotone-coupling").child(i));
    std::uint64_t v = res.dominance_violations;
    for (const auto& s : res.snapshots)
      if (!sorted_dominated(s.sorted_a, s.sorted_b)) ++v;
    violations[i] = v;
    events[i] = res.events;
  });
  std::uint64_t total_v = 0;
  std::uint64_t total_e = 0;
  for (std::size_t i = 0; i < runs; ++i) {
    total_v += violations[i];
    total_e += events[i];
  }
  r.pass = total_v == 0;
  r.metrics = {{"runs", runs}, {"events", total_e}, {"violations", total_v}};
  r.detail = std::to_string(runs) + " coupled runs, " + std::to_string(total_e) + " events, " +
             std::to_string(total_v) + " dominance violations";
  return r;
}

inline CriterionResult equality_persistence(const VerifyOptions& opt) {
  auto r = detail::criterion(8, "equality-persistence");
  const double c = 8.0;
  const double w = 6.0;
  const std::vector<JobClassSpec> classes{
      detail::make_class(0, PlacementKind::WaterFill, 3, 2, 0.4, Exponential{1.5}),
      detail::make_class(1, PlacementKind::LeastLoad, 2, 1, 0.4, Exponential{2.0})};
  const auto grid = detail::linspace(0.0, w, 0.25);
  const std::size_t runs = 20;
  std::vector<std::uint64_t> violations(runs, 0);
  std::vector<std::uint64_t> checks(runs, 0);
  parallel_for(runs, opt.workers, [&](std::size_t i) {
    SystemConfig a;
    a.n = 1000;
    a.classes = classes;
    a.initial = {{0.4, 0.0}, {0.3, 3.0}, {0.2, 7.0}, {0.1, 8.0}};
    a.horizon = w;
    for (double t = 0.0; t <= w; t += 0.25) a.snapshots.push_back({t, {0.0}});
    SystemConfig b = a;
    a.truncation = c;
    const auto res = run_coupled(a, b, RngStream(opt.seed).child("equality-persistence").child(i));
    for (const auto& s : res.snapshots) {
      const auto ta = empirical_tail(s.sorted_a, grid);
      const auto tb = empirical_tail(s.sorted_b, grid);
      for (std::size_t g = 0; g < grid.size(); ++g) {
        if (grid[g] > w - s.time) break;
        ++checks[i];
        if (ta.values[g] != tb.values[g]) ++violations[i];
      }
    }
  });
  std::uint64_t total_v = 0;
  std::uint64_t total_c = 0;
  for (std::size_t i = 0; i < runs; ++i) {
    total_v += violations[i];
    total_c += checks[i];
  }
  r.pass = total_v == 0 && total_c > 0;
  r.metrics = {{"runs", runs}, {"c", c}, {"w", w}, {"checks", total_c}, {"violations", total_v}};
  r.detail = "c=8 vs c=inf, w=6: " + std::to_string(total_c) + " (t, v) checks, " + std::to_string(total_v) +
             " mismatches";
  return r;
}

inline CriterionResult tagged_survival_bound(const VerifyOptions& opt) {
  auto r = detail::criterion(9, "tagged-survival");
  SystemConfig cfg;
  cfg.n = 10000;
  cfg.classes = detail::pair_least_load_classes();
  const double lambda = cfg.lambda();
  const double d = max_selection(cfg.classes);
  const std::vector<double> times{0.25, 0.5, 1.0, 2.0, 4.0};
  const std::size_t R = 20;
  r.pass = true;
  json rows = json::array();
  double min_margin = kInf;
  for (double a : {0.1, 0.5, 0.9}) {
    std::vector<std::vector<double>> reps(R);
    parallel_for(R, opt.workers, [&](std::size_t i) {
      reps[i] = tagged_survival(cfg, a, times, RngStream(opt.seed).child("tagged").child(static_cast<std::uint64_t>(a * 100)).child(i)).fraction;
    });
    for (std::size_t ti = 0; ti < times.size(); ++ti) {
      std::vector<double> col;
      for (const auto& v : reps) col.push_back(v[ti]);
      double mean = 0.0;
      double se = 0.0;
      mfsys::detail::mean_and_se(col, mean, se);
      const double bound = a * std::exp(-lambda * d * d * times[ti]);
      const double margin = mean - (bound - 3.0 * se);
      min_margin = std::min(min_margin, margin);
      r.pass = r.pass && margin >= 0.0;
      rows.push_back({{"a", a}, {"t", times[ti]}, {"f", mean}, {"se", se}, {"bound", bound}});
    }
  }
  r.metrics = {{"n", cfg.n}, {"replications", R}, {"rows", rows}, {"min_margin", min_margin}};
  r.detail = "f^n(t) - (a e^{-lambda d^2 t} - 3SE) >= " + detail::fmt(min_margin) + " over 15 (a, t) points";
  return r;
}

inline CriterionResult cos_oracle(const VerifyOptions& opt) {
  auto r = detail::criterion(10, "cos-oracle");
  const std::vector<JobClassSpec> classes{
      detail::make_class(0, PlacementKind::LeastLoad, 3, 2, 0.25, Exponential{1.0}),
      detail::make_class(1, PlacementKind::LeastLoad, 2, 1, 0.3, Uniform{0.2, 1.8}),
      detail::make_class(2, PlacementKind::LeastLoad, 3, 3, 0.05, Exponential{0.7})};
  std::uint64_t compared = 0;
  std::uint64_t mismatches = 0;
  const int traces = 5;
  for (int i = 0; i < traces; ++i) {
    const std::size_t n = 50;
    auto trace = generate_replica_trace(n, classes, 100.0, RngStream(opt.seed).child("cos-oracle").child(i));
    quantize_trace(trace, 20);
    const auto oracle = run_cos(trace, n);
    const auto sim = replay(classes, kInf, std::vector<double>(n, 0.0), cos_equivalent_arrivals(trace));
    for (std::size_t e = 0; e < sim.size(); ++e) {
      ++compared;
      if (sim[e] != oracle.workloads[e]) ++mismatches;
    }
  }
  r.pass = mismatches == 0 && compared > 0;
  r.metrics = {{"traces", traces}, {"arrivals_compared", compared}, {"mismatches", mismatches}};
  r.detail = std::to_string(compared) + " post-arrival workload vectors compared, " + std::to_string(mismatches) +
             " not bitwise equal";
  return r;
}

inline CriterionResult coc_oracle(const VerifyOptions& opt) {
  auto r = detail::criterion(11, "coc-oracle");
  const std::vector<JobClassSpec> classes{
      detail::make_class(0, PlacementKind::WaterFill, 3, 2, 0.3, Exponential{0.5}),
      detail::make_class(1, PlacementKind::WaterFill, 2, 1, 0.3, Exponential{1.0})};
  const std::size_t n = 1000;
  const std::size_t R = 200;
  const double T = 20.0;
  std::vector<std::vector<double>> coc(R);
  std::vector<std::vector<double>> wf(R);
  parallel_for(R, opt.workers, [&](std::size_t i) {
    const RngStream base = RngStream(opt.seed).child("coc-oracle").child(i);
    const auto trace = generate_replica_trace(n, classes, T, base.child("replica"));
    RedundancyOptions ro;
    ro.record_each_arrival = false;
    ro.horizon = T;
    coc[i] = run_coc(trace, n, classes, true, ro).final_workloads;
    SystemConfig cfg;
    cfg.n = n;
    cfg.classes = classes;
    cfg.horizon = T;
    Simulation sim(cfg, base.child("waterfill"));
    sim.advance_to(T);
    wf[i] = sim.system().state().materialize(T);
  });
  std::vector<double> a;
  std::vector<double> b;
  for (std::size_t i = 0; i < R; ++i) {
    a.insert(a.end(), coc[i].begin(), coc[i].end());
    b.insert(b.end(), wf[i].begin(), wf[i].end());
  }
  double mean_a = 0.0;
  double mean_b = 0.0;
  for (double x : a) mean_a += x;
  for (double x : b) mean_b += x;
  mean_a /= static_cast<double>(a.size());
  mean_b /= static_cast<double>(b.size());
  const double ks = ks_two_sample(std::move(a), std::move(b));
  r.pass = ks <= 0.02;
  r.metrics = {{"n", n}, {"replications", R}, {"T", T}, {"ks", ks}, {"mean_coc", mean_a}, {"mean_waterfill", mean_b}};
  r.detail = "KS(cancel-on-completion, water-fill) = " + detail::fmt(ks) + " (limit 0.02); means " +
             detail::fmt(mean_a) + " vs " + detail::fmt(mean_b);
  return r;
}

inline CriterionResult independence(const VerifyOptions& opt) {
  auto r = detail::criterion(12, "independence");
  const std::vector<double> grid{0.0, 1.0, 2.0};
  const std::vector<std::size_t> ns{100, 1000, 10000};
  std::vector<IndependenceReport> reps;
  for (std::size_t i = 0; i < ns.size(); ++i) {
    SystemConfig cfg;
    cfg.n = ns[i];
    cfg.classes = detail::pair_least_load_classes();
    IndependenceOptions io;
    io.workers = opt.workers;
    reps.push_back(independence_test(cfg, grid, 100, RngStream(opt.seed).child("independence").child(i), io));
  }
  bool decreasing = true;
  for (std::size_t g = 0; g < grid.size(); ++g)
    for (std::size_t i = 1; i < reps.size(); ++i) decreasing = decreasing && reps[i].variance[g] < reps[i - 1].variance[g];
  double max_cov = 0.0;
  for (double c : reps.back().pair_covariance) max_cov = std::max(max_cov, std::abs(c));
  r.pass = decreasing && max_cov <= 0.01;
  json rows = json::array();
  for (const auto& rep : reps)
    rows.push_back({{"n", rep.n}, {"variance", rep.variance}, {"pair_covariance", rep.pair_covariance}});
  r.metrics = {{"grid", grid}, {"replications", 100}, {"rows", rows}, {"max_abs_pair_covariance", max_cov}};
  r.detail = std::string("variance ") + (decreasing ? "decreasing" : "NOT decreasing") +
             " in n; max |pair covariance| at n=1e4 = " + detail::fmt(max_cov) + " (limit 0.01)";
  return r;
}

inline CriterionResult fixed_point_shape(const VerifyOptions& opt, detail::Cache& cache) {
  auto r = detail::criterion(13, "fixed-point-shape");
  const auto& fp = detail::mixed_fixed_point(cache, opt);
  const auto& est = fp.estimate;
  const auto classes = detail::mixed_classes();
  const double L = total_rate(classes) * max_selection(classes);
  const auto& grid = est.tail.grid;
  const auto& x = est.tail.values;
  double worst_lip = -kInf;
  for (std::size_t u = 0; u < grid.size(); ++u)
    for (std::size_t v = u + 1; v < grid.size(); ++v) {
      const double slack = L * (grid[v] - grid[u]) + 2.0 * std::hypot(est.se[u], est.se[v]) - (x[u] - x[v]);
      worst_lip = std::max(worst_lip, -slack);
    }
  // Well-separated points for the strict decrease.
  const std::vector<double> coarse{0.0, 1.0, 2.0, 4.0};
  bool strict = true;
  double min_drop_z = kInf;
  for (std::size_t i = 0; i + 1 < coarse.size(); ++i) {
    const auto u = static_cast<std::size_t>(std::find(grid.begin(), grid.end(), coarse[i]) - grid.begin());
    const auto v = static_cast<std::size_t>(std::find(grid.begin(), grid.end(), coarse[i + 1]) - grid.begin());
    const double se = std::hypot(est.se[u], est.se[v]);
    strict = strict && x[u] - x[v] > 2.0 * se;
    min_drop_z = std::min(min_drop_z, (x[u] - x[v]) / se);
  }
  r.pass = worst_lip <= 0.0 && strict;
  r.metrics = {{"grid", grid},
               {"x", x},
               {"se", est.se},
               {"lipschitz_constant", L},
               {"worst_lipschitz_excess", worst_lip},
               {"min_drop_over_se", min_drop_z}};
  r.detail = "Lipschitz excess " + detail::fmt(worst_lip) + " (must be <= 0, constant " + detail::fmt(L) +
             "); smallest drop between w=0,1,2,4 is " + detail::fmt(min_drop_z) + " combined SE (must be > 2)";
  return r;
}

inline CriterionResult rho_b(const VerifyOptions& opt) {
  auto r = detail::criterion(14, "rho-b");
  RngStream rng = RngStream(opt.seed).child("rho-b");
  double max_identity = 0.0;
  double min_excess = kInf;
  int sets = 0;
  for (int s = 0; s < 200; ++s) {
    std::vector<JobClassSpec> classes;
    const auto m = 1 + rng.below(4);
    for (std::uint64_t j = 0; j < m; ++j) {
      const int d = 1 + static_cast<int>(rng.below(6));
      const int k = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(d)));
      const auto kind = rng.below(2) == 0 ? PlacementKind::WaterFill : PlacementKind::LeastLoad;
      classes.push_back(detail::make_class(static_cast<int>(j), kind, d, k, rng.uniform(0.0, 0.5),
                                           Exponential{rng.uniform(0.1, 2.0)}));
    }
    const double rho = offered_load(classes);
    for (int bi = 1; bi <= 9; ++bi) {
      const double b = 0.1 * bi;
      const auto load = b_subsystem_load(b, classes);
      max_identity = std::max(max_identity, std::abs(rho - (b * load.rho_b + (1.0 - b) * load.rho_a)));
      min_excess = std::min(min_excess, load.rho_b - rho);
    }
    ++sets;
  }
  r.pass = max_identity <= 1e-12 && min_excess >= -1e-12;
  r.metrics = {{"class_sets", sets}, {"max_identity_error", max_identity}, {"min_rho_b_minus_rho", min_excess}};
  r.detail = "max |rho - (b rho_B + (1-b) rho_A)| = " + detail::fmt(max_identity) + ", min(rho_B - rho) = " +
             detail::fmt(min_excess);
  return r;
}

inline const std::vector<std::string>& suite_names() {
  static const std::vector<std::string> names{
      "placement-golden", "water-level",     "tree-growth",    "finite-vs-meanfield", "conservation",
      "mm1",              "monotone-coupling", "equality-persistence", "tagged-survival", "cos-oracle",
      "coc-oracle",       "independence",    "fixed-point-shape", "rho-b"};
  return names;
}

inline bool suite_exists(const std::string& name) {
  const auto& names = suite_names();
  return name == "all" || std::find(names.begin(), names.end(), name) != names.end();
}

// Runs one suite, or every suite for "all". Unknown names raise ConfigError.
inline std::vector<CriterionResult> run_suite(const std::string& name, const VerifyOptions& opt = {},
                                              const std::function<void(const CriterionResult&)>& on_result = {}) {
  if (!suite_exists(name)) throw ConfigError("unknown suite '" + name + "'");
  detail::Cache cache;
  std::vector<CriterionResult> out;
  auto emit = [&](CriterionResult r) {
    if (on_result) on_result(r);
    out.push_back(std::move(r));
  };
  auto want = [&](const char* s) { return name == "all" || name == s; };
  if (want("placement-golden")) emit(placement_golden(opt));
  if (want("water-level")) emit(water_level_oracle(opt));
  if (want("tree-growth")) emit(tree_growth(opt));
  if (want("finite-vs-meanfield")) emit(finite_vs_meanfield(opt));
  if (want("conservation")) emit(conservation(opt, cache));
  if (want("mm1")) emit(mm1(opt));
  if (want("monotone-coupling")) emit(monotone_coupling(opt));
  if (want("equality-persistence")) emit(equality_persistence(opt));
  if (want("tagged-survival")) emit(tagged_survival_bound(opt));
  if (want("cos-oracle")) emit(cos_oracle(opt));
  if (want("coc-oracle")) emit(coc_oracle(opt));
  if (want("independence")) emit(independence(opt));
  if (want("fixed-point-shape")) emit(fixed_point_shape(opt, cache));
  if (want("rho-b")) emit(rho_b(opt));
  return out;
}

inline std::string result_line(const CriterionResult& r) {
  return std::string(r.pass ? "PASS" : "FAIL") + " [" + std::to_string(r.id) + "] " + r.suite + ": " + r.detail;
}

}  // namespace mfsys::verify
