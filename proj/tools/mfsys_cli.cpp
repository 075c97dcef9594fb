#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "mfsys/mfsys.hpp"
#include "mfsys/verify.hpp"

namespace fs = std::filesystem;
using namespace mfsys;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

struct Common {
  std::string config_path;
  std::string out_dir = ".";
  std::optional<std::uint64_t> seed;
  std::optional<unsigned> workers;
  bool force = false;
};

// Thrown for guard violations that are usage errors rather than failures.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Loaded {
  ExperimentConfig ex;
  std::string hash;
  unsigned workers = 1;
  ExperimentReport report;
};

Loaded load(const Common& c, const std::string& command) {
  Loaded l;
  l.ex = load_experiment(c.config_path);
  if (c.seed) {
    l.ex.system.seed = *c.seed;
    l.ex.source["seed"] = *c.seed;
  }
  l.hash = config_hash(l.ex.source);
  l.workers = c.workers ? *c.workers : l.ex.workers;
  if (l.workers == 0) l.workers = default_workers();
  fs::create_directories(c.out_dir);
  l.report.command = command;
  l.report.config_hash = l.hash;
  l.report.seed = l.ex.system.seed;
  l.report.config = l.ex.source;
  return l;
}

void finish(Loaded& l, const Common& c, const Stopwatch& sw) {
  l.report.wall_clock_seconds = sw.seconds();
  l.report.files.push_back("report.json");
  write_json(fs::path(c.out_dir) / "report.json", l.report.to_json());
  for (const auto& w : l.report.warnings) std::cerr << "warning: " << w << '\n';
}

double gamma_limit(double configured, bool force) { return force ? kInf : configured; }

void guard_gamma(const std::vector<JobClassSpec>& classes, double t, double limit) {
  const double gt = branching_rate(classes) * t;
  if (gt > limit)
    throw UsageError("gamma*t = " + std::to_string(gt) + " exceeds " + std::to_string(limit) +
                     " (expected tree size e^{gamma t}); pass --force to run anyway");
}

int cmd_simulate(const Common& c) {
  Stopwatch sw;
  auto l = load(c, "simulate");
  const auto& cfg = l.ex.system;
  RngStream rng(cfg.seed);
  const auto res = run(cfg, rng.child("run"));
  write_snapshots_csv(fs::path(c.out_dir) / "snapshots.csv", l.hash, res.snapshots);
  l.report.files.push_back("snapshots.csv");
  const auto& s = res.summary;
  l.report.summary = {{"rho", s.rho},
                      {"arrivals", s.arrivals},
                      {"initial_work", s.initial_work},
                      {"arrived_work", s.arrived_work},
                      {"lost_work", s.lost_work},
                      {"absorbed_work", s.absorbed_work},
                      {"processed_work", s.processed_work},
                      {"final_work", s.final_work},
                      {"time_avg_busy", s.time_avg_busy}};
  l.report.warnings = s.warnings;
  if (l.ex.steady_state) {
    const auto ss = steady_state(cfg, *l.ex.steady_state, rng.child("steady-state"));
    CsvWriter csv(fs::path(c.out_dir) / "steady_state.csv", l.hash, "w,x_w,se");
    for (std::size_t g = 0; g < ss.tail.size(); ++g) csv.row({ss.tail.grid[g], ss.tail.values[g], ss.se[g]});
    l.report.files.push_back("steady_state.csv");
    l.report.summary["steady_state"] = {{"warmup", ss.warmup},
                                        {"busy_fraction", ss.busy_fraction},
                                        {"busy_se", ss.busy_se},
                                        {"lag1_autocorrelation", ss.lag1_autocorrelation}};
    l.report.warnings.insert(l.report.warnings.end(), ss.warnings.begin(), ss.warnings.end());
  }
  finish(l, c, sw);
  std::printf("rho=%.6g arrivals=%llu time_avg_busy=%.6g\n", s.rho, static_cast<unsigned long long>(s.arrivals),
              s.time_avg_busy);
  return kExitOk;
}

int cmd_meanfield(const Common& c) {
  Stopwatch sw;
  auto l = load(c, "meanfield");
  const auto& cfg = l.ex.system;
  const auto mf = l.ex.meanfield.value_or(MeanfieldSection{});
  FspOptions fo;
  fo.node_cap = mf.node_cap;
  fo.max_gamma_t = gamma_limit(mf.max_gamma_t, c.force);
  fo.workers = l.workers;
  for (double t : mf.t_schedule) guard_gamma(cfg.classes, t, fo.max_gamma_t);
  const RngStream rng = RngStream(cfg.seed).child("meanfield");
  json rows = json::array();
  for (std::size_t i = 0; i < mf.t_schedule.size(); ++i) {
    const double t = mf.t_schedule[i];
    const auto est = estimate_fsp(cfg.classes, t, cfg.truncation, cfg.initial, mf.grid, mf.samples, rng.child(i), fo);
    const std::string name = "fsp_" + std::to_string(i) + ".csv";
    write_fsp_csv(fs::path(c.out_dir) / name, l.hash, est);
    l.report.files.push_back(name);
    auto meta = fsp_metadata(est);
    meta["file"] = name;
    meta["x_w"] = est.tail.values;
    rows.push_back(meta);
    std::printf("t=%g x_0=%.6g (se %.2g) mean tree size %.4g\n", t, est.tail.values.empty() ? 0.0 : est.tail.values[0],
                est.se.empty() ? 0.0 : est.se[0], est.mean_tree_size);
  }
  l.report.summary = {{"rho", cfg.rho()}, {"estimates", rows}};
  finish(l, c, sw);
  return kExitOk;
}

int cmd_fixed_point(const Common& c) {
  Stopwatch sw;
  auto l = load(c, "fixed-point");
  const auto& cfg = l.ex.system;
  const auto mf = l.ex.meanfield.value_or(MeanfieldSection{});
  FspOptions fo;
  fo.node_cap = mf.node_cap;
  fo.max_gamma_t = gamma_limit(mf.max_gamma_t, c.force);
  fo.workers = l.workers;
  for (double t : mf.t_schedule) guard_gamma(cfg.classes, t, fo.max_gamma_t);
  if (is_inf(cfg.truncation) && !(cfg.rho() < 1.0))
    throw UsageError("fixed-point needs rho < 1 without truncation (rho = " + std::to_string(cfg.rho()) + ")");
  const auto fp = estimate_fixed_point(cfg.classes, cfg.truncation, mf.grid, mf.t_schedule, mf.samples,
                                       RngStream(cfg.seed).child("fixed-point"), mf.tol, fo);
  write_fsp_csv(fs::path(c.out_dir) / "fixed_point.csv", l.hash, fp.estimate);
  l.report.files.push_back("fixed_point.csv");
  l.report.summary = {{"rho", cfg.rho()},
                      {"converged", fp.converged},
                      {"x0", fp.estimate.tail.values.empty() ? 0.0 : fp.estimate.tail.values[0]},
                      {"times", fp.times},
                      {"increments", fp.increments},
                      {"allowances", fp.allowances},
                      {"estimate", fsp_metadata(fp.estimate)}};
  if (!fp.converged) l.report.warnings.push_back("fixed point did not converge within the t-schedule");
  finish(l, c, sw);
  for (std::size_t i = 0; i < fp.increments.size(); ++i)
    std::printf("t=%g increment=%.4g allowance=%.4g\n", fp.times[i + 1], fp.increments[i], fp.allowances[i]);
  if (!fp.converged) {
    std::fprintf(stderr, "fixed point did not converge; see increments above\n");
    return kExitRuntime;
  }
  std::printf("x*_0=%.6g rho=%.6g\n", fp.estimate.tail.values.empty() ? 0.0 : fp.estimate.tail.values[0], cfg.rho());
  return kExitOk;
}

int cmd_independence(const Common& c) {
  Stopwatch sw;
  auto l = load(c, "independence");
  const auto sec = l.ex.independence.value_or(IndependenceSection{});
  auto ns = sec.n_values;
  if (ns.empty()) ns.push_back(l.ex.system.n);
  CsvWriter csv(fs::path(c.out_dir) / "independence.csv", l.hash,
                "n,w,mean,variance,variance_se,pair_covariance,pair_covariance_se");
  json rows = json::array();
  for (std::size_t i = 0; i < ns.size(); ++i) {
    auto cfg = l.ex.system;
    cfg.n = ns[i];
    IndependenceOptions io;
    io.warmup = sec.warmup;
    io.workers = l.workers;
    const auto rep = independence_test(cfg, sec.grid, sec.replications, RngStream(cfg.seed).child("independence").child(i), io);
    for (std::size_t g = 0; g < rep.grid.size(); ++g)
      csv.row({static_cast<double>(rep.n), rep.grid[g], rep.mean[g], rep.variance[g], rep.variance_se[g],
               rep.pair_covariance[g], rep.pair_covariance_se[g]});
    rows.push_back({{"n", rep.n}, {"variance", rep.variance}, {"pair_covariance", rep.pair_covariance}});
    std::printf("n=%zu variance(w=%g)=%.4g\n", rep.n, rep.grid.front(), rep.variance.front());
  }
  l.report.files.push_back("independence.csv");
  l.report.summary = {{"replications", sec.replications}, {"grid", sec.grid}, {"rows", rows}};
  finish(l, c, sw);
  return kExitOk;
}

std::vector<double> sorted_copy(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  return v;
}

int cmd_couple(const Common& c) {
  Stopwatch sw;
  auto l = load(c, "couple");
  const auto sec = l.ex.coupling.value_or(CouplingSection{});
  SystemConfig cfg = l.ex.system;
  std::stable_sort(cfg.snapshots.begin(), cfg.snapshots.end(),
                   [](const SnapshotSpec& x, const SnapshotSpec& y) { return x.time < y.time; });
  SystemConfig partner = cfg;
  partner.truncation = sec.partner_truncation;
  if (!sec.partner_initial.empty()) partner.initial = sec.partner_initial;
  try {
    partner.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("coupling partner: ") + e.what());
  }
  // The dominated system plays A; either side may be the smaller one.
  const bool config_lower = cfg.truncation <= partner.truncation &&
                            sorted_dominated(sorted_copy(initial_workloads(cfg)), sorted_copy(initial_workloads(partner)));
  const bool partner_lower = partner.truncation <= cfg.truncation &&
                             sorted_dominated(sorted_copy(initial_workloads(partner)), sorted_copy(initial_workloads(cfg)));
  if (!config_lower && !partner_lower)
    throw ConfigError("coupling partner is neither below nor above the config (truncation and sorted initial state)");
  const SystemConfig& a = config_lower ? cfg : partner;
  const SystemConfig& b = config_lower ? partner : cfg;
  CsvWriter csv(fs::path(c.out_dir) / "coupled.csv", l.hash, "run,time,w,x_w_config,x_w_partner");
  std::uint64_t violations = 0;
  std::uint64_t events = 0;
  for (std::size_t r = 0; r < sec.runs; ++r) {
    const auto res = run_coupled(a, b, RngStream(cfg.seed).child("couple").child(r));
    violations += res.dominance_violations;
    events += res.events;
    for (std::size_t s = 0; s < res.snapshots.size(); ++s) {
      const auto& snap = res.snapshots[s];
      const auto& grid = cfg.snapshots[s].grid;
      const auto ta = empirical_tail(snap.sorted_a, grid);
      const auto tb = empirical_tail(snap.sorted_b, grid);
      const auto& xc = config_lower ? ta : tb;
      const auto& xp = config_lower ? tb : ta;
      for (std::size_t g = 0; g < grid.size(); ++g)
        csv.row({static_cast<double>(r), snap.time, grid[g], xc.values[g], xp.values[g]});
    }
  }
  l.report.files.push_back("coupled.csv");
  l.report.summary = {{"runs", sec.runs},
                      {"dominated", config_lower ? "config" : "partner"},
                      {"events", events},
                      {"dominance_violations", violations}};
  if (violations > 0) l.report.warnings.push_back(std::to_string(violations) + " coupled events broke sorted dominance");
  finish(l, c, sw);
  std::printf("runs=%zu events=%llu dominance_violations=%llu\n", sec.runs, static_cast<unsigned long long>(events),
              static_cast<unsigned long long>(violations));
  return kExitOk;
}

int cmd_oracle_compare(const Common& c) {
  Stopwatch sw;
  auto l = load(c, "oracle-compare");
  const auto& cfg = l.ex.system;
  const auto sec = l.ex.oracle.value_or(OracleSection{});
  FspOptions fo;
  fo.max_gamma_t = gamma_limit(sec.max_gamma_t, c.force);
  fo.workers = l.workers;
  guard_gamma(cfg.classes, sec.t, fo.max_gamma_t);
  const RngStream rng = RngStream(cfg.seed).child("oracle-compare");
  const auto fsp = estimate_fsp(cfg.classes, sec.t, cfg.truncation, cfg.initial, sec.grid, sec.samples, rng.child("fsp"), fo);
  auto run_cfg = cfg;
  run_cfg.horizon = sec.t;
  run_cfg.snapshots = {{sec.t, sec.grid}};
  const std::size_t R = std::max<std::size_t>(sec.replications, 1);
  std::vector<std::vector<double>> reps(R);
  parallel_for(R, l.workers, [&](std::size_t i) { reps[i] = run(run_cfg, rng.child("finite").child(i)).snapshots[0].tail.values; });
  EmpiricalTail finite{sec.grid, std::vector<double>(sec.grid.size())};
  std::vector<double> finite_se(sec.grid.size(), 0.0);
  for (std::size_t g = 0; g < sec.grid.size(); ++g) {
    double mean = 0.0;
    for (const auto& v : reps) mean += v[g];
    mean /= static_cast<double>(R);
    finite.values[g] = mean;
    if (R > 1) {
      double ss = 0.0;
      for (const auto& v : reps) ss += (v[g] - mean) * (v[g] - mean);
      finite_se[g] = std::sqrt(ss / static_cast<double>(R - 1) / static_cast<double>(R));
    } else {
      // One run: binomial SE of a fraction over n exchangeable servers.
      finite_se[g] = binomial_se(mean, static_cast<double>(cfg.n));
    }
  }
  const auto cmp = compare_to_oracle(finite, finite_se, fsp);
  CsvWriter csv(fs::path(c.out_dir) / "oracle.csv", l.hash, "w,x_w_finite,se_finite,x_w_meanfield,se_meanfield,z");
  for (std::size_t g = 0; g < sec.grid.size(); ++g)
    csv.row({sec.grid[g], finite.values[g], finite_se[g], fsp.tail.values[g], fsp.se[g], cmp.z[g]});
  l.report.files.push_back("oracle.csv");
  l.report.summary = {{"rho", cfg.rho()},
                      {"sup_gap", cmp.sup_gap},
                      {"max_abs_z", cmp.max_abs_z},
                      {"fraction_within_3", cmp.fraction_within_3},
                      {"flagged", cmp.flagged},
                      {"meanfield", fsp_metadata(fsp)}};
  finish(l, c, sw);
  std::printf("sup_gap=%.4g max|z|=%.3g flagged=%s\n", cmp.sup_gap, cmp.max_abs_z, cmp.flagged ? "yes" : "no");
  return kExitOk;
}

int cmd_verify(const std::string& suite, const Common& c) {
  Stopwatch sw;
  if (!verify::suite_exists(suite)) throw UsageError("unknown suite '" + suite + "'");
  verify::VerifyOptions vo;
  if (c.seed) vo.seed = *c.seed;
  if (c.workers && *c.workers > 0) vo.workers = *c.workers;
  fs::create_directories(c.out_dir);
  const auto results = verify::run_suite(suite, vo, [](const verify::CriterionResult& r) {
    std::cout << verify::result_line(r) << std::endl;
  });
  bool all = true;
  json rows = json::array();
  for (const auto& r : results) {
    all = all && r.pass;
    rows.push_back(verify::to_json(r));
  }
  ExperimentReport report;
  report.command = "verify " + suite;
  report.seed = vo.seed;
  report.wall_clock_seconds = sw.seconds();
  report.summary = {{"suite", suite}, {"all_pass", all}, {"criteria", rows}};
  report.files.push_back("verify.json");
  write_json(fs::path(c.out_dir) / "verify.json", report.to_json());
  return all ? kExitOk : kExitRuntime;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Mean-field simulator and oracles for parallel-server systems with multi-component jobs"};
  app.require_subcommand(1);
  Common common;
  std::string suite;

  auto add_common = [&](CLI::App* sub, bool with_config) {
    if (with_config) sub->add_option("config", common.config_path, "experiment JSON file")->required();
    sub->add_option("--out", common.out_dir, "output directory");
    sub->add_option("--seed", common.seed, "override the config seed");
    sub->add_option("--workers", common.workers, "worker threads (0: available parallelism)");
    sub->add_flag("--force", common.force, "allow gamma*t above the configured limit");
  };
  auto* simulate = app.add_subcommand("simulate", "finite-n simulation with snapshots");
  auto* meanfield = app.add_subcommand("meanfield", "Monte Carlo fluid sample path on a t-schedule");
  auto* fixed_point = app.add_subcommand("fixed-point", "fixed-point estimate from the empty state");
  auto* independence = app.add_subcommand("independence", "replication variance and pair covariance");
  auto* couple = app.add_subcommand("couple", "monotone coupling against a partner system");
  auto* oracle = app.add_subcommand("oracle-compare", "finite-n tail against the mean-field oracle");
  auto* verify_cmd = app.add_subcommand("verify", "run an acceptance suite");
  for (auto* s : {simulate, meanfield, fixed_point, independence, couple, oracle}) add_common(s, true);
  add_common(verify_cmd, false);
  verify_cmd->add_option("suite", suite, "suite name, or 'all'")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (simulate->parsed()) return cmd_simulate(common);
    if (meanfield->parsed()) return cmd_meanfield(common);
    if (fixed_point->parsed()) return cmd_fixed_point(common);
    if (independence->parsed()) return cmd_independence(common);
    if (couple->parsed()) return cmd_couple(common);
    if (oracle->parsed()) return cmd_oracle_compare(common);
    if (verify_cmd->parsed()) return cmd_verify(suite, common);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitUsage;
}
