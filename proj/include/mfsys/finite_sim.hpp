#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mfsys/core.hpp"
#include "mfsys/placement.hpp"
#include "mfsys/rng.hpp"
#include "mfsys/tail.hpp"

namespace mfsys {

// Uniform d-subsets of {0..n-1} by partial Fisher-Yates over a persistent
// permutation. Any starting order of the permutation gives uniform output.
class Selector {
 public:
  explicit Selector(std::size_t n) : perm_(n) { std::iota(perm_.begin(), perm_.end(), std::size_t{0}); }

  std::span<const std::size_t> draw(std::size_t d, RngStream& rng) {
    const std::size_t n = perm_.size();
    for (std::size_t i = 0; i < d; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
      std::swap(perm_[i], perm_[j]);
    }
    return {perm_.data(), d};
  }

 private:
  std::vector<std::size_t> perm_;
};

inline std::vector<std::size_t> sample_selection(std::size_t n, std::size_t d, RngStream& rng) {
  if (d < 1 || d > n) throw std::invalid_argument("sample_selection: need 1 <= d <= n");
  Selector sel(n);
  auto s = sel.draw(d, rng);
  return {s.begin(), s.end()};
}

// Initial workloads in blocks: the first round(a_1 n) servers get w_1, etc.
inline std::vector<double> initial_workloads(const SystemConfig& cfg) {
  std::vector<double> w(cfg.n, 0.0);
  double cum = 0.0;
  std::size_t begin = 0;
  for (std::size_t k = 0; k < cfg.initial.size(); ++k) {
    cum += cfg.initial[k].fraction;
    const std::size_t end = (k + 1 == cfg.initial.size())
                                ? cfg.n
                                : std::min(cfg.n, static_cast<std::size_t>(std::llround(cum * static_cast<double>(cfg.n))));
    for (std::size_t i = begin; i < end; ++i) w[i] = cfg.initial[k].workload;
    begin = std::max(begin, end);
  }
  return w;
}

// Server workloads with lazy decay: residual_[i] was the workload at
// touched_[i]. Also integrates busy time and, optionally, time spent above
// each point of an occupancy grid.
class WorkloadState {
 public:
  explicit WorkloadState(std::vector<double> initial, std::vector<double> occupancy_grid = {})
      : residual_(std::move(initial)),
        touched_(residual_.size(), 0.0),
        grid_(std::move(occupancy_grid)),
        occupancy_(grid_.size(), 0.0) {}

  [[nodiscard]] std::size_t size() const noexcept { return residual_.size(); }
  [[nodiscard]] double clock() const noexcept { return clock_; }

  [[nodiscard]] double at(std::size_t i, double t) const { return decay(residual_[i], t - touched_[i]); }

  void set(std::size_t i, double t, double value) {
    accrue(i, t);
    residual_[i] = value;
    touched_[i] = t;
    clock_ = std::max(clock_, t);
  }

  void advance_clock(double t) { clock_ = std::max(clock_, t); }

  // Materializes every server at t so the integrals cover [.., t].
  void flush(double t) {
    for (std::size_t i = 0; i < residual_.size(); ++i) set(i, t, at(i, t));
  }

  void reset_integrals() {
    busy_ = 0.0;
    std::fill(occupancy_.begin(), occupancy_.end(), 0.0);
  }

  // Valid for the interval ending at the last flush.
  [[nodiscard]] double busy_integral() const noexcept { return busy_; }
  [[nodiscard]] std::span<const double> occupancy_integrals() const noexcept { return occupancy_; }
  [[nodiscard]] std::span<const double> occupancy_grid() const noexcept { return grid_; }

  [[nodiscard]] std::vector<double> materialize(double t) const {
    std::vector<double> w(residual_.size());
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = at(i, t);
    return w;
  }

 private:
  void accrue(std::size_t i, double t) {
    const double dt = t - touched_[i];
    if (dt <= 0.0) return;
    const double r = residual_[i];
    if (is_inf(r)) {
      busy_ += dt;
      for (double& o : occupancy_) o += dt;
      return;
    }
    busy_ += std::min(r, dt);
    for (std::size_t g = 0; g < grid_.size() && r > grid_[g]; ++g) occupancy_[g] += std::min(r - grid_[g], dt);
  }

  std::vector<double> residual_;
  std::vector<double> touched_;
  std::vector<double> grid_;
  std::vector<double> occupancy_;
  double busy_ = 0.0;
  double clock_ = 0.0;
};

struct Snapshot {
  double time = 0.0;
  EmpiricalTail tail;
  double busy_fraction = 0.0;
  double total_work = 0.0;
  double infinite_fraction = 0.0;
};

inline Snapshot make_snapshot(double t, std::span<const double> workloads, std::span<const double> grid) {
  Snapshot s;
  s.time = t;
  s.tail = empirical_tail(workloads, grid);
  std::size_t busy = 0;
  std::size_t inf = 0;
  for (double w : workloads) {
    if (w > 0.0) ++busy;
    if (is_inf(w)) {
      ++inf;
    } else {
      s.total_work += w;
    }
  }
  const auto n = static_cast<double>(workloads.size());
  s.busy_fraction = static_cast<double>(busy) / n;
  s.infinite_fraction = static_cast<double>(inf) / n;
  return s;
}

// One job arrival, fully resolved: who was selected and what it brings.
struct ArrivalRecord {
  double time = 0.0;
  std::size_t cls = 0;
  std::vector<std::size_t> selection;
  std::vector<double> components;
};

// The n-server system driven by externally supplied arrivals.
class FiniteSystem {
 public:
  FiniteSystem(std::vector<JobClassSpec> classes, double cap, std::vector<double> initial,
               std::vector<double> occupancy_grid = {})
      : classes_(std::move(classes)), cap_(cap), state_(std::move(initial), std::move(occupancy_grid)) {
    for (std::size_t i = 0; i < state_.size(); ++i) {
      const double w = state_.at(i, 0.0);
      if (!is_inf(w)) initial_work_ += w;
    }
  }

  void apply(double t, std::size_t cls, std::span<const std::size_t> selection,
             std::span<const double> components) {
    const auto& spec = classes_.at(cls);
    if (selection.size() != static_cast<std::size_t>(spec.d))
      throw std::invalid_argument("arrival selection size != d");
    if (components.size() != static_cast<std::size_t>(spec.k))
      throw std::invalid_argument("arrival component count != k");
    buf_.resize(selection.size());
    added_.assign(selection.size(), 0.0);
    for (std::size_t i = 0; i < selection.size(); ++i) buf_[i] = state_.at(selection[i], t);
    lost_ += place_inplace(spec.kind, buf_, components, cap_, added_, scratch_);
    for (std::size_t i = 0; i < selection.size(); ++i) {
      if (is_inf(buf_[i])) absorbed_ += added_[i];
      state_.set(selection[i], t, buf_[i]);
    }
    for (double x : components) arrived_ += x;
    ++arrivals_;
  }

  void apply(const ArrivalRecord& a) { apply(a.time, a.cls, a.selection, a.components); }

  [[nodiscard]] Snapshot snapshot(double t, std::span<const double> grid) const {
    const auto w = state_.materialize(t);
    return make_snapshot(t, w, grid);
  }

  [[nodiscard]] WorkloadState& state() noexcept { return state_; }
  [[nodiscard]] const WorkloadState& state() const noexcept { return state_; }
  [[nodiscard]] const std::vector<JobClassSpec>& classes() const noexcept { return classes_; }
  [[nodiscard]] double cap() const noexcept { return cap_; }
  [[nodiscard]] std::uint64_t arrivals() const noexcept { return arrivals_; }
  [[nodiscard]] double arrived_work() const noexcept { return arrived_; }
  [[nodiscard]] double lost_work() const noexcept { return lost_; }
  [[nodiscard]] double absorbed_work() const noexcept { return absorbed_; }
  [[nodiscard]] double initial_work() const noexcept { return initial_work_; }

 private:
  std::vector<JobClassSpec> classes_;
  double cap_;
  WorkloadState state_;
  PlacementScratch scratch_;
  std::vector<double> buf_;
  std::vector<double> added_;
  std::uint64_t arrivals_ = 0;
  double arrived_ = 0.0;
  double lost_ = 0.0;
  double absorbed_ = 0.0;
  double initial_work_ = 0.0;
};

// Poisson arrival generator: one exponential clock at total rate
// n * sum_j lambda_j, class drawn proportionally to lambda_j.
class ArrivalSource {
 public:
  ArrivalSource(std::size_t n, const std::vector<JobClassSpec>& classes, RngStream rng)
      : n_(n), classes_(&classes), selector_(n), rng_(rng) {
    std::vector<double> rates;
    for (const auto& c : classes) rates.push_back(c.rate);
    total_ = std::accumulate(rates.begin(), rates.end(), 0.0) * static_cast<double>(n);
    if (total_ > 0.0) pick_ = std::discrete_distribution<std::size_t>(rates.begin(), rates.end());
    next_ = total_ > 0.0 ? rng_.exponential(1.0 / total_) : kInf;
  }

  [[nodiscard]] double next_time() const noexcept { return next_; }

  // Resolves the pending arrival into `out` and schedules the next one.
  void pop(ArrivalRecord& out) {
    out.time = next_;
    out.cls = classes_->size() == 1 ? 0 : pick_(rng_);
    const auto& spec = (*classes_)[out.cls];
    auto sel = selector_.draw(static_cast<std::size_t>(spec.d), rng_);
    out.selection.assign(sel.begin(), sel.end());
    out.components.resize(static_cast<std::size_t>(spec.k));
    spec.sizes.sample(rng_, out.components);
    next_ += rng_.exponential(1.0 / total_);
  }

 private:
  std::size_t n_;
  const std::vector<JobClassSpec>* classes_;
  Selector selector_;
  RngStream rng_;
  std::discrete_distribution<std::size_t> pick_;
  double total_ = 0.0;
  double next_ = kInf;
};

// A FiniteSystem fed by its own Poisson arrivals.
class Simulation {
 public:
  Simulation(const SystemConfig& cfg, RngStream rng, std::vector<double> occupancy_grid = {})
      : classes_(cfg.classes),
        system_(cfg.classes, cfg.truncation, initial_workloads(cfg), std::move(occupancy_grid)),
        source_(cfg.n, classes_, rng.child("arrivals")) {}

  Simulation(const Simulation&) = delete;
  Simulation& operator=(const Simulation&) = delete;

  void advance_to(double t) {
    while (source_.next_time() <= t) {
      source_.pop(pending_);
      system_.apply(pending_);
    }
    system_.state().advance_clock(t);
  }

  [[nodiscard]] FiniteSystem& system() noexcept { return system_; }
  [[nodiscard]] const FiniteSystem& system() const noexcept { return system_; }

 private:
  std::vector<JobClassSpec> classes_;
  FiniteSystem system_;
  ArrivalSource source_;
  ArrivalRecord pending_;
};

struct RunSummary {
  std::uint64_t arrivals = 0;
  double rho = 0.0;
  double horizon = 0.0;
  double initial_work = 0.0;
  double arrived_work = 0.0;
  double lost_work = 0.0;
  double absorbed_work = 0.0;
  double processed_work = 0.0;  // integral of the busy count over [0, T]
  double final_work = 0.0;
  double time_avg_busy = 0.0;
  std::vector<std::string> warnings;
};

struct RunResult {
  std::vector<Snapshot> snapshots;
  RunSummary summary;
};

inline RunResult run(const SystemConfig& cfg, RngStream rng) {
  cfg.validate();
  RunResult out;
  auto& sum = out.summary;
  sum.rho = cfg.rho();
  sum.horizon = cfg.horizon;
  if (sum.rho >= 1.0 && is_inf(cfg.truncation))
    sum.warnings.push_back("offered load rho = " + std::to_string(sum.rho) +
                           " >= 1 without truncation; the system is not stable");
  std::vector<std::size_t> order(cfg.snapshots.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return cfg.snapshots[a].time < cfg.snapshots[b].time; });

  Simulation sim(cfg, rng);
  for (std::size_t idx : order) {
    const auto& spec = cfg.snapshots[idx];
    sim.advance_to(spec.time);
    out.snapshots.push_back(sim.system().snapshot(spec.time, spec.grid));
  }
  sim.advance_to(cfg.horizon);
  auto& sys = sim.system();
  sys.state().flush(cfg.horizon);
  sum.arrivals = sys.arrivals();
  sum.initial_work = sys.initial_work();
  sum.arrived_work = sys.arrived_work();
  sum.lost_work = sys.lost_work();
  sum.absorbed_work = sys.absorbed_work();
  sum.processed_work = sys.state().busy_integral();
  for (double w : sys.state().materialize(cfg.horizon))
    if (!is_inf(w)) sum.final_work += w;
  if (cfg.horizon > 0.0)
    sum.time_avg_busy = sum.processed_work / (static_cast<double>(cfg.n) * cfg.horizon);
  return out;
}

// Replays a fixed arrival sequence; returns the full workload vector right
// after each arrival.
inline std::vector<std::vector<double>> replay(const std::vector<JobClassSpec>& classes, double cap,
                                               std::vector<double> initial,
                                               std::span<const ArrivalRecord> arrivals) {
  FiniteSystem sys(classes, cap, std::move(initial));
  std::vector<std::vector<double>> out;
  out.reserve(arrivals.size());
  for (const auto& a : arrivals) {
    sys.apply(a);
    out.push_back(sys.state().materialize(a.time));
  }
  return out;
}

struct SteadyStateOptions {
  double warmup = -1.0;  // < 0: 20 / (1 - rho), or 20 (1 + c) when rho >= 1
  int batches = 20;
  double batch_len = 50.0;
  std::vector<double> grid;
};

struct SteadyStateEstimate {
  EmpiricalTail tail;
  std::vector<double> se;
  std::vector<double> ci_half;  // 95% normal interval half-width
  double busy_fraction = 0.0;
  double busy_se = 0.0;
  double lag1_autocorrelation = 0.0;
  double warmup = 0.0;
  std::vector<std::vector<double>> batch_tails;
  std::vector<double> batch_busy;
  std::vector<std::string> warnings;
};

inline double default_warmup(const SystemConfig& cfg) {
  const double rho = cfg.rho();
  if (rho < 1.0) return 20.0 / (1.0 - rho);
  return 20.0 * (1.0 + cfg.truncation);
}

namespace detail {

inline void mean_and_se(std::span<const double> xs, double& mean, double& se) {
  const auto m = static_cast<double>(xs.size());
  mean = std::accumulate(xs.begin(), xs.end(), 0.0) / m;
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  se = xs.size() > 1 ? std::sqrt(ss / (m - 1.0) / m) : 0.0;
}

inline double lag1(std::span<const double> xs) {
  if (xs.size() < 3) return 0.0;
  const double mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    den += (xs[i] - mean) * (xs[i] - mean);
    if (i + 1 < xs.size()) num += (xs[i] - mean) * (xs[i + 1] - mean);
  }
  return den > 0.0 ? num / den : 0.0;
}

}  // namespace detail

// Batch-means estimate of E x^n_w(infinity): time averages of x_w over
// consecutive batches after a warm-up.
inline SteadyStateEstimate steady_state(const SystemConfig& cfg, const SteadyStateOptions& opt, RngStream rng) {
  cfg.validate();
  if (!(cfg.rho() < 1.0 || !is_inf(cfg.truncation)))
    throw std::invalid_argument("steady_state: needs rho < 1 or finite truncation");
  if (opt.batches < 2 || !(opt.batch_len > 0.0)) throw std::invalid_argument("steady_state: bad batch setup");
  require_increasing(opt.grid);
  SteadyStateEstimate est;
  est.warmup = opt.warmup >= 0.0 ? opt.warmup : default_warmup(cfg);
  Simulation sim(cfg, rng, opt.grid);
  auto& state = sim.system().state();
  sim.advance_to(est.warmup);
  state.flush(est.warmup);
  state.reset_integrals();
  const auto scale = static_cast<double>(cfg.n) * opt.batch_len;
  for (int b = 0; b < opt.batches; ++b) {
    const double end = est.warmup + opt.batch_len * (b + 1);
    sim.advance_to(end);
    state.flush(end);
    std::vector<double> tail(opt.grid.size());
    for (std::size_t g = 0; g < tail.size(); ++g) tail[g] = state.occupancy_integrals()[g] / scale;
    est.batch_tails.push_back(std::move(tail));
    est.batch_busy.push_back(state.busy_integral() / scale);
    state.reset_integrals();
  }
  est.tail.grid = opt.grid;
  est.tail.values.resize(opt.grid.size());
  est.se.resize(opt.grid.size());
  est.ci_half.resize(opt.grid.size());
  std::vector<double> column(static_cast<std::size_t>(opt.batches));
  for (std::size_t g = 0; g < opt.grid.size(); ++g) {
    for (std::size_t b = 0; b < column.size(); ++b) column[b] = est.batch_tails[b][g];
    detail::mean_and_se(column, est.tail.values[g], est.se[g]);
    est.ci_half[g] = 1.96 * est.se[g];
  }
  detail::mean_and_se(est.batch_busy, est.busy_fraction, est.busy_se);
  est.lag1_autocorrelation = detail::lag1(est.batch_busy);
  if (est.lag1_autocorrelation > 0.2)
    est.warnings.push_back("lag-1 batch autocorrelation " + std::to_string(est.lag1_autocorrelation) +
                           " > 0.2; warm-up or batch length may be too short");
  return est;
}

// Sorted-workload representation used for rank-based coupling. Workloads
// are decayed eagerly, which keeps the vector sorted between arrivals.
class SortedSystem {
 public:
  SortedSystem(std::vector<double> initial, double cap) : w_(std::move(initial)), cap_(cap) {
    std::sort(w_.begin(), w_.end());
  }

  void advance_to(double t) {
    const double dt = t - time_;
    if (dt > 0.0)
      for (double& x : w_) x = decay(x, dt);
    time_ = std::max(time_, t);
  }

  void apply(PlacementKind kind, std::span<const std::size_t> ranks, std::span<const double> components) {
    buf_.resize(ranks.size());
    for (std::size_t i = 0; i < ranks.size(); ++i) buf_[i] = w_[ranks[i]];
    place_inplace(kind, buf_, components, cap_, {}, scratch_);
    for (std::size_t i = 0; i < ranks.size(); ++i) w_[ranks[i]] = buf_[i];
    std::sort(w_.begin(), w_.end());
  }

  [[nodiscard]] const std::vector<double>& sorted() const noexcept { return w_; }

 private:
  std::vector<double> w_;
  double cap_;
  double time_ = 0.0;
  PlacementScratch scratch_;
  std::vector<double> buf_;
};

struct CoupledSnapshot {
  double time = 0.0;
  std::vector<double> sorted_a;
  std::vector<double> sorted_b;
};

struct CoupledResult {
  std::vector<CoupledSnapshot> snapshots;
  std::uint64_t events = 0;
  std::uint64_t dominance_violations = 0;  // events where sorted A > sorted B somewhere
};

inline bool sorted_dominated(std::span<const double> a, std::span<const double> b) {
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] > b[i]) return false;
  return true;
}

// Drives A and B with the same arrival times, classes, component draws and
// rank-based selections. Snapshot times and horizon come from A.
inline CoupledResult run_coupled(const SystemConfig& a, const SystemConfig& b, RngStream rng) {
  a.validate();
  b.validate();
  if (a.n != b.n) throw std::invalid_argument("run_coupled: server counts differ");
  if (a.classes.size() != b.classes.size()) throw std::invalid_argument("run_coupled: class lists differ");
  for (std::size_t j = 0; j < a.classes.size(); ++j) {
    const auto& ca = a.classes[j];
    const auto& cb = b.classes[j];
    if (ca.kind != cb.kind || ca.d != cb.d || ca.k != cb.k || ca.rate != cb.rate)
      throw std::invalid_argument("run_coupled: class lists differ");
  }
  if (!(a.truncation <= b.truncation)) throw std::invalid_argument("run_coupled: need c_A <= c_B");
  SortedSystem sa(initial_workloads(a), a.truncation);
  SortedSystem sb(initial_workloads(b), b.truncation);
  if (!sorted_dominated(sa.sorted(), sb.sorted()))
    throw std::invalid_argument("run_coupled: sorted initial state of A must be <= that of B");

  CoupledResult out;
  std::vector<std::size_t> order(a.snapshots.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return a.snapshots[x].time < a.snapshots[y].time; });
  std::size_t next_snap = 0;
  auto take_snapshots_before = [&](double t) {
    while (next_snap < order.size() && a.snapshots[order[next_snap]].time < t) {
      const double ts = a.snapshots[order[next_snap]].time;
      sa.advance_to(ts);
      sb.advance_to(ts);
      out.snapshots.push_back({ts, sa.sorted(), sb.sorted()});
      ++next_snap;
    }
  };

  ArrivalSource source(a.n, a.classes, rng.child("arrivals"));
  ArrivalRecord arr;
  while (source.next_time() <= a.horizon) {
    take_snapshots_before(source.next_time());
    source.pop(arr);
    sa.advance_to(arr.time);
    sb.advance_to(arr.time);
    // arr.selection is read as a set of workload ranks.
    const auto kind = a.classes[arr.cls].kind;
    sa.apply(kind, arr.selection, arr.components);
    sb.apply(kind, arr.selection, arr.components);
    ++out.events;
    if (!sorted_dominated(sa.sorted(), sb.sorted())) ++out.dominance_violations;
  }
  take_snapshots_before(kInf);
  return out;
}

struct SurvivalSeries {
  std::vector<double> times;
  std::vector<double> fraction;  // tagged servers never selected, divided by n
};

// Tags the first round(a n) servers at time 0 and tracks how many of them
// no arrival has selected yet.
inline SurvivalSeries tagged_survival(const SystemConfig& cfg, double a, std::span<const double> times,
                                      RngStream rng) {
  if (!(a >= 0.0 && a <= 1.0)) throw std::invalid_argument("tagged_survival: a must be in [0, 1]");
  require_increasing(times);
  const auto tagged = static_cast<std::size_t>(std::llround(a * static_cast<double>(cfg.n)));
  std::vector<char> untouched(cfg.n, 0);
  std::fill(untouched.begin(), untouched.begin() + static_cast<std::ptrdiff_t>(tagged), 1);
  std::size_t remaining = tagged;
  SurvivalSeries out;
  ArrivalSource source(cfg.n, cfg.classes, rng.child("arrivals"));
  ArrivalRecord arr;
  for (double t : times) {
    while (source.next_time() <= t) {
      source.pop(arr);
      for (std::size_t s : arr.selection) {
        if (untouched[s]) {
          untouched[s] = 0;
          --remaining;
        }
      }
    }
    out.times.push_back(t);
    out.fraction.push_back(static_cast<double>(remaining) / static_cast<double>(cfg.n));
  }
  return out;
}

}  // namespace mfsys
