#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <istream>
#include <ostream>
#include <queue>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mfsys/core.hpp"
#include "mfsys/finite_sim.hpp"
#include "mfsys/rng.hpp"

namespace mfsys {

// One job of a replica trace: d replicas on d distinct servers, k needed.
// In cancel-on-completion mode sizes[p] is the replica placed on
// selection[p]. In cancel-on-start mode sizes are consumed in start order:
// the i-th replica of the job to enter service carries sizes[i].
struct ReplicaJob {
  std::uint64_t id = 0;
  double time = 0.0;
  std::size_t cls = 0;
  int k = 1;
  std::vector<std::size_t> selection;
  std::vector<double> sizes;

  void validate() const {
    if (selection.size() != sizes.size() || selection.empty())
      throw std::invalid_argument("replica job " + std::to_string(id) + ": selection/sizes mismatch");
    if (k < 1 || static_cast<std::size_t>(k) > selection.size())
      throw std::invalid_argument("replica job " + std::to_string(id) + ": need 1 <= k <= d");
    for (double s : sizes)
      if (!(s > 0.0 && std::isfinite(s)))
        throw std::invalid_argument("replica job " + std::to_string(id) + ": sizes must be finite and > 0");
    auto sorted = selection;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
      throw std::invalid_argument("replica job " + std::to_string(id) + ": duplicate servers in selection");
  }
};

using ReplicaTrace = std::vector<ReplicaJob>;

// Poisson replica trace over [0, horizon]; replica sizes IID from each
// class's marginal component law.
inline ReplicaTrace generate_replica_trace(std::size_t n, const std::vector<JobClassSpec>& classes,
                                           double horizon, RngStream rng) {
  for (const auto& c : classes)
    if (!c.sizes.is_iid()) throw std::invalid_argument("replica traces need IID size families");
  ReplicaTrace trace;
  ArrivalSource source(n, classes, rng.child("arrivals"));
  RngStream sizes_rng = rng.child("replica-sizes");
  ArrivalRecord arr;
  while (source.next_time() <= horizon) {
    source.pop(arr);
    ReplicaJob job;
    job.id = trace.size();
    job.time = arr.time;
    job.cls = arr.cls;
    job.k = classes[arr.cls].k;
    job.selection = arr.selection;
    job.sizes.resize(arr.selection.size());
    for (double& s : job.sizes) s = classes[arr.cls].sizes.sample_marginal(sizes_rng);
    trace.push_back(std::move(job));
  }
  return trace;
}

// Rounds times and sizes to multiples of 2^-bits (sizes at least one unit).
// With moderate magnitudes every sum and difference of such values is exact
// in double precision.
inline void quantize_trace(ReplicaTrace& trace, int bits) {
  const double unit = std::ldexp(1.0, -bits);
  for (auto& job : trace) {
    job.time = std::round(job.time / unit) * unit;
    for (double& s : job.sizes) s = std::max(unit, std::round(s / unit) * unit);
  }
}

// The least-load arrivals equivalent to a cancel-on-start trace.
inline std::vector<ArrivalRecord> cos_equivalent_arrivals(const ReplicaTrace& trace) {
  std::vector<ArrivalRecord> out;
  out.reserve(trace.size());
  for (const auto& job : trace) {
    out.push_back({job.time, job.cls, job.selection,
                   std::vector<double>(job.sizes.begin(), job.sizes.begin() + job.k)});
  }
  return out;
}

inline void write_trace(std::ostream& os, const ReplicaTrace& trace) {
  for (const auto& job : trace) {
    nlohmann::json j{{"job", job.id},           {"time", job.time},   {"class", job.cls},
                     {"k", job.k},              {"selection", job.selection}, {"sizes", job.sizes}};
    os << j.dump() << '\n';
  }
}

inline ReplicaTrace read_trace(std::istream& is) {
  ReplicaTrace trace;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError("trace line " + std::to_string(lineno) + ": " + e.what());
    }
    for (const auto& [key, _] : j.items()) {
      if (key != "job" && key != "time" && key != "class" && key != "k" && key != "selection" && key != "sizes")
        throw ConfigError("trace line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
    try {
      ReplicaJob job;
      job.id = j.at("job").get<std::uint64_t>();
      job.time = j.at("time").get<double>();
      job.cls = j.at("class").get<std::size_t>();
      job.k = j.at("k").get<int>();
      job.selection = j.at("selection").get<std::vector<std::size_t>>();
      job.sizes = j.at("sizes").get<std::vector<double>>();
      job.validate();
      if (!trace.empty() && job.time < trace.back().time)
        throw ConfigError("trace times must be non-decreasing");
      trace.push_back(std::move(job));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("trace line " + std::to_string(lineno) + ": " + e.what());
    } catch (const std::invalid_argument& e) {
      throw ConfigError("trace line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return trace;
}

enum class CancelMode { OnStart, OnCompletion };

struct JobOutcome {
  double arrival = 0.0;
  double completion = -1.0;  // < 0 while unfinished
  int started = 0;
  int completed = 0;
  int canceled = 0;
};

struct RedundancyRun {
  std::vector<double> times;                     // one entry per recorded arrival
  std::vector<std::vector<double>> workloads;    // effective workload right after it
  double final_time = 0.0;
  std::vector<double> final_workloads;
  std::vector<JobOutcome> jobs;
  std::vector<std::string> warnings;
};

struct RedundancyOptions {
  bool record_each_arrival = true;
  double horizon = -1.0;  // < 0: time of the last arrival
};

// Replica-level FCFS servers with cancel-on-start or cancel-on-completion.
// Value type: copying it and draining the copy yields effective workloads.
class ReplicaSystem {
 public:
  ReplicaSystem(std::size_t n, CancelMode mode) : servers_(n), mode_(mode) {}

  void arrive(const ReplicaJob& job) {
    advance_to(job.time);
    const auto id = static_cast<std::uint32_t>(jobs_.size());
    jobs_.push_back({job.time, job.k, job.sizes, job.selection, {}});
    outcomes_.push_back({job.time, -1.0, 0, 0, 0});
    for (std::size_t p = 0; p < job.selection.size(); ++p) {
      const std::size_t s = job.selection.at(p);
      if (s >= servers_.size()) throw std::invalid_argument("replica job selects a server >= n");
      servers_[s].queue.push_back({id, static_cast<std::uint32_t>(p)});
      dirty_.push_back(s);
    }
    resolve_starts(job.time);
  }

  // Processes all service completions up to and including t.
  void advance_to(double t) {
    while (!events_.empty() && events_.top().time <= t) {
      const double now = events_.top().time;
      while (!events_.empty() && events_.top().time == now) {
        const auto ev = events_.top();
        events_.pop();
        auto& srv = servers_[ev.server];
        if (ev.version != srv.version || !srv.busy) continue;
        complete_head(ev.server, now);
      }
      resolve_starts(now);
    }
    now_ = std::max(now_, t);
  }

  // Workload each server will still process if nothing else arrives.
  [[nodiscard]] std::vector<double> effective_workloads(double t) const {
    ReplicaSystem copy(*this);
    copy.advance_to(kInf);
    std::vector<double> w(servers_.size());
    for (std::size_t s = 0; s < w.size(); ++s) w[s] = std::max(copy.servers_[s].free_at - t, 0.0);
    return w;
  }

  [[nodiscard]] const std::vector<JobOutcome>& outcomes() const noexcept { return outcomes_; }

 private:
  struct Replica {
    std::uint32_t job;
    std::uint32_t pos;
  };
  struct Server {
    std::deque<Replica> queue;  // head is in service when busy
    bool busy = false;
    double free_at = 0.0;  // end of the last service period
    std::uint64_t version = 0;
  };
  struct Job {
    double arrival;
    int k;
    std::vector<double> sizes;
    std::vector<std::size_t> selection;
    std::vector<char> gone;  // per position: completed or canceled
  };
  struct Event {
    double time;
    std::size_t server;
    std::uint64_t version;
    bool operator>(const Event& o) const { return time > o.time || (time == o.time && server > o.server); }
  };

  void start(std::size_t s, double t) {
    auto& srv = servers_[s];
    const Replica r = srv.queue.front();
    auto& job = jobs_[r.job];
    auto& out = outcomes_[r.job];
    const double size = mode_ == CancelMode::OnStart ? job.sizes[static_cast<std::size_t>(out.started)]
                                                     : job.sizes[r.pos];
    ++out.started;
    srv.busy = true;
    srv.free_at = t + size;
    events_.push({srv.free_at, s, ++srv.version});
    if (mode_ == CancelMode::OnStart && out.started == job.k) cancel_rest(r.job, t, /*keep_started=*/true);
  }

  void complete_head(std::size_t s, double t) {
    auto& srv = servers_[s];
    const Replica r = srv.queue.front();
    srv.queue.pop_front();
    srv.busy = false;
    srv.free_at = t;
    dirty_.push_back(s);
    auto& job = jobs_[r.job];
    auto& out = outcomes_[r.job];
    if (job.gone.empty()) job.gone.assign(job.selection.size(), 0);
    job.gone[r.pos] = 1;
    ++out.completed;
    if (out.completed == job.k) {
      out.completion = t;
      if (mode_ == CancelMode::OnCompletion) cancel_rest(r.job, t, /*keep_started=*/false);
    }
  }

  // Removes the job's remaining replicas. With keep_started, replicas already
  // in service are left alone (cancel-on-start); otherwise they are cut off
  // immediately.
  void cancel_rest(std::uint32_t id, double t, bool keep_started) {
    auto& job = jobs_[id];
    auto& out = outcomes_[id];
    if (job.gone.empty()) job.gone.assign(job.selection.size(), 0);
    for (std::size_t p = 0; p < job.selection.size(); ++p) {
      if (job.gone[p]) continue;
      const std::size_t s = job.selection[p];
      auto& srv = servers_[s];
      auto it = std::find_if(srv.queue.begin(), srv.queue.end(),
                             [&](const Replica& r) { return r.job == id && r.pos == p; });
      if (it == srv.queue.end()) continue;
      const bool in_service = srv.busy && it == srv.queue.begin();
      if (in_service && keep_started) continue;
      if (in_service) {
        srv.busy = false;
        srv.free_at = t;
        ++srv.version;
      }
      srv.queue.erase(it);
      job.gone[p] = 1;
      ++out.canceled;
      dirty_.push_back(s);
    }
  }

  // Starts service on idle servers with waiting replicas. Replicas of one
  // job that could start at the same instant are taken in selection order.
  void resolve_starts(double t) {
    while (!dirty_.empty()) {
      std::vector<std::size_t> candidates;
      std::sort(dirty_.begin(), dirty_.end());
      dirty_.erase(std::unique(dirty_.begin(), dirty_.end()), dirty_.end());
      for (std::size_t s : dirty_)
        if (!servers_[s].busy && !servers_[s].queue.empty()) candidates.push_back(s);
      dirty_.clear();
      std::sort(candidates.begin(), candidates.end(), [this](std::size_t a, std::size_t b) {
        const auto& ra = servers_[a].queue.front();
        const auto& rb = servers_[b].queue.front();
        return ra.job < rb.job || (ra.job == rb.job && ra.pos < rb.pos);
      });
      for (std::size_t s : candidates) {
        // An earlier start in this batch may have canceled this head.
        if (servers_[s].busy || servers_[s].queue.empty()) continue;
        const auto& head = servers_[s].queue.front();
        if (mode_ == CancelMode::OnStart && outcomes_[head.job].started >= jobs_[head.job].k)
          throw std::logic_error("cancel-on-start: queued replica of a job that already started k");
        start(s, t);
      }
    }
  }

  std::vector<Server> servers_;
  std::vector<Job> jobs_;
  std::vector<JobOutcome> outcomes_;
  std::priority_queue<Event, std::vector<Event>, std::greater<>> events_;
  std::vector<std::size_t> dirty_;
  CancelMode mode_;
  double now_ = 0.0;
};

namespace detail {

inline RedundancyRun run_replicas(const ReplicaTrace& trace, std::size_t n, CancelMode mode,
                                  const RedundancyOptions& opt) {
  ReplicaSystem sys(n, mode);
  RedundancyRun out;
  double last = 0.0;
  for (const auto& job : trace) {
    job.validate();
    if (job.time < last) throw std::invalid_argument("trace times must be non-decreasing");
    last = job.time;
    sys.arrive(job);
    if (opt.record_each_arrival) {
      out.times.push_back(job.time);
      out.workloads.push_back(sys.effective_workloads(job.time));
    }
  }
  out.final_time = opt.horizon >= 0.0 ? opt.horizon : last;
  if (out.final_time < last) throw std::invalid_argument("horizon precedes the last arrival");
  sys.advance_to(out.final_time);
  out.final_workloads = sys.effective_workloads(out.final_time);
  // Drain so every job has finished and its cancellations are accounted.
  ReplicaSystem drained(sys);
  drained.advance_to(kInf);
  out.jobs = drained.outcomes();
  return out;
}

}  // namespace detail

// FCFS replicas, cancel-on-start: once k replicas of a job start, the rest
// are removed from their queues.
inline RedundancyRun run_cos(const ReplicaTrace& trace, std::size_t n, const RedundancyOptions& opt = {}) {
  return detail::run_replicas(trace, n, CancelMode::OnStart, opt);
}

// FCFS replicas, cancel-on-completion: once k replicas of a job complete,
// the rest are removed, including any in service. In equivalence mode every
// class must have exponential sizes; otherwise a warning is attached.
inline RedundancyRun run_coc(const ReplicaTrace& trace, std::size_t n, std::span<const JobClassSpec> classes,
                             bool equivalence_mode = true, const RedundancyOptions& opt = {}) {
  bool all_exp = true;
  for (const auto& c : classes) all_exp = all_exp && c.sizes.is_exponential();
  if (!all_exp && equivalence_mode)
    throw std::invalid_argument("run_coc: equivalence mode requires exponential replica sizes");
  auto out = detail::run_replicas(trace, n, CancelMode::OnCompletion, opt);
  if (!all_exp)
    out.warnings.push_back("non-exponential replica sizes: no water-filling equivalence applies");
  return out;
}

}  // namespace mfsys
