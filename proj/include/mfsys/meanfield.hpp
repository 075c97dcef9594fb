#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mfsys/core.hpp"
#include "mfsys/parallel.hpp"
#include "mfsys/placement.hpp"
#include "mfsys/rng.hpp"
#include "mfsys/tail.hpp"

namespace mfsys {

class TreeCapExceeded : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A job arrival seen by a node of the dependence tree. Its selection set is
// the node itself plus d_j - 1 fresh children stored contiguously from
// first_child; each child lives on [0, time].
struct TreeEvent {
  double time = 0.0;  // forward time
  std::uint32_t cls = 0;
  std::uint32_t first_child = 0;
};

struct TreeNode {
  double spawn = 0.0;  // forward time at which the node's value is needed
  std::uint32_t first_event = 0;
  std::uint32_t event_count = 0;
};

// Reverse-time branching structure behind the workload of one server in the
// infinite system. Node 0 is the root; node order is breadth-first, so a
// node's index is a deterministic function of the tree shape.
struct DependenceTree {
  std::vector<TreeNode> nodes;
  std::vector<TreeEvent> events;

  [[nodiscard]] std::size_t size() const noexcept { return nodes.size(); }
  [[nodiscard]] std::span<const TreeEvent> events_of(std::size_t node) const {
    const auto& nd = nodes[node];
    return {events.data() + nd.first_event, nd.event_count};
  }
  void clear() {
    nodes.clear();
    events.clear();
  }
};

inline constexpr std::size_t kDefaultNodeCap = 1'000'000;

// Grows the tree into `tree` (buffers reused). Every node receives class-j
// arrivals in reverse time at rate lambda_j d_j over its own lifetime.
inline void grow_tree(DependenceTree& tree, double t, std::span<const JobClassSpec> classes, RngStream& rng,
                      std::size_t node_cap = kDefaultNodeCap) {
  if (!(t >= 0.0)) throw std::invalid_argument("grow_tree: t must be >= 0");
  tree.clear();
  tree.nodes.push_back({t, 0, 0});
  double alpha = 0.0;
  for (const auto& c : classes) alpha += c.rate * c.d;
  if (!(alpha > 0.0)) return;
  const double mean_gap = 1.0 / alpha;

  for (std::size_t i = 0; i < tree.nodes.size(); ++i) {
    const double spawn = tree.nodes[i].spawn;
    const auto first = static_cast<std::uint32_t>(tree.events.size());
    for (double s = rng.exponential(mean_gap); s < spawn; s += rng.exponential(mean_gap)) {
      double u = rng.uniform01() * alpha;
      std::uint32_t cls = 0;
      for (; cls + 1 < classes.size(); ++cls) {
        const double a = classes[cls].rate * classes[cls].d;
        if (u < a) break;
        u -= a;
      }
      tree.events.push_back({spawn - s, cls, 0});
    }
    std::reverse(tree.events.begin() + first, tree.events.end());
    const auto count = static_cast<std::uint32_t>(tree.events.size() - first);
    tree.nodes[i].first_event = first;
    tree.nodes[i].event_count = count;
    for (std::uint32_t e = first; e < first + count; ++e) {
      auto& ev = tree.events[e];
      ev.first_child = static_cast<std::uint32_t>(tree.nodes.size());
      const int extra = classes[ev.cls].d - 1;
      if (tree.nodes.size() + static_cast<std::size_t>(extra) > node_cap)
        throw TreeCapExceeded("dependence tree exceeded " + std::to_string(node_cap) + " nodes");
      for (int c = 0; c < extra; ++c) tree.nodes.push_back({ev.time, 0, 0});
    }
  }
}

inline DependenceTree grow_tree(double t, std::span<const JobClassSpec> classes, RngStream& rng,
                                std::size_t node_cap = kDefaultNodeCap) {
  DependenceTree tree;
  grow_tree(tree, t, classes, rng, node_cap);
  return tree;
}

namespace detail {

inline double draw_initial(std::span<const InitialMass> law, RngStream& rng) {
  if (law.size() == 1) return law.front().workload;
  double u = rng.uniform01();
  for (std::size_t k = 0; k + 1 < law.size(); ++k) {
    if (u < law[k].fraction) return law[k].workload;
    u -= law[k].fraction;
  }
  return law.back().workload;
}

class TreeEvaluator {
 public:
  TreeEvaluator(const DependenceTree& tree, std::span<const InitialMass> law,
                std::span<const JobClassSpec> classes, double cap, const RngStream& rng)
      : tree_(tree), law_(law), classes_(classes), cap_(cap), rng_(rng) {}

  // Workload of `node` at its spawn time. Draws for a node come from the
  // substream keyed by its index, so the result does not depend on the
  // traversal order.
  double eval(std::size_t node, std::size_t depth) {
    RngStream r = rng_.child(node);
    double w = draw_initial(law_, r);
    double now = 0.0;
    if (frames_.size() <= depth) frames_.resize(depth + 1);
    for (const auto& ev : tree_.events_of(node)) {
      w = decay(w, ev.time - now);
      now = ev.time;
      const auto& spec = classes_[ev.cls];
      const auto d = static_cast<std::size_t>(spec.d);
      const auto pos = static_cast<std::size_t>(r.below(d));
      // Children first; recursion may grow frames_, so index it afresh.
      for (std::size_t c = 0, slot = 0; c + 1 < d; ++c, ++slot) {
        if (slot == pos) ++slot;
        const double v = eval(ev.first_child + c, depth + 1);
        auto& sel = frames_[depth].selection;
        if (sel.size() < d) sel.resize(d);
        sel[slot] = v;
      }
      auto& frame = frames_[depth];
      frame.selection.resize(d);
      frame.selection[pos] = w;
      frame.components.resize(static_cast<std::size_t>(spec.k));
      spec.sizes.sample(r, frame.components);
      place_inplace(spec.kind, frame.selection, frame.components, cap_, {}, scratch_);
      w = frame.selection[pos];
    }
    return decay(w, tree_.nodes[node].spawn - now);
  }

 private:
  struct Frame {
    std::vector<double> selection;
    std::vector<double> components;
  };
  const DependenceTree& tree_;
  std::span<const InitialMass> law_;
  std::span<const JobClassSpec> classes_;
  double cap_;
  RngStream rng_;
  PlacementScratch scratch_;
  std::vector<Frame> frames_;
};

}  // namespace detail

// Root workload U_1(t): IID initial workloads on all nodes, then forward
// evaluation with the placement kernel of each event's class.
inline double sample_u1(const DependenceTree& tree, std::span<const InitialMass> initial,
                        std::span<const JobClassSpec> classes, double cap, const RngStream& rng) {
  detail::TreeEvaluator ev(tree, initial, classes, cap, rng);
  return ev.eval(0, 0);
}

struct FspOptions {
  std::size_t node_cap = kDefaultNodeCap;
  double max_gamma_t = 6.0;  // refuse deeper trees unless raised explicitly
  unsigned workers = default_workers();
};

struct FspEstimate {
  double t = 0.0;
  double truncation = kInf;
  EmpiricalTail tail;
  std::vector<double> se;
  std::size_t samples = 0;
  double gamma = 0.0;
  double mean_tree_size = 0.0;
  std::size_t max_tree_size = 0;
};

// Monte Carlo estimate of x^c_w(t) = P{U_1(t) > w} from M independent trees.
inline FspEstimate estimate_fsp(std::span<const JobClassSpec> classes, double t, double cap,
                                std::span<const InitialMass> initial, std::span<const double> grid,
                                std::size_t samples, const RngStream& rng, const FspOptions& opt = {}) {
  if (samples < 1) throw std::invalid_argument("estimate_fsp: need at least one sample");
  require_increasing(grid);
  const double gamma = branching_rate(classes);
  if (gamma * t > opt.max_gamma_t)
    throw std::domain_error("estimate_fsp: gamma*t = " + std::to_string(gamma * t) + " exceeds limit " +
                            std::to_string(opt.max_gamma_t));
  std::vector<double> values(samples);
  std::vector<std::size_t> sizes(samples);
  std::vector<char> failed(samples, 0);
  parallel_for(samples, opt.workers, [&](std::size_t i) {
    const RngStream s = rng.child(i);
    RngStream growth = s.child(0);
    DependenceTree tree;
    try {
      grow_tree(tree, t, classes, growth, opt.node_cap);
    } catch (const TreeCapExceeded&) {
      failed[i] = 1;
      return;
    }
    sizes[i] = tree.size();
    values[i] = sample_u1(tree, initial, classes, cap, s.child(1));
  });
  const auto n_failed = static_cast<std::size_t>(std::count(failed.begin(), failed.end(), 1));
  if (n_failed > 0)
    throw TreeCapExceeded(std::to_string(n_failed) + " of " + std::to_string(samples) +
                          " tree samples exceeded the node cap of " + std::to_string(opt.node_cap));
  FspEstimate est;
  est.t = t;
  est.truncation = cap;
  est.samples = samples;
  est.gamma = gamma;
  est.tail = empirical_tail(values, grid);
  est.se.resize(grid.size());
  const auto m = static_cast<double>(samples);
  for (std::size_t g = 0; g < grid.size(); ++g) {
    const double p = est.tail.values[g];
    est.se[g] = std::sqrt(p * (1.0 - p) / m);
  }
  double total = 0.0;
  for (auto s : sizes) {
    total += static_cast<double>(s);
    est.max_tree_size = std::max(est.max_tree_size, s);
  }
  est.mean_tree_size = total / m;
  return est;
}

struct FixedPointResult {
  FspEstimate estimate;  // last evaluated point of the schedule
  bool converged = false;
  std::vector<double> times;
  std::vector<double> increments;  // sup-grid change from the previous t
  std::vector<double> allowances;  // tol + 2 * combined SE
  std::vector<FspEstimate> path;
};

inline const std::vector<double>& default_fixed_point_schedule() {
  static const std::vector<double> schedule{1, 2, 4, 8, 16, 32};
  return schedule;
}

// Evaluates the FSP from the empty state along an increasing t-schedule and
// stops once the sup-grid increment falls below tol plus Monte Carlo noise.
inline FixedPointResult estimate_fixed_point(std::span<const JobClassSpec> classes, double cap,
                                             std::span<const double> grid, std::span<const double> schedule,
                                             std::size_t samples, const RngStream& rng, double tol = 0.01,
                                             const FspOptions& opt = {}) {
  if (is_inf(cap) && !(offered_load(classes) < 1.0))
    throw std::domain_error("estimate_fixed_point: needs rho < 1 without truncation");
  require_increasing(schedule);
  if (schedule.empty()) throw std::invalid_argument("estimate_fixed_point: empty schedule");
  const std::vector<InitialMass> empty{InitialMass{1.0, 0.0}};
  FixedPointResult out;
  for (std::size_t i = 0; i < schedule.size(); ++i) {
    auto est = estimate_fsp(classes, schedule[i], cap, empty, grid, samples, rng.child(i), opt);
    out.times.push_back(schedule[i]);
    if (!out.path.empty()) {
      const auto& prev = out.path.back();
      double inc = 0.0;
      double allowance = 0.0;
      for (std::size_t g = 0; g < grid.size(); ++g) {
        inc = std::max(inc, std::abs(est.tail.values[g] - prev.tail.values[g]));
        allowance = std::max(allowance, 2.0 * std::hypot(est.se[g], prev.se[g]));
      }
      out.increments.push_back(inc);
      out.allowances.push_back(tol + allowance);
      out.path.push_back(std::move(est));
      if (inc < tol + allowance) {
        out.converged = true;
        break;
      }
    } else {
      out.path.push_back(std::move(est));
    }
  }
  out.estimate = out.path.back();
  return out;
}

}  // namespace mfsys
