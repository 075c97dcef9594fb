#pragma once

#include <algorithm>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

#include "mfsys/core.hpp"
#include "mfsys/rng.hpp"

namespace mfsys {

struct PlacementOutcome {
  std::vector<double> new_workloads;
  std::vector<double> added_per_server;
  double lost_to_truncation = 0.0;
};

// Reusable buffers for the in-place kernels.
struct PlacementScratch {
  std::vector<double> levels;
  std::vector<int> order;
  std::vector<char> active;
  std::vector<double> components;
};

namespace detail {

// Level reached by pouring `volume` over the ascending finite `sorted`
// levels. Kahan-compensated running remainder.
inline double scan_level(std::span<const double> sorted, double volume) {
  double level = sorted.front();
  double remaining = volume;
  double comp = 0.0;
  const std::size_t m = sorted.size();
  for (std::size_t j = 1; j <= m; ++j) {
    if (j == m) return level + remaining / static_cast<double>(j);
    const double next = sorted[j];
    const double need = static_cast<double>(j) * (next - level);
    if (remaining <= need) return level + remaining / static_cast<double>(j);
    const double y = -need - comp;
    const double t = remaining + y;
    comp = (t - remaining) - y;
    remaining = t;
    level = next;
  }
  return level;
}

}  // namespace detail

// Common level L with sum_i max(L - levels_i, 0) == volume. Infinite levels
// receive nothing unless every level is infinite, in which case the result
// is infinite.
inline double water_level(std::span<const double> levels, double volume) {
  if (levels.empty()) throw std::invalid_argument("water_level: empty level set");
  if (!(volume >= 0.0)) throw std::invalid_argument("water_level: volume must be >= 0");
  std::vector<double> sorted;
  sorted.reserve(levels.size());
  for (double w : levels)
    if (!is_inf(w)) sorted.push_back(w);
  if (sorted.empty()) return kInf;
  std::sort(sorted.begin(), sorted.end());
  if (volume == 0.0) return sorted.front();
  return detail::scan_level(sorted, volume);
}

// In-place water-filling with exclusion of one minimal server after each
// component. `added`, when non-empty, accumulates per-position increments.
// Returns the workload lost to truncation at `cap`.
inline double water_fill_inplace(std::span<double> w, std::span<const double> components,
                                 double cap, std::span<double> added, PlacementScratch& scratch) {
  const std::size_t d = w.size();
  if (components.size() > d) throw std::invalid_argument("water_fill: more components than servers");
  auto& active = scratch.active;
  auto& levels = scratch.levels;
  active.assign(d, 1);
  double lost = 0.0;
  for (std::size_t comp = 0; comp < components.size(); ++comp) {
    const double v = components[comp];
    levels.clear();
    std::size_t first_active = d;
    for (std::size_t i = 0; i < d; ++i) {
      if (!active[i]) continue;
      if (first_active == d) first_active = i;
      if (!is_inf(w[i])) levels.push_back(w[i]);
    }
    if (levels.empty()) {
      // Only infinite servers remain; the volume is absorbed.
      if (!added.empty()) added[first_active] += v;
    } else if (v > 0.0) {
      std::sort(levels.begin(), levels.end());
      const double level = detail::scan_level(levels, v);
      if (level <= cap) {
        for (std::size_t i = 0; i < d; ++i) {
          if (active[i] && w[i] < level) {
            if (!added.empty()) added[i] += level - w[i];
            w[i] = level;
          }
        }
      } else {
        double stored = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
          if (active[i] && w[i] < cap) {
            const double inc = cap - w[i];
            stored += inc;
            if (!added.empty()) added[i] += inc;
            w[i] = cap;
          }
        }
        lost += std::max(v - stored, 0.0);
      }
    }
    // Exclude one minimal active server, lowest position on ties.
    std::size_t arg = d;
    for (std::size_t i = 0; i < d; ++i) {
      if (active[i] && (arg == d || w[i] < w[arg])) arg = i;
    }
    active[arg] = 0;
  }
  return lost;
}

// In-place least-load placement: component i goes to the i-th least-loaded
// position (ties by lowest position), then is clamped at `cap`.
inline double least_load_inplace(std::span<double> w, std::span<const double> components,
                                 double cap, std::span<double> added, PlacementScratch& scratch) {
  const std::size_t d = w.size();
  const std::size_t k = components.size();
  if (k > d) throw std::invalid_argument("least_load: more components than servers");
  auto& order = scratch.order;
  order.resize(d);
  std::iota(order.begin(), order.end(), 0);
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    [&w](int a, int b) { return w[a] < w[b] || (w[a] == w[b] && a < b); });
  double lost = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    const auto p = static_cast<std::size_t>(order[i]);
    const double xi = components[i];
    if (is_inf(w[p])) {
      if (!added.empty()) added[p] += xi;
      continue;
    }
    double next = w[p] + xi;
    if (next > cap) {
      const double clamped = std::max(w[p], cap);
      lost += next - clamped;
      next = clamped;
    }
    if (!added.empty()) added[p] += next - w[p];
    w[p] = next;
  }
  return lost;
}

inline double place_inplace(PlacementKind kind, std::span<double> w, std::span<const double> components,
                            double cap, std::span<double> added, PlacementScratch& scratch) {
  return kind == PlacementKind::WaterFill ? water_fill_inplace(w, components, cap, added, scratch)
                                          : least_load_inplace(w, components, cap, added, scratch);
}

namespace detail {

inline PlacementOutcome place_copy(PlacementKind kind, std::span<const double> workloads,
                                   std::span<const double> components, double cap) {
  PlacementOutcome out;
  out.new_workloads.assign(workloads.begin(), workloads.end());
  out.added_per_server.assign(workloads.size(), 0.0);
  PlacementScratch scratch;
  out.lost_to_truncation =
      place_inplace(kind, out.new_workloads, components, cap, out.added_per_server, scratch);
  return out;
}

}  // namespace detail

inline PlacementOutcome place_water_fill(std::span<const double> workloads,
                                         std::span<const double> components, double cap = kInf) {
  return detail::place_copy(PlacementKind::WaterFill, workloads, components, cap);
}

inline PlacementOutcome place_least_load(std::span<const double> workloads,
                                         std::span<const double> components, double cap = kInf) {
  return detail::place_copy(PlacementKind::LeastLoad, workloads, components, cap);
}

// Draws the class's component sizes and places them on the selection.
inline PlacementOutcome apply_arrival(std::span<const double> selection, const JobClassSpec& cls,
                                      RngStream& rng, double cap) {
  if (selection.size() != static_cast<std::size_t>(cls.d))
    throw std::invalid_argument("apply_arrival: selection arity != d");
  const auto components = cls.sizes.sample(rng);
  return detail::place_copy(cls.kind, selection, components, cap);
}

}  // namespace mfsys
