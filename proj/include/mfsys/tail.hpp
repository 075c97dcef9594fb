#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

namespace mfsys {

// x_w sampled on an increasing grid: fraction of workloads strictly above w.
struct EmpiricalTail {
  std::vector<double> grid;
  std::vector<double> values;

  [[nodiscard]] std::size_t size() const noexcept { return grid.size(); }
};

inline void require_increasing(std::span<const double> grid) {
  for (std::size_t i = 1; i < grid.size(); ++i)
    if (!(grid[i - 1] < grid[i])) throw std::invalid_argument("grid must be strictly increasing");
}

// Tail of the given workloads. Infinite entries count as exceeding every
// finite w. Sorts a copy, so cost is O(n log n + |grid| log n).
inline EmpiricalTail empirical_tail(std::span<const double> workloads, std::span<const double> grid) {
  require_increasing(grid);
  std::vector<double> sorted(workloads.begin(), workloads.end());
  std::sort(sorted.begin(), sorted.end());
  EmpiricalTail tail{{grid.begin(), grid.end()}, std::vector<double>(grid.size(), 0.0)};
  if (sorted.empty()) return tail;
  const auto n = static_cast<double>(sorted.size());
  for (std::size_t g = 0; g < grid.size(); ++g) {
    const auto above = sorted.end() - std::upper_bound(sorted.begin(), sorted.end(), grid[g]);
    tail.values[g] = static_cast<double>(above) / n;
  }
  return tail;
}

// Sup-norm distance over a common grid.
inline double ks_distance(const EmpiricalTail& a, const EmpiricalTail& b) {
  if (a.grid != b.grid) throw std::invalid_argument("ks_distance: grid mismatch");
  double sup = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i)
    sup = std::max(sup, std::abs(a.values[i] - b.values[i]));
  return sup;
}

// Two-sample Kolmogorov-Smirnov statistic sup_x |F_a(x) - F_b(x)|.
inline double ks_two_sample(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("ks_two_sample: empty sample");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const auto na = static_cast<double>(a.size());
  const auto nb = static_cast<double>(b.size());
  std::size_t i = 0;
  std::size_t j = 0;
  double sup = 0.0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] == x) ++i;
    while (j < b.size() && b[j] == x) ++j;
    sup = std::max(sup, std::abs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  return sup;
}

}  // namespace mfsys
