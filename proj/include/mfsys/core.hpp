#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "mfsys/rng.hpp"

namespace mfsys {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

inline bool is_inf(double w) noexcept { return w == kInf; }

// Workload after `dt` units of unit-rate processing. Infinite stays infinite.
inline double decay(double w, double dt) noexcept {
  if (is_inf(w)) return w;
  const double r = w - dt;
  return r > 0.0 ? r : 0.0;
}

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

enum class PlacementKind { WaterFill, LeastLoad };

inline const char* to_string(PlacementKind kind) {
  return kind == PlacementKind::WaterFill ? "water_fill" : "least_load";
}

struct Exponential {
  double mean = 1.0;
};
struct Deterministic {
  double value = 1.0;
};
struct Uniform {
  double lo = 0.0;
  double hi = 1.0;
};
struct HyperExponential {
  std::vector<double> weights;
  std::vector<double> means;
};
// A fixed k-vector whose coordinates are handed out in uniformly random order.
struct PermutedVector {
  std::vector<double> values;
};

using SizeFamily =
    std::variant<Exponential, Deterministic, Uniform, HyperExponential, PermutedVector>;

// Exchangeable joint law of the k component sizes of one job.
class ComponentDistribution {
 public:
  ComponentDistribution() = default;
  ComponentDistribution(SizeFamily family, int arity)
      : family_(std::move(family)), arity_(arity) {
    validate();
  }

  [[nodiscard]] const SizeFamily& family() const noexcept { return family_; }
  [[nodiscard]] int arity() const noexcept { return arity_; }

  [[nodiscard]] bool is_iid() const noexcept {
    return !std::holds_alternative<PermutedVector>(family_);
  }
  [[nodiscard]] bool is_exponential() const noexcept {
    return std::holds_alternative<Exponential>(family_);
  }

  // E[xi_1].
  [[nodiscard]] double marginal_mean() const {
    return std::visit(
        [](const auto& f) -> double {
          using F = std::decay_t<decltype(f)>;
          if constexpr (std::is_same_v<F, Exponential>) {
            return f.mean;
          } else if constexpr (std::is_same_v<F, Deterministic>) {
            return f.value;
          } else if constexpr (std::is_same_v<F, Uniform>) {
            return 0.5 * (f.lo + f.hi);
          } else if constexpr (std::is_same_v<F, HyperExponential>) {
            const double wsum = std::accumulate(f.weights.begin(), f.weights.end(), 0.0);
            double m = 0.0;
            for (std::size_t i = 0; i < f.weights.size(); ++i) m += f.weights[i] * f.means[i];
            return m / wsum;
          } else {
            return std::accumulate(f.values.begin(), f.values.end(), 0.0) /
                   static_cast<double>(f.values.size());
          }
        },
        family_);
  }

  // One draw from the marginal law of a single coordinate.
  double sample_marginal(RngStream& rng) const {
    return std::visit(
        [&rng](const auto& f) -> double {
          using F = std::decay_t<decltype(f)>;
          if constexpr (std::is_same_v<F, Exponential>) {
            return rng.exponential(f.mean);
          } else if constexpr (std::is_same_v<F, Deterministic>) {
            return f.value;
          } else if constexpr (std::is_same_v<F, Uniform>) {
            return rng.uniform(f.lo, f.hi);
          } else if constexpr (std::is_same_v<F, HyperExponential>) {
            const double wsum = std::accumulate(f.weights.begin(), f.weights.end(), 0.0);
            double u = rng.uniform01() * wsum;
            std::size_t i = 0;
            for (; i + 1 < f.weights.size(); ++i) {
              if (u < f.weights[i]) break;
              u -= f.weights[i];
            }
            return rng.exponential(f.means[i]);
          } else {
            return f.values[rng.below(f.values.size())];
          }
        },
        family_);
  }

  // Fills `out` (size == arity) with one joint draw.
  void sample(RngStream& rng, std::span<double> out) const {
    if (const auto* pv = std::get_if<PermutedVector>(&family_)) {
      std::copy(pv->values.begin(), pv->values.end(), out.begin());
      for (std::size_t i = out.size(); i > 1; --i) {
        std::swap(out[i - 1], out[rng.below(i)]);
      }
      return;
    }
    for (double& x : out) x = sample_marginal(rng);
  }

  [[nodiscard]] std::vector<double> sample(RngStream& rng) const {
    std::vector<double> out(static_cast<std::size_t>(arity_));
    sample(rng, out);
    return out;
  }

 private:
  void validate() const {
    if (arity_ < 1) throw ConfigError("component arity must be >= 1");
    std::visit(
        [this](const auto& f) {
          using F = std::decay_t<decltype(f)>;
          auto finite_nonneg = [](double x) { return std::isfinite(x) && x >= 0.0; };
          if constexpr (std::is_same_v<F, Exponential>) {
            if (!(std::isfinite(f.mean) && f.mean > 0.0))
              throw ConfigError("exponential mean must be finite and > 0");
          } else if constexpr (std::is_same_v<F, Deterministic>) {
            if (!finite_nonneg(f.value)) throw ConfigError("deterministic value must be finite and >= 0");
          } else if constexpr (std::is_same_v<F, Uniform>) {
            if (!(finite_nonneg(f.lo) && finite_nonneg(f.hi) && f.lo <= f.hi))
              throw ConfigError("uniform bounds must satisfy 0 <= lo <= hi < inf");
          } else if constexpr (std::is_same_v<F, HyperExponential>) {
            if (f.weights.empty() || f.weights.size() != f.means.size())
              throw ConfigError("hyperexponential needs matching non-empty weights and means");
            double wsum = 0.0;
            for (std::size_t i = 0; i < f.weights.size(); ++i) {
              if (!finite_nonneg(f.weights[i])) throw ConfigError("hyperexponential weight invalid");
              if (!(std::isfinite(f.means[i]) && f.means[i] > 0.0))
                throw ConfigError("hyperexponential phase mean must be finite and > 0");
              wsum += f.weights[i];
            }
            if (!(wsum > 0.0)) throw ConfigError("hyperexponential weights sum to zero");
          } else {
            if (static_cast<int>(f.values.size()) != arity_)
              throw ConfigError("permuted vector length must equal the component count k");
            for (double v : f.values)
              if (!finite_nonneg(v)) throw ConfigError("permuted vector entries must be finite and >= 0");
          }
        },
        family_);
  }

  SizeFamily family_ = Exponential{1.0};
  int arity_ = 1;
};

struct JobClassSpec {
  int id = 0;
  PlacementKind kind = PlacementKind::LeastLoad;
  int d = 1;
  int k = 1;
  double rate = 0.0;  // per-server arrival rate
  ComponentDistribution sizes;

  void validate() const {
    if (k < 1 || d < k) throw ConfigError("class " + std::to_string(id) + ": need 1 <= k <= d");
    if (!(std::isfinite(rate) && rate >= 0.0))
      throw ConfigError("class " + std::to_string(id) + ": rate must be finite and >= 0");
    if (sizes.arity() != k)
      throw ConfigError("class " + std::to_string(id) + ": size distribution arity != k");
    if (!(k * sizes.marginal_mean() > 0.0))
      throw ConfigError("class " + std::to_string(id) + ": mean total size must be > 0");
  }
};

// s_j = k * E[xi_1].
inline double mean_total_size(const JobClassSpec& cls) {
  return static_cast<double>(cls.k) * cls.sizes.marginal_mean();
}

inline double offered_load(std::span<const JobClassSpec> classes) {
  double rho = 0.0;
  for (const auto& c : classes) rho += c.rate * mean_total_size(c);
  return rho;
}

inline double total_rate(std::span<const JobClassSpec> classes) {
  double lambda = 0.0;
  for (const auto& c : classes) lambda += c.rate;
  return lambda;
}

inline int max_selection(std::span<const JobClassSpec> classes) {
  int d = 0;
  for (const auto& c : classes) d = std::max(d, c.d);
  return d;
}

// Branching rate of the dependence tree: sum_j lambda_j d_j (d_j - 1).
inline double branching_rate(std::span<const JobClassSpec> classes) {
  double g = 0.0;
  for (const auto& c : classes) g += c.rate * c.d * (c.d - 1);
  return g;
}

struct InitialMass {
  double fraction = 1.0;
  double workload = 0.0;  // may be kInf
};

struct SnapshotSpec {
  double time = 0.0;
  std::vector<double> grid;
};

struct SystemConfig {
  std::size_t n = 1;
  std::vector<JobClassSpec> classes;
  double truncation = kInf;
  std::vector<InitialMass> initial{InitialMass{}};
  double horizon = 0.0;
  std::uint64_t seed = 1;
  std::vector<SnapshotSpec> snapshots;

  [[nodiscard]] double rho() const { return offered_load(classes); }
  [[nodiscard]] double lambda() const { return total_rate(classes); }

  void validate() const {
    if (n < 1) throw ConfigError("n must be >= 1");
    for (const auto& c : classes) {
      c.validate();
      if (static_cast<std::size_t>(c.d) > n)
        throw ConfigError("class " + std::to_string(c.id) + ": d exceeds n");
    }
    if (!(truncation >= 0.0)) throw ConfigError("truncation must be in [0, inf]");
    if (initial.empty()) throw ConfigError("initial state must list at least one mass");
    double total = 0.0;
    for (const auto& m : initial) {
      if (!(m.fraction > 0.0)) throw ConfigError("initial fractions must be > 0");
      if (!(m.workload >= 0.0)) throw ConfigError("initial workloads must be in [0, inf]");
      total += m.fraction;
    }
    if (std::abs(total - 1.0) > 1e-12) throw ConfigError("initial fractions must sum to 1");
    if (!(std::isfinite(horizon) && horizon >= 0.0)) throw ConfigError("horizon must be finite and >= 0");
    for (const auto& s : snapshots) {
      if (!(s.time >= 0.0 && s.time <= horizon))
        throw ConfigError("snapshot time outside [0, horizon]");
      if (!std::is_sorted(s.grid.begin(), s.grid.end()) ||
          std::adjacent_find(s.grid.begin(), s.grid.end()) != s.grid.end())
        throw ConfigError("snapshot grid must be strictly increasing");
    }
  }
};

struct SubsystemLoad {
  double rho_b = 0.0;
  double rho_a = 0.0;
};

// Loads of the finite-workload (B) and infinite-workload (A) server groups
// when a fraction 1 - b of servers carries infinite workload, using the
// limiting binomial law for how many finite servers a job selects. A job
// that finds m finite servers puts min(k, m) of its components on them; the
// rest is absorbed by infinite servers. Both loads are computed directly,
// so rho = b*rho_b + (1-b)*rho_a is a checkable identity.
inline SubsystemLoad b_subsystem_load(double b, std::span<const JobClassSpec> classes) {
  if (!(b > 0.0 && b <= 1.0)) throw std::domain_error("b must be in (0, 1]");
  double rho_b = 0.0;
  double absorbed = 0.0;  // per-server (all n) rate of work landing on A
  for (const auto& c : classes) {
    const double s = mean_total_size(c);
    double binom = 1.0;  // C(d, m)
    for (int m = 0; m <= c.d; ++m) {
      if (m > 0) binom = binom * static_cast<double>(c.d - m + 1) / static_cast<double>(m);
      const double pi = binom * std::pow(b, m) * std::pow(1.0 - b, c.d - m);
      const double on_b = static_cast<double>(std::min(c.k, m)) / static_cast<double>(c.k);
      if (m > 0) rho_b += (c.rate * pi / b) * s * on_b;
      absorbed += c.rate * pi * s * (1.0 - on_b);
    }
  }
  if (b == 1.0) return {rho_b, offered_load(classes)};
  return {rho_b, absorbed / (1.0 - b)};
}

}  // namespace mfsys
