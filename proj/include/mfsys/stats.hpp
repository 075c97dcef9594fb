#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

#include "mfsys/core.hpp"
#include "mfsys/finite_sim.hpp"
#include "mfsys/meanfield.hpp"
#include "mfsys/parallel.hpp"
#include "mfsys/rng.hpp"
#include "mfsys/tail.hpp"

namespace mfsys {

// Across-replication spread of x^n_w and the average covariance between the
// indicators I{W_i > w}, I{W_j > w} of two distinct servers implied by it.
struct IndependenceReport {
  std::vector<double> grid;
  std::vector<double> mean;
  std::vector<double> variance;
  std::vector<double> variance_se;
  std::vector<double> pair_covariance;  // NaN when n == 1
  std::vector<double> pair_covariance_se;
  std::size_t replications = 0;
  std::size_t n = 0;
};

// samples[r][g] = x^n_{grid[g]} in replication r. Uses exchangeability:
// avg_{i != j} Cov(I_i, I_j) = (n Var(x) - p(1 - p)) / (n - 1).
inline IndependenceReport independence_from_samples(std::span<const std::vector<double>> samples,
                                                    std::span<const double> grid, std::size_t n) {
  if (samples.size() < 2) throw std::invalid_argument("independence: need at least two replications");
  IndependenceReport rep;
  rep.grid.assign(grid.begin(), grid.end());
  rep.replications = samples.size();
  rep.n = n;
  const auto r = static_cast<double>(samples.size());
  const auto nn = static_cast<double>(n);
  for (std::size_t g = 0; g < grid.size(); ++g) {
    double mean = 0.0;
    for (const auto& s : samples) mean += s.at(g);
    mean /= r;
    double ss = 0.0;
    for (const auto& s : samples) ss += (s[g] - mean) * (s[g] - mean);
    const double var = ss / (r - 1.0);
    const double var_se = var * std::sqrt(2.0 / (r - 1.0));
    rep.mean.push_back(mean);
    rep.variance.push_back(var);
    rep.variance_se.push_back(var_se);
    if (n > 1) {
      rep.pair_covariance.push_back((nn * var - mean * (1.0 - mean)) / (nn - 1.0));
      rep.pair_covariance_se.push_back(nn * var_se / (nn - 1.0));
    } else {
      rep.pair_covariance.push_back(std::numeric_limits<double>::quiet_NaN());
      rep.pair_covariance_se.push_back(std::numeric_limits<double>::quiet_NaN());
    }
  }
  return rep;
}

struct IndependenceOptions {
  double warmup = -1.0;  // < 0: default_warmup(config)
  unsigned workers = default_workers();
};

// R independent replications, each run through warm-up and observed once.
inline IndependenceReport independence_test(const SystemConfig& cfg, std::span<const double> grid,
                                            std::size_t replications, const RngStream& rng,
                                            const IndependenceOptions& opt = {}) {
  cfg.validate();
  if (replications < 30) throw std::invalid_argument("independence_test: need R >= 30");
  require_increasing(grid);
  const double warmup = opt.warmup >= 0.0 ? opt.warmup : default_warmup(cfg);
  std::vector<std::vector<double>> samples(replications);
  parallel_for(replications, opt.workers, [&](std::size_t r) {
    Simulation sim(cfg, rng.child(r));
    sim.advance_to(warmup);
    samples[r] = sim.system().snapshot(warmup, grid).tail.values;
  });
  return independence_from_samples(samples, grid, cfg.n);
}

struct OracleComparison {
  double sup_gap = 0.0;
  std::vector<double> z;
  double max_abs_z = 0.0;
  double fraction_within_3 = 1.0;
  bool flagged = false;  // fewer than 99% of grid points within |z| <= 3
};

inline OracleComparison compare_to_oracle(const EmpiricalTail& finite, std::span<const double> finite_se,
                                          const FspEstimate& oracle) {
  if (finite.grid != oracle.tail.grid) throw std::invalid_argument("compare_to_oracle: grid mismatch");
  OracleComparison out;
  out.sup_gap = ks_distance(finite, oracle.tail);
  std::size_t within = 0;
  for (std::size_t g = 0; g < finite.size(); ++g) {
    const double diff = finite.values[g] - oracle.tail.values[g];
    const double fse = finite_se.empty() ? 0.0 : finite_se[g];
    const double se = std::hypot(fse, oracle.se[g]);
    double z = 0.0;
    if (se > 0.0) {
      z = diff / se;
    } else if (diff != 0.0) {
      z = std::copysign(std::numeric_limits<double>::infinity(), diff);
    }
    out.z.push_back(z);
    out.max_abs_z = std::max(out.max_abs_z, std::abs(z));
    if (std::abs(z) <= 3.0) ++within;
  }
  if (!out.z.empty()) out.fraction_within_3 = static_cast<double>(within) / static_cast<double>(out.z.size());
  out.flagged = out.fraction_within_3 < 0.99;
  return out;
}

// Binomial standard error of a fraction estimated from m Bernoulli draws.
inline double binomial_se(double p, double m) { return std::sqrt(std::max(p * (1.0 - p), 0.0) / m); }

}  // namespace mfsys
