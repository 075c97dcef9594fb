#pragma once

#include <cstdint>
#include <fstream>
#include <initializer_list>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "mfsys/core.hpp"
#include "mfsys/finite_sim.hpp"
#include "mfsys/meanfield.hpp"

namespace mfsys {

using json = nlohmann::json;

struct MeanfieldSection {
  std::vector<double> t_schedule = default_fixed_point_schedule();
  std::size_t samples = 10000;
  std::vector<double> grid{0.0};
  double tol = 0.01;
  double max_gamma_t = 6.0;
  std::size_t node_cap = kDefaultNodeCap;
};

struct IndependenceSection {
  std::size_t replications = 100;
  std::vector<double> grid{0.0};
  double warmup = -1.0;
  std::vector<std::size_t> n_values;  // empty: just config n
};

struct CouplingSection {
  std::size_t runs = 1;
  double partner_truncation = kInf;
  std::vector<InitialMass> partner_initial;  // empty: same as the config
};

struct OracleSection {
  double t = 1.0;
  std::size_t samples = 10000;
  std::vector<double> grid{0.0};
  std::size_t replications = 1;  // finite-n runs averaged
  double max_gamma_t = 6.0;
};

// One archived experiment: the system plus per-command settings.
struct ExperimentConfig {
  SystemConfig system;
  std::optional<SteadyStateOptions> steady_state;
  std::optional<MeanfieldSection> meanfield;
  std::optional<IndependenceSection> independence;
  std::optional<CouplingSection> coupling;
  std::optional<OracleSection> oracle;
  unsigned workers = 0;  // 0: available parallelism
  json source;           // the document as read
};

namespace detail {

inline void check_keys(const json& obj, std::string_view where, std::initializer_list<std::string_view> allowed) {
  if (!obj.is_object()) throw ConfigError(std::string(where) + ": expected an object");
  for (const auto& [key, _] : obj.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError(std::string(where) + ": unknown key '" + key + "'");
  }
}

// Number, or "inf" / "infinity" / null for an infinite value.
inline double extended_real(const json& v, std::string_view where) {
  if (v.is_null()) return kInf;
  if (v.is_string()) {
    const auto s = v.get<std::string>();
    if (s == "inf" || s == "infinity" || s == "Infinity") return kInf;
    throw ConfigError(std::string(where) + ": expected a number or \"inf\"");
  }
  if (!v.is_number()) throw ConfigError(std::string(where) + ": expected a number");
  return v.get<double>();
}

inline json extended_real_to_json(double x) { return is_inf(x) ? json("inf") : json(x); }

template <class T>
T get(const json& obj, std::string_view key, std::string_view where) {
  try {
    return obj.at(std::string(key)).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string(where) + "." + std::string(key) + ": " + e.what());
  }
}

template <class T>
T get_or(const json& obj, std::string_view key, T fallback, std::string_view where) {
  if (!obj.contains(std::string(key))) return fallback;
  return get<T>(obj, key, where);
}

inline ComponentDistribution parse_sizes(const json& j, int k, const std::string& where) {
  const auto family = get<std::string>(j, "family", where);
  if (family == "exponential") {
    check_keys(j, where, {"family", "mean"});
    return {Exponential{get<double>(j, "mean", where)}, k};
  }
  if (family == "deterministic") {
    check_keys(j, where, {"family", "value"});
    return {Deterministic{get<double>(j, "value", where)}, k};
  }
  if (family == "uniform") {
    check_keys(j, where, {"family", "lo", "hi"});
    return {Uniform{get<double>(j, "lo", where), get<double>(j, "hi", where)}, k};
  }
  if (family == "hyperexponential") {
    check_keys(j, where, {"family", "weights", "means"});
    return {HyperExponential{get<std::vector<double>>(j, "weights", where),
                             get<std::vector<double>>(j, "means", where)},
            k};
  }
  if (family == "permuted_vector") {
    check_keys(j, where, {"family", "values"});
    return {PermutedVector{get<std::vector<double>>(j, "values", where)}, k};
  }
  throw ConfigError(where + ": unknown size family '" + family + "'");
}

inline json sizes_to_json(const ComponentDistribution& dist) {
  return std::visit(
      [](const auto& f) -> json {
        using F = std::decay_t<decltype(f)>;
        if constexpr (std::is_same_v<F, Exponential>) {
          return {{"family", "exponential"}, {"mean", f.mean}};
        } else if constexpr (std::is_same_v<F, Deterministic>) {
          return {{"family", "deterministic"}, {"value", f.value}};
        } else if constexpr (std::is_same_v<F, Uniform>) {
          return {{"family", "uniform"}, {"lo", f.lo}, {"hi", f.hi}};
        } else if constexpr (std::is_same_v<F, HyperExponential>) {
          return {{"family", "hyperexponential"}, {"weights", f.weights}, {"means", f.means}};
        } else {
          return {{"family", "permuted_vector"}, {"values", f.values}};
        }
      },
      dist.family());
}

inline std::vector<InitialMass> parse_initial(const json& arr, const std::string& where) {
  if (!arr.is_array()) throw ConfigError(where + ": expected an array");
  std::vector<InitialMass> out;
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const auto w = where + "[" + std::to_string(i) + "]";
    check_keys(arr[i], w, {"fraction", "workload"});
    out.push_back({get<double>(arr[i], "fraction", w), extended_real(arr[i].at("workload"), w + ".workload")});
  }
  return out;
}

}  // namespace detail

inline SystemConfig parse_system(const json& j) {
  SystemConfig cfg;
  cfg.n = detail::get<std::size_t>(j, "n", "config");
  cfg.seed = detail::get_or<std::uint64_t>(j, "seed", 1, "config");
  cfg.horizon = detail::get_or<double>(j, "horizon", 0.0, "config");
  if (j.contains("truncation")) cfg.truncation = detail::extended_real(j["truncation"], "config.truncation");
  const auto& classes = j.at("classes");
  if (!classes.is_array()) throw ConfigError("config.classes: expected an array");
  for (std::size_t i = 0; i < classes.size(); ++i) {
    const auto where = "config.classes[" + std::to_string(i) + "]";
    const auto& c = classes[i];
    detail::check_keys(c, where, {"id", "kind", "d", "k", "rate", "sizes"});
    JobClassSpec spec;
    spec.id = detail::get_or<int>(c, "id", static_cast<int>(i), where);
    const auto kind = detail::get<std::string>(c, "kind", where);
    if (kind == "water_fill") {
      spec.kind = PlacementKind::WaterFill;
    } else if (kind == "least_load") {
      spec.kind = PlacementKind::LeastLoad;
    } else {
      throw ConfigError(where + ".kind: expected \"water_fill\" or \"least_load\"");
    }
    spec.d = detail::get<int>(c, "d", where);
    spec.k = detail::get<int>(c, "k", where);
    spec.rate = detail::get<double>(c, "rate", where);
    spec.sizes = detail::parse_sizes(c.at("sizes"), spec.k, where + ".sizes");
    cfg.classes.push_back(std::move(spec));
  }
  if (j.contains("initial")) cfg.initial = detail::parse_initial(j["initial"], "config.initial");
  if (j.contains("snapshots")) {
    const auto& snaps = j["snapshots"];
    if (!snaps.is_array()) throw ConfigError("config.snapshots: expected an array");
    for (std::size_t i = 0; i < snaps.size(); ++i) {
      const auto where = "config.snapshots[" + std::to_string(i) + "]";
      detail::check_keys(snaps[i], where, {"time", "grid"});
      cfg.snapshots.push_back(
          {detail::get<double>(snaps[i], "time", where), detail::get<std::vector<double>>(snaps[i], "grid", where)});
    }
  }
  cfg.validate();
  return cfg;
}

inline json system_to_json(const SystemConfig& cfg) {
  json classes = json::array();
  for (const auto& c : cfg.classes) {
    classes.push_back({{"id", c.id},
                       {"kind", to_string(c.kind)},
                       {"d", c.d},
                       {"k", c.k},
                       {"rate", c.rate},
                       {"sizes", detail::sizes_to_json(c.sizes)}});
  }
  json initial = json::array();
  for (const auto& m : cfg.initial)
    initial.push_back({{"fraction", m.fraction}, {"workload", detail::extended_real_to_json(m.workload)}});
  json snaps = json::array();
  for (const auto& s : cfg.snapshots) snaps.push_back({{"time", s.time}, {"grid", s.grid}});
  return {{"n", cfg.n},
          {"seed", cfg.seed},
          {"horizon", cfg.horizon},
          {"truncation", detail::extended_real_to_json(cfg.truncation)},
          {"classes", classes},
          {"initial", initial},
          {"snapshots", snaps}};
}

inline ExperimentConfig parse_experiment_unchecked(const json& j);

// Any malformed or invalid document surfaces as ConfigError.
inline ExperimentConfig parse_experiment(const json& j) {
  try {
    return parse_experiment_unchecked(j);
  } catch (const ConfigError&) {
    throw;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

inline ExperimentConfig parse_experiment_unchecked(const json& j) {
  detail::check_keys(j, "config",
                     {"n", "seed", "horizon", "truncation", "classes", "initial", "snapshots", "steady_state",
                      "meanfield", "independence", "coupling", "oracle", "workers"});
  ExperimentConfig ex;
  ex.source = j;
  ex.system = parse_system(j);
  ex.workers = detail::get_or<unsigned>(j, "workers", 0U, "config");
  if (j.contains("steady_state")) {
    const auto& s = j["steady_state"];
    detail::check_keys(s, "config.steady_state", {"warmup", "batches", "batch_len", "grid"});
    SteadyStateOptions o;
    o.warmup = detail::get_or<double>(s, "warmup", -1.0, "config.steady_state");
    o.batches = detail::get_or<int>(s, "batches", o.batches, "config.steady_state");
    o.batch_len = detail::get_or<double>(s, "batch_len", o.batch_len, "config.steady_state");
    o.grid = detail::get_or<std::vector<double>>(s, "grid", {0.0}, "config.steady_state");
    ex.steady_state = o;
  }
  if (j.contains("meanfield")) {
    const auto& s = j["meanfield"];
    detail::check_keys(s, "config.meanfield", {"t_schedule", "samples", "grid", "tol", "max_gamma_t", "node_cap"});
    MeanfieldSection m;
    m.t_schedule = detail::get_or(s, "t_schedule", m.t_schedule, "config.meanfield");
    m.samples = detail::get_or(s, "samples", m.samples, "config.meanfield");
    m.grid = detail::get_or(s, "grid", m.grid, "config.meanfield");
    m.tol = detail::get_or(s, "tol", m.tol, "config.meanfield");
    m.max_gamma_t = detail::get_or(s, "max_gamma_t", m.max_gamma_t, "config.meanfield");
    m.node_cap = detail::get_or(s, "node_cap", m.node_cap, "config.meanfield");
    ex.meanfield = m;
  }
  if (j.contains("independence")) {
    const auto& s = j["independence"];
    detail::check_keys(s, "config.independence", {"replications", "grid", "warmup", "n_values"});
    IndependenceSection m;
    m.replications = detail::get_or(s, "replications", m.replications, "config.independence");
    m.grid = detail::get_or(s, "grid", m.grid, "config.independence");
    m.warmup = detail::get_or(s, "warmup", m.warmup, "config.independence");
    m.n_values = detail::get_or(s, "n_values", m.n_values, "config.independence");
    ex.independence = m;
  }
  if (j.contains("coupling")) {
    const auto& s = j["coupling"];
    detail::check_keys(s, "config.coupling", {"runs", "partner_truncation", "partner_initial"});
    CouplingSection m;
    m.runs = detail::get_or(s, "runs", m.runs, "config.coupling");
    if (s.contains("partner_truncation"))
      m.partner_truncation = detail::extended_real(s["partner_truncation"], "config.coupling.partner_truncation");
    if (s.contains("partner_initial"))
      m.partner_initial = detail::parse_initial(s["partner_initial"], "config.coupling.partner_initial");
    ex.coupling = m;
  }
  if (j.contains("oracle")) {
    const auto& s = j["oracle"];
    detail::check_keys(s, "config.oracle", {"t", "samples", "grid", "replications", "max_gamma_t"});
    OracleSection m;
    m.t = detail::get_or(s, "t", m.t, "config.oracle");
    m.samples = detail::get_or(s, "samples", m.samples, "config.oracle");
    m.grid = detail::get_or(s, "grid", m.grid, "config.oracle");
    m.replications = detail::get_or(s, "replications", m.replications, "config.oracle");
    m.max_gamma_t = detail::get_or(s, "max_gamma_t", m.max_gamma_t, "config.oracle");
    ex.oracle = m;
  }
  return ex;
}

inline ExperimentConfig load_experiment(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config '" + path + "': " + e.what());
  }
  return parse_experiment(j);
}

// FNV-1a over the canonical (key-sorted) dump.
inline std::string config_hash(const json& j) {
  const auto text = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char ch : text) {
    h ^= static_cast<unsigned char>(ch);
    h *= 0x100000001b3ULL;
  }
  std::ostringstream os;
  os << std::hex;
  os.width(16);
  os.fill('0');
  os << h;
  return os.str();
}

}  // namespace mfsys
