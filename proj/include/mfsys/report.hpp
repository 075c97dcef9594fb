#pragma once

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mfsys/core.hpp"
#include "mfsys/finite_sim.hpp"
#include "mfsys/meanfield.hpp"
#include "mfsys/tail.hpp"

namespace mfsys {

inline constexpr int kReportSchemaVersion = 1;

// Round-trippable and locale-independent.
inline std::string format_real(double x) {
  if (is_inf(x)) return "inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

class CsvWriter {
 public:
  CsvWriter(const std::filesystem::path& path, const std::string& config_hash, const std::string& header)
      : out_(path, std::ios::binary) {
    if (!out_) throw std::runtime_error("cannot write '" + path.string() + "'");
    out_ << "# config_hash=" << config_hash << '\n' << header << '\n';
  }

  void row(std::initializer_list<double> values) {
    bool first = true;
    for (double v : values) {
      if (!first) out_ << ',';
      out_ << format_real(v);
      first = false;
    }
    out_ << '\n';
  }

 private:
  std::ofstream out_;
};

inline void write_snapshots_csv(const std::filesystem::path& path, const std::string& config_hash,
                                const std::vector<Snapshot>& snapshots) {
  CsvWriter csv(path, config_hash, "time,w,x_w");
  for (const auto& s : snapshots)
    for (std::size_t g = 0; g < s.tail.size(); ++g) csv.row({s.time, s.tail.grid[g], s.tail.values[g]});
}

inline void write_fsp_csv(const std::filesystem::path& path, const std::string& config_hash,
                          const FspEstimate& est) {
  CsvWriter csv(path, config_hash, "w,x_w,se");
  for (std::size_t g = 0; g < est.tail.size(); ++g) csv.row({est.tail.grid[g], est.tail.values[g], est.se[g]});
}

inline nlohmann::json fsp_metadata(const FspEstimate& est) {
  return {{"t", est.t},
          {"truncation", is_inf(est.truncation) ? nlohmann::json("inf") : nlohmann::json(est.truncation)},
          {"samples", est.samples},
          {"gamma", est.gamma},
          {"mean_tree_size", est.mean_tree_size},
          {"max_tree_size", est.max_tree_size}};
}

struct ExperimentReport {
  std::string command;
  std::string config_hash;
  std::uint64_t seed = 0;
  nlohmann::json config = nlohmann::json::object();
  std::vector<std::string> files;
  double wall_clock_seconds = 0.0;
  nlohmann::json summary = nlohmann::json::object();
  std::vector<std::string> warnings;

  [[nodiscard]] nlohmann::json to_json() const {
    return {{"schema_version", kReportSchemaVersion},
            {"command", command},
            {"config_hash", config_hash},
            {"seed", seed},
            {"config", config},
            {"files", files},
            {"wall_clock_seconds", wall_clock_seconds},
            {"summary", summary},
            {"warnings", warnings}};
  }
};

inline void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << j.dump(2) << '\n';
}

class Stopwatch {
 public:
  [[nodiscard]] double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

}  // namespace mfsys
