#include <gtest/gtest.h>

#include "mfsys/config_json.hpp"

using namespace mfsys;

namespace {

json sample_document() {
  return json::parse(R"({
    "n": 100,
    "seed": 7,
    "horizon": 20,
    "truncation": "inf",
    "classes": [
      {"id": 1, "kind": "water_fill", "d": 3, "k": 2, "rate": 0.2,
       "sizes": {"family": "exponential", "mean": 1.0}},
      {"id": 2, "kind": "least_load", "d": 2, "k": 1, "rate": 0.1,
       "sizes": {"family": "hyperexponential", "weights": [0.5, 0.5], "means": [0.5, 1.5]}}
    ],
    "initial": [{"fraction": 0.9, "workload": 0}, {"fraction": 0.1, "workload": null}],
    "snapshots": [{"time": 5, "grid": [0, 1, 2]}],
    "meanfield": {"t_schedule": [1, 2], "samples": 500, "grid": [0, 1]},
    "coupling": {"runs": 3, "partner_truncation": 4}
  })");
}

}  // namespace

TEST(Config, ParsesEveryField) {
  const auto ex = parse_experiment(sample_document());
  const auto& s = ex.system;
  EXPECT_EQ(s.n, 100U);
  EXPECT_EQ(s.seed, 7U);
  EXPECT_TRUE(is_inf(s.truncation));
  ASSERT_EQ(s.classes.size(), 2U);
  EXPECT_EQ(s.classes[0].kind, PlacementKind::WaterFill);
  EXPECT_EQ(s.classes[1].id, 2);
  EXPECT_DOUBLE_EQ(s.rho(), 0.2 * 2 + 0.1 * 1);
  EXPECT_TRUE(is_inf(s.initial[1].workload));
  ASSERT_TRUE(ex.meanfield.has_value());
  EXPECT_EQ(ex.meanfield->samples, 500U);
  EXPECT_EQ(ex.meanfield->tol, 0.01);
  ASSERT_TRUE(ex.coupling.has_value());
  EXPECT_EQ(ex.coupling->partner_truncation, 4.0);
  EXPECT_FALSE(ex.oracle.has_value());
}

TEST(Config, SystemRoundTrip) {
  const auto a = parse_experiment(sample_document()).system;
  const auto b = parse_system(system_to_json(a));
  EXPECT_EQ(system_to_json(a), system_to_json(b));
}

TEST(Config, UnknownKeysAreRejected) {
  auto doc = sample_document();
  doc["colour"] = 1;
  EXPECT_THROW(parse_experiment(doc), ConfigError);
  doc = sample_document();
  doc["classes"][0]["sizes"]["rate"] = 2;
  EXPECT_THROW(parse_experiment(doc), ConfigError);
  doc = sample_document();
  doc["meanfield"]["samplez"] = 2;
  EXPECT_THROW(parse_experiment(doc), ConfigError);
}

TEST(Config, InvalidValuesBecomeConfigErrors) {
  auto doc = sample_document();
  doc["classes"][0]["k"] = 4;
  EXPECT_THROW(parse_experiment(doc), ConfigError);
  doc = sample_document();
  doc["initial"][0]["fraction"] = 0.5;
  EXPECT_THROW(parse_experiment(doc), ConfigError);
  doc = sample_document();
  doc["truncation"] = "lots";
  EXPECT_THROW(parse_experiment(doc), ConfigError);
  doc = sample_document();
  doc["n"] = "many";
  EXPECT_THROW(parse_experiment(doc), ConfigError);
  doc = sample_document();
  doc["classes"][1]["sizes"]["weights"] = json::array({0.5, 0.3, 0.2});
  EXPECT_THROW(parse_experiment(doc), ConfigError);
  doc = sample_document();
  doc["classes"][0]["kind"] = "random";
  EXPECT_THROW(parse_experiment(doc), ConfigError);
  EXPECT_THROW(load_experiment("/nonexistent/config.json"), ConfigError);
}

TEST(Config, InfinitySpellings) {
  for (const json& v : {json("inf"), json("infinity"), json("Infinity"), json(nullptr)}) {
    auto doc = sample_document();
    doc["truncation"] = v;
    EXPECT_TRUE(is_inf(parse_experiment(doc).system.truncation));
  }
  auto doc = sample_document();
  doc["truncation"] = 3.5;
  EXPECT_EQ(parse_experiment(doc).system.truncation, 3.5);
}

TEST(Config, HashIsStableAndSensitive) {
  const auto a = sample_document();
  auto b = json::parse(a.dump());
  EXPECT_EQ(config_hash(a), config_hash(b));
  EXPECT_EQ(config_hash(a).size(), 16U);
  b["seed"] = 8;
  EXPECT_NE(config_hash(a), config_hash(b));
}
