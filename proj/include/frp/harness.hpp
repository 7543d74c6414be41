#pragma once

// Scenario-driven experiment runner behind the frp-kernel CLI.
//
// A scenario config is one JSON document:
//   {"scenario": "cc-sim", "seed": 7, "out": "runs/a", "cc_sim": {...}}
// Every block is parsed into a typed struct and range-checked before any
// driver runs; unknown keys are errors. Drivers derive their random streams
// from the master seed by fixed labels, so `full` reproduces the rows of the
// individual scenarios exactly.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "frp/cc_adaptive.hpp"
#include "frp/engine.hpp"
#include "frp/plan_opt.hpp"

namespace frp::harness {

enum class Scenario : std::uint8_t { select, cc_sim, recover_demo, optd, gate, full };

/// "select", "cc-sim", "recover-demo", "optd", "gate", "full".
const char* to_string(Scenario s) noexcept;
/// Throws config on an unknown name.
Scenario parse_scenario(const std::string& name);

struct SelectConfig {
  double budget = 7200;
  double score_cost = 2;
  double epoch_cost = 60;
  std::uint32_t eta = 2;
  double phi = 0.2;
  std::uint32_t u_init = 1;
  std::size_t workers = 2;
  std::vector<std::uint32_t> bounds{4, 4, 4, 4};
  double rho = 0.8;
  double sigma = 0.1;
  double trainer_noise = 0.0;
  double tau_min = 1.0;
  double tau_max = 3.0;
  std::size_t population = 16;
  std::size_t sample = 4;
  std::size_t feed_capacity = 8;
  std::uint32_t runs = 1;
};

struct CcSimConfig {
  std::uint32_t windows = 20;
  std::uint32_t shift_window = 5;
  engine::Tick window_ticks = 2000;
  std::string policy = "adaptive";  // adaptive | lock | optimistic
  engine::EngineConfig engine{4, 1, 1, 4, 16, 100, 100, true};
  engine::WorkloadSpec before{1000, 0.0, 0.0, 8, 4.0, 16, 1};
  engine::WorkloadSpec after{1000, 0.99, 0.8, 8, 4.0, 16, 1};
  std::uint32_t buckets = 4;
  double contention_max = 1.0;
  double wait_max = 8.0;
  std::size_t pop_size = 8;
  std::size_t mutated_cells = 1;
  std::size_t refine_rounds = 8;
  double lambda = 0.5;
  std::uint32_t eval_seeds = 1;
  cc::ShiftThresholds thresholds;
};

struct RecoverConfig {
  std::uint64_t keys = 32;
  std::uint32_t txns = 300;
  std::uint32_t writes_per_txn = 3;
  double zipf_theta = 0.8;
  std::uint32_t anchor_interval = 4;
  std::uint32_t record_tampers = 8;
  std::uint32_t log_bit_flips = 256;
};

struct OptdConfig {
  std::uint32_t catalog_relations = 6;
  std::uint32_t query_relations = 4;
  std::uint32_t templates = 3;
  std::uint32_t episodes = 300;
  std::uint32_t n_plans = 20;
  std::vector<double> factors{0.1, 0.5, 1.0, 2.0, 10.0};
  double skew = 100.0;
  double ucb_c = 0.5;
  double noise = 0.05;
  double latency_unit = 1e-3;
  /// Explicit catalog and query templates; when absent a random catalog is
  /// drawn and one random edge estimate is skewed by `skew`.
  bool custom_catalog = false;
  std::vector<plan::Relation> relations;
  std::vector<plan::JoinEdge> edges;
  std::vector<plan::Query> queries;  // empty: random templates over the catalog
};

struct GateConfig {
  std::string schema_json;  // resolved document text
  std::string net_json;     // empty: random net of the shape below
  std::size_t embed_dim = 8;
  std::size_t hidden = 16;
  std::size_t experts = 8;
  std::size_t k_max = 2;
  double tau = 0.05;
  std::size_t features = 4;
  std::vector<std::string> queries;
  std::uint32_t random_queries = 100;
};

struct ScenarioConfig {
  Scenario scenario = Scenario::select;
  std::uint64_t seed = 1;
  std::filesystem::path out = "out";
  std::optional<SelectConfig> select;
  std::optional<CcSimConfig> cc_sim;
  std::optional<RecoverConfig> recover_demo;
  std::optional<OptdConfig> optd;
  std::optional<GateConfig> gate;
};

/// Parses and validates a config document for `expected`. `base_dir`
/// resolves relative file references (gate schema/net files). Throws
/// Error(config) on any problem, including a scenario that differs from
/// `expected` and blocks that the scenario does not use.
ScenarioConfig parse_config(const nlohmann::json& doc, Scenario expected,
                            const std::filesystem::path& base_dir = ".");
/// Reads `path` and calls parse_config.
ScenarioConfig load_config(const std::filesystem::path& path, Scenario expected,
                           const nlohmann::json& overrides = nlohmann::json::object());

/// Merges `overrides` (same shape as the config) into `doc`, key by key; a
/// null override removes the key.
void apply_overrides(nlohmann::json& doc, const nlohmann::json& overrides);

struct MetricsRow {
  double time = 0;  // simulated: run, window end tick, step, episode or query index
  std::string scenario;
  std::string metric;
  double value = 0;
};

struct RunOutput {
  std::vector<MetricsRow> rows;
  nlohmann::ordered_json summary;
  std::map<std::string, std::string> files;  // extra artifacts by file name
};

RunOutput run_select(const SelectConfig& c, std::uint64_t seed);
RunOutput run_cc_sim(const CcSimConfig& c, std::uint64_t seed);
RunOutput run_recover_demo(const RecoverConfig& c, std::uint64_t seed);
RunOutput run_optd(const OptdConfig& c, std::uint64_t seed);
RunOutput run_gate(const GateConfig& c, std::uint64_t seed);

/// One predicate string through the gate: weights, active experts and the
/// sliced prediction for `x`. Throws config on a bad predicate or length.
nlohmann::ordered_json gate_query(const GateConfig& c, std::uint64_t seed, const std::string& predicate,
                                  const std::vector<double>& x);

/// Dispatches on the scenario; `full` concatenates all five sections.
RunOutput run_scenario(const ScenarioConfig& config);

/// Locale-independent shortest round-trip formatting used in CSV output.
std::string format_number(double v);
std::string metrics_csv(const std::vector<MetricsRow>& rows);

/// Writes metrics.csv, summary.json and any extra files into `dir`.
void write_outputs(const RunOutput& output, const std::filesystem::path& dir);

}  // namespace frp::harness
