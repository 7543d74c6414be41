// frp-kernel: run one scenario from a config file.
//
//   frp-kernel <select|cc-sim|recover-demo|optd|gate|full> --config FILE
//              [--seed S] [--out DIR] [--validate-only] [module flags]
//
// Exit codes: 0 ok, 2 config or usage error, 3 runtime failure. Errors are
// reported on stderr as one JSON object.

#include <filesystem>
#include <iostream>
#include <optional>

#include <CLI11.hpp>
#include <json.hpp>

#include "frp/error.hpp"
#include "frp/harness.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kConfigError = 2;
constexpr int kRuntimeError = 3;

int report(int code, const std::string& kind, const std::string& message) {
  nlohmann::ordered_json j;
  j["status"] = "error";
  j["exit_code"] = code;
  j["kind"] = kind;
  j["message"] = message;
  std::cerr << j.dump() << "\n";
  return code;
}

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  bool validate_only = false;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config, "Scenario config (JSON)")->required();
  sub->add_option("--seed", c.seed, "Master seed, overrides the config");
  sub->add_option("--out", c.out, "Output directory, overrides the config");
  sub->add_flag("--validate-only", c.validate_only, "Check the config and exit");
}

}  // namespace

int main(int argc, char** argv) {
  using frp::harness::Scenario;
  CLI::App app{"frp-kernel: filter-and-refine experiment kernels"};
  app.require_subcommand(1);

  Common common;
  nlohmann::json overrides = nlohmann::json::object();

  std::optional<double> budget;
  std::optional<std::uint32_t> runs;
  std::optional<std::uint32_t> workers;
  auto* sel = app.add_subcommand("select", "Budgeted model selection");
  add_common(sel, common);
  sel->add_option("--budget", budget, "Time budget T");
  sel->add_option("--runs", runs, "Independent selection runs");
  sel->add_option("--workers", workers, "Scoring workers");
  std::optional<double> phi, rho, sigma;
  std::optional<std::uint32_t> eta;
  std::vector<std::uint32_t> bounds;
  sel->add_option("--phi", phi, "Filter share of the budget");
  sel->add_option("--eta", eta, "Halving rate");
  sel->add_option("--rho", rho, "Proxy correlation with true quality");
  sel->add_option("--sigma", sigma, "Proxy noise");
  sel->add_option("--bounds", bounds, "Space shape, one value count per dimension")->delimiter(',');

  std::optional<std::uint32_t> windows;
  std::optional<std::string> policy;
  auto* ccs = app.add_subcommand("cc-sim", "Adaptive concurrency control under a workload shift");
  add_common(ccs, common);
  ccs->add_option("--windows", windows, "Evaluation windows");
  ccs->add_option("--policy", policy, "adaptive, lock or optimistic");

  std::optional<std::uint32_t> anchor;
  auto* rec = app.add_subcommand("recover-demo", "Anchored redo log, tampering and recovery");
  add_common(rec, common);
  rec->add_option("--anchor-interval", anchor, "Anchor interval n");

  std::optional<std::uint32_t> episodes;
  std::optional<std::uint32_t> n_plans;
  auto* opt = app.add_subcommand("optd", "Candidate plan generation and online plan selection");
  add_common(opt, common);
  opt->add_option("--episodes", episodes, "Bandit episodes");
  opt->add_option("--n-plans", n_plans, "Mutated plans per template");
  std::vector<double> grid;
  opt->add_option("--grid", grid, "Mutation factors, comma separated")->delimiter(',');

  std::optional<std::uint32_t> random_queries;
  auto* gat = app.add_subcommand("gate", "Sparse gating over experts");
  add_common(gat, common);
  gat->add_option("--random-queries", random_queries, "Random queries after the listed ones");
  std::optional<std::string> schema_file, net_file, predicate;
  std::vector<double> features;
  gat->add_option("--schema", schema_file, "Schema file, overrides the config");
  gat->add_option("--net", net_file, "Gating net weights file, overrides the config");
  gat->add_option("--predicate", predicate, "Evaluate one predicate and print JSON instead of running");
  gat->add_option("--x", features, "Feature vector for --predicate, comma separated")->delimiter(',');

  auto* full = app.add_subcommand("full", "All five scenarios in sequence");
  add_common(full, common);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::Error& e) {
    return report(kConfigError, "usage", e.what());
  }

  CLI::App* chosen = app.get_subcommands().front();
  Scenario scenario{};
  try {
    scenario = frp::harness::parse_scenario(chosen->get_name());
  } catch (const frp::Error& e) {
    return report(kConfigError, "usage", e.what());
  }

  if (common.seed) overrides["seed"] = *common.seed;
  if (common.out) overrides["out"] = *common.out;
  if (budget) overrides["select"]["budget"] = *budget;
  if (runs) overrides["select"]["runs"] = *runs;
  if (workers) overrides["select"]["workers"] = *workers;
  if (phi) overrides["select"]["phi"] = *phi;
  if (eta) overrides["select"]["eta"] = *eta;
  if (rho) overrides["select"]["rho"] = *rho;
  if (sigma) overrides["select"]["sigma"] = *sigma;
  if (!bounds.empty()) overrides["select"]["bounds"] = bounds;
  if (!grid.empty()) overrides["optd"]["factors"] = grid;
  if (schema_file) {
    overrides["gate"]["schema"] = nullptr;
    overrides["gate"]["schema_file"] = std::filesystem::absolute(*schema_file).string();
  }
  if (net_file) {
    overrides["gate"]["net"] = nullptr;
    overrides["gate"]["net_file"] = std::filesystem::absolute(*net_file).string();
  }
  if (windows) overrides["cc_sim"]["windows"] = *windows;
  if (policy) overrides["cc_sim"]["policy"] = *policy;
  if (anchor) overrides["recover_demo"]["anchor_interval"] = *anchor;
  if (episodes) overrides["optd"]["episodes"] = *episodes;
  if (n_plans) overrides["optd"]["n_plans"] = *n_plans;
  if (random_queries) overrides["gate"]["random_queries"] = *random_queries;

  frp::harness::ScenarioConfig config;
  try {
    config = frp::harness::load_config(common.config, scenario, overrides);
  } catch (const frp::Error& e) {
    return report(kConfigError, std::string(frp::to_string(e.kind())), e.what());
  } catch (const std::exception& e) {
    return report(kConfigError, "config", e.what());
  }

  if (predicate && !common.validate_only) {
    try {
      std::cout << frp::harness::gate_query(*config.gate, config.seed, *predicate, features).dump() << "\n";
    } catch (const frp::Error& e) {
      return report(e.kind() == frp::ErrorKind::config ? kConfigError : kRuntimeError,
                    std::string(frp::to_string(e.kind())), e.what());
    }
    return kOk;
  }

  if (common.validate_only) {
    nlohmann::ordered_json j;
    j["status"] = "valid";
    j["scenario"] = frp::harness::to_string(config.scenario);
    j["seed"] = config.seed;
    j["out"] = config.out.string();
    std::cout << j.dump() << "\n";
    return kOk;
  }

  try {
    const frp::harness::RunOutput output = frp::harness::run_scenario(config);
    frp::harness::write_outputs(output, config.out);
  } catch (const frp::Error& e) {
    return report(kRuntimeError, std::string(frp::to_string(e.kind())), e.what());
  } catch (const std::exception& e) {
    return report(kRuntimeError, "runtime", e.what());
  }
  std::cout << (config.out / "metrics.csv").string() << "\n";
  return kOk;
}
