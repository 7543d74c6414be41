#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "frp/error.hpp"
#include "frp/harness.hpp"

using namespace frp::harness;
using nlohmann::json;

namespace {

namespace fs = std::filesystem;

json small_full() {
  return json::parse(R"({
    "scenario": "full", "seed": 3,
    "select": {"budget": 1200, "score_cost": 1, "epoch_cost": 10, "runs": 2},
    "cc_sim": {"windows": 4, "shift_window": 2, "window_ticks": 500, "pop_size": 2, "refine_rounds": 1},
    "recover_demo": {"txns": 40, "log_bit_flips": 16},
    "optd": {"episodes": 30, "n_plans": 5, "templates": 2},
    "gate": {"random_queries": 10}
  })");
}

frp::ErrorKind parse_error(const json& doc, Scenario s) {
  try {
    parse_config(doc, s);
  } catch (const frp::Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "accepted: " << doc.dump();
  return frp::ErrorKind::invalid_argument;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("frp_harness_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

int run_cli(const std::string& args) {
  const int status = std::system((std::string(FRP_KERNEL_BIN) + " " + args + " >/dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(Config, DefaultsFromMinimalDocument) {
  const ScenarioConfig c = parse_config(json::parse(R"({"scenario":"select","seed":9})"), Scenario::select);
  ASSERT_TRUE(c.select.has_value());
  EXPECT_EQ(c.seed, 9u);
  EXPECT_EQ(c.select->budget, 7200);
  EXPECT_FALSE(c.cc_sim.has_value());
}

TEST(Config, RejectsBadDocuments) {
  using frp::ErrorKind;
  EXPECT_EQ(parse_error(json::parse(R"({"scenario":"select","sede":1})"), Scenario::select), ErrorKind::config);
  EXPECT_EQ(parse_error(json::parse(R"({"scenario":"optd"})"), Scenario::select), ErrorKind::config);
  EXPECT_EQ(parse_error(json::parse(R"({"scenario":"select","gate":{}})"), Scenario::select), ErrorKind::config);
  EXPECT_EQ(parse_error(json::parse(R"({"scenario":"select","select":{"budget":1}})"), Scenario::select),
            ErrorKind::config);
  EXPECT_EQ(parse_error(json::parse(R"({"scenario":"select","select":{"eta":"two"}})"), Scenario::select),
            ErrorKind::config);
  EXPECT_EQ(parse_error(json::parse(R"({"scenario":"cc-sim","cc_sim":{"policy":"maybe"}})"), Scenario::cc_sim),
            ErrorKind::config);
  EXPECT_EQ(parse_error(json::parse(R"({"scenario":"gate","gate":{"queries":["a = 1 OR b = 2"]}})"),
                        Scenario::gate),
            ErrorKind::config);
}

TEST(Config, OverridesMergeAndErase) {
  json doc = json::parse(R"({"a":1,"b":{"c":2,"d":3}})");
  apply_overrides(doc, json::parse(R"({"a":5,"b":{"d":null,"e":4}})"));
  EXPECT_EQ(doc, json::parse(R"({"a":5,"b":{"c":2,"e":4}})"));
}

TEST(Run, FullEqualsIndividualSections) {
  const ScenarioConfig full = parse_config(small_full(), Scenario::full);
  const RunOutput all = run_scenario(full);
  std::vector<MetricsRow> concat;
  for (Scenario s : {Scenario::select, Scenario::cc_sim, Scenario::recover_demo, Scenario::optd, Scenario::gate}) {
    ScenarioConfig one = full;
    one.scenario = s;
    if (s != Scenario::select) one.select.reset();
    if (s != Scenario::cc_sim) one.cc_sim.reset();
    if (s != Scenario::recover_demo) one.recover_demo.reset();
    if (s != Scenario::optd) one.optd.reset();
    if (s != Scenario::gate) one.gate.reset();
    const RunOutput part = run_scenario(one);
    concat.insert(concat.end(), part.rows.begin(), part.rows.end());
    for (const auto& [name, body] : part.files) EXPECT_EQ(all.files.at(name), body) << name;
  }
  EXPECT_EQ(metrics_csv(all.rows), metrics_csv(concat));
}

TEST(Run, DeterministicForSeed) {
  ScenarioConfig c = parse_config(small_full(), Scenario::full);
  const RunOutput a = run_scenario(c);
  const RunOutput b = run_scenario(c);
  EXPECT_EQ(metrics_csv(a.rows), metrics_csv(b.rows));
  EXPECT_EQ(a.summary.dump(), b.summary.dump());
  c.seed = 4;
  EXPECT_NE(metrics_csv(run_scenario(c).rows), metrics_csv(a.rows));
}

TEST(Run, ZeroWindowsGivesHeaderOnly) {
  const ScenarioConfig c = parse_config(json::parse(R"({"scenario":"cc-sim","cc_sim":{"windows":0}})"), Scenario::cc_sim);
  const RunOutput out = run_scenario(c);
  EXPECT_TRUE(out.rows.empty());
  EXPECT_EQ(metrics_csv(out.rows), "time,scenario,metric,value\n");
}

TEST(Run, NumberFormatting) {
  EXPECT_EQ(format_number(0.0), "0");
  EXPECT_EQ(format_number(-0.0), "0");
  EXPECT_EQ(format_number(1.5), "1.5");
  EXPECT_EQ(format_number(1e-3), "0.001");
  EXPECT_EQ(std::stod(format_number(0.1 + 0.2)), 0.1 + 0.2);
}

TEST(Cli, ExitCodesAndReruns) {
  const fs::path dir = scratch("cli");
  const fs::path cfg = dir / "select.json";
  std::ofstream(cfg) << R"({"scenario":"select","seed":5,"select":{"budget":1200,"score_cost":1,"epoch_cost":10}})";
  const std::string base = "select --config " + cfg.string() + " --out ";
  ASSERT_EQ(run_cli(base + (dir / "a").string()), 0);
  ASSERT_EQ(run_cli(base + (dir / "b").string()), 0);
  EXPECT_EQ(slurp(dir / "a" / "metrics.csv"), slurp(dir / "b" / "metrics.csv"));
  EXPECT_EQ(slurp(dir / "a" / "summary.json"), slurp(dir / "b" / "summary.json"));

  EXPECT_EQ(run_cli(base + (dir / "c").string() + " --budget 1"), 2);
  EXPECT_FALSE(fs::exists(dir / "c"));
  EXPECT_EQ(run_cli("optd --config " + cfg.string()), 2);
  EXPECT_EQ(run_cli("select --config " + (dir / "missing.json").string()), 2);
  EXPECT_EQ(run_cli("nosuch"), 2);
  EXPECT_EQ(run_cli(base + (dir / "d").string() + " --validate-only"), 0);
  EXPECT_FALSE(fs::exists(dir / "d"));
}
