#include "frp/harness.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include "frp/cc_adaptive.hpp"
#include "frp/error.hpp"
#include "frp/gate.hpp"
#include "frp/model_select.hpp"
#include "frp/plan_opt.hpp"
#include "frp/recovery.hpp"
#include "frp/rng.hpp"

namespace frp::harness {

using nlohmann::json;
using nlohmann::ordered_json;

const char* to_string(Scenario s) noexcept {
  switch (s) {
    case Scenario::select: return "select";
    case Scenario::cc_sim: return "cc-sim";
    case Scenario::recover_demo: return "recover-demo";
    case Scenario::optd: return "optd";
    case Scenario::gate: return "gate";
    case Scenario::full: return "full";
  }
  return "?";
}

Scenario parse_scenario(const std::string& name) {
  for (Scenario s : {Scenario::select, Scenario::cc_sim, Scenario::recover_demo, Scenario::optd, Scenario::gate,
                     Scenario::full})
    if (name == to_string(s)) return s;
  throw Error(ErrorKind::config, "unknown scenario '" + name + "'");
}

namespace {

[[noreturn]] void bad(const std::string& m) { throw Error(ErrorKind::config, m); }

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) bad("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Typed, range-checked view of one JSON object; unknown keys are rejected by
// finish().
class Block {
 public:
  Block(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) bad(path_ + ": expected an object");
  }

  bool has(const char* key) const { return j_.contains(key); }

  template <class U>
  void uint(const char* key, U& out, std::uint64_t lo, std::uint64_t hi) {
    const json* v = take(key);
    if (!v) return;
    if (!v->is_number_unsigned() && !(v->is_number_integer() && v->get<std::int64_t>() >= 0))
      fail(key, "expected a non-negative integer");
    const auto x = v->get<std::uint64_t>();
    if (x < lo || x > hi) fail(key, "must be in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
    out = static_cast<U>(x);
  }

  void real(const char* key, double& out) {
    const json* v = take(key);
    if (!v) return;
    if (!v->is_number()) fail(key, "expected a number");
    out = v->get<double>();
    if (!std::isfinite(out)) fail(key, "must be finite");
  }

  void str(const char* key, std::string& out) {
    const json* v = take(key);
    if (!v) return;
    if (!v->is_string()) fail(key, "expected a string");
    out = v->get<std::string>();
  }

  void uints(const char* key, std::vector<std::uint32_t>& out, std::uint64_t lo, std::uint64_t hi) {
    const json* v = take(key);
    if (!v) return;
    if (!v->is_array() || v->empty()) fail(key, "expected a non-empty array of integers");
    out.clear();
    for (const auto& e : *v) {
      if (!e.is_number_unsigned()) fail(key, "expected non-negative integers");
      const auto x = e.get<std::uint64_t>();
      if (x < lo || x > hi) fail(key, "entries must be in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
      out.push_back(static_cast<std::uint32_t>(x));
    }
  }

  void reals(const char* key, std::vector<double>& out) {
    const json* v = take(key);
    if (!v) return;
    if (!v->is_array() || v->empty()) fail(key, "expected a non-empty array of numbers");
    out.clear();
    for (const auto& e : *v) {
      if (!e.is_number()) fail(key, "expected numbers");
      out.push_back(e.get<double>());
      if (!std::isfinite(out.back())) fail(key, "entries must be finite");
    }
  }

  void strs(const char* key, std::vector<std::string>& out) {
    const json* v = take(key);
    if (!v) return;
    if (!v->is_array()) fail(key, "expected an array of strings");
    out.clear();
    for (const auto& e : *v) {
      if (!e.is_string()) fail(key, "expected strings");
      out.push_back(e.get<std::string>());
    }
  }

  const json* array(const char* key) {
    const json* v = take(key);
    if (v && !v->is_array()) fail(key, "expected an array");
    return v;
  }

  const json* object(const char* key) {
    const json* v = take(key);
    if (v && !v->is_object()) fail(key, "expected an object");
    return v;
  }

  void check(const char* key, bool ok, const std::string& msg) const {
    if (!ok) fail(key, msg);
  }

  [[noreturn]] void fail(const char* key, const std::string& msg) const { bad(path_ + "." + key + ": " + msg); }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) bad(path_ + ": unknown key '" + k + "'");
  }

  const std::string& path() const noexcept { return path_; }

 private:
  const json* take(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

const json kEmpty = json::object();

constexpr std::uint64_t kMaxU32 = std::numeric_limits<std::uint32_t>::max();

SelectConfig parse_select(const json& j) {
  SelectConfig c;
  Block b(j, "select");
  b.real("budget", c.budget);
  b.check("budget", c.budget > 0, "must be positive");
  b.real("score_cost", c.score_cost);
  b.check("score_cost", c.score_cost > 0, "must be positive");
  b.real("epoch_cost", c.epoch_cost);
  b.check("epoch_cost", c.epoch_cost > 0, "must be positive");
  b.uint("eta", c.eta, 2, 64);
  b.real("phi", c.phi);
  b.check("phi", c.phi > 0 && c.phi < 1, "must be in (0, 1)");
  b.uint("u_init", c.u_init, 1, 1u << 20);
  b.uint("workers", c.workers, 1, 64);
  b.uints("bounds", c.bounds, 1, 1u << 16);
  double size = 1;
  for (auto v : c.bounds) size *= v;
  b.check("bounds", c.bounds.size() <= 16 && size <= 0x1p40, "space must have at most 16 dims and 2^40 genomes");
  b.real("rho", c.rho);
  b.check("rho", c.rho >= 0 && c.rho <= 1, "must be in [0, 1]");
  b.real("sigma", c.sigma);
  b.check("sigma", c.sigma >= 0, "must be non-negative");
  b.real("trainer_noise", c.trainer_noise);
  b.check("trainer_noise", c.trainer_noise >= 0, "must be non-negative");
  b.real("tau_min", c.tau_min);
  b.check("tau_min", c.tau_min > 0, "must be positive");
  b.real("tau_max", c.tau_max);
  b.check("tau_max", c.tau_max >= c.tau_min, "must be >= tau_min");
  b.uint("population", c.population, 1, 1u << 16);
  b.uint("sample", c.sample, 1, 1u << 16);
  b.uint("feed_capacity", c.feed_capacity, 0, 1u << 20);
  b.uint("runs", c.runs, 1, 100000);
  b.finish();
  try {
    (void)selection::plan_budget(c.budget, c.score_cost, c.epoch_cost, c.eta, c.phi, c.u_init);
  } catch (const Error& e) {
    bad(std::string("select: ") + e.what());
  }
  return c;
}

engine::WorkloadSpec parse_workload(const json& j, const std::string& path, engine::WorkloadSpec w) {
  Block b(j, path);
  b.uint("key_space", w.key_space, 1, 1u << 24);
  b.real("zipf_theta", w.zipf_theta);
  b.check("zipf_theta", w.zipf_theta >= 0 && w.zipf_theta < 5, "must be in [0, 5)");
  b.real("write_fraction", w.write_fraction);
  b.check("write_fraction", w.write_fraction >= 0 && w.write_fraction <= 1, "must be in [0, 1]");
  b.uint("txn_length", w.txn_length, 1, 1024);
  b.real("arrival_rate", w.arrival_rate);
  b.check("arrival_rate", w.arrival_rate > 0 && w.arrival_rate <= 1024, "must be in (0, 1024]");
  b.uint("workers", w.workers, 1, 4096);
  b.finish();
  return w;
}

CcSimConfig parse_cc_sim(const json& j) {
  CcSimConfig c;
  Block b(j, "cc_sim");
  b.uint("windows", c.windows, 0, 100000);
  b.uint("shift_window", c.shift_window, 0, kMaxU32);
  b.uint("window_ticks", c.window_ticks, 1, 1u << 24);
  b.str("policy", c.policy);
  b.check("policy", c.policy == "adaptive" || c.policy == "lock" || c.policy == "optimistic",
          "must be adaptive, lock or optimistic");
  if (const json* e = b.object("engine")) {
    Block eb(*e, "cc_sim.engine");
    eb.uint("op_ticks", c.engine.op_ticks, 1, 1u << 16);
    eb.uint("lock_ticks", c.engine.lock_ticks, 0, 1u << 16);
    eb.uint("commit_ticks", c.engine.commit_ticks, 0, 1u << 16);
    eb.uint("abort_ticks", c.engine.abort_ticks, 0, 1u << 16);
    eb.uint("hot_keys", c.engine.hot_keys, 0, 1u << 20);
    eb.uint("heat_refresh", c.engine.heat_refresh, 1, 1u << 24);
    eb.uint("segment_ticks", c.engine.segment_ticks, 1, 1u << 24);
    eb.finish();
  }
  if (const json* w = b.object("before")) c.before = parse_workload(*w, "cc_sim.before", c.before);
  if (const json* w = b.object("after")) c.after = parse_workload(*w, "cc_sim.after", c.after);
  b.uint("buckets", c.buckets, 1, 64);
  b.real("contention_max", c.contention_max);
  b.check("contention_max", c.contention_max > 0, "must be positive");
  b.real("wait_max", c.wait_max);
  b.check("wait_max", c.wait_max > 0, "must be positive");
  b.uint("pop_size", c.pop_size, 1, 1024);
  b.uint("mutated_cells", c.mutated_cells, 1, 1024);
  b.uint("refine_rounds", c.refine_rounds, 0, 1024);
  b.real("lambda", c.lambda);
  b.check("lambda", c.lambda >= 0, "must be non-negative");
  b.uint("eval_seeds", c.eval_seeds, 1, 64);
  if (const json* t = b.object("thresholds")) {
    Block tb(*t, "cc_sim.thresholds");
    const auto field = [&](const char* key, double& v) {
      tb.real(key, v);
      tb.check(key, v > 0, "must be positive");
    };
    field("throughput", c.thresholds.throughput);
    field("lock_wait", c.thresholds.lock_wait);
    field("abort_rate", c.thresholds.abort_rate);
    field("contention", c.thresholds.contention);
    field("throughput_floor", c.thresholds.throughput_floor);
    field("lock_wait_floor", c.thresholds.lock_wait_floor);
    field("abort_rate_floor", c.thresholds.abort_rate_floor);
    field("contention_floor", c.thresholds.contention_floor);
    tb.finish();
  }
  b.finish();
  return c;
}

RecoverConfig parse_recover(const json& j) {
  RecoverConfig c;
  Block b(j, "recover_demo");
  b.uint("keys", c.keys, 1, 1u << 20);
  b.uint("txns", c.txns, 0, 1u << 20);
  b.uint("writes_per_txn", c.writes_per_txn, 1, 1024);
  b.real("zipf_theta", c.zipf_theta);
  b.check("zipf_theta", c.zipf_theta >= 0 && c.zipf_theta < 5, "must be in [0, 5)");
  b.uint("anchor_interval", c.anchor_interval, 1, 1u << 20);
  b.uint("record_tampers", c.record_tampers, 0, 1u << 20);
  b.uint("log_bit_flips", c.log_bit_flips, 0, 1u << 24);
  b.finish();
  return c;
}

void parse_catalog(const json& j, OptdConfig& c) {
  Block b(j, "optd.catalog");
  const json* rels = b.array("relations");
  if (!rels || rels->empty()) b.fail("relations", "expected a non-empty array");
  plan::Catalog catalog;
  try {
    for (std::size_t i = 0; i < rels->size(); ++i) {
      Block rb((*rels)[i], "optd.catalog.relations[" + std::to_string(i) + "]");
      plan::Relation r;
      rb.str("name", r.name);
      rb.real("true_rows", r.true_rows);
      r.est_rows = r.true_rows;
      rb.real("est_rows", r.est_rows);
      rb.finish();
      catalog.add_relation(r);
      c.relations.push_back(r);
    }
    if (const json* edges = b.array("edges")) {
      for (std::size_t i = 0; i < edges->size(); ++i) {
        Block eb((*edges)[i], "optd.catalog.edges[" + std::to_string(i) + "]");
        plan::JoinEdge e;
        eb.str("a", e.a);
        eb.str("b", e.b);
        eb.real("true_sel", e.true_sel);
        e.est_sel = e.true_sel;
        eb.real("est_sel", e.est_sel);
        eb.check("true_sel", e.true_sel > 0 && e.true_sel <= 1, "must be in (0, 1]");
        eb.check("est_sel", e.est_sel > 0, "must be positive");
        eb.finish();
        catalog.add_edge(e);
        c.edges.push_back(e);
      }
    }
    if (const json* qs = b.array("queries")) {
      for (std::size_t i = 0; i < qs->size(); ++i) {
        Block qb((*qs)[i], "optd.catalog.queries[" + std::to_string(i) + "]");
        plan::Query q;
        qb.strs("relations", q.relations);
        qb.str("shape", q.predicate_shape);
        qb.finish();
        if (q.relations.empty()) qb.fail("relations", "expected at least one relation");
        (void)plan::estimated_cards(q, catalog);
        c.queries.push_back(std::move(q));
      }
    }
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::config) throw;
    bad(std::string("optd.catalog: ") + e.what());
  }
  b.finish();
  c.custom_catalog = true;
}

OptdConfig parse_optd(const json& j, const std::filesystem::path& base_dir) {
  OptdConfig c;
  Block b(j, "optd");
  b.uint("catalog_relations", c.catalog_relations, 1, 64);
  b.uint("query_relations", c.query_relations, 1, plan::Query::kMaxRelations);
  b.check("query_relations", c.query_relations <= c.catalog_relations, "must not exceed catalog_relations");
  b.uint("templates", c.templates, 1, 1024);
  b.uint("episodes", c.episodes, 0, 1u << 24);
  b.uint("n_plans", c.n_plans, 0, 1024);
  b.reals("factors", c.factors);
  try {
    plan::MutationGrid{c.factors}.validate();
  } catch (const Error& e) {
    b.fail("factors", e.what());
  }
  b.real("skew", c.skew);
  b.check("skew", c.skew > 0, "must be positive");
  b.real("ucb_c", c.ucb_c);
  b.check("ucb_c", c.ucb_c >= 0, "must be non-negative");
  b.real("noise", c.noise);
  b.check("noise", c.noise >= 0 && c.noise < 1, "must be in [0, 1)");
  b.real("latency_unit", c.latency_unit);
  b.check("latency_unit", c.latency_unit > 0, "must be positive");
  if (b.has("catalog") && b.has("catalog_file")) b.fail("catalog", "give either catalog or catalog_file");
  if (const json* cat = b.object("catalog")) parse_catalog(*cat, c);
  std::string file;
  b.str("catalog_file", file);
  if (!file.empty()) {
    json doc;
    try {
      doc = json::parse(read_text(base_dir / file));
    } catch (const json::parse_error& e) {
      bad(file + ": " + e.what());
    }
    parse_catalog(doc, c);
  }
  b.finish();
  if (c.custom_catalog && c.queries.empty() && c.query_relations > c.relations.size())
    b.fail("query_relations", "exceeds the catalog's relation count");
  return c;
}

constexpr const char* kDefaultGateSchema = R"({"attributes": [
  {"name": "gender", "kind": "categorical", "vocab": ["Male", "Female"]},
  {"name": "age", "kind": "numeric", "edges": [18, 30, 45, 60]},
  {"name": "region", "kind": "categorical", "vocab": ["north", "south", "east", "west"]}
]})";

GateConfig parse_gate(const json& j, const std::filesystem::path& base_dir) {
  GateConfig c;
  Block b(j, "gate");
  if (b.has("schema") && b.has("schema_file")) b.fail("schema", "give either schema or schema_file");
  if (b.has("net") && b.has("net_file")) b.fail("net", "give either net or net_file");
  c.schema_json = kDefaultGateSchema;
  if (const json* s = b.object("schema")) c.schema_json = s->dump();
  std::string file;
  b.str("schema_file", file);
  if (!file.empty()) c.schema_json = read_text(base_dir / file);
  if (const json* n = b.object("net")) c.net_json = n->dump();
  file.clear();
  b.str("net_file", file);
  if (!file.empty()) c.net_json = read_text(base_dir / file);
  b.uint("embed_dim", c.embed_dim, 1, 4096);
  b.uint("hidden", c.hidden, 1, 4096);
  b.uint("experts", c.experts, 1, 4096);
  b.uint("k_max", c.k_max, 1, 4096);
  b.real("tau", c.tau);
  b.check("tau", c.tau >= 0 && c.tau < 1, "must be in [0, 1)");
  b.uint("features", c.features, 1, 4096);
  b.strs("queries", c.queries);
  b.uint("random_queries", c.random_queries, 0, 1u << 24);
  b.finish();

  const gate::Schema schema = gate::schema_from_json(c.schema_json);
  try {
    gate::GatingNet net = c.net_json.empty()
                              ? gate::GatingNet::zeros(schema, c.embed_dim, c.hidden, c.experts, c.k_max, c.tau)
                              : gate::net_from_json(c.net_json);
    net.validate(schema);
    if (net.k_max > net.experts) bad("gate: k_max exceeds the number of experts");
    for (const auto& q : c.queries) (void)gate::encode_query(gate::parse_predicates(q), schema);
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::config) throw;
    bad(std::string("gate: ") + e.what());
  }
  return c;
}

}  // namespace

void apply_overrides(json& doc, const json& overrides) {
  if (!overrides.is_object()) return;
  for (const auto& [k, v] : overrides.items()) {
    if (v.is_null())
      doc.erase(k);
    else if (v.is_object() && doc.contains(k) && doc[k].is_object())
      apply_overrides(doc[k], v);
    else
      doc[k] = v;
  }
}

ScenarioConfig parse_config(const json& doc, Scenario expected, const std::filesystem::path& base_dir) {
  Block top(doc, "config");
  ScenarioConfig c;
  std::string name;
  top.str("scenario", name);
  if (name.empty()) bad("config.scenario: required");
  c.scenario = parse_scenario(name);
  if (c.scenario != expected)
    bad("config.scenario: file is for '" + name + "' but the subcommand is '" + to_string(expected) + "'");
  top.uint("seed", c.seed, 0, std::numeric_limits<std::uint64_t>::max());
  std::string out;
  top.str("out", out);
  if (!out.empty()) c.out = out;

  const bool all = c.scenario == Scenario::full;
  const auto block = [&](const char* key, Scenario s) -> const json* {
    const json* j = top.object(key);
    if (j && !all && c.scenario != s) top.fail(key, std::string("not used by scenario ") + to_string(c.scenario));
    if (!all && c.scenario != s) return nullptr;
    return j ? j : &kEmpty;
  };
  if (const json* j = block("select", Scenario::select)) c.select = parse_select(*j);
  if (const json* j = block("cc_sim", Scenario::cc_sim)) c.cc_sim = parse_cc_sim(*j);
  if (const json* j = block("recover_demo", Scenario::recover_demo)) c.recover_demo = parse_recover(*j);
  if (const json* j = block("optd", Scenario::optd)) c.optd = parse_optd(*j, base_dir);
  if (const json* j = block("gate", Scenario::gate)) c.gate = parse_gate(*j, base_dir);
  top.finish();
  return c;
}

ScenarioConfig load_config(const std::filesystem::path& path, Scenario expected, const json& overrides) {
  json doc;
  try {
    doc = json::parse(read_text(path));
  } catch (const json::parse_error& e) {
    bad(path.string() + ": " + e.what());
  }
  apply_overrides(doc, overrides);
  return parse_config(doc, expected, path.has_parent_path() ? path.parent_path() : ".");
}

namespace {

class Rows {
 public:
  Rows(std::vector<MetricsRow>& rows, const char* scenario) : rows_(rows), scenario_(scenario) {}
  void add(double time, const char* metric, double value) { rows_.push_back({time, scenario_, metric, value}); }

 private:
  std::vector<MetricsRow>& rows_;
  const char* scenario_;
};

double mean(const std::vector<double>& v) {
  if (v.empty()) return 0;
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

RunOutput run_select(const SelectConfig& c, std::uint64_t seed) {
  RunOutput out;
  Rows rows(out.rows, "select");
  std::uint64_t violations = 0;
  std::vector<double> regrets;
  std::vector<double> elapsed;
  selection::SelectionPlan plan;
  ordered_json first;
  for (std::uint32_t r = 0; r < c.runs; ++r) {
    Rng rng = Rng::derive(mix64(seed + r), "select/run");
    const selection::ModelSpace space(c.bounds, rng.next(), c.tau_min, c.tau_max);
    const selection::Scorer scorer(space, {c.rho, c.sigma, c.score_cost, rng.next()});
    selection::Trainer trainer(space, {c.epoch_cost, c.trainer_noise, rng.next()});
    selection::SelectOptions opt;
    opt.eta = c.eta;
    opt.phi = c.phi;
    opt.u_init = c.u_init;
    opt.workers = c.workers;
    opt.evolution.population = c.population;
    opt.evolution.sample = c.sample;
    opt.feed_capacity = c.feed_capacity;
    opt.seed = rng.next();
    const selection::SelectionResult res = selection::select(space, scorer, trainer, c.budget, opt);
    plan = res.plan;
    if (r == 0) {
      first["genome_id"] = res.genome.id;
      first["genome"] = res.genome.params;
      first["winner_accuracy"] = res.refine.winner_accuracy;
      first["scored"] = res.scored;
      first["candidates"] = res.candidates;
      first["survivors"] = res.refine.survivors;
      first["filter_cost"] = res.filter_cost;
      first["refine_cost"] = res.refine_cost;
      first["elapsed"] = res.elapsed;
    }
    if (res.elapsed > c.budget) ++violations;
    elapsed.push_back(res.elapsed);
    const double t = r;
    rows.add(t, "scored", static_cast<double>(res.scored));
    rows.add(t, "candidates", static_cast<double>(res.candidates));
    rows.add(t, "filter_cost", res.filter_cost);
    rows.add(t, "refine_cost", res.refine_cost);
    rows.add(t, "elapsed", res.elapsed);
    rows.add(t, "winner_id", static_cast<double>(res.genome.id));
    rows.add(t, "winner_accuracy", res.refine.winner_accuracy);
    rows.add(t, "batches_consumed", static_cast<double>(res.batches_consumed));
    if (space.size() <= selection::Oracle::kMaxSpace) {
      const selection::Oracle oracle(space);
      const double regret = oracle.regret(res.genome);
      regrets.push_back(regret);
      rows.add(t, "regret", regret);
      if (r == 0) first["regret"] = regret;
    }
  }
  out.summary["scenario"] = "select";
  out.summary["runs"] = c.runs;
  out.summary["budget"] = c.budget;
  out.summary["plan"] = {{"n", plan.n},
                         {"k", plan.k},
                         {"rounds", plan.rounds()},
                         {"refine_epochs", plan.refine_epochs()},
                         {"total_cost", plan.total_cost()}};
  out.summary["slo_violations"] = violations;
  out.summary["max_elapsed"] = elapsed.empty() ? 0.0 : *std::max_element(elapsed.begin(), elapsed.end());
  if (!regrets.empty()) out.summary["mean_regret"] = mean(regrets);
  out.summary["first_run"] = std::move(first);
  return out;
}

RunOutput run_cc_sim(const CcSimConfig& c, std::uint64_t seed) {
  RunOutput out;
  Rows rows(out.rows, "cc-sim");
  const cc::BucketRanges ranges{c.contention_max, c.wait_max};
  const bool adaptive = c.policy == "adaptive";
  const cc::CCStrategy initial =
      adaptive ? cc::CCStrategy::prescribed(c.buckets, ranges)
               : cc::CCStrategy::constant(c.buckets, ranges,
                                          c.policy == "lock" ? engine::CCAction::lock_immediate
                                                             : engine::CCAction::optimistic_no_lock);
  cc::ControllerConfig cfg;
  cfg.pop_size = c.pop_size;
  cfg.mutated_cells = c.mutated_cells;
  cfg.refine_rounds = c.refine_rounds;
  cfg.lambda = c.lambda;
  cfg.window = c.window_ticks;
  cfg.eval_seeds = c.eval_seeds;
  cfg.thresholds = c.thresholds;
  if (!adaptive) {
    const double inf = std::numeric_limits<double>::infinity();
    cfg.thresholds.throughput = cfg.thresholds.lock_wait = cfg.thresholds.abort_rate = cfg.thresholds.contention = inf;
  }
  cc::AdaptiveController ctl(engine::Engine(c.engine), initial, cfg, Rng::derive(seed, "cc-sim/controller").next());
  Rng wl = Rng::derive(seed, "cc-sim/workload");

  std::optional<std::uint32_t> shift_at;
  std::optional<std::uint32_t> adapted_at;
  std::vector<double> commits;
  for (std::uint32_t w = 0; w < c.windows; ++w) {
    engine::WorkloadSpec spec = w < c.shift_window ? c.before : c.after;
    spec.seed = wl.next();
    const cc::WindowReport rep = ctl.step(spec);
    const double t = static_cast<double>(w + 1) * static_cast<double>(c.window_ticks);
    rows.add(t, "commits", static_cast<double>(rep.stats.committed_count));
    rows.add(t, "aborts", static_cast<double>(rep.stats.aborted_count));
    rows.add(t, "throughput", rep.state.throughput);
    rows.add(t, "contention_index", rep.state.contention_index);
    rows.add(t, "avg_lock_wait", rep.state.avg_lock_wait);
    rows.add(t, "abort_rate", rep.state.abort_rate);
    rows.add(t, "reward", rep.reward);
    rows.add(t, "shift", rep.shift ? 1 : 0);
    rows.add(t, "adapted", rep.adapted ? 1 : 0);
    rows.add(t, "adaptation_windows", static_cast<double>(rep.adaptation_windows));
    if (w >= c.shift_window && rep.shift && !shift_at) shift_at = w;
    if (w >= c.shift_window && rep.adapted && !adapted_at) adapted_at = w;
    commits.push_back(static_cast<double>(rep.stats.committed_count));
  }
  const std::uint32_t from = adapted_at ? *adapted_at + 1 : c.shift_window;
  std::vector<double> post;
  for (std::uint32_t w = from; w < commits.size(); ++w) post.push_back(commits[w]);

  out.summary["scenario"] = "cc-sim";
  out.summary["policy"] = c.policy;
  out.summary["windows"] = c.windows;
  out.summary["shift_window"] = c.shift_window;
  out.summary["shift_detected_at"] = shift_at ? json(*shift_at) : json(nullptr);
  out.summary["adapted_at"] = adapted_at ? json(*adapted_at) : json(nullptr);
  out.summary["post_shift_mean_commits"] = mean(post);
  out.summary["final_lock_cells"] = ctl.strategy().count(engine::CCAction::lock_immediate);
  out.summary["table_cells"] = ctl.strategy().size();
  return out;
}

RunOutput run_recover_demo(const RecoverConfig& c, std::uint64_t seed) {
  RunOutput out;
  Rows rows(out.rows, "recover-demo");
  auto enclave = std::make_shared<recovery::EnclaveSim>(Rng::derive(seed, "recover-demo/enclave").next());
  auto log = std::make_shared<recovery::RedoLog>(c.anchor_interval, enclave);
  engine::Engine eng;
  eng.attach_log(log);

  struct Shadow {
    std::int64_t value = 0;
    std::uint64_t version = 0;
  };
  std::map<Key, Shadow> shadow;
  Rng rng = Rng::derive(seed, "recover-demo/workload");
  const ZipfSampler keys(c.keys, c.zipf_theta);
  for (std::uint32_t t = 0; t < c.txns; ++t) {
    const engine::TxnId id = eng.begin();
    std::map<Key, std::int64_t> writes;
    for (std::uint32_t i = 0; i < c.writes_per_txn; ++i) {
      const engine::TxnOp op{engine::OpKind::write, keys(rng), static_cast<std::int64_t>(rng.below(1u << 30))};
      const engine::OpOutcome o = eng.execute_op(id, op, engine::CCAction::lock_immediate);
      if (!o.done()) throw Error(ErrorKind::invalid_argument, "recover-demo: serial write did not complete");
      writes[op.key] = op.write_value;
    }
    if (eng.validate_and_commit(id).status != engine::TxnStatus::committed)
      throw Error(ErrorKind::invalid_argument, "recover-demo: serial commit failed");
    for (const auto& [k, v] : writes) {
      shadow[k].value = v;
      ++shadow[k].version;
    }
  }

  std::size_t mismatches = 0;
  std::size_t max_replay = 0;
  for (Key k = 0; k < c.keys; ++k) {
    const recovery::RecoveryResult res = log->recover(k);
    const Shadow s = shadow.count(k) ? shadow[k] : Shadow{};
    const bool match = res.record == make_record(k, s.value, s.version) && eng.peek(k) == res.record;
    if (!match) ++mismatches;
    max_replay = std::max(max_replay, res.replayed);
    rows.add(static_cast<double>(k), "replayed", static_cast<double>(res.replayed));
    rows.add(static_cast<double>(k), "match", match ? 1 : 0);
  }

  std::vector<Key> written;
  for (const auto& [k, s] : shadow) written.push_back(k);
  std::size_t repaired = 0;
  for (std::uint32_t i = 0; i < c.record_tampers && !written.empty(); ++i) {
    const Key k = written[rng.below(written.size())];
    eng.raw_record(k).value ^= std::int64_t{1} << rng.below(62);
    const bool fixed = eng.load_verified(k);
    const bool restored = eng.peek(k) == make_record(k, shadow[k].value, shadow[k].version);
    if (fixed && restored) ++repaired;
    rows.add(static_cast<double>(i), "tamper_repaired", fixed && restored ? 1 : 0);
  }

  const std::vector<std::uint8_t> bytes = log->serialize();
  std::size_t detected = 0;
  for (std::uint32_t i = 0; i < c.log_bit_flips && !bytes.empty(); ++i) {
    std::vector<std::uint8_t> copy = bytes;
    const std::uint64_t bit = rng.below(copy.size() * 8);
    copy[bit / 8] ^= static_cast<std::uint8_t>(1u << (bit % 8));
    bool caught = false;
    try {
      caught = !recovery::RedoLog::deserialize(copy, enclave).verify_log();
    } catch (const Error&) {
      caught = true;
    }
    if (caught) ++detected;
    rows.add(static_cast<double>(i), "flip_detected", caught ? 1 : 0);
  }
  out.files["log.bin"] = std::string(bytes.begin(), bytes.end());

  const recovery::LogStats st = log->stats();
  out.summary["scenario"] = "recover-demo";
  out.summary["anchor_interval"] = c.anchor_interval;
  out.summary["log_entries"] = log->entries().size();
  out.summary["log_bytes"] = bytes.size();
  out.summary["redo"] = st.redo;
  out.summary["anchors"] = st.anchors;
  out.summary["seals"] = st.seals;
  out.summary["log_verifies"] = log->verify_log();
  out.summary["keys_checked"] = c.keys;
  out.summary["mismatches"] = mismatches;
  out.summary["max_replay"] = max_replay;
  out.summary["record_tampers"] = c.record_tampers;
  out.summary["tampers_repaired"] = repaired;
  out.summary["log_bit_flips"] = c.log_bit_flips;
  out.summary["flips_detected"] = detected;
  return out;
}

RunOutput run_optd(const OptdConfig& c, std::uint64_t seed) {
  RunOutput out;
  Rows rows(out.rows, "optd");

  plan::Catalog catalog;
  std::vector<std::string> names;
  std::string skewed;
  if (c.custom_catalog) {
    for (const auto& r : c.relations) {
      catalog.add_relation(r);
      names.push_back(r.name);
    }
    for (const auto& e : c.edges) catalog.add_edge(e);
  } else {
    Rng cat = Rng::derive(seed, "optd/catalog");
    for (std::uint32_t i = 0; i < c.catalog_relations; ++i) {
      names.push_back("R" + std::to_string(i));
      const double rows_i = std::round(std::pow(10.0, cat.uniform(1.0, 5.0)));
      catalog.add_relation({names.back(), rows_i, rows_i});
    }
    for (std::uint32_t i = 1; i < c.catalog_relations; ++i) {
      const double sel = std::pow(10.0, -cat.uniform(1.0, 4.0));
      catalog.add_edge({names[cat.below(i)], names[i], sel, sel});
    }
    if (!catalog.edges().empty()) {
      const plan::JoinEdge& e = catalog.edges()[cat.below(catalog.edges().size())];
      skewed = e.a + "-" + e.b;
      catalog.skew_estimate(e.a, e.b, c.skew);
    }
  }

  struct Template {
    plan::Query query;
    plan::TemplateId id = 0;
    std::vector<plan::PlanTree> candidates;
    std::vector<double> true_costs;
    std::size_t best = 0;
    double optimum = 0;
    std::vector<std::uint64_t> late_pulls;
  };
  std::vector<Template> templates;
  Rng tq = Rng::derive(seed, "optd/templates");
  Rng gen = Rng::derive(seed, "optd/candidates");
  const plan::MutationGrid grid{c.factors};
  const std::size_t template_count = c.queries.empty() ? c.templates : c.queries.size();
  for (std::size_t t = 0; t < template_count; ++t) {
    Template tpl;
    if (!c.queries.empty()) {
      tpl.query = c.queries[t];
    } else {
      std::vector<std::string> pool = names;
      for (std::uint32_t i = 0; i < c.query_relations; ++i) {
        std::swap(pool[i], pool[i + tq.below(pool.size() - i)]);
        tpl.query.relations.push_back(pool[i]);
      }
      tpl.query.predicate_shape = "shape" + std::to_string(t);
    }
    tpl.id = plan::template_of(tpl.query);
    tpl.candidates = plan::gen_candidates(tpl.query, catalog, c.n_plans, grid, gen);
    for (const auto& p : tpl.candidates) tpl.true_costs.push_back(plan::true_cost(p, tpl.query, catalog));
    tpl.best = static_cast<std::size_t>(std::min_element(tpl.true_costs.begin(), tpl.true_costs.end()) -
                                        tpl.true_costs.begin());
    const plan::CardinalityVector truth = plan::true_cards(tpl.query, catalog);
    tpl.optimum = plan::plan_cost(plan::optimize_with(tpl.query, truth), truth);
    tpl.late_pulls.assign(tpl.candidates.size(), 0);
    templates.push_back(std::move(tpl));
  }

  plan::UcbSelector selector(c.ucb_c);
  plan::SelectorState state;
  Rng lat = Rng::derive(seed, "optd/latency");
  std::string episodes = "episode,template,arm,plan,latency,true_cost,regret\n";
  for (std::uint32_t e = 0; e < c.episodes; ++e) {
    const std::size_t ti = e % template_count;
    Template& tpl = templates[ti];
    const std::size_t arm = selector.select_plan(tpl.id, tpl.candidates, state);
    const double latency = plan::simulate_latency(tpl.true_costs[arm], c.latency_unit, c.noise, lat);
    selector.feedback(tpl.id, arm, latency, state);
    if (2 * e >= c.episodes) ++tpl.late_pulls[arm];
    const double t = e;
    const double regret = tpl.true_costs[arm] / tpl.true_costs[tpl.best] - 1.0;
    rows.add(t, "template", static_cast<double>(ti));
    rows.add(t, "arm", static_cast<double>(arm));
    rows.add(t, "latency", latency);
    rows.add(t, "regret", regret);
    episodes += std::to_string(e) + "," + std::to_string(ti) + "," + std::to_string(arm) + "," +
                tpl.candidates[arm].signature() + "," + format_number(latency) + "," +
                format_number(tpl.true_costs[arm]) + "," + format_number(regret) + "\n";
  }
  out.files["optd_episodes.csv"] = episodes;

  out.summary["scenario"] = "optd";
  out.summary["episodes"] = c.episodes;
  if (!c.custom_catalog) {
    out.summary["skewed_edge"] = skewed;
    out.summary["skew"] = c.skew;
  }
  ordered_json list = ordered_json::array();
  for (std::size_t t = 0; t < templates.size(); ++t) {
    const Template& tpl = templates[t];
    std::uint64_t late = 0;
    for (auto p : tpl.late_pulls) late += p;
    ordered_json o;
    o["template"] = t;
    o["relations"] = tpl.query.relations;
    o["candidates"] = tpl.candidates.size();
    o["base_plan"] = tpl.candidates.front().signature();
    o["base_true_cost"] = tpl.true_costs.front();
    o["best_plan"] = tpl.candidates[tpl.best].signature();
    o["best_candidate_true_cost"] = tpl.true_costs[tpl.best];
    o["true_optimum_cost"] = tpl.optimum;
    o["late_best_share"] = late ? static_cast<double>(tpl.late_pulls[tpl.best]) / static_cast<double>(late) : 0.0;
    list.push_back(std::move(o));
  }
  out.summary["templates"] = std::move(list);
  return out;
}

namespace {

gate::GatingNet make_net(const GateConfig& c, const gate::Schema& schema, std::uint64_t seed) {
  Rng rng = Rng::derive(seed, "gate/net");
  gate::GatingNet net = c.net_json.empty()
                            ? gate::GatingNet::random(schema, c.embed_dim, c.hidden, c.experts, c.k_max, c.tau, rng)
                            : gate::net_from_json(c.net_json);
  net.validate(schema);
  return net;
}

gate::ExpertSet make_experts(const gate::GatingNet& net, const GateConfig& c, std::uint64_t seed) {
  Rng rng = Rng::derive(seed, "gate/experts");
  return gate::ExpertSet::random_linear(net.experts, c.features, rng);
}

}  // namespace

ordered_json gate_query(const GateConfig& c, std::uint64_t seed, const std::string& predicate,
                        const std::vector<double>& x) {
  const gate::Schema schema = gate::schema_from_json(c.schema_json);
  const gate::GatingNet net = make_net(c, schema, seed);
  const gate::ExpertSet experts = make_experts(net, c, seed);
  if (x.size() != c.features)
    bad("gate: feature vector has " + std::to_string(x.size()) + " entries, expected " + std::to_string(c.features));
  gate::QueryEncoding q;
  try {
    q = gate::encode_query(gate::parse_predicates(predicate), schema);
  } catch (const Error& e) {
    bad(std::string("gate: ") + e.what());
  }
  const gate::GateWeights w = gate::gate(q, net);
  ordered_json j;
  j["encoding"] = q;
  j["weights"] = w;
  std::vector<std::size_t> active;
  for (std::size_t i = 0; i < w.size(); ++i)
    if (w[i] > 0) active.push_back(i);
  j["active"] = active;
  j["prediction"] = gate::sliced_predict(w, experts, x);
  j["expert_evaluations"] = experts.counts();
  return j;
}

RunOutput run_gate(const GateConfig& c, std::uint64_t seed) {
  RunOutput out;
  Rows rows(out.rows, "gate");
  const gate::Schema schema = gate::schema_from_json(c.schema_json);
  const gate::GatingNet net = make_net(c, schema, seed);
  const gate::ExpertSet experts = make_experts(net, c, seed);
  const gate::ExpertSet reference = make_experts(net, c, seed);

  std::vector<gate::QueryEncoding> encodings;
  for (const auto& q : c.queries) encodings.push_back(gate::encode_query(gate::parse_predicates(q), schema));
  Rng qr = Rng::derive(seed, "gate/queries");
  for (std::uint32_t i = 0; i < c.random_queries; ++i) {
    std::vector<gate::Predicate> preds;
    for (const auto& a : schema.attributes()) {
      if (!qr.bernoulli(0.5)) continue;
      gate::Predicate p;
      p.attr = a.name;
      if (a.kind == gate::Attribute::Kind::categorical) {
        p.value = a.vocab[qr.below(a.vocab.size())];
      } else {
        const double lo = a.edges.empty() ? 0.0 : a.edges.front() - 10;
        const double hi = a.edges.empty() ? 1.0 : a.edges.back() + 10;
        p.value = format_number(std::round(qr.uniform(lo, hi)));
      }
      preds.push_back(std::move(p));
    }
    encodings.push_back(gate::encode_query(preds, schema));
  }

  Rng xr = Rng::derive(seed, "gate/inputs");
  std::uint64_t active_total = 0;
  double max_diff = 0;
  std::vector<double> x(c.features);
  for (std::size_t i = 0; i < encodings.size(); ++i) {
    for (auto& v : x) v = xr.uniform(-1.0, 1.0);
    const gate::GateWeights w = gate::gate(encodings[i], net);
    const double y = gate::sliced_predict(w, experts, x);
    const double yd = gate::dense_predict(w, reference, x);
    const auto active = static_cast<std::uint64_t>(std::count_if(w.begin(), w.end(), [](double v) { return v > 0; }));
    active_total += active;
    max_diff = std::max(max_diff, std::abs(y - yd));
    const double t = static_cast<double>(i);
    rows.add(t, "active_experts", static_cast<double>(active));
    rows.add(t, "prediction", y);
    rows.add(t, "dense_abs_diff", std::abs(y - yd));
  }
  out.summary["scenario"] = "gate";
  out.summary["queries"] = encodings.size();
  out.summary["experts"] = net.experts;
  out.summary["k_max"] = net.k_max;
  out.summary["tau"] = net.tau;
  out.summary["expert_evaluations"] = experts.counts();
  out.summary["active_total"] = active_total;
  out.summary["mean_active"] =
      encodings.empty() ? 0.0 : static_cast<double>(active_total) / static_cast<double>(encodings.size());
  out.summary["max_dense_abs_diff"] = max_diff;
  return out;
}

RunOutput run_scenario(const ScenarioConfig& config) {
  RunOutput out;
  const auto section = [&](RunOutput part, const char* name) {
    out.rows.insert(out.rows.end(), part.rows.begin(), part.rows.end());
    for (auto& [k, v] : part.files) out.files[k] = std::move(v);
    if (config.scenario == Scenario::full)
      out.summary["sections"][name] = std::move(part.summary);
    else
      out.summary = std::move(part.summary);
  };
  if (config.scenario == Scenario::full) {
    out.summary["scenario"] = "full";
    out.summary["seed"] = config.seed;
  }
  if (config.select) section(run_select(*config.select, config.seed), "select");
  if (config.cc_sim) section(run_cc_sim(*config.cc_sim, config.seed), "cc-sim");
  if (config.recover_demo) section(run_recover_demo(*config.recover_demo, config.seed), "recover-demo");
  if (config.optd) section(run_optd(*config.optd, config.seed), "optd");
  if (config.gate) section(run_gate(*config.gate, config.seed), "gate");
  if (config.scenario != Scenario::full) out.summary["seed"] = config.seed;
  return out;
}

std::string format_number(double v) {
  if (v == 0) return "0";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string metrics_csv(const std::vector<MetricsRow>& rows) {
  std::string s = "time,scenario,metric,value\n";
  for (const auto& r : rows)
    s += format_number(r.time) + "," + r.scenario + "," + r.metric + "," + format_number(r.value) + "\n";
  return s;
}

void write_outputs(const RunOutput& output, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto put = [&](const std::string& name, const std::string& text) {
    std::ofstream f(dir / name, std::ios::binary | std::ios::trunc);
    f << text;
    if (!f) throw Error(ErrorKind::invalid_argument, "cannot write " + (dir / name).string());
  };
  put("metrics.csv", metrics_csv(output.rows));
  put("summary.json", output.summary.dump(2) + "\n");
  for (const auto& [name, text] : output.files) put(name, text);
}

}  // namespace frp::harness
