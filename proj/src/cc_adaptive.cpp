#include "frp/cc_adaptive.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

#include "frp/error.hpp"

namespace frp::cc {

SystemState observe(const ExecStats& stats, double window) {
  if (!(window > 0)) throw Error(ErrorKind::invalid_argument, "observe: window length must be > 0");
  SystemState s;
  s.throughput = static_cast<double>(stats.committed_count) / window;
  s.avg_lock_wait = stats.locked_op_count == 0
                        ? 0.0
                        : static_cast<double>(stats.total_lock_wait) / static_cast<double>(stats.locked_op_count);
  const auto finished = stats.committed_count + stats.aborted_count;
  s.abort_rate = finished == 0 ? 0.0 : static_cast<double>(stats.aborted_count) / static_cast<double>(finished);
  s.contention_index =
      stats.op_count == 0 ? 0.0 : static_cast<double>(stats.conflict_op_count) / static_cast<double>(stats.op_count);
  return s;
}

namespace {

double rel_change(double prev, double cur, double floor) {
  return std::abs(cur - prev) / std::max(std::abs(prev), floor);
}

}  // namespace

bool detect_shift(const SystemState& prev, const SystemState& cur, const ShiftThresholds& t) {
  return rel_change(prev.throughput, cur.throughput, t.throughput_floor) > t.throughput ||
         rel_change(prev.avg_lock_wait, cur.avg_lock_wait, t.lock_wait_floor) > t.lock_wait ||
         rel_change(prev.abort_rate, cur.abort_rate, t.abort_rate_floor) > t.abort_rate ||
         rel_change(prev.contention_index, cur.contention_index, t.contention_floor) > t.contention;
}

OpClass op_class(OpKind kind, KeyHeat heat) noexcept {
  const unsigned idx = (kind == OpKind::write ? 2u : 0u) + (heat == KeyHeat::hot ? 1u : 0u);
  return static_cast<OpClass>(idx);
}

CCStrategy::CCStrategy(std::uint32_t buckets, BucketRanges ranges, CCAction fill)
    : buckets_(buckets), ranges_(ranges) {
  if (buckets_ == 0) throw Error(ErrorKind::invalid_argument, "strategy: bucket count must be >= 1");
  if (!(ranges_.contention_max > 0) || !(ranges_.wait_max > 0))
    throw Error(ErrorKind::invalid_argument, "strategy: bucket ranges must be positive");
  table_.assign(static_cast<std::size_t>(buckets_) * buckets_ * kOpClasses, fill);
}

CCStrategy CCStrategy::prescribed(std::uint32_t buckets, BucketRanges ranges) {
  CCStrategy s(buckets, ranges, CCAction::optimistic_no_lock);
  for (std::uint32_t c = 0; c < buckets; ++c) {
    for (std::uint32_t w = 0; w < buckets; ++w) {
      const std::size_t base = (static_cast<std::size_t>(c) * buckets + w) * kOpClasses;
      const bool high_contention = 2 * c >= buckets;
      s.table_[base + static_cast<std::size_t>(OpClass::write_hot)] = CCAction::lock_immediate;
      if (high_contention) s.table_[base + static_cast<std::size_t>(OpClass::write_cold)] = CCAction::lock_immediate;
    }
  }
  return s;
}

namespace {

std::uint32_t bucketize(double v, double max, std::uint32_t buckets) {
  if (!(v > 0)) return 0;
  const double b = std::floor(v / max * buckets);
  return static_cast<std::uint32_t>(std::min<double>(b, buckets - 1));
}

}  // namespace

std::uint32_t CCStrategy::contention_bucket(double contention) const noexcept {
  return bucketize(contention, ranges_.contention_max, buckets_);
}

std::uint32_t CCStrategy::wait_bucket(double wait) const noexcept {
  return bucketize(wait, ranges_.wait_max, buckets_);
}

std::size_t CCStrategy::cell(const SystemState& state, OpClass cls) const noexcept {
  const std::size_t c = contention_bucket(state.contention_index);
  const std::size_t w = wait_bucket(state.avg_lock_wait);
  return (c * buckets_ + w) * kOpClasses + static_cast<std::size_t>(cls);
}

CCStrategy CCStrategy::with_flipped(std::size_t cell) const {
  const CCAction cur = table_.at(cell);
  return with(cell, cur == CCAction::lock_immediate ? CCAction::optimistic_no_lock : CCAction::lock_immediate);
}

CCStrategy CCStrategy::with(std::size_t cell, CCAction action) const {
  CCStrategy copy = *this;
  copy.table_.at(cell) = action;
  return copy;
}

std::size_t CCStrategy::count(CCAction action) const noexcept {
  return static_cast<std::size_t>(std::count(table_.begin(), table_.end(), action));
}

CCAction decide(const CCStrategy& strategy, const SystemState& state, const TxnOp& op, KeyHeat heat) {
  return strategy.at(strategy.cell(state, op_class(op.kind, heat)));
}

double reward(const ExecStats& stats, double lambda) {
  return static_cast<double>(stats.committed_count) - lambda * static_cast<double>(stats.aborted_count);
}

StrategyPolicy::StrategyPolicy(const CCStrategy& strategy, SystemState initial)
    : strategy_(strategy), state_(initial), visits_(strategy.size(), 0) {}

CCAction StrategyPolicy::choose(const TxnOp& op, KeyHeat heat) {
  const std::size_t c = strategy_.cell(state_, op_class(op.kind, heat));
  ++visits_[c];
  return strategy_.at(c);
}

void StrategyPolicy::on_segment(const ExecStats& segment, Tick length) {
  const double last_wait = state_.avg_lock_wait;
  state_ = observe(segment, static_cast<double>(length));
  // No locked op means no wait sample; keep the last estimate.
  if (segment.locked_op_count == 0) state_.avg_lock_wait = last_wait;
}

WindowEvaluator make_engine_evaluator(const engine::Engine& base, engine::WorkloadSpec workload, Tick window,
                                      SystemState initial_state, double lambda, std::vector<std::uint64_t> seeds) {
  if (seeds.empty()) throw Error(ErrorKind::invalid_argument, "evaluator: at least one seed required");
  auto snapshot = std::make_shared<const engine::Engine>(base.detached_copy());
  return [snapshot, workload, window, initial_state, lambda, seeds](const CCStrategy& s) {
    Evaluation ev;
    ev.visits.assign(s.size(), 0);
    double total = 0;
    for (std::uint64_t seed : seeds) {
      engine::Engine e = snapshot->detached_copy();
      engine::WorkloadSpec w = workload;
      w.seed = seed;
      StrategyPolicy policy(s, initial_state);
      const ExecStats st = e.run_window(w, policy, window);
      total += reward(st, lambda);
      ev.stats += st;
      for (std::size_t i = 0; i < ev.visits.size(); ++i) ev.visits[i] += policy.visits()[i];
      ev.final_state = policy.state();
    }
    ev.reward = total / static_cast<double>(seeds.size());
    return ev;
  };
}

FilterResult filter_phase(const CCStrategy& seed_strategy, std::size_t pop_size, const WindowEvaluator& eval,
                          Rng& rng, const FilterOptions& options) {
  if (pop_size < 2) throw Error(ErrorKind::invalid_argument, "filter_phase: population size must be >= 2");
  std::vector<std::size_t> scope = options.scope;
  if (scope.empty()) {
    scope.resize(seed_strategy.size());
    std::iota(scope.begin(), scope.end(), 0);
  }
  const std::size_t m = std::min(options.mutated_cells, scope.size());

  FilterResult result{seed_strategy, 0, 0, eval(seed_strategy), {}};
  result.winner_reward = result.seed_reward = result.winner_eval.reward;
  result.population.generation = 1;
  // Cells are dealt from a shuffled pool without replacement across the whole
  // population, so every scope cell is tried once before any repeats.
  std::vector<std::size_t> pool;
  const auto deal = [&]() {
    if (pool.empty()) {
      pool = scope;
      for (std::size_t i = pool.size(); i > 1; --i) std::swap(pool[i - 1], pool[rng.below(i)]);
    }
    const std::size_t c = pool.back();
    pool.pop_back();
    return c;
  };
  for (std::size_t p = 0; p < pop_size; ++p) {
    CCStrategy mutant = seed_strategy;
    std::vector<std::size_t> flipped;
    while (flipped.size() < m) {
      const std::size_t c = deal();
      if (std::find(flipped.begin(), flipped.end(), c) != flipped.end()) continue;
      flipped.push_back(c);
      mutant = mutant.with_flipped(c);
    }
    Evaluation ev = eval(mutant);
    const double r = ev.reward;
    result.population.members.push_back(mutant);
    result.population.fitness.push_back(r);
    if (r > result.winner_reward) {
      result.winner = mutant;
      result.winner_reward = r;
      result.winner_eval = std::move(ev);
    }
  }
  return result;
}

RefineResult refine_phase(const CCStrategy& strategy, const WindowEvaluator& eval, std::size_t rounds,
                          RefineScope scope) {
  RefineResult result{strategy, 0, 0};
  if (rounds == 0) return result;
  Evaluation incumbent = eval(strategy);
  result.reward = incumbent.reward;
  std::vector<bool> tried(strategy.size(), false);
  // Outcome tally per (op class, current action): flips of the same kind in
  // other state buckets are tried first once one has paid off.
  std::array<int, kOpClasses * 2> tally{};
  const auto kind_of = [&](std::size_t c) {
    return (c % kOpClasses) * 2 + (result.strategy.at(c) == CCAction::lock_immediate ? 1 : 0);
  };
  for (std::size_t r = 0; r < rounds; ++r) {
    std::optional<std::size_t> cell;
    if (scope == RefineScope::whole_table) {
      cell = r % strategy.size();
    } else {
      for (std::size_t i = 0; i < incumbent.visits.size(); ++i) {
        if (tried[i] || incumbent.visits[i] == 0) continue;
        if (!cell) {
          cell = i;
          continue;
        }
        const int ti = tally[kind_of(i)];
        const int tc = tally[kind_of(*cell)];
        if (ti > tc || (ti == tc && incumbent.visits[i] > incumbent.visits[*cell])) cell = i;
      }
      if (!cell) break;  // every consulted cell tried since the last gain
      tried[*cell] = true;
    }
    const std::size_t kind = kind_of(*cell);
    CCStrategy candidate = result.strategy.with_flipped(*cell);
    Evaluation ev = eval(candidate);
    ++result.rounds;
    tally[kind] += ev.reward > result.reward ? 1 : -1;
    if (ev.reward >= result.reward) {
      if (ev.reward > result.reward) {
        std::fill(tried.begin(), tried.end(), false);
        tried[*cell] = true;  // flipping straight back cannot improve
      }
      result.strategy = std::move(candidate);
      result.reward = ev.reward;
      incumbent = std::move(ev);
      ++result.accepted;
    }
  }
  return result;
}

AdaptiveController::AdaptiveController(engine::Engine engine, CCStrategy initial, ControllerConfig config,
                                       std::uint64_t seed)
    : engine_(std::move(engine)), strategy_(std::move(initial)), config_(config), rng_(Rng::derive(seed, "cc-controller")) {
  if (config_.window == 0) throw Error(ErrorKind::invalid_argument, "controller: window must be > 0");
  if (config_.eval_seeds == 0) throw Error(ErrorKind::invalid_argument, "controller: eval_seeds must be >= 1");
}

namespace {

std::vector<std::size_t> visited_cells(const std::vector<std::uint64_t>& visits) {
  std::vector<std::size_t> cells;
  for (std::size_t i = 0; i < visits.size(); ++i)
    if (visits[i] > 0) cells.push_back(i);
  // Most-consulted cells first, so short refinement budgets go where they matter.
  std::stable_sort(cells.begin(), cells.end(), [&](std::size_t a, std::size_t b) { return visits[a] > visits[b]; });
  return cells;
}

}  // namespace

WindowReport AdaptiveController::step(const engine::WorkloadSpec& workload) {
  WindowReport report;
  report.index = windows_++;
  StrategyPolicy policy(strategy_, segment_state_);
  report.stats = engine_.run_window(workload, policy, config_.window);
  report.state = observe(report.stats, static_cast<double>(config_.window));
  report.reward = reward(report.stats, config_.lambda);
  segment_state_ = policy.state();

  report.shift = prev_.has_value() && detect_shift(*prev_, report.state, config_.thresholds);
  prev_ = report.state;
  if (!report.shift) return report;

  std::vector<std::uint64_t> seeds;
  for (std::uint32_t i = 0; i < config_.eval_seeds; ++i) seeds.push_back(rng_.next());
  const WindowEvaluator eval =
      make_engine_evaluator(engine_, workload, config_.window, segment_state_, config_.lambda, seeds);

  FilterOptions options;
  options.mutated_cells = config_.mutated_cells;
  // Mutations target the most-consulted cells, as many as the population can
  // cover in one pass.
  options.scope = visited_cells(policy.visits());
  options.scope.resize(std::min(options.scope.size(), config_.pop_size * std::max<std::size_t>(config_.mutated_cells, 1)));
  const FilterResult filtered = filter_phase(strategy_, config_.pop_size, eval, rng_, options);
  const RefineResult refined = refine_phase(filtered.winner, eval, config_.refine_rounds, RefineScope::visited);

  strategy_ = refined.strategy;
  report.adapted = true;
  report.adaptation_windows = 1 + refined.rounds;
  // The new strategy changes the observed conditions; the next window becomes
  // the fresh baseline for shift detection.
  prev_.reset();
  return report;
}

}  // namespace frp::cc
