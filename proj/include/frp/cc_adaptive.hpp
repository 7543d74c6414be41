#pragma once

// Online learned concurrency control.
//
// A CCStrategy is a total table from (state bucket, op class) to a CCAction.
// The state bucket discretizes contention_index and avg_lock_wait into B x B
// equi-width cells; the op class is {read, write} x {cold, hot}. Adaptation
// runs in two phases once a workload shift is detected: an evolutionary
// tournament over mutants of the current strategy, then single-cell hill
// climbing driven by window rewards.

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "frp/engine.hpp"
#include "frp/rng.hpp"

namespace frp::cc {

using engine::CCAction;
using engine::ExecStats;
using engine::KeyHeat;
using engine::OpKind;
using engine::Tick;
using engine::TxnOp;

struct SystemState {
  double throughput = 0;        // commits per time unit
  double avg_lock_wait = 0;     // wait per locked op
  double abort_rate = 0;        // aborted / finished
  double contention_index = 0;  // fraction of ops touching a key another active txn touched

  friend bool operator==(const SystemState&, const SystemState&) = default;
};

/// Throws invalid_argument when `window` is not positive.
SystemState observe(const ExecStats& stats, double window);

/// Per-field relative-change thresholds. The relative change of a field is
/// |cur - prev| / max(|prev|, floor), so fields near zero need an absolute
/// move of at least `floor * threshold` to count.
struct ShiftThresholds {
  double throughput = 0.5;
  double lock_wait = 0.5;
  double abort_rate = 0.5;
  double contention = 0.5;
  double throughput_floor = 0.01;
  double lock_wait_floor = 0.5;
  double abort_rate_floor = 0.05;
  double contention_floor = 0.05;
};

bool detect_shift(const SystemState& prev, const SystemState& cur, const ShiftThresholds& thresholds);

struct BucketRanges {
  double contention_max = 1.0;
  double wait_max = 8.0;
};

enum class OpClass : std::uint8_t { read_cold = 0, read_hot = 1, write_cold = 2, write_hot = 3 };
inline constexpr std::size_t kOpClasses = 4;

OpClass op_class(OpKind kind, KeyHeat heat) noexcept;

class CCStrategy {
 public:
  CCStrategy(std::uint32_t buckets, BucketRanges ranges, CCAction fill);

  static CCStrategy constant(std::uint32_t buckets, BucketRanges ranges, CCAction action) {
    return CCStrategy(buckets, ranges, action);
  }

  /// Lock writes on hot keys or in the upper half of the contention range;
  /// everything else runs without locks.
  static CCStrategy prescribed(std::uint32_t buckets, BucketRanges ranges);

  std::uint32_t buckets() const noexcept { return buckets_; }
  const BucketRanges& ranges() const noexcept { return ranges_; }
  std::size_t size() const noexcept { return table_.size(); }

  std::uint32_t contention_bucket(double contention) const noexcept;
  std::uint32_t wait_bucket(double wait) const noexcept;
  std::size_t cell(const SystemState& state, OpClass cls) const noexcept;

  CCAction at(std::size_t cell) const { return table_.at(cell); }
  CCStrategy with_flipped(std::size_t cell) const;
  CCStrategy with(std::size_t cell, CCAction action) const;

  std::size_t count(CCAction action) const noexcept;

  friend bool operator==(const CCStrategy& a, const CCStrategy& b) { return a.table_ == b.table_; }

 private:
  std::uint32_t buckets_;
  BucketRanges ranges_;
  std::vector<CCAction> table_;
};

/// Pure table lookup after bucketing `state`.
CCAction decide(const CCStrategy& strategy, const SystemState& state, const TxnOp& op, KeyHeat heat);

/// commits - lambda * aborts.
double reward(const ExecStats& stats, double lambda);

/// Drives Engine::run_window from a strategy. The state used for lookups is
/// refreshed from each finished segment, so a strategy is evaluated under the
/// conditions it produces itself. Cell lookups are counted.
class StrategyPolicy final : public engine::ActionPolicy {
 public:
  StrategyPolicy(const CCStrategy& strategy, SystemState initial);

  CCAction choose(const TxnOp& op, KeyHeat heat) override;
  void on_segment(const ExecStats& segment, Tick length) override;

  const SystemState& state() const noexcept { return state_; }
  const std::vector<std::uint64_t>& visits() const noexcept { return visits_; }

 private:
  const CCStrategy& strategy_;
  SystemState state_;
  std::vector<std::uint64_t> visits_;
};

struct Evaluation {
  double reward = 0;
  ExecStats stats;
  std::vector<std::uint64_t> visits;  // per-cell lookup counts
  SystemState final_state;
};

using WindowEvaluator = std::function<Evaluation(const CCStrategy&)>;

/// Evaluator running each strategy on private detached copies of `base` for
/// every seed in `seeds`; the reward is the mean over seeds.
WindowEvaluator make_engine_evaluator(const engine::Engine& base, engine::WorkloadSpec workload,
                                      Tick window, SystemState initial_state, double lambda,
                                      std::vector<std::uint64_t> seeds);

struct StrategyPopulation {
  std::vector<CCStrategy> members;
  std::vector<double> fitness;
  std::uint64_t generation = 0;
};

struct FilterOptions {
  std::size_t mutated_cells = 1;
  /// Cells eligible for mutation; empty means the whole table.
  std::vector<std::size_t> scope;
};

struct FilterResult {
  CCStrategy winner;
  double winner_reward = 0;
  double seed_reward = 0;
  Evaluation winner_eval;
  StrategyPopulation population;
};

/// Evolutionary tournament: P mutants (each with `mutated_cells` distinct cells
/// flipped) plus the seed; the best reward wins, the seed wins ties. Cells are
/// dealt across the population from a shuffled pool without replacement, so
/// the scope is covered before any cell repeats.
FilterResult filter_phase(const CCStrategy& seed_strategy, std::size_t pop_size,
                          const WindowEvaluator& eval, Rng& rng, const FilterOptions& options = {});

struct RefineResult {
  CCStrategy strategy;
  double reward = 0;
  std::size_t accepted = 0;
  std::size_t rounds = 0;  // evaluations spent; may stop short of R
};

enum class RefineScope : std::uint8_t {
  whole_table,  // cycle through every cell in index order
  visited,      // most-consulted untried cell of the current strategy's evaluation
};

/// R rounds of single-cell hill climbing; a flip is kept iff the reward does
/// not decrease. With RefineScope::visited the candidate cell is re-derived
/// from the incumbent's own evaluation each round, so cells of states the
/// incumbent drives the system into become eligible; the tried set resets
/// on every strict improvement.
RefineResult refine_phase(const CCStrategy& strategy, const WindowEvaluator& eval, std::size_t rounds,
                          RefineScope scope = RefineScope::whole_table);

struct ControllerConfig {
  std::size_t pop_size = 8;
  std::size_t mutated_cells = 1;
  std::size_t refine_rounds = 8;
  double lambda = 0.5;
  Tick window = 2000;
  std::uint32_t eval_seeds = 1;
  ShiftThresholds thresholds;
};

struct WindowReport {
  std::uint64_t index = 0;
  ExecStats stats;
  SystemState state;
  double reward = 0;
  bool shift = false;
  bool adapted = false;
  /// Evaluation windows spent adapting: one for the tournament (candidates
  /// are evaluated side by side) plus one per refinement round run.
  std::size_t adaptation_windows = 0;
};

/// Live adaptation loop: run a window, observe, adapt on detected shifts.
class AdaptiveController {
 public:
  AdaptiveController(engine::Engine engine, CCStrategy initial, ControllerConfig config, std::uint64_t seed);

  WindowReport step(const engine::WorkloadSpec& workload);

  const CCStrategy& strategy() const noexcept { return strategy_; }
  engine::Engine& engine() noexcept { return engine_; }

 private:
  engine::Engine engine_;
  CCStrategy strategy_;
  ControllerConfig config_;
  Rng rng_;
  std::optional<SystemState> prev_;
  SystemState segment_state_;
  std::uint64_t windows_ = 0;
};

}  // namespace frp::cc
