#include <gtest/gtest.h>

#include "frp/cc_adaptive.hpp"
#include "frp/error.hpp"

using namespace frp::cc;
using frp::Rng;
using frp::engine::Engine;
using frp::engine::EngineConfig;
using frp::engine::FixedPolicy;
using frp::engine::WorkloadSpec;

namespace {

constexpr auto kLock = CCAction::lock_immediate;
constexpr auto kOpt = CCAction::optimistic_no_lock;

// Additive synthetic reward: each cell contributes its weight when it holds
// the target action.
struct Additive {
  std::vector<CCAction> target;
  std::vector<double> weight;

  double operator()(const CCStrategy& s) const {
    double r = 0;
    for (std::size_t c = 0; c < s.size(); ++c)
      if (s.at(c) == target[c]) r += weight[c];
    return r;
  }
  WindowEvaluator evaluator() const {
    return [this](const CCStrategy& s) {
      Evaluation ev;
      ev.reward = (*this)(s);
      ev.visits.assign(s.size(), 1);
      return ev;
    };
  }
};

Additive random_additive(std::size_t cells, std::uint64_t seed) {
  Rng r(seed);
  Additive a;
  for (std::size_t c = 0; c < cells; ++c) {
    a.target.push_back(r.below(2) ? kLock : kOpt);
    a.weight.push_back(1.0 + r.uniform());
  }
  return a;
}

}  // namespace

TEST(Observe, Arithmetic) {
  ExecStats s;
  s.committed_count = 30;
  s.aborted_count = 10;
  s.total_lock_wait = 50;
  s.locked_op_count = 25;
  s.op_count = 200;
  s.conflict_op_count = 50;
  const SystemState st = observe(s, 100);
  EXPECT_DOUBLE_EQ(st.throughput, 0.3);
  EXPECT_DOUBLE_EQ(st.avg_lock_wait, 2.0);
  EXPECT_DOUBLE_EQ(st.abort_rate, 0.25);
  EXPECT_DOUBLE_EQ(st.contention_index, 0.25);
}

TEST(Observe, EmptyStatsAndBadWindow) {
  EXPECT_EQ(observe(ExecStats{}, 10), SystemState{});
  EXPECT_THROW(observe(ExecStats{}, 0), frp::Error);
}

TEST(Observe, SkewRaisesContention) {
  auto contention = [](double theta) {
    Engine e;
    FixedPolicy p(kLock);
    const ExecStats s = e.run_window(WorkloadSpec{1000, theta, 0.5, 8, 4.0, 16, 3}, p, 2000);
    return observe(s, 2000).contention_index;
  };
  EXPECT_GT(contention(0.99), contention(0.0));
}

TEST(DetectShift, EqualStatesNoShift) {
  const SystemState s{1.0, 2.0, 0.1, 0.3};
  EXPECT_FALSE(detect_shift(s, s, ShiftThresholds{}));
}

TEST(DetectShift, DoubledWaitIsShift) {
  const SystemState a{1.0, 2.0, 0.1, 0.3};
  SystemState b = a;
  b.avg_lock_wait = 4.0;
  EXPECT_TRUE(detect_shift(a, b, ShiftThresholds{}));
}

TEST(DetectShift, SmallDriftIsNotShift) {
  const SystemState a{1.0, 2.0, 0.1, 0.3};
  const SystemState b{1.01, 2.02, 0.101, 0.303};
  EXPECT_FALSE(detect_shift(a, b, ShiftThresholds{}));
}

TEST(Strategy, ConstantDecidesEverywhere) {
  const CCStrategy s = CCStrategy::constant(4, {}, kOpt);
  EXPECT_EQ(s.size(), 64u);
  const TxnOp w{OpKind::write, 1, 0};
  for (double c : {0.0, 0.3, 0.9, 5.0})
    for (double wait : {0.0, 3.0, 100.0}) EXPECT_EQ(decide(s, SystemState{0, wait, 0, c}, w, KeyHeat::hot), kOpt);
}

TEST(Strategy, PrescribedLocksHotWritesAndContendedWrites) {
  const CCStrategy s = CCStrategy::prescribed(4, {1.0, 8.0});
  const TxnOp r{OpKind::read, 1, 0};
  const TxnOp w{OpKind::write, 1, 0};
  const SystemState low{0, 0, 0, 0.1};
  const SystemState high{0, 0, 0, 0.8};
  EXPECT_EQ(decide(s, low, w, KeyHeat::hot), kLock);
  EXPECT_EQ(decide(s, low, w, KeyHeat::cold), kOpt);
  EXPECT_EQ(decide(s, high, w, KeyHeat::cold), kLock);
  EXPECT_EQ(decide(s, high, r, KeyHeat::hot), kOpt);
}

TEST(Strategy, BucketsClampAtRangeEdges) {
  const CCStrategy s(4, {1.0, 8.0}, kLock);
  EXPECT_EQ(s.contention_bucket(-1), 0u);
  EXPECT_EQ(s.contention_bucket(0.26), 1u);
  EXPECT_EQ(s.contention_bucket(1.0), 3u);
  EXPECT_EQ(s.wait_bucket(1e9), 3u);
  EXPECT_THROW(CCStrategy(0, {}, kLock), frp::Error);
}

TEST(Filter, NoMutationReturnsSeed) {
  const Additive a = random_additive(16, 1);
  const CCStrategy seed = CCStrategy::constant(2, {}, kLock);
  Rng rng(1);
  FilterOptions opt;
  opt.mutated_cells = 0;
  const FilterResult r = filter_phase(seed, 6, a.evaluator(), rng, opt);
  EXPECT_EQ(r.winner, seed);
  for (const auto& m : r.population.members) EXPECT_EQ(m, seed);
}

TEST(Filter, WinnerNeverWorseThanSeed) {
  for (std::uint64_t k = 0; k < 20; ++k) {
    const Additive a = random_additive(16, k);
    const CCStrategy seed = CCStrategy::constant(2, {}, k % 2 ? kLock : kOpt);
    Rng rng(k);
    const FilterResult r = filter_phase(seed, 8, a.evaluator(), rng);
    EXPECT_GE(r.winner_reward, r.seed_reward);
    EXPECT_DOUBLE_EQ(r.winner_reward, a(r.winner));
  }
}

TEST(Filter, PopulationBelowTwoThrows) {
  const Additive a = random_additive(4, 1);
  Rng rng(1);
  EXPECT_THROW(filter_phase(CCStrategy(1, {}, kLock), 1, a.evaluator(), rng), frp::Error);
}

TEST(Filter, ReadOnlyLowContentionPrefersOptimisticReads) {
  // Exhaustive comparison over the four single-bucket tables that differ in
  // the read cells: skipping locks never loses on uncontended reads.
  EngineConfig cfg{2, 1, 1, 0, 16, 100, 100, true};
  Engine base(cfg);
  const WorkloadSpec w{100000, 0.0, 0.0, 4, 1.0, 4, 1};
  const WindowEvaluator eval = make_engine_evaluator(base, w, 1000, SystemState{}, 0.5, {1, 2});
  const CCStrategy locked = CCStrategy::constant(1, {}, kLock);
  const std::size_t rc = static_cast<std::size_t>(OpClass::read_cold);
  const std::size_t rh = static_cast<std::size_t>(OpClass::read_hot);
  double best = -1;
  CCStrategy arg = locked;
  for (CCAction a : {kLock, kOpt})
    for (CCAction b : {kLock, kOpt}) {
      const CCStrategy s = locked.with(rc, a).with(rh, b);
      const double r = eval(s).reward;
      if (r > best) {
        best = r;
        arg = s;
      }
    }
  EXPECT_EQ(arg.at(rc), kOpt);

  Rng rng(3);
  FilterOptions opt;
  opt.scope = {rc};
  const FilterResult f = filter_phase(locked, 2, eval, rng, opt);
  EXPECT_EQ(f.winner.at(rc), kOpt);
  EXPECT_GT(f.winner_reward, f.seed_reward);
}

TEST(Refine, ZeroRoundsUnchanged) {
  const Additive a = random_additive(16, 4);
  const CCStrategy s(2, {}, kLock);
  const RefineResult r = refine_phase(s, a.evaluator(), 0);
  EXPECT_EQ(r.strategy, s);
  EXPECT_EQ(r.rounds, 0u);
}

TEST(Refine, OptimalTableRejectsEveryFlip) {
  const Additive a = random_additive(16, 5);
  CCStrategy s(2, {}, kLock);
  for (std::size_t c = 0; c < s.size(); ++c) s = s.with(c, a.target[c]);
  const RefineResult r = refine_phase(s, a.evaluator(), 16);
  EXPECT_EQ(r.strategy, s);
  EXPECT_EQ(r.accepted, 0u);
}

TEST(Refine, AdditiveRewardReachesLocalOptimum) {
  for (std::uint64_t k = 0; k < 10; ++k) {
    const Additive a = random_additive(36, 100 + k);
    const CCStrategy start(3, {}, kOpt);
    const RefineResult r = refine_phase(start, a.evaluator(), start.size());
    for (std::size_t c = 0; c < r.strategy.size(); ++c) {
      EXPECT_EQ(r.strategy.at(c), a.target[c]);
      EXPECT_LT(a(r.strategy.with_flipped(c)), r.reward);
    }
    EXPECT_GE(r.reward, a(start));
  }
}

TEST(Controller, StableWorkloadDoesNotAdapt) {
  ControllerConfig cfg;
  cfg.window = 1000;
  AdaptiveController ctl(Engine{}, CCStrategy::prescribed(4, {}), cfg, 9);
  const WorkloadSpec w{1000, 0.0, 0.2, 4, 1.0, 4, 2};
  const CCStrategy before = ctl.strategy();
  for (int i = 0; i < 5; ++i) {
    const WindowReport rep = ctl.step(w);
    EXPECT_FALSE(rep.adapted);
    EXPECT_EQ(rep.index, static_cast<std::uint64_t>(i));
  }
  EXPECT_EQ(ctl.strategy(), before);
}
