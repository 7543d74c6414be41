#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "frp/error.hpp"
#include "frp/model_select.hpp"

using namespace frp::selection;
using frp::Error;
using frp::ErrorKind;
using frp::Rng;

namespace {

// Independent restatement of the sizing rule, by enumeration over K.
std::pair<std::uint64_t, std::uint64_t> brute_plan(double t, double cs, double ce, std::uint32_t eta, double phi,
                                                   std::uint32_t u) {
  const auto n = static_cast<std::uint64_t>(std::floor(phi * t / cs));
  std::uint64_t best = 0;
  std::uint64_t k = 1;
  for (std::uint32_t r = 0; k <= n; ++r, k *= eta) {
    const double cost = static_cast<double>(k) * u * std::max<std::uint32_t>(1, r) * ce;
    if (cost <= (1 - phi) * t) best = k;
  }
  return {n, best};
}

std::vector<ModelGenome> all_genomes(const ModelSpace& space) {
  std::vector<ModelGenome> out;
  for (std::uint64_t i = 0; i < space.size(); ++i) out.push_back(space.genome(i));
  return out;
}

}  // namespace

TEST(PlanBudget, ReferenceExample) {
  const SelectionPlan p = plan_budget(7200, 2, 60);
  EXPECT_EQ(p.n, 720u);
  EXPECT_EQ(p.k, 16u);
  EXPECT_EQ(p.rounds(), 4u);
  EXPECT_DOUBLE_EQ(p.total_cost(), 5280.0);
}

TEST(PlanBudget, SmallestFeasible) {
  const SelectionPlan p = plan_budget(10, 2, 8);
  EXPECT_EQ(p.n, 1u);
  EXPECT_EQ(p.k, 1u);
  EXPECT_EQ(p.rounds(), 1u);
  EXPECT_LE(p.total_cost(), 10.0);
}

TEST(PlanBudget, InfeasibleThrows) {
  try {
    plan_budget(5, 2, 8);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::infeasible_budget);
  }
  EXPECT_THROW(plan_budget(100, 1, 1000), Error);
}

TEST(PlanBudget, DoublingBudgetNeverShrinksPlan) {
  SelectionPlan prev = plan_budget(400, 1, 10);
  for (double t = 800; t <= 409600; t *= 2) {
    const SelectionPlan p = plan_budget(t, 1, 10);
    EXPECT_GE(p.n, prev.n);
    EXPECT_GE(p.k, prev.k);
    prev = p;
  }
}

TEST(PlanBudget, MatchesEnumeration) {
  Rng rng(17);
  for (int i = 0; i < 2000; ++i) {
    const double t = 10 + rng.uniform() * 50000;
    const double cs = 0.5 + rng.uniform() * 5;
    const double ce = 1 + rng.uniform() * 100;
    const std::uint32_t eta = 2 + static_cast<std::uint32_t>(rng.below(3));
    const double phi = 0.05 + 0.9 * rng.uniform();
    const auto [n, k] = brute_plan(t, cs, ce, eta, phi, 1);
    if (n == 0 || k == 0) {
      EXPECT_THROW(plan_budget(t, cs, ce, eta, phi), Error);
      continue;
    }
    const SelectionPlan p = plan_budget(t, cs, ce, eta, phi);
    EXPECT_EQ(p.n, n);
    EXPECT_EQ(p.k, k);
    EXPECT_LE(p.total_cost(), t + 1e-9);
  }
}

TEST(Explore, SingleModel) {
  const ModelSpace space({4, 4}, 1);
  const Scorer scorer(space, {});
  Rng rng(1);
  EXPECT_EQ(explore_and_score(space, scorer, 1, 1, rng).size(), 1u);
}

TEST(Explore, DistinctAndCappedBySpace) {
  const ModelSpace space({3, 3}, 2);
  const Scorer scorer(space, {});
  Rng rng(2);
  const auto scored = explore_and_score(space, scorer, 100, 2, rng);
  EXPECT_EQ(scored.size(), 9u);
  std::set<std::uint64_t> ids;
  for (const auto& s : scored) ids.insert(s.genome.id);
  EXPECT_EQ(ids.size(), 9u);
}

TEST(Explore, PerfectProxyFindsArgmaxOnSmallSpace) {
  const ModelSpace space({4, 4, 4, 4}, 3);
  const Scorer scorer(space, {1.0, 0.0, 1.0, 3});
  const Oracle oracle(space);
  Rng rng(3);
  const auto scored = explore_and_score(space, scorer, space.size(), 1, rng);
  EXPECT_EQ(take_candidates(scored, 1).front(), oracle.best());
}

TEST(Explore, WorkerCountDoesNotChangeTheScoredSet) {
  const ModelSpace space({5, 5, 5}, 4);
  const Scorer scorer(space, {});
  Rng a(4), b(4);
  const auto one = explore_and_score(space, scorer, 60, 1, a);
  const auto four = explore_and_score(space, scorer, 60, 4, b);
  ASSERT_EQ(one.size(), four.size());
  for (std::size_t i = 0; i < one.size(); ++i) {
    EXPECT_EQ(one[i].genome, four[i].genome);
    EXPECT_EQ(one[i].score, four[i].score);
  }
}

TEST(TakeCandidates, TopKWithTiesToLowerId) {
  const ModelSpace space({8}, 1);
  const std::vector<ScoredModel> s{{space.genome(0), 0.9}, {space.genome(1), 0.5}, {space.genome(2), 0.7}};
  const auto top2 = take_candidates(s, 2);
  ASSERT_EQ(top2.size(), 2u);
  EXPECT_EQ(top2[0].id, 0u);
  EXPECT_EQ(top2[1].id, 2u);

  const std::vector<ScoredModel> tied{{space.genome(5), 0.4}, {space.genome(3), 0.4}, {space.genome(4), 0.1}};
  EXPECT_EQ(take_candidates(tied, 1).front().id, 3u);
  EXPECT_THROW(take_candidates(tied, 4), Error);
}

TEST(Refine, SingleCandidateOneRound) {
  const ModelSpace space({4}, 1);
  Trainer tr(space, {});
  const RefineReport r = refine({space.genome(2)}, 1, 2, tr);
  EXPECT_EQ(r.winner.id, 2u);
  EXPECT_EQ(r.survivors, (std::vector<std::size_t>{1}));
  EXPECT_EQ(r.epochs, 1u);
}

TEST(Refine, SixteenHalvesToOne) {
  const ModelSpace space({4, 4}, 5);
  Trainer tr(space, {});
  const RefineReport r = refine(all_genomes(space), 1, 2, tr);
  EXPECT_EQ(r.survivors, (std::vector<std::size_t>{16, 8, 4, 2, 1}));
  EXPECT_EQ(r.round_epochs, (std::vector<std::uint64_t>{1, 2, 4, 8}));
  EXPECT_EQ(r.epochs, 64u);
  EXPECT_EQ(tr.epochs_charged(), 64u);
}

TEST(Refine, EqualTimeConstantsNoiselessPickArgmax) {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    const ModelSpace space({4, 4, 4}, seed, 2.0, 2.0);
    Trainer tr(space, {});
    const Oracle oracle(space);
    EXPECT_EQ(refine(all_genomes(space), 1, 2, tr).winner, oracle.best());
  }
}

TEST(Refine, RejectsBadInput) {
  const ModelSpace space({4}, 1);
  Trainer tr(space, {});
  EXPECT_THROW(refine({}, 1, 2, tr), Error);
  EXPECT_THROW(refine({space.genome(0)}, 1, 1, tr), Error);
}

TEST(Select, InfeasibleBudget) {
  const ModelSpace space({4, 4}, 1);
  const Scorer scorer(space, {0.8, 0.1, 2.0, 1});
  Trainer tr(space, {60.0, 0, 1});
  try {
    select(space, scorer, tr, 10, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::infeasible_budget);
  }
}

TEST(Select, FeedBatchesMatchEpochs) {
  const ModelSpace space({4, 4, 4, 4}, 6);
  const Scorer scorer(space, {0.8, 0.1, 2.0, 6});
  Trainer tr(space, {60.0, 0, 6});
  SelectOptions opt;
  opt.feed_capacity = 3;
  opt.workers = 2;
  const SelectionResult r = select(space, scorer, tr, 7200, opt);
  EXPECT_EQ(r.plan.k, 16u);
  EXPECT_EQ(r.batches_consumed, 64u);
  // Only 256 genomes exist, so scoring stops short of N = 720.
  EXPECT_EQ(r.scored, 256u);
  EXPECT_DOUBLE_EQ(r.elapsed, 256 * 2.0 + 64 * 60.0);
}
