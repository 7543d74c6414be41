#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <set>

#include "frp/error.hpp"
#include "frp/plan_opt.hpp"

using namespace frp::plan;
using frp::Error;
using frp::ErrorKind;
using frp::Rng;

namespace {

Catalog random_catalog(std::size_t rels, Rng& rng) {
  Catalog c;
  for (std::size_t i = 0; i < rels; ++i) {
    const double rows = std::round(std::pow(10.0, 1 + 4 * rng.uniform()));
    c.add_relation({"r" + std::to_string(i), rows, rows});
  }
  for (std::size_t i = 1; i < rels; ++i) {
    const std::size_t parent = rng.below(i);
    const double sel = std::pow(10.0, -(1 + 3 * rng.uniform()));
    c.add_edge({"r" + std::to_string(parent), "r" + std::to_string(i), sel, sel});
  }
  return c;
}

Query all_of(const Catalog& c) {
  Query q;
  for (const auto& r : c.relations()) q.relations.push_back(r.name);
  q.predicate_shape = "eq";
  return q;
}

// Independent cardinality and exhaustive best-plan cost over every bushy tree.
double exhaustive_best(const Query& q, const Catalog& c, bool truth) {
  const std::size_t n = q.relations.size();
  auto card = [&](std::uint32_t mask) {
    double v = 1;
    for (std::size_t i = 0; i < n; ++i)
      if (mask >> i & 1u) {
        const Relation& r = c.relation(q.relations[i]);
        v *= truth ? r.true_rows : r.est_rows;
      }
    for (const auto& e : c.edges()) {
      int a = -1, b = -1;
      for (std::size_t i = 0; i < n; ++i) {
        if (q.relations[i] == e.a) a = static_cast<int>(i);
        if (q.relations[i] == e.b) b = static_cast<int>(i);
      }
      if (a >= 0 && b >= 0 && (mask >> a & 1u) && (mask >> b & 1u)) v *= truth ? e.true_sel : e.est_sel;
    }
    return v;
  };
  std::function<double(std::uint32_t)> best = [&](std::uint32_t mask) {
    if ((mask & (mask - 1)) == 0) return card(mask);
    double m = std::numeric_limits<double>::infinity();
    for (std::uint32_t s = (mask - 1) & mask; s > 0; s = (s - 1) & mask) {
      const std::uint32_t t = mask ^ s;
      const double l = card(s), r = card(t), o = card(mask);
      const double join = std::min(l + r + o, l * r + o);
      m = std::min(m, best(s) + best(t) + join);
    }
    return m;
  };
  return best((1u << n) - 1);
}

}  // namespace

TEST(Optimizer, SingleRelationIsAScan) {
  Catalog c;
  c.add_relation({"t", 100, 100});
  const Query q{{"t"}, ""};
  const PlanTree p = optimize_base(q, c);
  EXPECT_EQ(p.signature(), "t");
  EXPECT_EQ(p.join_count(), 0u);
  EXPECT_DOUBLE_EQ(true_cost(p, q, c), 100.0);
}

TEST(Optimizer, TwoRelationsPickCheaperAlgorithm) {
  Catalog c;
  c.add_relation({"a", 1000, 1000});
  c.add_relation({"b", 1000, 1000});
  c.add_edge({"a", "b", 0.001, 0.001});
  const Query q{{"a", "b"}, ""};
  const PlanTree p = optimize_base(q, c);
  EXPECT_EQ(p.signature(), "H(a,b)");
  // 1000 + 1000 + (1000 + 1000 + 1000)
  EXPECT_DOUBLE_EQ(true_cost(p, q, c), 5000.0);

  Catalog tiny;
  tiny.add_relation({"a", 1, 1});
  tiny.add_relation({"b", 1, 1});
  EXPECT_EQ(optimize_base(q, tiny).signature(), "N(a,b)");
}

TEST(Optimizer, MatchesExhaustiveSearch) {
  Rng rng(5);
  for (std::size_t rels = 1; rels <= 5; ++rels) {
    for (int trial = 0; trial < 30; ++trial) {
      const Catalog c = random_catalog(rels, rng);
      const Query q = all_of(c);
      const PlanTree p = optimize_base(q, c);
      const double want = exhaustive_best(q, c, false);
      EXPECT_NEAR(plan_cost(p, estimated_cards(q, c)), want, 1e-9 * want);
    }
  }
}

TEST(Optimizer, RejectsBadQueries) {
  Catalog c;
  c.add_relation({"a", 10, 10});
  try {
    optimize_base(Query{{"a", "zz"}, ""}, c);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::unknown_relation);
  }
  EXPECT_THROW(optimize_base(Query{{}, ""}, c), Error);
  EXPECT_THROW(c.add_relation({"a", 5, 5}), Error);
  EXPECT_THROW(c.add_edge({"a", "nope", 0.1, 0.1}), Error);
}

TEST(Templates, OrderInsensitiveShapeSensitive) {
  EXPECT_EQ(template_of({{"a", "b"}, "x"}), template_of({{"b", "a"}, "x"}));
  EXPECT_NE(template_of({{"a", "b"}, "x"}), template_of({{"a", "b"}, "y"}));
}

TEST(Mutation, IdentityGridLeavesCardsUnchanged) {
  Rng rng(1);
  const Catalog c = random_catalog(4, rng);
  const CardinalityVector est = estimated_cards(all_of(c), c);
  EXPECT_EQ(mutate_cards(est, MutationGrid{{1.0}}, rng).values, est.values);
}

TEST(Mutation, FactorFrequenciesAreUniform) {
  CardinalityVector cv;
  cv.values = {100.0};
  cv.relation_count = 1;
  const MutationGrid grid{{0.1, 1.0, 10.0}};
  Rng rng(2);
  std::map<double, int> hits;
  const int n = 10000;
  for (int i = 0; i < n; ++i) ++hits[mutate_cards(cv, grid, rng).values[0]];
  ASSERT_EQ(hits.size(), 3u);
  const double p = 1.0 / 3, sd = std::sqrt(n * p * (1 - p));
  for (const auto& [v, h] : hits) EXPECT_NEAR(h, n * p, 3 * sd) << v;
  EXPECT_EQ(hits.count(1000.0), 1u);
}

TEST(Mutation, GridMustContainOne) {
  EXPECT_THROW((MutationGrid{{0.5, 2.0}}.validate()), Error);
  EXPECT_THROW((MutationGrid{{1.0, -1.0}}.validate()), Error);
}

TEST(Candidates, BasePlanFirstAndDistinct) {
  Rng rng(3);
  const Catalog c = random_catalog(5, rng);
  const Query q = all_of(c);
  const PlanTree base = optimize_base(q, c);
  EXPECT_EQ(gen_candidates(q, c, 0, {}, rng).size(), 1u);
  EXPECT_EQ(gen_candidates(q, c, 20, MutationGrid{{1.0}}, rng).size(), 1u);
  const auto plans = gen_candidates(q, c, 20, {}, rng);
  EXPECT_EQ(plans.front().signature(), base.signature());
  EXPECT_LE(plans.size(), 21u);
  std::set<std::string> sigs;
  for (const auto& p : plans) sigs.insert(p.signature());
  EXPECT_EQ(sigs.size(), plans.size());
}

TEST(Ucb, UntriedArmsFirstInOrder) {
  SelectorState st;
  UcbSelector ucb;
  const std::vector<PlanTree> arms(3);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(ucb.select_plan(1, arms, st), i);
    ucb.feedback(1, i, 10.0, st);
  }
}

TEST(Ucb, FeedbackKeepsRunningMeans) {
  SelectorState st;
  UcbSelector ucb;
  const std::vector<PlanTree> arms(2);
  ucb.select_plan(7, arms, st);
  ucb.feedback(7, 0, 10.0, st);
  ucb.feedback(7, 1, 10.0, st);
  ucb.feedback(7, 1, 20.0, st);
  EXPECT_DOUBLE_EQ(st.find(7)->at(0).mean, 10.0);
  EXPECT_DOUBLE_EQ(st.find(7)->at(1).mean, 15.0);

  Rng rng(4);
  double sum = 0;
  for (int i = 0; i < 1000; ++i) {
    const double x = 1 + rng.uniform() * 100;
    sum += x;
    ucb.feedback(7, 0, x, st);
  }
  EXPECT_NEAR(st.find(7)->at(0).mean, (sum + 10.0) / 1001, 1e-9);
  EXPECT_THROW(ucb.feedback(7, 5, 1.0, st), Error);
  EXPECT_THROW(ucb.feedback(99, 0, 1.0, st), Error);
  EXPECT_THROW(ucb.select_plan(7, {}, st), Error);
}

TEST(Ucb, ConvergesOnFasterArm) {
  SelectorState st;
  UcbSelector ucb;
  const std::vector<PlanTree> arms(2);
  Rng rng(6);
  int fast = 0;
  for (int t = 0; t < 200; ++t) {
    const std::size_t a = ucb.select_plan(1, arms, st);
    if (t >= 100 && a == 0) ++fast;
    ucb.feedback(1, a, simulate_latency(a == 0 ? 10 : 20, 1, 0.05, rng), st);
  }
  EXPECT_GE(fast, 90);
}

TEST(Latency, NoiseBounds) {
  Rng rng(8);
  EXPECT_DOUBLE_EQ(simulate_latency(100, 1e-3, 0.0, rng), 0.1);
  for (int i = 0; i < 100; ++i) {
    const double l = simulate_latency(100, 1.0, 0.05, rng);
    EXPECT_GE(l, 95.0);
    EXPECT_LE(l, 105.0);
  }
}
