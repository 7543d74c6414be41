#pragma once

// Toy cost-based join optimizer, candidate generation by cardinality
// mutation, and online plan selection from execution feedback.
//
// Cost model (C_out style, additive over nodes):
//   scan             card
//   hash join        card(L) + card(R) + card(out)
//   nested-loop join card(L) * card(R) + card(out)
// The cardinality of a relation set is the product of its row counts and of
// the selectivities of catalog edges inside the set.

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "frp/rng.hpp"

namespace frp::plan {

struct Relation {
  std::string name;
  double true_rows = 1;
  double est_rows = 1;
};

struct JoinEdge {
  std::string a;
  std::string b;
  double true_sel = 1;
  double est_sel = 1;
};

class Catalog {
 public:
  /// Throws invalid_argument on duplicate names or non-positive statistics.
  void add_relation(Relation r);
  /// Throws unknown_relation if an endpoint is missing; replaces an existing edge.
  void add_edge(JoinEdge e);

  const Relation& relation(const std::string& name) const;
  const std::vector<Relation>& relations() const noexcept { return relations_; }
  const std::vector<JoinEdge>& edges() const noexcept { return edges_; }
  bool has(const std::string& name) const { return index_.count(name) > 0; }

  /// Multiplies the estimated selectivity of edge (a, b) by `factor`.
  void skew_estimate(const std::string& a, const std::string& b, double factor);

 private:
  std::vector<Relation> relations_;
  std::vector<JoinEdge> edges_;
  std::unordered_map<std::string, std::size_t> index_;
};

struct Query {
  std::vector<std::string> relations;  // at most kMaxRelations, distinct
  std::string predicate_shape;         // opaque; part of the template identity

  static constexpr std::size_t kMaxRelations = 8;
};

using TemplateId = std::uint64_t;
/// Hash of the sorted relation set and the predicate shape.
TemplateId template_of(const Query& q);

/// Estimates for every base relation of the query (query order) followed by
/// every catalog edge inside the query (catalog order).
struct CardinalityVector {
  std::vector<double> values;
  std::size_t relation_count = 0;
  std::vector<std::pair<int, int>> edge_ends;  // query indices per edge entry

  double cardinality(std::uint32_t mask) const;
};

CardinalityVector estimated_cards(const Query& q, const Catalog& catalog);
CardinalityVector true_cards(const Query& q, const Catalog& catalog);

enum class JoinAlgo : std::uint8_t { hash, nested_loop };

struct PlanNode {
  int left = -1;
  int right = -1;
  int relation = -1;  // index into Query::relations for leaves
  JoinAlgo algo = JoinAlgo::hash;
  std::uint32_t mask = 0;
  double est_card = 0;

  bool leaf() const noexcept { return relation >= 0; }
};

struct PlanTree {
  std::vector<PlanNode> nodes;
  int root = -1;
  std::vector<std::string> relations;  // the query's relation names

  /// Structural identity: tree shape, leaf relations and algorithm tags.
  std::string signature() const;
  std::size_t join_count() const noexcept;
};

/// Cost of `plan` with the given cardinalities (same layout as the query the
/// plan was built for).
double plan_cost(const PlanTree& plan, const CardinalityVector& cards);

/// Dynamic programming over all relation subsets and ordered splits (bushy
/// trees, including cross products), hash tried before nested loop. Ties keep
/// the first minimum found in lexicographic subset order. Throws
/// unknown_relation / invalid_argument on bad queries.
PlanTree optimize_base(const Query& q, const Catalog& catalog);
PlanTree optimize_with(const Query& q, const CardinalityVector& cards);

struct MutationGrid {
  std::vector<double> factors{0.1, 0.5, 1.0, 2.0, 10.0};

  /// Throws invalid_argument unless all factors are positive and 1 is present.
  void validate() const;
};

CardinalityVector mutate_cards(const CardinalityVector& cards, const MutationGrid& grid, Rng& rng);

/// Base plan first, then up to N distinct re-optimized plans in discovery order.
std::vector<PlanTree> gen_candidates(const Query& q, const Catalog& catalog, std::size_t n_plans,
                                     const MutationGrid& grid, Rng& rng);

/// Cost of the plan under TRUE cardinalities.
double true_cost(const PlanTree& plan, const Query& q, const Catalog& catalog);

/// Simulated latency: true_cost * unit * (1 + noise * u), u uniform in [-1, 1].
double simulate_latency(double true_cost, double unit, double noise, Rng& rng);

struct ArmStats {
  std::uint64_t pulls = 0;
  double mean = 0;
};

class SelectorState {
 public:
  /// Row for `t`, created with `arms` fresh entries on first sight.
  std::vector<ArmStats>& row(TemplateId t, std::size_t arms);
  const std::vector<ArmStats>* find(TemplateId t) const;
  std::size_t templates() const noexcept { return rows_.size(); }

 private:
  std::map<TemplateId, std::vector<ArmStats>> rows_;
};

/// Pluggable online selector.
class PlanSelector {
 public:
  virtual ~PlanSelector() = default;
  /// Index into `candidates`. Throws invalid_argument when empty.
  virtual std::size_t select_plan(TemplateId t, const std::vector<PlanTree>& candidates, SelectorState& state) = 0;
  /// Incremental mean update. Throws invalid_argument for an unknown arm.
  virtual void feedback(TemplateId t, std::size_t arm, double latency, SelectorState& state);
};

/// Untried arms first in index order, then argmin over
/// mean - c * scale * sqrt(ln t / pulls), where scale is the mean of the arm
/// means so the bonus is in latency units. Ties go to the lower index.
class UcbSelector final : public PlanSelector {
 public:
  explicit UcbSelector(double c = 0.5) : c_(c) {}
  std::size_t select_plan(TemplateId t, const std::vector<PlanTree>& candidates, SelectorState& state) override;

 private:
  double c_;
};

}  // namespace frp::plan
