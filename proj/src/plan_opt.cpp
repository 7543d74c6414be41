#include "frp/plan_opt.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_set>

#include "frp/error.hpp"

namespace frp::plan {

void Catalog::add_relation(Relation r) {
  if (r.name.empty()) throw Error(ErrorKind::invalid_argument, "catalog: relation name must be non-empty");
  if (index_.count(r.name)) throw Error(ErrorKind::invalid_argument, "catalog: duplicate relation " + r.name);
  if (!(r.true_rows > 0) || !(r.est_rows > 0))
    throw Error(ErrorKind::invalid_argument, "catalog: row counts must be > 0 for " + r.name);
  index_.emplace(r.name, relations_.size());
  relations_.push_back(std::move(r));
}

void Catalog::add_edge(JoinEdge e) {
  if (!has(e.a)) throw Error(ErrorKind::unknown_relation, "catalog: unknown relation " + e.a);
  if (!has(e.b)) throw Error(ErrorKind::unknown_relation, "catalog: unknown relation " + e.b);
  if (e.a == e.b) throw Error(ErrorKind::invalid_argument, "catalog: self edge on " + e.a);
  if (!(e.true_sel > 0) || !(e.est_sel > 0))
    throw Error(ErrorKind::invalid_argument, "catalog: selectivities must be > 0");
  for (auto& x : edges_) {
    if ((x.a == e.a && x.b == e.b) || (x.a == e.b && x.b == e.a)) {
      x = std::move(e);
      return;
    }
  }
  edges_.push_back(std::move(e));
}

const Relation& Catalog::relation(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error(ErrorKind::unknown_relation, "catalog: unknown relation " + name);
  return relations_[it->second];
}

void Catalog::skew_estimate(const std::string& a, const std::string& b, double factor) {
  if (!(factor > 0)) throw Error(ErrorKind::invalid_argument, "catalog: skew factor must be > 0");
  for (auto& x : edges_) {
    if ((x.a == a && x.b == b) || (x.a == b && x.b == a)) {
      x.est_sel *= factor;
      return;
    }
  }
  throw Error(ErrorKind::invalid_argument, "catalog: no edge " + a + "-" + b);
}

TemplateId template_of(const Query& q) {
  std::vector<std::string> names = q.relations;
  std::sort(names.begin(), names.end());
  std::string key;
  for (const auto& n : names) key += n + ",";
  key += "|" + q.predicate_shape;
  return hash_label(key);
}

double CardinalityVector::cardinality(std::uint32_t mask) const {
  double c = 1;
  for (std::size_t i = 0; i < relation_count; ++i)
    if (mask & (1u << i)) c *= values[i];
  for (std::size_t e = 0; e < edge_ends.size(); ++e) {
    const auto [a, b] = edge_ends[e];
    if ((mask & (1u << a)) && (mask & (1u << b))) c *= values[relation_count + e];
  }
  return c;
}

namespace {

void validate_query(const Query& q, const Catalog& catalog) {
  if (q.relations.empty()) throw Error(ErrorKind::invalid_argument, "query: no relations");
  if (q.relations.size() > Query::kMaxRelations)
    throw Error(ErrorKind::invalid_argument, "query: more than 8 relations");
  std::unordered_set<std::string> seen;
  for (const auto& r : q.relations) {
    if (!catalog.has(r)) throw Error(ErrorKind::unknown_relation, "query: unknown relation " + r);
    if (!seen.insert(r).second) throw Error(ErrorKind::invalid_argument, "query: duplicate relation " + r);
  }
}

CardinalityVector cards_of(const Query& q, const Catalog& catalog, bool truth) {
  validate_query(q, catalog);
  CardinalityVector cv;
  cv.relation_count = q.relations.size();
  std::unordered_map<std::string, int> pos;
  for (std::size_t i = 0; i < q.relations.size(); ++i) {
    pos[q.relations[i]] = static_cast<int>(i);
    const Relation& r = catalog.relation(q.relations[i]);
    cv.values.push_back(truth ? r.true_rows : r.est_rows);
  }
  std::vector<double> sels;
  for (const auto& e : catalog.edges()) {
    auto ia = pos.find(e.a);
    auto ib = pos.find(e.b);
    if (ia == pos.end() || ib == pos.end()) continue;
    cv.edge_ends.emplace_back(ia->second, ib->second);
    sels.push_back(truth ? e.true_sel : e.est_sel);
  }
  cv.values.insert(cv.values.end(), sels.begin(), sels.end());
  return cv;
}

double join_cost(JoinAlgo algo, double l, double r, double out) {
  return algo == JoinAlgo::hash ? l + r + out : l * r + out;
}

double node_cost(const PlanTree& plan, int n, const CardinalityVector& cards) {
  const PlanNode& node = plan.nodes.at(static_cast<std::size_t>(n));
  const double out = cards.cardinality(node.mask);
  if (node.leaf()) return out;
  const double l = cards.cardinality(plan.nodes[static_cast<std::size_t>(node.left)].mask);
  const double r = cards.cardinality(plan.nodes[static_cast<std::size_t>(node.right)].mask);
  return node_cost(plan, node.left, cards) + node_cost(plan, node.right, cards) + join_cost(node.algo, l, r, out);
}

std::string node_signature(const PlanTree& plan, int n) {
  const PlanNode& node = plan.nodes.at(static_cast<std::size_t>(n));
  if (node.leaf()) return plan.relations.at(static_cast<std::size_t>(node.relation));
  return std::string(node.algo == JoinAlgo::hash ? "H(" : "N(") + node_signature(plan, node.left) + "," +
         node_signature(plan, node.right) + ")";
}

void annotate(PlanTree& plan, const CardinalityVector& cards) {
  for (auto& n : plan.nodes) n.est_card = cards.cardinality(n.mask);
}

}  // namespace

CardinalityVector estimated_cards(const Query& q, const Catalog& catalog) { return cards_of(q, catalog, false); }
CardinalityVector true_cards(const Query& q, const Catalog& catalog) { return cards_of(q, catalog, true); }

std::string PlanTree::signature() const {
  if (root < 0) return "";
  return node_signature(*this, root);
}

std::size_t PlanTree::join_count() const noexcept {
  return static_cast<std::size_t>(std::count_if(nodes.begin(), nodes.end(), [](const PlanNode& n) { return !n.leaf(); }));
}

double plan_cost(const PlanTree& plan, const CardinalityVector& cards) {
  if (plan.root < 0) throw Error(ErrorKind::invalid_argument, "plan_cost: empty plan");
  return node_cost(plan, plan.root, cards);
}

PlanTree optimize_with(const Query& q, const CardinalityVector& cards) {
  const std::size_t n = cards.relation_count;
  if (n == 0 || n > Query::kMaxRelations || q.relations.size() != n)
    throw Error(ErrorKind::invalid_argument, "optimize: cardinality vector does not match query");
  for (double v : cards.values)
    if (!(v > 0)) throw Error(ErrorKind::invalid_argument, "optimize: cardinalities must be > 0");

  const std::uint32_t full = (1u << n) - 1;
  struct Best {
    double cost = std::numeric_limits<double>::infinity();
    std::uint32_t left = 0;
    JoinAlgo algo = JoinAlgo::hash;
  };
  std::vector<Best> best(full + 1);
  std::vector<double> card(full + 1);
  for (std::uint32_t m = 1; m <= full; ++m) card[m] = cards.cardinality(m);
  for (std::size_t i = 0; i < n; ++i) best[1u << i].cost = card[1u << i];

  for (std::uint32_t m = 1; m <= full; ++m) {
    if ((m & (m - 1)) == 0) continue;  // single relation
    for (std::uint32_t l = 1; l < m; ++l) {
      if ((l & m) != l) continue;
      const std::uint32_t r = m ^ l;
      const double sub = best[l].cost + best[r].cost;
      for (JoinAlgo algo : {JoinAlgo::hash, JoinAlgo::nested_loop}) {
        const double c = sub + join_cost(algo, card[l], card[r], card[m]);
        if (c < best[m].cost) best[m] = {c, l, algo};
      }
    }
  }

  PlanTree plan;
  plan.relations = q.relations;
  const auto build = [&](auto&& self, std::uint32_t m) -> int {
    PlanNode node;
    node.mask = m;
    if ((m & (m - 1)) == 0) {
      node.relation = __builtin_ctz(m);
    } else {
      node.algo = best[m].algo;
      node.left = self(self, best[m].left);
      node.right = self(self, m ^ best[m].left);
    }
    plan.nodes.push_back(node);
    return static_cast<int>(plan.nodes.size() - 1);
  };
  plan.root = build(build, full);
  annotate(plan, cards);
  return plan;
}

PlanTree optimize_base(const Query& q, const Catalog& catalog) { return optimize_with(q, estimated_cards(q, catalog)); }

void MutationGrid::validate() const {
  if (factors.empty()) throw Error(ErrorKind::invalid_argument, "grid: empty");
  bool has_one = false;
  for (double f : factors) {
    if (!(f > 0)) throw Error(ErrorKind::invalid_argument, "grid: factors must be > 0");
    has_one = has_one || f == 1.0;
  }
  if (!has_one) throw Error(ErrorKind::invalid_argument, "grid: must contain the identity factor 1");
}

CardinalityVector mutate_cards(const CardinalityVector& cards, const MutationGrid& grid, Rng& rng) {
  grid.validate();
  CardinalityVector out = cards;
  for (double& v : out.values) v *= grid.factors[rng.below(grid.factors.size())];
  return out;
}

std::vector<PlanTree> gen_candidates(const Query& q, const Catalog& catalog, std::size_t n_plans,
                                     const MutationGrid& grid, Rng& rng) {
  grid.validate();
  const CardinalityVector est = estimated_cards(q, catalog);
  std::vector<PlanTree> out{optimize_with(q, est)};
  std::unordered_set<std::string> seen{out.front().signature()};
  for (std::size_t i = 0; i < n_plans; ++i) {
    PlanTree p = optimize_with(q, mutate_cards(est, grid, rng));
    if (!seen.insert(p.signature()).second) continue;
    annotate(p, est);
    out.push_back(std::move(p));
  }
  return out;
}

double true_cost(const PlanTree& plan, const Query& q, const Catalog& catalog) {
  return plan_cost(plan, true_cards(q, catalog));
}

double simulate_latency(double cost, double unit, double noise, Rng& rng) {
  return cost * unit * (1.0 + noise * rng.uniform(-1.0, 1.0));
}

std::vector<ArmStats>& SelectorState::row(TemplateId t, std::size_t arms) {
  auto [it, fresh] = rows_.try_emplace(t, arms);
  if (!fresh && it->second.size() != arms)
    throw Error(ErrorKind::invalid_argument, "selector: candidate count changed for template");
  return it->second;
}

const std::vector<ArmStats>* SelectorState::find(TemplateId t) const {
  auto it = rows_.find(t);
  return it == rows_.end() ? nullptr : &it->second;
}

void PlanSelector::feedback(TemplateId t, std::size_t arm, double latency, SelectorState& state) {
  const std::vector<ArmStats>* existing = state.find(t);
  if (existing == nullptr || arm >= existing->size())
    throw Error(ErrorKind::invalid_argument, "selector: feedback for unknown plan");
  ArmStats& a = state.row(t, existing->size())[arm];
  ++a.pulls;
  a.mean += (latency - a.mean) / static_cast<double>(a.pulls);
}

std::size_t UcbSelector::select_plan(TemplateId t, const std::vector<PlanTree>& candidates, SelectorState& state) {
  if (candidates.empty()) throw Error(ErrorKind::invalid_argument, "selector: no candidates");
  const std::vector<ArmStats>& row = state.row(t, candidates.size());
  std::uint64_t total = 0;
  double scale = 0;
  for (std::size_t i = 0; i < row.size(); ++i) {
    if (row[i].pulls == 0) return i;
    total += row[i].pulls;
    scale += row[i].mean;
  }
  scale /= static_cast<double>(row.size());
  if (!(scale > 0)) scale = 1;
  const double log_t = std::log(static_cast<double>(total));
  std::size_t pick = 0;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < row.size(); ++i) {
    const double index = row[i].mean - c_ * scale * std::sqrt(log_t / static_cast<double>(row[i].pulls));
    if (index < best) {
      best = index;
      pick = i;
    }
  }
  return pick;
}

}  // namespace frp::plan
