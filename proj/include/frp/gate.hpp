#pragma once

// Predicate-aware sparse gating over a set of experts.
//
// A conjunctive predicate set is encoded as one token per attribute (0 is
// padding), embedded, passed through dense -> ReLU -> dense to K logits, and
// sparsified: softmax, drop entries below tau or outside the top k_max,
// renormalize. Only experts with nonzero weight are evaluated.

#include <atomic>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "frp/rng.hpp"

namespace frp::gate {

struct Attribute {
  enum class Kind : std::uint8_t { categorical, numeric };

  std::string name;
  Kind kind = Kind::categorical;
  std::vector<std::string> vocab;  // categorical: token i+1 is vocab[i]
  std::vector<double> edges;       // numeric: m edges give m+1 buckets

  /// Distinct token ids including padding.
  std::size_t token_count() const noexcept;
};

class Schema {
 public:
  Schema() = default;
  /// Throws invalid_argument on empty vocabularies, non-increasing edges or
  /// duplicate names.
  explicit Schema(std::vector<Attribute> attrs);

  std::size_t size() const noexcept { return attrs_.size(); }
  const Attribute& at(std::size_t i) const { return attrs_.at(i); }
  const std::vector<Attribute>& attributes() const noexcept { return attrs_; }
  /// Index of the named attribute; throws invalid_argument if absent.
  std::size_t index_of(const std::string& name) const;

  /// Bucket token for a numeric value: 1 + number of edges <= v.
  std::uint32_t bucket(std::size_t attr, double v) const;

 private:
  std::vector<Attribute> attrs_;
};

struct Predicate {
  enum class Op : std::uint8_t { eq, lt, le, gt, ge, between };

  std::string attr;
  Op op = Op::eq;
  std::string value;
  std::string value2;  // upper bound for between
};

/// Parses `a = v AND b BETWEEN x AND y AND c < z ...`. Keywords are case
/// insensitive; values may be single-quoted. OR or parentheses raise
/// unsupported_query, malformed text raises invalid_argument. Empty input is
/// the empty conjunction.
std::vector<Predicate> parse_predicates(const std::string& text);

using QueryEncoding = std::vector<std::uint32_t>;

/// Categorical attributes accept only equality with a vocabulary value.
/// Numeric equality maps to the value's bucket; a two-sided range maps to the
/// bucket of its midpoint; a one-sided range maps to the bucket of its bound.
/// A second predicate on one attribute raises unsupported_query.
QueryEncoding encode_query(const std::vector<Predicate>& predicates, const Schema& schema);

struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;  // row-major

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}
  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

struct GatingNet {
  std::size_t embed_dim = 0;
  std::size_t hidden = 0;
  std::size_t experts = 0;
  std::vector<Matrix> embeddings;  // per attribute: token_count x embed_dim
  Matrix w1;                       // hidden x (embed_dim * attrs)
  std::vector<double> b1;          // hidden
  Matrix w2;                       // experts x hidden
  std::vector<double> b2;          // experts
  std::size_t k_max = 1;
  double tau = 0.0;

  /// Throws shape_mismatch when the layer shapes disagree with each other or
  /// with `schema`.
  void validate(const Schema& schema) const;

  /// Zero-initialized net of the given shape.
  static GatingNet zeros(const Schema& schema, std::size_t embed_dim, std::size_t hidden, std::size_t experts,
                         std::size_t k_max, double tau);
  /// Weights uniform in [-scale, scale].
  static GatingNet random(const Schema& schema, std::size_t embed_dim, std::size_t hidden, std::size_t experts,
                          std::size_t k_max, double tau, Rng& rng, double scale = 1.0);
};

using GateWeights = std::vector<double>;

/// Throws invalid_argument when logits are empty or k_max is 0.
GateWeights sparse_softmax(std::span<const double> logits, std::size_t k_max, double tau);

std::vector<double> gate_logits(const QueryEncoding& q, const GatingNet& net);
/// Throws shape_mismatch when the encoding does not fit the net.
GateWeights gate(const QueryEncoding& q, const GatingNet& net);

class Expert {
 public:
  virtual ~Expert() = default;
  virtual double evaluate(std::span<const double> x) const = 0;
};

class LinearExpert final : public Expert {
 public:
  LinearExpert(std::vector<double> weights, double bias) : w_(std::move(weights)), b_(bias) {}
  /// Throws shape_mismatch when x has the wrong length.
  double evaluate(std::span<const double> x) const override;

 private:
  std::vector<double> w_;
  double b_;
};

class ExpertSet {
 public:
  explicit ExpertSet(std::vector<std::unique_ptr<Expert>> experts);

  /// K distinct linear experts over `features` inputs.
  static ExpertSet random_linear(std::size_t k, std::size_t features, Rng& rng);

  std::size_t size() const noexcept { return experts_.size(); }
  /// Evaluates expert i and bumps its counter.
  double evaluate(std::size_t i, std::span<const double> x) const;
  std::uint64_t count(std::size_t i) const { return counters_[i].load(std::memory_order_relaxed); }
  std::vector<std::uint64_t> counts() const;

 private:
  std::vector<std::unique_ptr<Expert>> experts_;
  std::unique_ptr<std::atomic<std::uint64_t>[]> counters_;
};

/// Sum over w_i > 0 of w_i * F_i(x); zero-weight experts are not evaluated.
/// Throws shape_mismatch when |weights| != |experts|.
double sliced_predict(const GateWeights& weights, const ExpertSet& experts, std::span<const double> x);

/// Evaluates every expert; the reference the sliced path must match.
double dense_predict(const GateWeights& weights, const ExpertSet& experts, std::span<const double> x);

/// JSON loaders. Schema: {"attributes":[{"name","kind":"categorical","vocab":[..]} |
/// {"name","kind":"numeric","edges":[..]}]}. Net: {"embed_dim","hidden","experts",
/// "k_max","tau","embeddings":[M..],"w1":M,"b1":[..],"w2":M,"b2":[..]} with
/// M = {"rows","cols","data":[..]}. Malformed documents raise config errors.
Schema schema_from_json(const std::string& text);
GatingNet net_from_json(const std::string& text);
std::string net_to_json(const GatingNet& net);

}  // namespace frp::gate
