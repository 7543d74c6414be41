#include "frp/gate.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <unordered_set>

#include <json.hpp>

#include "frp/error.hpp"

namespace frp::gate {

std::size_t Attribute::token_count() const noexcept {
  return 1 + (kind == Kind::categorical ? vocab.size() : edges.size() + 1);
}

Schema::Schema(std::vector<Attribute> attrs) : attrs_(std::move(attrs)) {
  std::unordered_set<std::string> names;
  for (const auto& a : attrs_) {
    if (a.name.empty()) throw Error(ErrorKind::invalid_argument, "schema: attribute name must be non-empty");
    if (!names.insert(a.name).second) throw Error(ErrorKind::invalid_argument, "schema: duplicate attribute " + a.name);
    if (a.kind == Attribute::Kind::categorical) {
      if (a.vocab.empty()) throw Error(ErrorKind::invalid_argument, "schema: empty vocabulary for " + a.name);
      std::unordered_set<std::string> words(a.vocab.begin(), a.vocab.end());
      if (words.size() != a.vocab.size())
        throw Error(ErrorKind::invalid_argument, "schema: duplicate vocabulary entry for " + a.name);
    } else {
      for (std::size_t i = 1; i < a.edges.size(); ++i)
        if (!(a.edges[i] > a.edges[i - 1]))
          throw Error(ErrorKind::invalid_argument, "schema: bucket edges must increase for " + a.name);
    }
  }
}

std::size_t Schema::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < attrs_.size(); ++i)
    if (attrs_[i].name == name) return i;
  throw Error(ErrorKind::invalid_argument, "schema: unknown attribute " + name);
}

std::uint32_t Schema::bucket(std::size_t attr, double v) const {
  const auto& e = attrs_.at(attr).edges;
  return 1 + static_cast<std::uint32_t>(std::upper_bound(e.begin(), e.end(), v) - e.begin());
}

namespace {

std::string upper(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return s;
}

struct Token {
  enum class Kind : std::uint8_t { word, quoted, op };
  Kind kind;
  std::string text;
};

std::vector<Token> tokenize(const std::string& text) {
  std::vector<Token> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const char c = text[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
    } else if (c == '(' || c == ')') {
      throw Error(ErrorKind::unsupported_query, "predicate: parentheses are not supported");
    } else if (c == '\'') {
      const std::size_t end = text.find('\'', i + 1);
      if (end == std::string::npos) throw Error(ErrorKind::invalid_argument, "predicate: unterminated quote");
      out.push_back({Token::Kind::quoted, text.substr(i + 1, end - i - 1)});
      i = end + 1;
    } else if (c == '<' || c == '>' || c == '=') {
      std::string op(1, c);
      if (c != '=' && i + 1 < text.size() && text[i + 1] == '=') op += '=';
      if (op == "<" && i + 1 < text.size() && text[i + 1] == '>')
        throw Error(ErrorKind::unsupported_query, "predicate: <> is not supported");
      out.push_back({Token::Kind::op, op});
      i += op.size();
    } else if (c == '!') {
      throw Error(ErrorKind::unsupported_query, "predicate: negation is not supported");
    } else {
      std::size_t j = i;
      while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j])) && text[j] != '<' &&
             text[j] != '>' && text[j] != '=' && text[j] != '\'' && text[j] != '(' && text[j] != ')' &&
             text[j] != '!')
        ++j;
      out.push_back({Token::Kind::word, text.substr(i, j - i)});
      i = j;
    }
  }
  return out;
}

bool is_keyword(const Token& t, const char* kw) { return t.kind == Token::Kind::word && upper(t.text) == kw; }

double parse_number(const std::string& s, const std::string& attr) {
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != s.size() || !std::isfinite(v))
    throw Error(ErrorKind::invalid_argument, "predicate: non-numeric value '" + s + "' for " + attr);
  return v;
}

}  // namespace

std::vector<Predicate> parse_predicates(const std::string& text) {
  const std::vector<Token> toks = tokenize(text);
  for (const auto& t : toks) {
    if (is_keyword(t, "OR")) throw Error(ErrorKind::unsupported_query, "predicate: disjunction is not supported");
    if (is_keyword(t, "NOT")) throw Error(ErrorKind::unsupported_query, "predicate: negation is not supported");
  }
  std::vector<Predicate> out;
  std::size_t i = 0;
  const auto need = [&](const char* what) -> const Token& {
    if (i >= toks.size()) throw Error(ErrorKind::invalid_argument, std::string("predicate: expected ") + what);
    return toks[i++];
  };
  const auto value = [&]() -> std::string {
    const Token& t = need("value");
    if (t.kind == Token::Kind::op) throw Error(ErrorKind::invalid_argument, "predicate: expected value, got " + t.text);
    return t.text;
  };
  while (i < toks.size()) {
    const Token& attr = need("attribute");
    if (attr.kind != Token::Kind::word) throw Error(ErrorKind::invalid_argument, "predicate: expected attribute");
    Predicate p;
    p.attr = attr.text;
    const Token& op = need("operator");
    if (is_keyword(op, "BETWEEN")) {
      p.op = Predicate::Op::between;
      p.value = value();
      if (!is_keyword(need("AND"), "AND")) throw Error(ErrorKind::invalid_argument, "predicate: BETWEEN needs AND");
      p.value2 = value();
    } else if (op.kind == Token::Kind::op) {
      if (op.text == "=") p.op = Predicate::Op::eq;
      else if (op.text == "<") p.op = Predicate::Op::lt;
      else if (op.text == "<=") p.op = Predicate::Op::le;
      else if (op.text == ">") p.op = Predicate::Op::gt;
      else p.op = Predicate::Op::ge;
      p.value = value();
    } else {
      throw Error(ErrorKind::unsupported_query, "predicate: unsupported operator " + op.text);
    }
    out.push_back(std::move(p));
    if (i < toks.size() && !is_keyword(need("AND"), "AND"))
      throw Error(ErrorKind::invalid_argument, "predicate: expected AND between predicates");
    if (i == toks.size() && !toks.empty() && is_keyword(toks.back(), "AND"))
      throw Error(ErrorKind::invalid_argument, "predicate: dangling AND");
  }
  return out;
}

QueryEncoding encode_query(const std::vector<Predicate>& predicates, const Schema& schema) {
  QueryEncoding q(schema.size(), 0);
  std::vector<bool> used(schema.size(), false);
  for (const auto& p : predicates) {
    const std::size_t a = schema.index_of(p.attr);
    if (used[a]) throw Error(ErrorKind::unsupported_query, "encode: more than one predicate on " + p.attr);
    used[a] = true;
    const Attribute& attr = schema.at(a);
    if (attr.kind == Attribute::Kind::categorical) {
      if (p.op != Predicate::Op::eq)
        throw Error(ErrorKind::unsupported_query, "encode: only equality on categorical " + p.attr);
      auto it = std::find(attr.vocab.begin(), attr.vocab.end(), p.value);
      if (it == attr.vocab.end())
        throw Error(ErrorKind::unsupported_query, "encode: '" + p.value + "' not in vocabulary of " + p.attr);
      q[a] = 1 + static_cast<std::uint32_t>(it - attr.vocab.begin());
    } else {
      double v = parse_number(p.value, p.attr);
      if (p.op == Predicate::Op::between) {
        const double hi = parse_number(p.value2, p.attr);
        if (hi < v) throw Error(ErrorKind::invalid_argument, "encode: empty range on " + p.attr);
        v = v + (hi - v) / 2;
      }
      q[a] = schema.bucket(a, v);
    }
  }
  return q;
}

void GatingNet::validate(const Schema& schema) const {
  const auto fail = [](const std::string& m) { throw Error(ErrorKind::shape_mismatch, "gating net: " + m); };
  if (embed_dim == 0 || hidden == 0 || experts == 0) fail("dimensions must be >= 1");
  if (k_max == 0) fail("k_max must be >= 1");
  if (embeddings.size() != schema.size()) fail("one embedding table per attribute required");
  for (std::size_t a = 0; a < schema.size(); ++a) {
    const Matrix& e = embeddings[a];
    if (e.rows != schema.at(a).token_count() || e.cols != embed_dim || e.data.size() != e.rows * e.cols)
      fail("embedding table for " + schema.at(a).name + " has the wrong shape");
  }
  if (w1.rows != hidden || w1.cols != embed_dim * schema.size() || w1.data.size() != w1.rows * w1.cols)
    fail("w1 must be hidden x (embed_dim * attributes)");
  if (b1.size() != hidden) fail("b1 must have length hidden");
  if (w2.rows != experts || w2.cols != hidden || w2.data.size() != w2.rows * w2.cols)
    fail("w2 must be experts x hidden");
  if (b2.size() != experts) fail("b2 must have length experts");
}

GatingNet GatingNet::zeros(const Schema& schema, std::size_t embed_dim, std::size_t hidden, std::size_t experts,
                           std::size_t k_max, double tau) {
  GatingNet n;
  n.embed_dim = embed_dim;
  n.hidden = hidden;
  n.experts = experts;
  n.k_max = k_max;
  n.tau = tau;
  for (const auto& a : schema.attributes()) n.embeddings.emplace_back(a.token_count(), embed_dim);
  n.w1 = Matrix(hidden, embed_dim * schema.size());
  n.b1.assign(hidden, 0.0);
  n.w2 = Matrix(experts, hidden);
  n.b2.assign(experts, 0.0);
  return n;
}

GatingNet GatingNet::random(const Schema& schema, std::size_t embed_dim, std::size_t hidden, std::size_t experts,
                            std::size_t k_max, double tau, Rng& rng, double scale) {
  GatingNet n = zeros(schema, embed_dim, hidden, experts, k_max, tau);
  const auto fill = [&](std::vector<double>& v) {
    for (auto& x : v) x = rng.uniform(-scale, scale);
  };
  for (auto& e : n.embeddings) fill(e.data);
  fill(n.w1.data);
  fill(n.b1);
  fill(n.w2.data);
  fill(n.b2);
  return n;
}

GateWeights sparse_softmax(std::span<const double> logits, std::size_t k_max, double tau) {
  if (logits.empty()) throw Error(ErrorKind::invalid_argument, "sparse_softmax: K must be >= 1");
  if (k_max == 0) throw Error(ErrorKind::invalid_argument, "sparse_softmax: k_max must be >= 1");
  const std::size_t k = logits.size();
  const double mx = *std::max_element(logits.begin(), logits.end());
  GateWeights w(k);
  double z = 0;
  for (std::size_t i = 0; i < k; ++i) z += w[i] = std::exp(logits[i] - mx);
  for (auto& x : w) x /= z;

  std::vector<std::size_t> order(k);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return w[a] > w[b]; });
  for (std::size_t r = 0; r < k; ++r) {
    const std::size_t i = order[r];
    if (r >= k_max || w[i] < tau) w[i] = 0;
  }
  double sum = 0;
  for (double x : w) sum += x;
  if (sum > 0) {
    for (auto& x : w) x /= sum;
    return w;
  }
  const std::size_t top = static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) - logits.begin());
  std::fill(w.begin(), w.end(), 0.0);
  w[top] = 1.0;
  return w;
}

std::vector<double> gate_logits(const QueryEncoding& q, const GatingNet& net) {
  if (q.size() != net.embeddings.size())
    throw Error(ErrorKind::shape_mismatch, "gate: encoding length does not match the net");
  std::vector<double> x;
  x.reserve(net.embed_dim * q.size());
  for (std::size_t a = 0; a < q.size(); ++a) {
    const Matrix& e = net.embeddings[a];
    if (q[a] >= e.rows) throw Error(ErrorKind::shape_mismatch, "gate: token id outside embedding table");
    if (e.cols != net.embed_dim) throw Error(ErrorKind::shape_mismatch, "gate: embedding width mismatch");
    for (std::size_t c = 0; c < e.cols; ++c) x.push_back(e(q[a], c));
  }
  if (net.w1.cols != x.size() || net.w1.rows != net.b1.size() || net.w2.cols != net.w1.rows ||
      net.w2.rows != net.b2.size())
    throw Error(ErrorKind::shape_mismatch, "gate: dense layer shapes disagree");
  std::vector<double> h(net.w1.rows);
  for (std::size_t r = 0; r < net.w1.rows; ++r) {
    double s = net.b1[r];
    for (std::size_t c = 0; c < x.size(); ++c) s += net.w1(r, c) * x[c];
    h[r] = std::max(s, 0.0);
  }
  std::vector<double> logits(net.w2.rows);
  for (std::size_t r = 0; r < net.w2.rows; ++r) {
    double s = net.b2[r];
    for (std::size_t c = 0; c < h.size(); ++c) s += net.w2(r, c) * h[c];
    logits[r] = s;
  }
  return logits;
}

GateWeights gate(const QueryEncoding& q, const GatingNet& net) {
  const std::vector<double> logits = gate_logits(q, net);
  return sparse_softmax(logits, net.k_max, net.tau);
}

double LinearExpert::evaluate(std::span<const double> x) const {
  if (x.size() != w_.size()) throw Error(ErrorKind::shape_mismatch, "expert: feature length mismatch");
  double s = b_;
  for (std::size_t i = 0; i < x.size(); ++i) s += w_[i] * x[i];
  return s;
}

ExpertSet::ExpertSet(std::vector<std::unique_ptr<Expert>> experts)
    : experts_(std::move(experts)), counters_(new std::atomic<std::uint64_t>[experts_.size()]) {
  for (std::size_t i = 0; i < experts_.size(); ++i) {
    if (!experts_[i]) throw Error(ErrorKind::invalid_argument, "expert set: null expert");
    counters_[i].store(0);
  }
}

ExpertSet ExpertSet::random_linear(std::size_t k, std::size_t features, Rng& rng) {
  std::vector<std::unique_ptr<Expert>> xs;
  for (std::size_t i = 0; i < k; ++i) {
    std::vector<double> w(features);
    for (auto& v : w) v = rng.uniform(-1.0, 1.0);
    xs.push_back(std::make_unique<LinearExpert>(std::move(w), rng.uniform(-1.0, 1.0)));
  }
  return ExpertSet(std::move(xs));
}

double ExpertSet::evaluate(std::size_t i, std::span<const double> x) const {
  const double y = experts_.at(i)->evaluate(x);
  counters_[i].fetch_add(1, std::memory_order_relaxed);
  return y;
}

std::vector<std::uint64_t> ExpertSet::counts() const {
  std::vector<std::uint64_t> out(experts_.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = count(i);
  return out;
}

double sliced_predict(const GateWeights& weights, const ExpertSet& experts, std::span<const double> x) {
  if (weights.size() != experts.size())
    throw Error(ErrorKind::shape_mismatch, "sliced_predict: weight count differs from expert count");
  double y = 0;
  for (std::size_t i = 0; i < weights.size(); ++i)
    if (weights[i] > 0) y += weights[i] * experts.evaluate(i, x);
  return y;
}

double dense_predict(const GateWeights& weights, const ExpertSet& experts, std::span<const double> x) {
  if (weights.size() != experts.size())
    throw Error(ErrorKind::shape_mismatch, "dense_predict: weight count differs from expert count");
  double y = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) y += weights[i] * experts.evaluate(i, x);
  return y;
}

namespace {

using nlohmann::json;

[[noreturn]] void bad(const std::string& m) { throw Error(ErrorKind::config, m); }

json parse_doc(const std::string& text, const char* what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    bad(std::string(what) + ": " + e.what());
  }
}

Matrix matrix_from(const json& j, const std::string& name) {
  if (!j.is_object() || !j.contains("rows") || !j.contains("cols") || !j.contains("data"))
    bad("net: " + name + " must be {rows, cols, data}");
  try {
    Matrix m;
    m.rows = j.at("rows").get<std::size_t>();
    m.cols = j.at("cols").get<std::size_t>();
    m.data = j.at("data").get<std::vector<double>>();
    if (m.data.size() != m.rows * m.cols)
      throw Error(ErrorKind::shape_mismatch, "net: " + name + " data length differs from rows*cols");
    return m;
  } catch (const json::exception& e) {
    bad("net: " + name + ": " + e.what());
  }
}

json matrix_to(const Matrix& m) { return json{{"rows", m.rows}, {"cols", m.cols}, {"data", m.data}}; }

}  // namespace

Schema schema_from_json(const std::string& text) {
  const json doc = parse_doc(text, "schema");
  if (!doc.is_object() || !doc.contains("attributes") || !doc["attributes"].is_array())
    bad("schema: expected {\"attributes\": [...]}");
  std::vector<Attribute> attrs;
  try {
    for (const auto& a : doc["attributes"]) {
      Attribute attr;
      attr.name = a.at("name").get<std::string>();
      const std::string kind = a.at("kind").get<std::string>();
      if (kind == "categorical") {
        attr.kind = Attribute::Kind::categorical;
        attr.vocab = a.at("vocab").get<std::vector<std::string>>();
      } else if (kind == "numeric") {
        attr.kind = Attribute::Kind::numeric;
        attr.edges = a.at("edges").get<std::vector<double>>();
      } else {
        bad("schema: unknown attribute kind '" + kind + "'");
      }
      attrs.push_back(std::move(attr));
    }
  } catch (const json::exception& e) {
    bad(std::string("schema: ") + e.what());
  }
  try {
    return Schema(std::move(attrs));
  } catch (const Error& e) {
    bad(e.what());
  }
}

GatingNet net_from_json(const std::string& text) {
  const json doc = parse_doc(text, "net");
  if (!doc.is_object()) bad("net: expected an object");
  GatingNet n;
  try {
    n.embed_dim = doc.at("embed_dim").get<std::size_t>();
    n.hidden = doc.at("hidden").get<std::size_t>();
    n.experts = doc.at("experts").get<std::size_t>();
    n.k_max = doc.at("k_max").get<std::size_t>();
    n.tau = doc.at("tau").get<double>();
    if (!doc.at("embeddings").is_array()) bad("net: embeddings must be an array");
    for (std::size_t i = 0; i < doc["embeddings"].size(); ++i)
      n.embeddings.push_back(matrix_from(doc["embeddings"][i], "embeddings[" + std::to_string(i) + "]"));
    n.w1 = matrix_from(doc.at("w1"), "w1");
    n.b1 = doc.at("b1").get<std::vector<double>>();
    n.w2 = matrix_from(doc.at("w2"), "w2");
    n.b2 = doc.at("b2").get<std::vector<double>>();
  } catch (const json::exception& e) {
    bad(std::string("net: ") + e.what());
  }
  return n;
}

std::string net_to_json(const GatingNet& net) {
  json doc;
  doc["embed_dim"] = net.embed_dim;
  doc["hidden"] = net.hidden;
  doc["experts"] = net.experts;
  doc["k_max"] = net.k_max;
  doc["tau"] = net.tau;
  doc["embeddings"] = json::array();
  for (const auto& e : net.embeddings) doc["embeddings"].push_back(matrix_to(e));
  doc["w1"] = matrix_to(net.w1);
  doc["b1"] = net.b1;
  doc["w2"] = matrix_to(net.w2);
  doc["b2"] = net.b2;
  return doc.dump(1);
}

}  // namespace frp::gate
