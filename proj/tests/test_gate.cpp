#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "frp/error.hpp"
#include "frp/gate.hpp"

using namespace frp::gate;
using frp::Error;
using frp::ErrorKind;
using frp::Rng;

namespace {

Schema demo_schema() {
  return Schema({
      {"gender", Attribute::Kind::categorical, {"Male", "Female"}, {}},
      {"age", Attribute::Kind::numeric, {}, {18, 30, 45, 60}},
      {"region", Attribute::Kind::categorical, {"N", "S", "E", "W"}, {}},
  });
}

QueryEncoding enc(const std::string& text, const Schema& s) { return encode_query(parse_predicates(text), s); }

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorKind::config;
}

// One hidden unit that fires on gender = Male and pushes expert 0.
GatingNet male_net(const Schema& s) {
  GatingNet n = GatingNet::zeros(s, 1, 1, 2, 2, 0.05);
  n.embeddings[0](1, 0) = 1.0;
  n.w1(0, 0) = 1.0;
  n.w2(0, 0) = 10.0;
  return n;
}

}  // namespace

TEST(Encode, EmptyConjunctionIsAllPadding) {
  EXPECT_EQ(enc("", demo_schema()), (QueryEncoding{0, 0, 0}));
}

TEST(Encode, EqualityAndBuckets) {
  const Schema s = demo_schema();
  EXPECT_EQ(enc("gender = Male AND age = 24", s), (QueryEncoding{1, 2, 0}));
  EXPECT_EQ(enc("region='W' and age = 17", s), (QueryEncoding{0, 1, 4}));
  EXPECT_EQ(enc("age = 60", s), (QueryEncoding{0, 5, 0}));
  EXPECT_EQ(enc("age = 25", s), enc("age = 29", s));
}

TEST(Encode, Ranges) {
  const Schema s = demo_schema();
  EXPECT_EQ(enc("age BETWEEN 20 AND 40", s), enc("age = 30", s));
  EXPECT_EQ(enc("age < 18", s), enc("age = 18", s));
  EXPECT_EQ(enc("age >= 45", s), (QueryEncoding{0, 4, 0}));
}

TEST(Encode, UnsupportedAndMalformed) {
  const Schema s = demo_schema();
  EXPECT_EQ(kind_of([&] { enc("gender = Male OR gender = Female", s); }), ErrorKind::unsupported_query);
  EXPECT_EQ(kind_of([&] { enc("(age = 3)", s); }), ErrorKind::unsupported_query);
  EXPECT_EQ(kind_of([&] { enc("gender < Male", s); }), ErrorKind::unsupported_query);
  EXPECT_EQ(kind_of([&] { enc("gender = Other", s); }), ErrorKind::unsupported_query);
  EXPECT_EQ(kind_of([&] { enc("age = 3 AND age = 4", s); }), ErrorKind::unsupported_query);
  EXPECT_EQ(kind_of([&] { enc("age =", s); }), ErrorKind::invalid_argument);
  EXPECT_EQ(kind_of([&] { enc("height = 3", s); }), ErrorKind::invalid_argument);
}

TEST(SparseSoftmax, SingleExpert) {
  const std::vector<double> l{3.0};
  EXPECT_EQ(sparse_softmax(l, 1, 0.5), (GateWeights{1.0}));
}

TEST(SparseSoftmax, UniformLogitsKeepFirstKMax) {
  const std::vector<double> l(4, 0.0);
  const GateWeights w = sparse_softmax(l, 2, 0.0);
  EXPECT_EQ(w, (GateWeights{0.5, 0.5, 0.0, 0.0}));
}

TEST(SparseSoftmax, DominantLogitTakesEverything) {
  const std::vector<double> l{5, 0, 0, 0};
  EXPECT_EQ(sparse_softmax(l, 4, 0.2), (GateWeights{1, 0, 0, 0}));
}

TEST(SparseSoftmax, HighThresholdFallsBackToArgmax) {
  const std::vector<double> l{0.1, 0.3, 0.2};
  EXPECT_EQ(sparse_softmax(l, 3, 0.9), (GateWeights{0, 1, 0}));
}

TEST(SparseSoftmax, Errors) {
  EXPECT_THROW(sparse_softmax(std::vector<double>{}, 1, 0), Error);
  EXPECT_THROW(sparse_softmax(std::vector<double>{1.0}, 0, 0), Error);
}

TEST(SparseSoftmax, MatchesDirectComputation) {
  const std::vector<double> l{1.0, 2.0, 0.5, 1.5};
  const GateWeights w = sparse_softmax(l, 2, 0.0);
  const double a = std::exp(2.0), b = std::exp(1.5);
  EXPECT_NEAR(w[1], a / (a + b), 1e-12);
  EXPECT_NEAR(w[3], b / (a + b), 1e-12);
  EXPECT_EQ(w[0], 0.0);
  EXPECT_EQ(w[2], 0.0);
}

TEST(Gate, PureFunctionOfEncoding) {
  const Schema s = demo_schema();
  Rng rng(1);
  const GatingNet n = GatingNet::random(s, 4, 8, 6, 3, 0.05, rng);
  const QueryEncoding q = enc("gender = Female AND region = S", s);
  EXPECT_EQ(gate(q, n), gate(q, n));
  const GateWeights w = gate(q, n);
  EXPECT_NEAR(std::accumulate(w.begin(), w.end(), 0.0), 1.0, 1e-12);
  EXPECT_LE(std::count_if(w.begin(), w.end(), [](double v) { return v > 0; }), 3);
}

TEST(Gate, ZeroNetWithFullKIsUniform) {
  const Schema s = demo_schema();
  const GatingNet n = GatingNet::zeros(s, 2, 3, 4, 4, 0.0);
  EXPECT_EQ(gate(enc("age = 70", s), n), (GateWeights{0.25, 0.25, 0.25, 0.25}));
}

TEST(Gate, HandSetNetRoutesMaleToFirstExpert) {
  const Schema s = demo_schema();
  const GatingNet n = male_net(s);
  EXPECT_EQ(gate(enc("gender = Male", s), n), (GateWeights{1.0, 0.0}));
  EXPECT_EQ(gate(enc("gender = Female", s), n), (GateWeights{0.5, 0.5}));
}

TEST(Gate, ShapeMismatch) {
  const Schema s = demo_schema();
  const GatingNet n = GatingNet::zeros(s, 2, 3, 4, 2, 0.0);
  EXPECT_EQ(kind_of([&] { gate(QueryEncoding{0, 0}, n); }), ErrorKind::shape_mismatch);
  EXPECT_EQ(kind_of([&] { gate(QueryEncoding{9, 0, 0}, n); }), ErrorKind::shape_mismatch);
  GatingNet bad = n;
  bad.b2.pop_back();
  EXPECT_EQ(kind_of([&] { bad.validate(s); }), ErrorKind::shape_mismatch);
}

TEST(Sliced, OneHotEvaluatesOneExpert) {
  Rng rng(2);
  const ExpertSet ex = ExpertSet::random_linear(4, 3, rng);
  const std::vector<double> x{1, 2, 3};
  const double y = sliced_predict(GateWeights{0, 0, 1, 0}, ex, x);
  EXPECT_EQ(ex.counts(), (std::vector<std::uint64_t>{0, 0, 1, 0}));
  EXPECT_EQ(y, ex.evaluate(2, x));
}

TEST(Sliced, IdenticalExpertsGiveTheirValue) {
  std::vector<std::unique_ptr<Expert>> v;
  for (int i = 0; i < 3; ++i) v.push_back(std::make_unique<LinearExpert>(std::vector<double>{2.0, -1.0}, 0.5));
  const ExpertSet ex(std::move(v));
  const std::vector<double> x{3, 1};
  EXPECT_NEAR(sliced_predict(GateWeights{0.2, 0.3, 0.5}, ex, x), 5.5, 1e-12);
}

TEST(Sliced, MatchesDenseOnRandomPairs) {
  const Schema s = demo_schema();
  Rng rng(3);
  const GatingNet n = GatingNet::random(s, 4, 8, 8, 2, 0.05, rng);
  const ExpertSet ex = ExpertSet::random_linear(8, 4, rng);
  for (int i = 0; i < 500; ++i) {
    const QueryEncoding q{static_cast<std::uint32_t>(rng.below(3)), static_cast<std::uint32_t>(rng.below(6)),
                          static_cast<std::uint32_t>(rng.below(5))};
    std::vector<double> x(4);
    for (double& v : x) v = rng.uniform(-1, 1);
    const GateWeights w = gate(q, n);
    EXPECT_NEAR(sliced_predict(w, ex, x), dense_predict(w, ex, x), 1e-9);
  }
}

TEST(Sliced, SizeMismatch) {
  Rng rng(4);
  const ExpertSet ex = ExpertSet::random_linear(3, 2, rng);
  const std::vector<double> x{1, 1};
  EXPECT_EQ(kind_of([&] { sliced_predict(GateWeights{1, 0}, ex, x); }), ErrorKind::shape_mismatch);
  EXPECT_EQ(kind_of([&] { ex.evaluate(0, std::vector<double>{1}); }), ErrorKind::shape_mismatch);
}

TEST(Json, NetRoundTrip) {
  const Schema s = demo_schema();
  Rng rng(5);
  const GatingNet n = GatingNet::random(s, 3, 5, 4, 2, 0.1, rng);
  const GatingNet back = net_from_json(net_to_json(n));
  back.validate(s);
  EXPECT_EQ(back.w1.data, n.w1.data);
  EXPECT_EQ(back.b2, n.b2);
  EXPECT_EQ(back.k_max, n.k_max);
  const QueryEncoding q{1, 3, 2};
  EXPECT_EQ(gate(q, back), gate(q, n));
}

TEST(Json, SchemaParseAndErrors) {
  const Schema s = schema_from_json(
      R"({"attributes":[{"name":"g","kind":"categorical","vocab":["a","b"]},)"
      R"({"name":"x","kind":"numeric","edges":[1,2]}]})");
  EXPECT_EQ(s.size(), 2u);
  EXPECT_EQ(s.at(1).token_count(), 4u);
  EXPECT_EQ(kind_of([] { schema_from_json("{"); }), ErrorKind::config);
  EXPECT_EQ(kind_of([] { schema_from_json(R"({"attributes":[{"name":"x","kind":"numeric","edges":[2,1]}]})"); }),
            ErrorKind::config);
  EXPECT_EQ(kind_of([] { net_from_json(R"({"embed_dim":1})"); }), ErrorKind::config);
}
