#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "nesyrs/knowledge.hpp"
#include "nesyrs/rng.hpp"

using namespace nesyrs;

namespace {

ConceptSchema digits_schema(int domain) {
  ConceptSchema s;
  s.vars = {{"d1", domain}, {"d2", domain}};
  s.objects = {{0}, {1}};
  s.groups = {{0, 1}};
  s.validate();
  return s;
}

ConceptSchema traffic_schema() {
  ConceptSchema s;
  s.vars = {{"grn", 2}, {"red", 2}, {"ped", 2}};
  s.objects = {{0}, {1, 2}};
  s.groups = {{0}, {1}};
  s.validate();
  return s;
}

Factors uniform_factors(const ConceptSchema& s) {
  Factors p;
  for (const auto& v : s.vars) p.emplace_back(v.domain, 1.0 / v.domain);
  return p;
}

Factors random_factors(const ConceptSchema& s, Rng& rng) {
  Factors p;
  for (const auto& v : s.vars) {
    std::vector<double> f(v.domain);
    double z = 0;
    for (auto& x : f) {
      x = rng.uniform() + 1e-3;
      z += x;
    }
    for (auto& x : f) x /= z;
    p.push_back(std::move(f));
  }
  return p;
}

}  // namespace

TEST_CASE("parser builds sum AST and round-trips") {
  auto schema = digits_schema(5);
  auto kb = parse_knowledge("y := d1 + d2;", schema);
  REQUIRE(kb.labels.size() == 1);
  CHECK(kb.labels[0].name == "y");
  CHECK_FALSE(kb.labels[0].boolean);
  CHECK(kb.labels[0].expr.kind == ExprKind::Add);

  auto printed = pretty_print(kb);
  auto kb2 = parse_knowledge(printed, schema);
  CHECK(kb.labels[0].expr.structurally_equal(kb2.labels[0].expr));
}

TEST_CASE("parser handles boolean rules") {
  auto schema = traffic_schema();
  auto kb = parse_knowledge("stop := red or ped;\ngo := grn and not red and not ped;", schema);
  REQUIRE(kb.labels.size() == 2);
  CHECK(kb.labels[0].boolean);
  CHECK(kb.labels[1].boolean);

  auto printed = pretty_print(kb);
  auto kb2 = parse_knowledge(printed, schema);
  for (size_t i = 0; i < kb.labels.size(); ++i)
    CHECK(kb.labels[i].expr.structurally_equal(kb2.labels[i].expr));
}

TEST_CASE("parser reports errors with position") {
  auto schema = digits_schema(5);
  CHECK_THROWS_AS(parse_knowledge("y := d1 +", schema), ParseError);
  CHECK_THROWS_AS(parse_knowledge("y := d9;", schema), ParseError);
  CHECK_THROWS_AS(parse_knowledge("y := d1 + d2", schema), ParseError);  // missing ';'
  try {
    parse_knowledge("y := d1 +\n  ;", schema);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line == 2);
  }
}

TEST_CASE("eval_beta on sums and rules") {
  auto schema = digits_schema(5);
  auto kb = parse_knowledge("y := d1 + d2;", schema);
  CHECK(eval_beta(kb, {2, 3}) == 5);
  CHECK(eval_beta(kb, {0, 0}) == 0);

  auto ts = traffic_schema();
  auto tkb = parse_knowledge("stop := red or ped; go := grn and not red and not ped;", ts);
  // (grn, red, ped) = (0,1,0): stop bit set, go bit clear
  CHECK(eval_beta(tkb, {0, 1, 0}) == 1);
  CHECK(eval_beta(tkb, {1, 0, 0}) == 2);
  CHECK(eval_beta(tkb, {0, 0, 0}) == 0);
}

TEST_CASE("admissible sets over digits 0..4") {
  auto schema = digits_schema(5);
  auto kb = parse_knowledge("y := d1 + d2;", schema);
  auto a0 = admissible_set(kb, 0, schema);
  REQUIRE(a0.size() == 1);
  CHECK(a0[0] == Assignment{0, 0});
  auto a1 = admissible_set(kb, 1, schema);
  REQUIRE(a1.size() == 2);
  CHECK(a1[0] == Assignment{0, 1});
  CHECK(a1[1] == Assignment{1, 0});
  auto a8 = admissible_set(kb, 8, schema);
  REQUIRE(a8.size() == 1);
  CHECK(a8[0] == Assignment{4, 4});

  // Consistency with eval_beta, exhaustively.
  for (long y = 0; y <= 8; ++y) {
    auto s = admissible_set(kb, y, schema);
    for (const auto& c : s) CHECK(eval_beta(kb, c) == y);
  }
  size_t total = 0;
  for (long y = 0; y <= 8; ++y) total += admissible_set(kb, y, schema).size();
  CHECK(total == 25);
}

TEST_CASE("label distribution: sums") {
  auto schema = digits_schema(5);
  auto kb = parse_knowledge("y := d1 + d2;", schema);
  auto plan = compile_plan(kb, schema);
  CHECK(plan.kind == ReasoningPlan::Kind::SumConv);

  auto p = uniform_factors(schema);
  auto dist = label_distribution(plan, p);
  CHECK(dist[0] == doctest::Approx(1.0 / 25).epsilon(1e-12));
  CHECK(dist[4] == doctest::Approx(5.0 / 25).epsilon(1e-12));
  double z = 0;
  for (auto& [y, prob] : dist) z += prob;
  CHECK(std::abs(z - 1.0) < 1e-9);
  CHECK(map_predict(plan, p) == 4);

  // Degenerate factors give a point mass.
  Factors q = {{0, 0, 1, 0, 0}, {0, 0, 0, 1, 0}};
  auto d2 = label_distribution(plan, q);
  CHECK(d2[5] == doctest::Approx(1.0));
  CHECK(map_predict(plan, q) == 5);
}

TEST_CASE("map tie-break picks the lowest label") {
  ConceptSchema s;
  s.vars = {{"b", 2}};
  s.objects = {{0}};
  s.groups = {{0}};
  auto kb = parse_knowledge("y := b;", s);
  auto plan = compile_plan(kb, s);
  Factors p = {{0.5, 0.5}};
  CHECK(map_predict(plan, p) == 0);
}

TEST_CASE("structured evaluation equals naive enumeration") {
  Rng rng(7);

  // Sum task.
  auto schema = digits_schema(5);
  auto kb = parse_knowledge("y := d1 + d2;", schema);
  auto plan = compile_plan(kb, schema);
  for (int it = 0; it < 50; ++it) {
    auto p = random_factors(schema, rng);
    auto a = label_distribution(plan, p);
    auto b = label_distribution_naive(kb, schema, p);
    for (auto& [y, prob] : b) CHECK(std::abs(a[y] - prob) < 1e-9);
  }

  // Boolean multi-label task with two components.
  auto ts = traffic_schema();
  auto tkb = parse_knowledge("stop := red or ped; go := grn and not red and not ped;", ts);
  auto tplan = compile_plan(tkb, ts);
  CHECK(tplan.kind == ReasoningPlan::Kind::Factored);
  CHECK(tplan.comps.size() == 3);  // grn, red, ped never share an atom
  for (int it = 0; it < 50; ++it) {
    auto p = random_factors(ts, rng);
    auto a = label_distribution(tplan, p);
    auto b = label_distribution_naive(tkb, ts, p);
    for (auto& [y, prob] : b) CHECK(std::abs(a[y] - prob) < 1e-9);
    double z = 0;
    for (auto& [y, prob] : a) z += prob;
    CHECK(std::abs(z - 1.0) < 1e-9);
  }

  // Predicate knowledge over a 3-object figure.
  ConceptSchema fig;
  fig.vars = {{"s1", 3}, {"c1", 3}, {"s2", 3}, {"c2", 3}, {"s3", 3}, {"c3", 3}};
  fig.objects = {{0, 1}, {2, 3}, {4, 5}};
  fig.groups = {{0, 1, 2}};
  fig.validate();
  auto fkb = parse_knowledge(
      "y := same(s1, s2, s3) or (pair(c1, c2, c3) and not all_diff(s1, s2, s3));", fig);
  auto fplan = compile_plan(fkb, fig);
  CHECK(fplan.comps.size() == 2);
  for (int it = 0; it < 50; ++it) {
    auto p = random_factors(fig, rng);
    auto a = label_distribution(fplan, p);
    auto b = label_distribution_naive(fkb, fig, p);
    for (auto& [y, prob] : b) CHECK(std::abs(a[y] - prob) < 1e-9);
  }
}

TEST_CASE("figure pattern distribution") {
  ConceptSchema fig;
  fig.vars = {{"s1", 3}, {"c1", 3}, {"s2", 3}, {"c2", 3}, {"s3", 3}, {"c3", 3}};
  fig.objects = {{0, 1}, {2, 3}, {4, 5}};
  fig.groups = {{0, 1, 2}};

  auto p = uniform_factors(fig);
  auto d = figure_pattern_distribution(fig, {0, 1, 2}, p);
  CHECK(d.color[0] == doctest::Approx(3.0 / 27).epsilon(1e-12));   // same
  CHECK(d.color[2] == doctest::Approx(6.0 / 27).epsilon(1e-12));   // all_diff
  CHECK(d.color[1] == doctest::Approx(18.0 / 27).epsilon(1e-12));  // pair
  CHECK(d.shape[0] + d.shape[1] + d.shape[2] == doctest::Approx(1.0));

  // All objects deterministically one color.
  Factors q = p;
  q[1] = {1, 0, 0};
  q[3] = {1, 0, 0};
  q[5] = {1, 0, 0};
  auto d2 = figure_pattern_distribution(fig, {0, 1, 2}, q);
  CHECK(d2.color[0] == doctest::Approx(1.0));
}

TEST_CASE("label_prob gradient matches finite differences") {
  Rng rng(11);
  auto ts = traffic_schema();
  auto tkb = parse_knowledge("stop := red or ped; go := grn and not red and not ped;", ts);
  auto tplan = compile_plan(tkb, ts);

  auto schema = digits_schema(5);
  auto kb = parse_knowledge("y := d1 + d2;", schema);
  auto plan = compile_plan(kb, schema);

  auto check_plan = [&](const ReasoningPlan& pl, const ConceptSchema& sc, long y) {
    auto p = random_factors(sc, rng);
    Factors grad;
    for (const auto& v : sc.vars) grad.emplace_back(v.domain, 0.0);
    label_prob_grad(pl, p, y, 1.0, grad);
    double h = 1e-6;
    for (size_t j = 0; j < p.size(); ++j)
      for (size_t v = 0; v < p[j].size(); ++v) {
        auto pp = p;
        pp[j][v] += h;
        double up = label_prob(pl, pp, y);
        pp[j][v] -= 2 * h;
        double dn = label_prob(pl, pp, y);
        double fd = (up - dn) / (2 * h);
        CHECK(std::abs(fd - grad[j][v]) < 1e-6);
      }
  };
  for (int it = 0; it < 10; ++it) {
    check_plan(plan, schema, 4);
    check_plan(tplan, ts, 1);
    check_plan(tplan, ts, 2);
  }
}

TEST_CASE("full enumeration fallback and refusal") {
  // A label mixing arithmetic and comparison forces full enumeration.
  auto schema = digits_schema(5);
  auto kb = parse_knowledge("y := d1 + d2 == 5;", schema);
  auto plan = compile_plan(kb, schema);
  CHECK(plan.kind == ReasoningPlan::Kind::Factored);
  auto p = uniform_factors(schema);
  auto dist = label_distribution(plan, p);
  CHECK(dist[1] == doctest::Approx(4.0 / 25));

  // Refusal above the enumeration budget.
  ConceptSchema big;
  for (int i = 0; i < 12; ++i) big.vars.push_back({"v" + std::to_string(i), 4});
  big.objects.resize(12);
  for (int i = 0; i < 12; ++i) big.objects[i] = {i};
  big.groups = {{0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11}};
  std::string src = "y := v0";
  for (int i = 1; i < 12; ++i) src += " + v" + std::to_string(i);
  src += " + v0;";  // repeated variable defeats the convolution plan
  auto bkb = parse_knowledge(src, big);
  CHECK_THROWS(compile_plan(bkb, big, 1e6));
}
