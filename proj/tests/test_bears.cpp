#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "nesyrs/bears.hpp"
#include "nesyrs/tasks.hpp"

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

Factors random_factors(Rng& rng, const std::vector<int>& domains) {
  Factors p(domains.size());
  for (size_t j = 0; j < domains.size(); ++j) {
    p[j].resize(domains[j]);
    double s = 0.0;
    for (auto& v : p[j]) {
      v = rng.uniform() + 1e-3;
      s += v;
    }
    for (auto& v : p[j]) v /= s;
  }
  return p;
}

/** Independent oracle: 1 - KL(p || mixture-with-priors)/log t, per variable. */
double kl_oracle(const Factors& p_new, const std::vector<Factors>& priors, int t) {
  double total = 0.0;
  for (size_t j = 0; j < p_new.size(); ++j) {
    std::vector<double> r(p_new[j].size(), 0.0);
    for (const auto& prior : priors)
      for (size_t c = 0; c < r.size(); ++c)
        r[c] += prior[j][c] / static_cast<double>(priors.size());
    double kl = std::log(static_cast<double>(t));
    for (size_t c = 0; c < r.size(); ++c) {
      double p = p_new[j][c];
      if (p > 0.0) kl -= p * std::log(1.0 + (t - 1.0) * r[c] / p);
    }
    total += 1.0 - kl / std::log(static_cast<double>(t));
  }
  return total / static_cast<double>(p_new.size());
}

}  // namespace

TEST_CASE("kl_repulsion boundary fixtures") {
  Factors p = {{0.3, 0.7}, {0.5, 0.5}};
  CHECK(kl_repulsion(p, {p}, 2) == doctest::Approx(1.0).epsilon(1e-12));

  Factors point_a = {{1.0, 0.0}, {1.0, 0.0}};
  Factors point_b = {{0.0, 1.0}, {0.0, 1.0}};
  // Zero up to the documented probability floor.
  CHECK(kl_repulsion(point_a, {point_b}, 2) < 1e-9);

  CHECK_THROWS(kl_repulsion(p, {}, 1));
}

TEST_CASE("kl_repulsion t=3 against direct closed-form evaluation") {
  Rng rng(5);
  Factors a = random_factors(rng, {3, 4});
  Factors b = random_factors(rng, {3, 4});
  Factors mix(a.size());
  for (size_t j = 0; j < a.size(); ++j) {
    mix[j].resize(a[j].size());
    for (size_t c = 0; c < a[j].size(); ++c) mix[j][c] = 0.5 * (a[j][c] + b[j][c]);
  }
  CHECK(kl_repulsion(mix, {a, b}, 3) == doctest::Approx(kl_oracle(mix, {a, b}, 3)).epsilon(1e-12));
}

TEST_CASE("kl_repulsion matches the oracle and stays in [0,1] on random input") {
  Rng rng(99);
  for (int trial = 0; trial < 1000; ++trial) {
    int t = 2 + static_cast<int>(rng.below(4));
    std::vector<int> domains = {2 + static_cast<int>(rng.below(4)),
                                2 + static_cast<int>(rng.below(4))};
    Factors p = random_factors(rng, domains);
    std::vector<Factors> priors;
    for (int k = 0; k < t - 1; ++k) priors.push_back(random_factors(rng, domains));
    double v = kl_repulsion(p, priors, t);
    CHECK(v >= 0.0);
    CHECK(v <= 1.0 + 1e-12);
    CHECK(v == doctest::Approx(kl_oracle(p, priors, t)).epsilon(1e-9));
  }
}

TEST_CASE("entropy_penalty fixtures") {
  CHECK(entropy_penalty({{0.5, 0.5}}) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(entropy_penalty({{0.25, 0.25, 0.25, 0.25}, {1.0 / 3, 1.0 / 3, 1.0 / 3}}) ==
        doctest::Approx(0.0).epsilon(1e-12));
  CHECK(entropy_penalty({{1.0, 0.0}, {0.0, 1.0, 0.0}}) == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("tape repulsion and entropy ops match plain values and finite differences") {
  Rng rng(31);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<int> domains = {3, 4};
    Factors p = random_factors(rng, domains);
    Factors prior = random_factors(rng, domains);
    int t_index = 2 + static_cast<int>(rng.below(3));
    // The op takes the prior mixture directly; replicating one prior t-1
    // times gives the plain function the same mixture.
    std::vector<Factors> prior_list(t_index - 1, prior);

    Tape t;
    std::vector<NodeId> nodes;
    for (const auto& f : p) nodes.push_back(t.leaf(f));
    NodeId rep = op_kl_repulsion(t, nodes, prior, t_index);
    NodeId ent = op_entropy_penalty(t, nodes);
    // Compare the forward values against the plain implementations (the
    // plain kl takes the prior list; passing the mixture once is identical).
    CHECK(t.scalar(rep) == doctest::Approx(kl_repulsion(p, prior_list, t_index)).epsilon(1e-12));
    CHECK(t.scalar(ent) == doctest::Approx(entropy_penalty(p)).epsilon(1e-12));

    NodeId loss = op_add_scalars(t, {rep, op_scale(t, ent, 0.7)});
    t.backward(loss);
    for (size_t j = 0; j < p.size(); ++j) {
      for (size_t c = 0; c < p[j].size(); ++c) {
        double h = 1e-6;
        Factors up = p, down = p;
        up[j][c] += h;
        down[j][c] -= h;
        double fd = (kl_repulsion(up, prior_list, t_index) + 0.7 * entropy_penalty(up) -
                     kl_repulsion(down, prior_list, t_index) - 0.7 * entropy_penalty(down)) /
                    (2.0 * h);
        double g = t.grad(nodes[j])[c];
        CHECK(g == doctest::Approx(fd).epsilon(1e-4));
      }
    }
  }
}

TEST_CASE("training is bit-deterministic and the first member matches plain training") {
  TaskSpec spec;
  spec.name = "toy";
  spec.schema = digits_schema(3);
  spec.knowledge = "y := d1 + d2;";
  spec.support = {{0, 0}, {0, 1}, {1, 2}, {2, 2}};
  spec.splits = {60, 0, 0, 0};
  spec.renderer.dim = 6;
  GeneratedDataset data = generate_dataset(spec, 3);
  KnowledgeExpr kb = parse_knowledge(spec.knowledge, spec.schema);

  TrainConfig cfg;
  cfg.ensemble_size = 2;
  cfg.gamma1 = 0.8;
  cfg.epochs = 3;
  cfg.batch = 16;
  cfg.seed = 17;
  cfg.slot_dim = 6;
  cfg.hidden = 16;
  cfg.dropout = 0.0;

  Ensemble a = train_ensemble(cfg, spec.schema, kb, data.train);
  Ensemble b = train_ensemble(cfg, spec.schema, kb, data.train);
  REQUIRE(a.members.size() == 2);
  for (size_t m = 0; m < a.members.size(); ++m)
    for (size_t g = 0; g < a.members[m].encoders.size(); ++g)
      for (size_t blk = 0; blk < a.members[m].encoders[g].blocks.size(); ++blk)
        CHECK(a.members[m].encoders[g].blocks[blk].v ==
              b.members[m].encoders[g].blocks[blk].v);

  TrainConfig single = cfg;
  single.ensemble_size = 1;
  Ensemble plain = train_ensemble(single, spec.schema, kb, data.train);
  for (size_t g = 0; g < plain.members[0].encoders.size(); ++g)
    for (size_t blk = 0; blk < plain.members[0].encoders[g].blocks.size(); ++blk)
      CHECK(a.members[0].encoders[g].blocks[blk].v ==
            plain.members[0].encoders[g].blocks[blk].v);

  // Deep ensembles are definitionally bears with both gammas zero.
  TrainConfig de_cfg = cfg;
  Ensemble de = train_deep_ensemble(de_cfg, spec.schema, kb, data.train);
  de_cfg.gamma1 = 0.0;
  de_cfg.gamma2 = 0.0;
  Ensemble gz = train_ensemble(de_cfg, spec.schema, kb, data.train);
  for (size_t m = 0; m < de.members.size(); ++m)
    for (size_t g = 0; g < de.members[m].encoders.size(); ++g)
      for (size_t blk = 0; blk < de.members[m].encoders[g].blocks.size(); ++blk)
        CHECK(de.members[m].encoders[g].blocks[blk].v ==
              gz.members[m].encoders[g].blocks[blk].v);

  // Distinct member seeds actually produce distinct members.
  bool differ = false;
  for (size_t g = 0; g < de.members[0].encoders.size(); ++g)
    for (size_t blk = 0; blk < de.members[0].encoders[g].blocks.size(); ++blk)
      differ = differ || de.members[0].encoders[g].blocks[blk].v !=
                             de.members[1].encoders[g].blocks[blk].v;
  CHECK(differ);

  CHECK(a.lambda == std::vector<double>{0.5, 0.5});
  CHECK(a.final_nll.size() == 2);
}

TEST_CASE("ensemble mixtures average member outputs") {
  ConceptSchema s = digits_schema(5);
  KnowledgeExpr kb = parse_knowledge("y := d1 + d2;", s);
  // Two untrained members; the mixture must equal the hand-computed average.
  Ensemble ens;
  ens.members.push_back(make_predictor(s, kb, PredictorKind::DPL, 4, 8, 0.0, 1));
  ens.members.push_back(make_predictor(s, kb, PredictorKind::DPL, 4, 8, 0.0, 2));
  ens.lambda = {0.5, 0.5};
  std::vector<double> x(8);
  Rng rng(4);
  for (auto& v : x) v = rng.uniform(-1.0, 1.0);

  Factors m0 = concept_probs(ens.members[0], x);
  Factors m1 = concept_probs(ens.members[1], x);
  Factors mix = ensemble_concept_probs(ens, x);
  for (size_t j = 0; j < mix.size(); ++j)
    for (size_t c = 0; c < mix[j].size(); ++c)
      CHECK(mix[j][c] == doctest::Approx(0.5 * (m0[j][c] + m1[j][c])).epsilon(1e-12));

  // Label mixture equals brute-force reasoning over the explicit mixture
  // joint: p_mix(c) = sum_k lambda_k prod_j p_kj(c_j), summed by label.
  std::map<long, double> naive;
  for (int a = 0; a < 5; ++a)
    for (int b = 0; b < 5; ++b) {
      double pj = 0.5 * (m0[0][a] * m0[1][b]) + 0.5 * (m1[0][a] * m1[1][b]);
      naive[a + b] += pj;
    }
  auto dist = ensemble_label_dist(ens, x);
  for (const auto& [y, p] : naive) CHECK(dist[y] == doctest::Approx(p).epsilon(1e-9));
}

TEST_CASE("mc dropout sampling is seeded and degenerates without dropout") {
  ConceptSchema s = digits_schema(4);
  KnowledgeExpr kb = parse_knowledge("y := d1 + d2;", s);
  std::vector<double> x(8);
  Rng rng(8);
  for (auto& v : x) v = rng.uniform(-1.0, 1.0);

  NesyPredictor no_drop = make_predictor(s, kb, PredictorKind::DPL, 4, 8, 0.0, 3);
  Factors a = mc_dropout_probs(no_drop, x, 5, 11);
  Factors b = concept_probs(no_drop, x);
  for (size_t j = 0; j < a.size(); ++j)
    for (size_t c = 0; c < a[j].size(); ++c)
      CHECK(a[j][c] == doctest::Approx(b[j][c]).epsilon(1e-12));

  NesyPredictor drop = make_predictor(s, kb, PredictorKind::DPL, 4, 8, 0.5, 3);
  CHECK(mc_dropout_probs(drop, x, 30, 11) == mc_dropout_probs(drop, x, 30, 11));
  CHECK(mc_dropout_probs(drop, x, 30, 11) != mc_dropout_probs(drop, x, 30, 12));
  CHECK_THROWS(mc_dropout_probs(drop, x, 0, 1));
}
