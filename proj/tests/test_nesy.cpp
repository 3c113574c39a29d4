#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "nesyrs/bears.hpp"
#include "nesyrs/nesy.hpp"
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

NesyPredictor sum_predictor(int domain, PredictorKind kind, uint64_t seed) {
  ConceptSchema s = digits_schema(domain);
  KnowledgeExpr kb = parse_knowledge("y := d1 + d2;", s);
  return make_predictor(s, kb, kind, 4, 8, 0.0, seed);
}

void zero_weights(NesyPredictor& pred) {
  for (auto& enc : pred.encoders)
    for (auto& b : enc.blocks) std::fill(b.v.begin(), b.v.end(), 0.0);
}

std::vector<double> some_input(int dim, uint64_t seed) {
  Rng r(seed);
  std::vector<double> x(dim);
  for (auto& v : x) v = r.uniform(-1.0, 1.0);
  return x;
}

}  // namespace

TEST_CASE("concept_probs produces normalized per-variable factors") {
  NesyPredictor pred = sum_predictor(5, PredictorKind::DPL, 3);
  Factors p = concept_probs(pred, some_input(8, 1));
  REQUIRE(p.size() == 2);
  for (const auto& f : p) {
    double s = 0.0;
    for (double v : f) {
      CHECK(v > 0.0);
      s += v;
    }
    CHECK(s == doctest::Approx(1.0).epsilon(1e-9));
  }
  // Determinism in eval mode.
  CHECK(concept_probs(pred, some_input(8, 1)) == p);
}

TEST_CASE("zero-weight encoder yields uniform factors") {
  NesyPredictor pred = sum_predictor(5, PredictorKind::DPL, 3);
  zero_weights(pred);
  Factors p = concept_probs(pred, some_input(8, 2));
  for (const auto& f : p)
    for (double v : f) CHECK(v == doctest::Approx(0.2).epsilon(1e-12));
}

TEST_CASE("dpl_nll on uniform digits 0..4 with y=0 equals log 25") {
  NesyPredictor pred = sum_predictor(5, PredictorKind::DPL, 3);
  zero_weights(pred);
  Split batch = {{some_input(8, 4), {0, 0}, 0}};
  CHECK(dpl_nll(pred, batch) == doctest::Approx(std::log(25.0)).epsilon(1e-9));
}

TEST_CASE("dpl_nll near zero for confident consistent concepts") {
  NesyPredictor pred = sum_predictor(5, PredictorKind::DPL, 3);
  zero_weights(pred);
  // Push the final-layer bias hard toward digit 0 for every object.
  auto& bias = pred.encoders[0].blocks.back();
  bias.v[0] = 50.0;
  Split batch = {{some_input(8, 4), {0, 0}, 0}};
  CHECK(dpl_nll(pred, batch) < 1e-6);
}

TEST_CASE("dpl_nll rejects labels outside the knowledge image") {
  NesyPredictor pred = sum_predictor(5, PredictorKind::DPL, 3);
  Split batch = {{some_input(8, 4), {0, 0}, 99}};
  CHECK_THROWS(dpl_nll(pred, batch));
}

TEST_CASE("dpl_nll is nonnegative") {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    NesyPredictor pred = sum_predictor(4, PredictorKind::DPL, rng.next_u64());
    Split batch = {{some_input(8, rng.next_u64()), {1, 2}, 3}};
    CHECK(dpl_nll(pred, batch) >= 0.0);
  }
}

TEST_CASE("dpl_nll gradient matches finite differences through reasoning") {
  Rng rng(11);
  int failures = 0;
  for (int trial = 0; trial < 20; ++trial) {
    NesyPredictor pred = sum_predictor(3, PredictorKind::DPL, rng.next_u64());
    Split batch = {{some_input(8, rng.next_u64()), {0, 2}, 2},
                   {some_input(8, rng.next_u64()), {1, 1}, 2}};
    std::vector<std::vector<double>> grads;
    dpl_nll(pred, batch, &grads);
    auto& blocks = pred.encoders[0].blocks;
    for (int probe = 0; probe < 8; ++probe) {
      size_t b = rng.below(blocks.size());
      size_t i = rng.below(blocks[b].v.size());
      double h = 1e-5, orig = blocks[b].v[i];
      blocks[b].v[i] = orig + h;
      double up = dpl_nll(pred, batch);
      blocks[b].v[i] = orig - h;
      double down = dpl_nll(pred, batch);
      blocks[b].v[i] = orig;
      double fd = (up - down) / (2.0 * h);
      double g = grads[b][i];
      double rel = std::abs(g - fd) / std::max(1e-6, std::abs(g) + std::abs(fd));
      if (rel >= 1e-4) ++failures;
    }
  }
  CHECK(failures == 0);
}

TEST_CASE("sl_loss semantic term equals dpl likelihood at w_sl=1") {
  NesyPredictor pred = sum_predictor(5, PredictorKind::SL, 3);
  zero_weights(pred);
  Split batch = {{some_input(8, 4), {0, 0}, 0}};
  pred.w_sl = 0.0;
  double head_only = sl_loss(pred, batch);
  pred.w_sl = 1.0;
  double full = sl_loss(pred, batch);
  CHECK(full - head_only == doctest::Approx(std::log(25.0)).epsilon(1e-9));
}

TEST_CASE("sl_loss gradient matches finite differences") {
  Rng rng(13);
  int failures = 0;
  for (int trial = 0; trial < 10; ++trial) {
    NesyPredictor pred = sum_predictor(3, PredictorKind::SL, rng.next_u64());
    Split batch = {{some_input(8, rng.next_u64()), {0, 2}, 2}};
    std::vector<std::vector<double>> grads;
    sl_loss(pred, batch, &grads);
    // Probe the head block too (it follows the encoder blocks).
    std::vector<Mlp*> blocks = trainable_blocks(pred);
    size_t offset = 0;
    for (Mlp* m : blocks) {
      for (int probe = 0; probe < 3; ++probe) {
        size_t b = rng.below(m->blocks.size());
        size_t i = rng.below(m->blocks[b].v.size());
        double h = 1e-5, orig = m->blocks[b].v[i];
        m->blocks[b].v[i] = orig + h;
        double up = sl_loss(pred, batch);
        m->blocks[b].v[i] = orig - h;
        double down = sl_loss(pred, batch);
        m->blocks[b].v[i] = orig;
        double fd = (up - down) / (2.0 * h);
        double g = grads[offset + b][i];
        double rel = std::abs(g - fd) / std::max(1e-6, std::abs(g) + std::abs(fd));
        if (rel >= 1e-4) ++failures;
      }
      offset += m->blocks.size();
    }
  }
  CHECK(failures == 0);
}

TEST_CASE("concept supervision loss fixtures") {
  ConceptSchema s;
  s.vars = {{"a", 3}, {"b", 3}};
  s.objects = {{0}, {1}};
  s.groups = {{0, 1}};
  KnowledgeExpr kb = parse_knowledge("y := a + b;", s);
  NesyPredictor pred = make_predictor(s, kb, PredictorKind::DPL, 4, 8, 0.0, 1);
  zero_weights(pred);
  Split train = {{some_input(8, 5), {1, 2}, 3}};
  CHECK(concept_supervision_loss(pred, train, {}, 25.0) == 0.0);
  std::vector<Reveal> reveals = {{0, 0, 1}};
  CHECK(concept_supervision_loss(pred, train, reveals, 25.0) ==
        doctest::Approx(25.0 * std::log(3.0)).epsilon(1e-9));
}

TEST_CASE("predict_label_dist sums to 1 and matches naive reasoning") {
  NesyPredictor pred = sum_predictor(4, PredictorKind::DPL, 21);
  std::vector<double> x = some_input(8, 9);
  auto dist = predict_label_dist(pred, x);
  auto naive = label_distribution_naive(pred.kb, pred.schema, concept_probs(pred, x));
  double total = 0.0;
  for (const auto& [y, p] : dist) {
    total += p;
    CHECK(p == doctest::Approx(naive[y]).epsilon(1e-12));
  }
  CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("training on an identity-only task recovers concepts") {
  // Support forcing the identity map: a0=0, then a1=1, a2=2 in turn.
  TaskSpec spec;
  spec.name = "toy_identity";
  spec.schema = digits_schema(3);
  spec.knowledge = "y := d1 + d2;";
  spec.support = {{0, 0}, {0, 1}, {1, 2}, {2, 2}};
  spec.splits = {240, 0, 120, 0};
  spec.renderer.dim = 8;
  GeneratedDataset data = generate_dataset(spec, 5);
  KnowledgeExpr kb = parse_knowledge(spec.knowledge, spec.schema);

  TrainConfig cfg;
  cfg.ensemble_size = 1;
  cfg.epochs = 40;
  cfg.batch = 16;
  cfg.lr = 5e-3;
  cfg.seed = 0;
  cfg.slot_dim = 8;
  cfg.hidden = 32;
  cfg.dropout = 0.0;
  Ensemble ens = train_ensemble(cfg, spec.schema, kb, data.train);

  double correct = 0.0, total = 0.0;
  for (const auto& ex : data.test) {
    Factors p = concept_probs(ens.members[0], ex.x);
    for (size_t j = 0; j < p.size(); ++j) {
      int arg = 0;
      for (size_t v = 1; v < p[j].size(); ++v)
        if (p[j][v] > p[j][arg]) arg = static_cast<int>(v);
      correct += arg == ex.g[j] ? 1.0 : 0.0;
      total += 1.0;
    }
  }
  CHECK(correct / total >= 0.95);
}
