#include "nesyrs/nesy.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace nesyrs {

int NesyPredictor::group_output_dim(int group) const {
  int d = 0;
  for (int dom : schema.group_layout(group)) d += dom;
  return d;
}

int NesyPredictor::label_class(long y) const {
  auto it = std::lower_bound(plan.label_values.begin(), plan.label_values.end(), y);
  if (it == plan.label_values.end() || *it != y) return -1;
  return static_cast<int>(it - plan.label_values.begin());
}

NesyPredictor make_predictor(const ConceptSchema& schema, const KnowledgeExpr& kb,
                             PredictorKind kind, int slot_dim, int hidden, double dropout,
                             uint64_t seed) {
  NesyPredictor pred;
  pred.schema = schema;
  pred.kb = kb;
  pred.plan = compile_plan(kb, schema);
  pred.kind = kind;
  pred.slot_dim = slot_dim;
  for (size_t g = 0; g < schema.groups.size(); ++g) {
    int out = pred.group_output_dim(static_cast<int>(g));
    pred.encoders.push_back(init_mlp({slot_dim, hidden, out}, dropout,
                                     derive_seed(seed, "encoder" + std::to_string(g)),
                                     "enc" + std::to_string(g)));
  }
  if (kind == PredictorKind::SL) {
    int in = 0;
    for (size_t o = 0; o < schema.objects.size(); ++o)
      in += pred.group_output_dim(schema.group_of_object(static_cast<int>(o)));
    int classes = static_cast<int>(pred.plan.label_values.size());
    pred.sl_head = init_mlp({in, 50, classes}, 0.0, derive_seed(seed, "sl_head"), "sl_head");
  }
  return pred;
}

namespace {

Factors forward_factors(const NesyPredictor& pred, const std::vector<double>& x, Mode mode,
                        Rng* rng) {
  if (x.size() != pred.schema.objects.size() * static_cast<size_t>(pred.slot_dim))
    throw std::runtime_error("concept_probs: input shape mismatch");
  Factors p(pred.schema.vars.size());
  for (size_t o = 0; o < pred.schema.objects.size(); ++o) {
    int g = pred.schema.group_of_object(static_cast<int>(o));
    std::vector<double> slot(x.begin() + o * pred.slot_dim, x.begin() + (o + 1) * pred.slot_dim);
    auto logits = mlp_forward_plain(pred.encoders[g], slot, mode, rng);
    int off = 0;
    for (int vi : pred.schema.objects[o]) {
      int dom = pred.schema.vars[vi].domain;
      double mx = logits[off];
      for (int k = 1; k < dom; ++k) mx = std::max(mx, logits[off + k]);
      double z = 0.0;
      std::vector<double> f(dom);
      for (int k = 0; k < dom; ++k) {
        f[k] = std::exp(logits[off + k] - mx);
        z += f[k];
      }
      for (auto& v : f) v /= z;
      p[vi] = std::move(f);
      off += dom;
    }
  }
  return p;
}

}  // namespace

Factors concept_probs(const NesyPredictor& pred, const std::vector<double>& x) {
  return forward_factors(pred, x, Mode::Eval, nullptr);
}

Factors concept_probs_sampled(const NesyPredictor& pred, const std::vector<double>& x, Rng& rng) {
  return forward_factors(pred, x, Mode::Train, &rng);
}

StagedPredictor stage_predictor(Tape& t, const NesyPredictor& pred) {
  StagedPredictor sp;
  for (const auto& enc : pred.encoders) sp.encoder_params.push_back(stage_params(t, enc));
  if (pred.kind == PredictorKind::SL) sp.head_params = stage_params(t, pred.sl_head);
  return sp;
}

ExampleGraph build_example_graph(Tape& t, const NesyPredictor& pred, const StagedPredictor& sp,
                                 const std::vector<double>& x, Mode mode, Rng& rng) {
  ExampleGraph g;
  g.var_probs.resize(pred.schema.vars.size());
  for (size_t o = 0; o < pred.schema.objects.size(); ++o) {
    int grp = pred.schema.group_of_object(static_cast<int>(o));
    std::vector<double> slot(x.begin() + o * pred.slot_dim, x.begin() + (o + 1) * pred.slot_dim);
    NodeId xn = t.leaf(std::move(slot));
    NodeId logits = mlp_forward(t, pred.encoders[grp], sp.encoder_params[grp], xn, mode, rng);
    g.obj_logits.push_back(logits);
    int off = 0;
    for (int vi : pred.schema.objects[o]) {
      int dom = pred.schema.vars[vi].domain;
      g.var_probs[vi] = op_softmax_slice(t, logits, off, dom);
      off += dom;
    }
  }
  return g;
}

NodeId op_label_prob(Tape& t, const ReasoningPlan& plan, const std::vector<NodeId>& var_probs,
                     long y) {
  Factors p(var_probs.size());
  for (size_t j = 0; j < var_probs.size(); ++j) p[j] = t.val(var_probs[j]);
  double prob = label_prob(plan, p, y);
  NodeId out = static_cast<NodeId>(t.size());
  std::vector<NodeId> ids = var_probs;
  const ReasoningPlan* pl = &plan;
  return t.add({prob}, [pl, ids, y, out](Tape& tt) {
    double up = tt.grad(out)[0];
    if (up == 0.0) return;
    Factors p2(ids.size()), grad(ids.size());
    for (size_t j = 0; j < ids.size(); ++j) {
      p2[j] = tt.val(ids[j]);
      grad[j].assign(p2[j].size(), 0.0);
    }
    label_prob_grad(*pl, p2, y, up, grad);
    for (size_t j = 0; j < ids.size(); ++j) {
      auto& g = tt.grad(ids[j]);
      for (size_t k = 0; k < g.size(); ++k) g[k] += grad[j][k];
    }
  });
}

NodeId dpl_nll_node(Tape& t, const NesyPredictor& pred, const ExampleGraph& g, long y,
                    int example_index) {
  if (pred.label_class(y) < 0)
    throw std::runtime_error("dpl_nll: label " + std::to_string(y) +
                             " is never admissible under the knowledge (example " +
                             std::to_string(example_index) + ")");
  NodeId p = op_label_prob(t, pred.plan, g.var_probs, y);
  return op_scale(t, op_log_clamped(t, p), -1.0);
}

namespace {

NodeId op_concat(Tape& t, const std::vector<NodeId>& ids) {
  std::vector<double> v;
  std::vector<size_t> offs;
  for (NodeId id : ids) {
    offs.push_back(v.size());
    const auto& vi = t.val(id);
    v.insert(v.end(), vi.begin(), vi.end());
  }
  NodeId out = static_cast<NodeId>(t.size());
  return t.add(std::move(v), [ids, offs, out](Tape& tt) {
    const auto& g = tt.grad(out);
    for (size_t i = 0; i < ids.size(); ++i) {
      auto& gi = tt.grad(ids[i]);
      for (size_t k = 0; k < gi.size(); ++k) gi[k] += g[offs[i] + k];
    }
  });
}

}  // namespace

NodeId sl_loss_node(Tape& t, const NesyPredictor& pred, const StagedPredictor& sp,
                    const ExampleGraph& g, long y, int example_index) {
  int cls = pred.label_class(y);
  if (cls < 0)
    throw std::runtime_error("sl_loss: label " + std::to_string(y) +
                             " is never admissible under the knowledge (example " +
                             std::to_string(example_index) + ")");
  NodeId in = op_concat(t, g.obj_logits);
  Rng dummy(0);
  NodeId logits = mlp_forward(t, pred.sl_head, sp.head_params, in, Mode::Eval, dummy);
  NodeId probs = op_softmax_slice(t, logits, 0, static_cast<int>(t.val(logits).size()));
  NodeId ce = op_scale(t, op_log_clamped(t, op_index(t, probs, cls)), -1.0);
  if (pred.w_sl == 0.0) return ce;
  NodeId sem = dpl_nll_node(t, pred, g, y, example_index);
  return op_add(t, ce, op_scale(t, sem, pred.w_sl));
}

namespace {

double batch_loss(const NesyPredictor& pred, const Split& batch, bool use_sl,
                  std::vector<std::vector<double>>* grads, uint64_t dropout_seed, Mode mode) {
  if (batch.empty()) throw std::runtime_error("batch loss: empty batch");
  Tape t;
  auto sp = stage_predictor(t, pred);
  Rng rng(dropout_seed);
  std::vector<NodeId> terms;
  for (size_t i = 0; i < batch.size(); ++i) {
    auto g = build_example_graph(t, pred, sp, batch[i].x, mode, rng);
    NodeId n = use_sl ? sl_loss_node(t, pred, sp, g, batch[i].y, static_cast<int>(i))
                      : dpl_nll_node(t, pred, g, batch[i].y, static_cast<int>(i));
    terms.push_back(n);
  }
  NodeId loss = op_scale(t, op_add_scalars(t, terms), 1.0 / static_cast<double>(batch.size()));
  double value = t.scalar(loss);
  if (grads) {
    t.backward(loss);
    grads->clear();
    for (size_t g = 0; g < pred.encoders.size(); ++g) {
      std::vector<std::vector<double>> bg;
      read_grads(t, sp.encoder_params[g], pred.encoders[g], bg);
      for (auto& b : bg) grads->push_back(std::move(b));
    }
    if (pred.kind == PredictorKind::SL) {
      std::vector<std::vector<double>> bg;
      read_grads(t, sp.head_params, pred.sl_head, bg);
      for (auto& b : bg) grads->push_back(std::move(b));
    }
  }
  return value;
}

}  // namespace

double dpl_nll(const NesyPredictor& pred, const Split& batch,
               std::vector<std::vector<double>>* grads, uint64_t dropout_seed, Mode mode) {
  return batch_loss(pred, batch, false, grads, dropout_seed, mode);
}

double sl_loss(const NesyPredictor& pred, const Split& batch,
               std::vector<std::vector<double>>* grads, uint64_t dropout_seed, Mode mode) {
  if (pred.kind != PredictorKind::SL) throw std::runtime_error("sl_loss: predictor kind is not SL");
  return batch_loss(pred, batch, true, grads, dropout_seed, mode);
}

double concept_supervision_loss(const NesyPredictor& pred, const Split& train,
                                const std::vector<Reveal>& reveals, double w_c) {
  if (reveals.empty()) return 0.0;
  double s = 0.0;
  for (const auto& r : reveals) {
    auto p = concept_probs(pred, train[r.example].x);
    double q = p[r.var][r.value];
    s -= std::log(q < kProbFloor ? kProbFloor : q);
  }
  return w_c * s / static_cast<double>(reveals.size());
}

std::map<long, double> predict_label_dist(const NesyPredictor& pred,
                                          const std::vector<double>& x) {
  return label_distribution(pred.plan, concept_probs(pred, x));
}

std::vector<Mlp*> trainable_blocks(NesyPredictor& pred) {
  std::vector<Mlp*> out;
  for (auto& e : pred.encoders) out.push_back(&e);
  if (pred.kind == PredictorKind::SL) out.push_back(&pred.sl_head);
  return out;
}

std::vector<const Mlp*> trainable_blocks(const NesyPredictor& pred) {
  std::vector<const Mlp*> out;
  for (const auto& e : pred.encoders) out.push_back(&e);
  if (pred.kind == PredictorKind::SL) out.push_back(&pred.sl_head);
  return out;
}

}  // namespace nesyrs
