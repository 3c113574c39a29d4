#include "nesyrs/bears.hpp"

#include <cmath>
#include <map>
#include <stdexcept>

namespace nesyrs {

namespace {

double clampp(double p) { return p < kProbFloor ? kProbFloor : p; }

Factors prior_mixture(const std::vector<Factors>& priors) {
  Factors mix = priors[0];
  for (size_t t = 1; t < priors.size(); ++t)
    for (size_t j = 0; j < mix.size(); ++j)
      for (size_t c = 0; c < mix[j].size(); ++c) mix[j][c] += priors[t][j][c];
  for (auto& f : mix)
    for (auto& v : f) v /= static_cast<double>(priors.size());
  return mix;
}

}  // namespace

double kl_repulsion(const Factors& p_new, const std::vector<Factors>& priors, int t) {
  if (t < 2) throw std::runtime_error("kl_repulsion: member index must be >= 2");
  if (priors.size() + 1 != static_cast<size_t>(t))
    throw std::runtime_error("kl_repulsion: need t-1 prior distributions");
  Factors mix = prior_mixture(priors);
  double kappa = static_cast<double>(t - 1);
  double norm = 1.0 / std::log(static_cast<double>(t));
  double acc = 0.0;
  for (size_t j = 0; j < p_new.size(); ++j) {
    double s = 0.0;
    for (size_t c = 0; c < p_new[j].size(); ++c) {
      double p = clampp(p_new[j][c]);
      s += p * std::log(1.0 + kappa * mix[j][c] / p);
    }
    acc += norm * s;
  }
  return acc / static_cast<double>(p_new.size());
}

double entropy_penalty(const Factors& p) {
  double h = 0.0, hmax = 0.0;
  for (const auto& f : p) {
    hmax += std::log(static_cast<double>(f.size()));
    for (double v : f) {
      double q = clampp(v);
      h -= q * std::log(q);
    }
  }
  return 1.0 - h / hmax;
}

NodeId op_kl_repulsion(Tape& t, const std::vector<NodeId>& var_probs, const Factors& prior_mix,
                       int member_index) {
  if (member_index < 2) throw std::runtime_error("op_kl_repulsion: member index must be >= 2");
  double kappa = static_cast<double>(member_index - 1);
  double norm = 1.0 / std::log(static_cast<double>(member_index));
  double inv_vars = 1.0 / static_cast<double>(var_probs.size());
  double acc = 0.0;
  for (size_t j = 0; j < var_probs.size(); ++j) {
    const auto& p = t.val(var_probs[j]);
    for (size_t c = 0; c < p.size(); ++c) {
      double pc = clampp(p[c]);
      acc += pc * std::log(1.0 + kappa * prior_mix[j][c] / pc);
    }
  }
  acc *= norm * inv_vars;
  NodeId out = static_cast<NodeId>(t.size());
  std::vector<NodeId> ids = var_probs;
  Factors mix = prior_mix;
  return t.add({acc}, [ids, mix, kappa, norm, inv_vars, out](Tape& tt) {
    double up = tt.grad(out)[0] * norm * inv_vars;
    if (up == 0.0) return;
    for (size_t j = 0; j < ids.size(); ++j) {
      const auto& p = tt.val(ids[j]);
      auto& g = tt.grad(ids[j]);
      for (size_t c = 0; c < p.size(); ++c) {
        double pc = clampp(p[c]);
        double kr = kappa * mix[j][c];
        // d/dp [ p log(1 + kr/p) ] = log(1 + kr/p) - kr/(p + kr)
        g[c] += up * (std::log(1.0 + kr / pc) - kr / (pc + kr));
      }
    }
  });
}

NodeId op_entropy_penalty(Tape& t, const std::vector<NodeId>& var_probs) {
  double h = 0.0, hmax = 0.0;
  for (NodeId id : var_probs) {
    const auto& p = t.val(id);
    hmax += std::log(static_cast<double>(p.size()));
    for (double v : p) {
      double q = clampp(v);
      h -= q * std::log(q);
    }
  }
  NodeId out = static_cast<NodeId>(t.size());
  std::vector<NodeId> ids = var_probs;
  return t.add({1.0 - h / hmax}, [ids, hmax, out](Tape& tt) {
    double up = tt.grad(out)[0];
    if (up == 0.0) return;
    for (NodeId id : ids) {
      const auto& p = tt.val(id);
      auto& g = tt.grad(id);
      for (size_t c = 0; c < p.size(); ++c) {
        double q = clampp(p[c]);
        g[c] += up * (std::log(q) + 1.0) / hmax;
      }
    }
  });
}

void train_bears_member(NesyPredictor& pred, const std::vector<NesyPredictor>& priors,
                        const TrainConfig& cfg, const Split& train,
                        const std::vector<Reveal>& reveals, uint64_t member_seed) {
  if (train.empty()) throw std::runtime_error("train_bears_member: empty dataset");
  int member_index = static_cast<int>(priors.size()) + 1;
  bool repulse = member_index >= 2 && (cfg.gamma1 != 0.0 || cfg.gamma2 != 0.0);

  auto models = trainable_blocks(pred);
  AdamState adam = init_adam(models, cfg.lr, cfg.lr_decay);

  uint64_t shuffle_seed = derive_seed(member_seed, "shuffle");
  uint64_t dropout_seed = derive_seed(member_seed, "dropout");

  // Group reveals by example so each revealed input is encoded once.
  std::map<int, std::vector<const Reveal*>> reveal_by_example;
  for (const auto& r : reveals) reveal_by_example[r.example].push_back(&r);

  std::vector<int> idx(train.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng shuffler(shuffle_seed + static_cast<uint64_t>(epoch));
    shuffler.shuffle(idx);
    int n_batches = (static_cast<int>(idx.size()) + cfg.batch - 1) / cfg.batch;
    for (int b = 0; b < n_batches; ++b) {
      int lo = b * cfg.batch;
      int hi = std::min<int>(lo + cfg.batch, static_cast<int>(idx.size()));
      Tape t;
      auto sp = stage_predictor(t, pred);
      Rng drop(dropout_seed ^ (static_cast<uint64_t>(epoch) * 1000003ULL + b));
      std::vector<NodeId> terms;
      for (int k = lo; k < hi; ++k) {
        const Example& ex = train[idx[k]];
        auto g = build_example_graph(t, pred, sp, ex.x, Mode::Train, drop);
        NodeId loss = pred.kind == PredictorKind::SL
                          ? sl_loss_node(t, pred, sp, g, ex.y, idx[k])
                          : dpl_nll_node(t, pred, g, ex.y, idx[k]);
        if (repulse) {
          if (cfg.gamma1 != 0.0) {
            std::vector<Factors> prior_ps;
            for (const auto& prior : priors) prior_ps.push_back(concept_probs(prior, ex.x));
            Factors mix = prior_ps[0];
            for (size_t pi = 1; pi < prior_ps.size(); ++pi)
              for (size_t j = 0; j < mix.size(); ++j)
                for (size_t c = 0; c < mix[j].size(); ++c) mix[j][c] += prior_ps[pi][j][c];
            for (auto& f : mix)
              for (auto& v : f) v /= static_cast<double>(prior_ps.size());
            NodeId rep = op_kl_repulsion(t, g.var_probs, mix, member_index);
            loss = op_add(t, loss, op_scale(t, rep, cfg.gamma1));
          }
          if (cfg.gamma2 != 0.0) {
            NodeId ent = op_entropy_penalty(t, g.var_probs);
            loss = op_add(t, loss, op_scale(t, ent, cfg.gamma2));
          }
        }
        terms.push_back(loss);
      }
      NodeId loss = op_scale(t, op_add_scalars(t, terms), 1.0 / static_cast<double>(hi - lo));
      if (!reveal_by_example.empty() && cfg.w_c != 0.0) {
        std::vector<NodeId> sup_terms;
        for (const auto& [ei, rs] : reveal_by_example) {
          auto g = build_example_graph(t, pred, sp, train[ei].x, Mode::Train, drop);
          for (const Reveal* r : rs) {
            NodeId q = op_index(t, g.var_probs[r->var], r->value);
            sup_terms.push_back(op_scale(t, op_log_clamped(t, q), -1.0));
          }
        }
        NodeId sup = op_scale(t, op_add_scalars(t, sup_terms),
                              cfg.w_c / static_cast<double>(sup_terms.size()));
        loss = op_add(t, loss, sup);
      }
      t.backward(loss);
      std::vector<std::vector<double>> grads;
      for (size_t g = 0; g < pred.encoders.size(); ++g) {
        std::vector<std::vector<double>> bg;
        read_grads(t, sp.encoder_params[g], pred.encoders[g], bg);
        for (auto& bb : bg) grads.push_back(std::move(bb));
      }
      if (pred.kind == PredictorKind::SL) {
        std::vector<std::vector<double>> bg;
        read_grads(t, sp.head_params, pred.sl_head, bg);
        for (auto& bb : bg) grads.push_back(std::move(bb));
      }
      adam_step(models, grads, adam);
    }
    adam_epoch(adam);
  }
}

namespace {

double mean_train_nll(const NesyPredictor& pred, const Split& train, int batch) {
  double acc = 0.0;
  for (size_t lo = 0; lo < train.size(); lo += batch) {
    size_t hi = std::min(train.size(), lo + batch);
    Split b(train.begin() + lo, train.begin() + hi);
    acc += dpl_nll(pred, b) * static_cast<double>(hi - lo);
  }
  return acc / static_cast<double>(train.size());
}

}  // namespace

Ensemble train_ensemble(const TrainConfig& cfg, const ConceptSchema& schema,
                        const KnowledgeExpr& kb, const Split& train,
                        const std::vector<Reveal>& reveals, const Ensemble* init) {
  if (cfg.ensemble_size < 1) throw std::runtime_error("train_ensemble: K must be >= 1");
  Ensemble ens;
  for (int k = 0; k < cfg.ensemble_size; ++k) {
    uint64_t member_seed = derive_seed(cfg.seed, "member" + std::to_string(k));
    NesyPredictor pred;
    if (init && k < static_cast<int>(init->members.size())) {
      pred = init->members[k];
    } else {
      NesyPredictor fresh = make_predictor(schema, kb, cfg.kind, cfg.slot_dim, cfg.hidden,
                                           cfg.dropout, member_seed);
      fresh.w_sl = cfg.w_sl;
      pred = std::move(fresh);
    }
    train_bears_member(pred, ens.members, cfg, train, reveals, member_seed);
    ens.members.push_back(std::move(pred));
  }
  double w = 1.0 / static_cast<double>(cfg.ensemble_size);
  ens.lambda.assign(cfg.ensemble_size, w);
  for (const auto& m : ens.members) ens.final_nll.push_back(mean_train_nll(m, train, cfg.batch));
  return ens;
}

Ensemble train_deep_ensemble(const TrainConfig& cfg, const ConceptSchema& schema,
                             const KnowledgeExpr& kb, const Split& train,
                             const std::vector<Reveal>& reveals) {
  TrainConfig de = cfg;
  de.gamma1 = 0.0;
  de.gamma2 = 0.0;
  return train_ensemble(de, schema, kb, train, reveals);
}

Factors ensemble_concept_probs(const Ensemble& ens, const std::vector<double>& x) {
  Factors mix = concept_probs(ens.members[0], x);
  for (auto& f : mix)
    for (auto& v : f) v *= ens.lambda[0];
  for (size_t k = 1; k < ens.members.size(); ++k) {
    auto p = concept_probs(ens.members[k], x);
    for (size_t j = 0; j < mix.size(); ++j)
      for (size_t c = 0; c < mix[j].size(); ++c) mix[j][c] += ens.lambda[k] * p[j][c];
  }
  return mix;
}

std::map<long, double> ensemble_label_dist(const Ensemble& ens, const std::vector<double>& x) {
  std::map<long, double> out;
  for (size_t k = 0; k < ens.members.size(); ++k) {
    auto d = predict_label_dist(ens.members[k], x);
    for (const auto& [y, p] : d) out[y] += ens.lambda[k] * p;
  }
  return out;
}

Factors mc_dropout_probs(const NesyPredictor& pred, const std::vector<double>& x, int samples,
                         uint64_t seed) {
  if (samples < 1) throw std::runtime_error("mc_dropout_probs: need at least one sample");
  Rng rng(seed);
  Factors acc = concept_probs_sampled(pred, x, rng);
  for (int s = 1; s < samples; ++s) {
    auto p = concept_probs_sampled(pred, x, rng);
    for (size_t j = 0; j < acc.size(); ++j)
      for (size_t c = 0; c < acc[j].size(); ++c) acc[j][c] += p[j][c];
  }
  for (auto& f : acc)
    for (auto& v : f) v /= static_cast<double>(samples);
  return acc;
}

}  // namespace nesyrs
