#pragma once

#include "nesyrs/nesy.hpp"

namespace nesyrs {

struct TrainConfig {
  PredictorKind kind = PredictorKind::DPL;
  int ensemble_size = 1;
  double gamma1 = 0.0;  // KL repulsion weight
  double gamma2 = 0.0;  // entropy penalty weight
  int epochs = 30;
  int batch = 64;
  double lr = 5e-4;
  double lr_decay = 0.95;
  uint64_t seed = 0;
  double w_sl = 1.0;
  double w_c = 0.0;  // concept supervision weight
  int mc_samples = 30;
  int slot_dim = 16;
  int hidden = 64;
  double dropout = 0.5;
};

/** Ordered ensemble with uniform mixing weights. */
struct Ensemble {
  std::vector<NesyPredictor> members;
  std::vector<double> lambda;
  std::vector<double> final_nll;  // per-member train NLL after training
};

/**
 * Normalized repulsion term to MINIMIZE, in [0,1]:
 *   (1/log t) * sum_c p(c) log[1 + (t-1) r(c)/p(c)]
 * per concept variable against the per-variable uniform mixture r of the
 * prior members, averaged over variables.  Equals 1 - KL(p || mixture)/log t;
 * 0 means disjoint supports (maximal repulsion), 1 means p equals the
 * mixture.
 */
double kl_repulsion(const Factors& p_new, const std::vector<Factors>& priors, int t);

/** 1 - H(p)/H_max with H the sum of per-variable entropies. */
double entropy_penalty(const Factors& p);

NodeId op_kl_repulsion(Tape& t, const std::vector<NodeId>& var_probs, const Factors& prior_mix,
                       int member_index);
NodeId op_entropy_penalty(Tape& t, const std::vector<NodeId>& var_probs);

/**
 * Train one member against the frozen prior members (Algorithm: the first
 * member sees the plain NLL; later members add gamma1 * repulsion +
 * gamma2 * entropy penalty, with prior outputs recomputed in eval mode).
 */
void train_bears_member(NesyPredictor& pred, const std::vector<NesyPredictor>& priors,
                        const TrainConfig& cfg, const Split& train,
                        const std::vector<Reveal>& reveals, uint64_t member_seed);

/** Sequential bears training; pass init to warm-start from a previous
 *  ensemble of the same shape. */
Ensemble train_ensemble(const TrainConfig& cfg, const ConceptSchema& schema,
                        const KnowledgeExpr& kb, const Split& train,
                        const std::vector<Reveal>& reveals = {},
                        const Ensemble* init = nullptr);

/** Independent members with distinct seeds, no repulsion. */
Ensemble train_deep_ensemble(const TrainConfig& cfg, const ConceptSchema& schema,
                             const KnowledgeExpr& kb, const Split& train,
                             const std::vector<Reveal>& reveals = {});

/** Uniform per-variable mixture of member concept distributions. */
Factors ensemble_concept_probs(const Ensemble& ens, const std::vector<double>& x);

/** Uniform average of member label distributions. */
std::map<long, double> ensemble_label_dist(const Ensemble& ens, const std::vector<double>& x);

/** Average of S train-mode forward passes. */
Factors mc_dropout_probs(const NesyPredictor& pred, const std::vector<double>& x, int samples,
                         uint64_t seed);

}  // namespace nesyrs
