#pragma once

#include "nesyrs/bears.hpp"
#include "nesyrs/tasks.hpp"

namespace nesyrs {

enum class Strategy { Entropy, Random };

/**
 * Joint entropy of one object's variables under an ensemble: each member's
 * factorized joint is computed first, members are averaged, and the entropy
 * is taken of the mixture.  A single model is the one-member special case.
 */
double object_entropy(const std::vector<Factors>& member_probs, const std::vector<int>& obj_vars);

/**
 * Pick k pool indices.  Entropy strategy: the k largest entropies, exact ties
 * resolved toward the lowest index.  Random strategy: seed-deterministic
 * uniform sample without replacement.  Excluded (already revealed) indices
 * are never returned; k larger than the available pool is an error.
 */
std::vector<int> select_queries(Strategy strategy, const std::vector<double>& entropies,
                                int pool_size, int k, uint64_t seed,
                                const std::vector<char>& excluded);

struct CurvePoint {
  int queries = 0;  // objects acquired beyond the initial reveals
  double acc_c = 0.0;
  double acc_y = 0.0;
};

struct ActiveConfig {
  TrainConfig train;
  Strategy strategy = Strategy::Entropy;
  int budget = 50;    // total objects to acquire
  int batch_k = 10;   // objects per round
  bool cold_start = false;  // retrain from scratch each round
};

struct ActiveResult {
  std::vector<CurvePoint> curve;
  Ensemble model;
};

/**
 * Entropy-guided acquisition: train with the current reveals, score every
 * unrevealed (example, object) in the training pool, acquire batch_k objects
 * (all their variables) from the oracle, and repeat until the budget is
 * spent.  Accuracies are measured on the eval split.  Retraining warm-starts
 * from the previous round unless cold_start is set.
 */
ActiveResult active_loop(const ConceptSchema& schema, const KnowledgeExpr& kb, const Split& train,
                         const Split& eval, Oracle& oracle, const ActiveConfig& cfg,
                         const std::vector<std::pair<int, int>>& init_objects);

/** Mean argmax concept accuracy of the ensemble mixture over a split. */
double ensemble_concept_accuracy(const Ensemble& ens, const Split& split);

/** MAP-label accuracy of the ensemble mixture over a split. */
double ensemble_label_accuracy(const Ensemble& ens, const Split& split);

}  // namespace nesyrs
