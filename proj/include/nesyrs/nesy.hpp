#pragma once

#include "nesyrs/dataset.hpp"
#include "nesyrs/knowledge.hpp"
#include "nesyrs/nn.hpp"

namespace nesyrs {

enum class PredictorKind { DPL, SL };

/**
 * A NeSy predictor: one shared MLP concept extractor per group, exact
 * reasoning through the compiled plan.  The SL variant adds a label head on
 * the concatenated concept logits and treats the exact likelihood as a
 * semantic regularizer.
 */
struct NesyPredictor {
  ConceptSchema schema;
  KnowledgeExpr kb;
  ReasoningPlan plan;
  PredictorKind kind = PredictorKind::DPL;
  int slot_dim = 16;            // renderer embedding dim per object
  std::vector<Mlp> encoders;    // per group
  Mlp sl_head;                  // SL only
  double w_sl = 1.0;

  int group_output_dim(int group) const;
  int label_class(long y) const;  // index into plan.label_values, -1 if absent
};

NesyPredictor make_predictor(const ConceptSchema& schema, const KnowledgeExpr& kb,
                             PredictorKind kind, int slot_dim, int hidden, double dropout,
                             uint64_t seed);

/** Eval-mode factorized concept distribution at x. */
Factors concept_probs(const NesyPredictor& pred, const std::vector<double>& x);

/** One train-mode stochastic pass (dropout masks from rng). */
Factors concept_probs_sampled(const NesyPredictor& pred, const std::vector<double>& x, Rng& rng);

/**
 * Forward graph of one example on a tape: per-variable probability nodes and
 * (for SL) the concatenated concept logits.
 */
struct ExampleGraph {
  std::vector<NodeId> var_probs;    // per schema variable
  std::vector<NodeId> obj_logits;   // per object (pre-softmax)
};

struct StagedPredictor {
  std::vector<TapeParams> encoder_params;  // per group
  TapeParams head_params;                  // SL only
};
StagedPredictor stage_predictor(Tape& t, const NesyPredictor& pred);

ExampleGraph build_example_graph(Tape& t, const NesyPredictor& pred, const StagedPredictor& sp,
                                 const std::vector<double>& x, Mode mode, Rng& rng);

/** Scalar node p(y|x) through the exact reasoning layer. */
NodeId op_label_prob(Tape& t, const ReasoningPlan& plan, const std::vector<NodeId>& var_probs,
                     long y);

/** -log p(y|x;K), probability floor applied.  Throws if y is never
 *  admissible, identifying the example. */
NodeId dpl_nll_node(Tape& t, const NesyPredictor& pred, const ExampleGraph& g, long y,
                    int example_index);

/** SL loss node: head cross-entropy + w_sl * semantic term. */
NodeId sl_loss_node(Tape& t, const NesyPredictor& pred, const StagedPredictor& sp,
                    const ExampleGraph& g, long y, int example_index);

/** Batch mean of dpl_nll over (x, y); returns loss value and fills grads
 *  (block layout: encoders in group order, then SL head if present). */
double dpl_nll(const NesyPredictor& pred, const Split& batch,
               std::vector<std::vector<double>>* grads = nullptr, uint64_t dropout_seed = 0,
               Mode mode = Mode::Eval);

double sl_loss(const NesyPredictor& pred, const Split& batch,
               std::vector<std::vector<double>>* grads = nullptr, uint64_t dropout_seed = 0,
               Mode mode = Mode::Eval);

/** w_c * mean categorical cross-entropy over revealed variables. */
double concept_supervision_loss(const NesyPredictor& pred, const Split& train,
                                const std::vector<Reveal>& reveals, double w_c);

/** Label distribution at x (eval mode). */
std::map<long, double> predict_label_dist(const NesyPredictor& pred,
                                          const std::vector<double>& x);

std::vector<Mlp*> trainable_blocks(NesyPredictor& pred);
std::vector<const Mlp*> trainable_blocks(const NesyPredictor& pred);

}  // namespace nesyrs
