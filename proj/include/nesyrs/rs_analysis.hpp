#pragma once

#include <map>
#include <set>
#include <stdexcept>

#include "nesyrs/knowledge.hpp"

namespace nesyrs {

/**
 * A deterministic per-object value map, one table per group (objects sharing
 * an encoder share the map).  Entries of -1 mark values that never occur in
 * the training support and are therefore unconstrained.
 */
struct AlphaMap {
  std::vector<std::vector<int>> maps;  // [group][object value] -> object value

  bool is_identity() const;

  /** Apply the map componentwise to a ground-truth assignment. */
  Assignment apply(const ConceptSchema& schema, const Assignment& g) const;
};

struct OptimalMapSet {
  std::vector<AlphaMap> maps;
  std::vector<Assignment> support;  // the support they were validated against
};

struct SearchBudgetExceeded : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/**
 * Depth-first enumeration of all per-object value maps that preserve the
 * label on every support element.  Values absent from the support are left
 * unconstrained; maps are counted per distinct constrained restriction.
 */
OptimalMapSet enumerate_optimal_maps(const ConceptSchema& schema, const KnowledgeExpr& kb,
                                     const std::vector<Assignment>& support,
                                     long node_budget = 50000000);

/** (total optima, RS count).  RS = total minus one if identity is present. */
std::pair<long, long> count_rs(const OptimalMapSet& set);

/** Per (group, object value): the set of images over all optimal maps. */
using EquivalenceSets = std::vector<std::map<int, std::set<int>>>;
EquivalenceSets equivalence_sets(const OptimalMapSet& set, const ConceptSchema& schema);

/** log |E(v)| per (group, object value). */
std::vector<std::map<int, double>> entropy_bounds(const EquivalenceSets& eq);

struct MixtureWeights {
  std::vector<double> omega;  // over OptimalMapSet::maps
};

struct MaxEntropyResult {
  MixtureWeights weights;
  double achieved_entropy = 0.0;                     // prior-weighted objective
  std::vector<double> per_support_entropy;           // H(p_omega(C|g)) per support row
};

/**
 * Maximize H(p_omega(C|G)) = sum_g p*(g) H(sum_a omega_a 1[c = a(g)]) over
 * the simplex by projected gradient ascent (step 0.1, at most 10000
 * iterations, stop when the objective improves by < 1e-9).  The objective is
 * concave, so this is a global maximum within tolerance.
 */
MaxEntropyResult max_entropy_mixture(const OptimalMapSet& set, const ConceptSchema& schema,
                                     const std::vector<double>& prior);

/** Entropy of the per-value image distribution induced by omega. */
std::vector<std::map<int, double>> per_value_entropy(const OptimalMapSet& set,
                                                     const ConceptSchema& schema,
                                                     const MixtureWeights& w);

/** Sparse p(c|g) rows over the support. */
struct ConceptTable {
  std::vector<Assignment> support;
  std::vector<std::map<Assignment, double>> rows;
  std::vector<int> missing;  // support rows with no examples (empirical tables)
};

/** Build the exact table induced by a mixture of maps. */
ConceptTable table_from_mixture(const OptimalMapSet& set, const ConceptSchema& schema,
                                const MixtureWeights& w);

struct DecompositionResult {
  MixtureWeights weights;
  double max_abs_residual = 0.0;
};

/**
 * Nonnegative least squares on the simplex (projected gradient) solving
 * sum_{a : a(g)=c} omega_a = p(c|g); the residual is the max absolute
 * mismatch over all (g, c) cells including mass outside the map images.
 */
DecompositionResult decompose_table(const ConceptTable& table, const OptimalMapSet& set,
                                    const ConceptSchema& schema);

class NesyPredictor;
struct Ensemble;

/** p_hat(c|g): mean factorized concept joint over examples with each g. */
ConceptTable empirical_concept_table(const std::vector<Factors>& per_example_probs,
                                     const std::vector<Assignment>& per_example_g,
                                     const std::vector<Assignment>& support,
                                     double max_joint = 1e4);

/** Euclidean projection onto the probability simplex (sort-based). */
void project_simplex(std::vector<double>& v);

}  // namespace nesyrs
