#pragma once

#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "nesyrs/schema.hpp"

namespace nesyrs {

enum class ExprKind {
  IntLit,
  VarRef,
  Add,
  Eq,
  Ne,
  And,
  Or,
  Not,
  Implies,
  Same,
  AllDiff,
  Pair,
};

/**
 * AST node.  Boolean values are represented as 0/1 longs; logical connectives
 * treat any nonzero operand as true, so a binary variable can be used
 * directly in a boolean position.
 */
struct Expr {
  ExprKind kind = ExprKind::IntLit;
  long value = 0;               // IntLit
  int var = -1;                 // VarRef
  std::vector<Expr> kids;       // Add/Eq/Ne/And/Or/Not/Implies operands
  std::vector<int> pred_vars;   // Same/AllDiff/Pair argument variables
  std::string var_name;         // VarRef, for printing
  std::vector<std::string> pred_names;
  int atom_id = -1;             // assigned by plan compilation

  bool structurally_equal(const Expr& other) const;
};

struct LabelDef {
  std::string name;
  Expr expr;
  bool boolean = false;
};

/**
 * A parsed knowledge base: one clause per label.  Either a single
 * integer-valued label, or one-or-more boolean labels.  The label value
 * returned by eval_beta is the integer value in the first case and a bitmask
 * (bit i = truth of label i) in the second.
 */
struct KnowledgeExpr {
  std::vector<LabelDef> labels;
  bool multi_label() const { return labels.size() > 1 || labels[0].boolean; }
};

struct ParseError : std::runtime_error {
  int line, col;
  ParseError(const std::string& msg, int line_, int col_)
      : std::runtime_error(msg + " at " + std::to_string(line_) + ":" + std::to_string(col_)),
        line(line_),
        col(col_) {}
};

KnowledgeExpr parse_knowledge(const std::string& source, const ConceptSchema& schema);
std::string pretty_print(const KnowledgeExpr& kb);

long eval_beta(const KnowledgeExpr& kb, const Assignment& c);

/** All assignments c with eval_beta(c) == y, in lexicographic order. */
std::vector<Assignment> admissible_set(const KnowledgeExpr& kb, long y,
                                       const ConceptSchema& schema,
                                       double max_enum = 1e6);

/**
 * Compiled exact-reasoning plan.  Two shapes:
 *  - SumConv: the single integer label is a sum of variables plus a constant;
 *    the label distribution is a convolution of the per-variable factors.
 *  - Factored: all labels are logical combinations of atoms (comparisons,
 *    relational predicates, boolean variable references).  Variables are
 *    split into connected components induced by atom sharing; each component
 *    is enumerated once and summarized by the truth pattern of its atoms,
 *    and labels are read off a precomputed pattern-combination table.  A
 *    knowledge base with no exploitable structure compiles to a single
 *    component whose "pattern" is the label itself (full enumeration),
 *    refused above the max_enum budget.
 */
struct ReasoningPlan {
  enum class Kind { SumConv, Factored };
  Kind kind = Kind::Factored;
  ConceptSchema schema;
  KnowledgeExpr kb;  // atom-annotated copy

  // SumConv
  std::vector<int> sum_vars;
  long sum_const = 0;

  // Factored
  struct Component {
    std::vector<int> vars;                    // schema variable indices
    std::vector<std::vector<int>> assigns;    // enumerated value tuples
    std::vector<int> pattern_of_assign;       // assign index -> pattern id
    int n_patterns = 0;
  };
  std::vector<Component> comps;
  std::vector<long> combo_label;   // label per pattern combo (mixed radix, comps[0] most significant)
  std::vector<long> label_values;  // sorted distinct labels over the full concept space
};

ReasoningPlan compile_plan(const KnowledgeExpr& kb, const ConceptSchema& schema,
                           double max_enum = 1e6);

/** Exact p(y) for every achievable y, given factorized concept marginals. */
std::map<long, double> label_distribution(const ReasoningPlan& plan, const Factors& p);

/** Reference evaluator: full-joint enumeration, for oracle testing. */
std::map<long, double> label_distribution_naive(const KnowledgeExpr& kb,
                                                const ConceptSchema& schema, const Factors& p,
                                                double max_enum = 1e6);

/** Argmax label; exact ties resolved toward the lowest label value. */
long map_predict(const ReasoningPlan& plan, const Factors& p);

/** p(y) for a single label value. */
double label_prob(const ReasoningPlan& plan, const Factors& p, long y);

/**
 * Accumulate upstream * d p(y) / d p_j(v) into grad (shaped like p).
 * Used by the training losses to differentiate through exact reasoning.
 */
void label_prob_grad(const ReasoningPlan& plan, const Factors& p, long y, double upstream,
                     Factors& grad);

/**
 * Distribution over the (same, pair, all_diff) pattern flags of one figure's
 * color and shape attributes.  Expects exactly 3 objects, each a
 * (shape, color) pair with 3-value domains; enumerates the 729 joint
 * object assignments.
 */
struct FigurePatternDist {
  double shape[3];  // same, pair, all_diff
  double color[3];
};
FigurePatternDist figure_pattern_distribution(const ConceptSchema& schema,
                                              const std::vector<int>& figure_objects,
                                              const Factors& p);

}  // namespace nesyrs
