#include "nesyrs/knowledge.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <set>

namespace nesyrs {

// ---------------------------------------------------------------------------
// Lexer / parser
// ---------------------------------------------------------------------------

namespace {

enum class Tok { Ident, Int, Assign, Semi, Plus, EqEq, Ne, LParen, RParen, Comma, End };

struct Token {
  Tok kind;
  std::string text;
  long value = 0;
  int line = 1, col = 1;
};

class Lexer {
 public:
  explicit Lexer(const std::string& src) : src_(src) {}

  Token next() {
    skip_ws();
    Token t;
    t.line = line_;
    t.col = col_;
    if (pos_ >= src_.size()) {
      t.kind = Tok::End;
      return t;
    }
    char c = src_[pos_];
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      size_t start = pos_;
      while (pos_ < src_.size() &&
             (std::isalnum(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '_'))
        advance();
      t.kind = Tok::Ident;
      t.text = src_.substr(start, pos_ - start);
      return t;
    }
    if (std::isdigit(static_cast<unsigned char>(c))) {
      long v = 0;
      while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) {
        v = v * 10 + (src_[pos_] - '0');
        advance();
      }
      t.kind = Tok::Int;
      t.value = v;
      return t;
    }
    switch (c) {
      case ':':
        if (pos_ + 1 < src_.size() && src_[pos_ + 1] == '=') {
          advance();
          advance();
          t.kind = Tok::Assign;
          return t;
        }
        throw ParseError("expected ':='", line_, col_);
      case ';': advance(); t.kind = Tok::Semi; return t;
      case '+': advance(); t.kind = Tok::Plus; return t;
      case '(': advance(); t.kind = Tok::LParen; return t;
      case ')': advance(); t.kind = Tok::RParen; return t;
      case ',': advance(); t.kind = Tok::Comma; return t;
      case '=':
        if (pos_ + 1 < src_.size() && src_[pos_ + 1] == '=') {
          advance();
          advance();
          t.kind = Tok::EqEq;
          return t;
        }
        throw ParseError("expected '=='", line_, col_);
      case '!':
        if (pos_ + 1 < src_.size() && src_[pos_ + 1] == '=') {
          advance();
          advance();
          t.kind = Tok::Ne;
          return t;
        }
        throw ParseError("expected '!='", line_, col_);
      default:
        throw ParseError(std::string("unexpected character '") + c + "'", line_, col_);
    }
  }

 private:
  void advance() {
    if (src_[pos_] == '\n') {
      ++line_;
      col_ = 1;
    } else {
      ++col_;
    }
    ++pos_;
  }
  void skip_ws() {
    while (pos_ < src_.size()) {
      char c = src_[pos_];
      if (c == '#') {  // line comment
        while (pos_ < src_.size() && src_[pos_] != '\n') advance();
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        advance();
      } else {
        break;
      }
    }
  }
  const std::string& src_;
  size_t pos_ = 0;
  int line_ = 1, col_ = 1;
};

bool is_keyword(const std::string& s) {
  return s == "and" || s == "or" || s == "not" || s == "implies" || s == "same" ||
         s == "all_diff" || s == "pair";
}

class Parser {
 public:
  Parser(const std::string& src, const ConceptSchema& schema) : lex_(src), schema_(schema) {
    cur_ = lex_.next();
  }

  KnowledgeExpr parse_program() {
    KnowledgeExpr kb;
    while (cur_.kind != Tok::End) {
      LabelDef def;
      if (cur_.kind != Tok::Ident || is_keyword(cur_.text))
        throw ParseError("expected label name", cur_.line, cur_.col);
      def.name = cur_.text;
      next();
      expect(Tok::Assign, "':='");
      def.expr = parse_implies();
      expect(Tok::Semi, "';'");
      def.boolean = is_boolean(def.expr);
      kb.labels.push_back(std::move(def));
    }
    if (kb.labels.empty()) throw ParseError("empty knowledge", cur_.line, cur_.col);
    int n_int = 0;
    for (const auto& l : kb.labels)
      if (!l.boolean) ++n_int;
    if (n_int > 0 && kb.labels.size() > 1)
      throw ParseError("integer labels must be the only label clause", 1, 1);
    if (kb.labels.size() > 62) throw ParseError("too many boolean labels", 1, 1);
    std::set<std::string> names;
    for (const auto& l : kb.labels)
      if (!names.insert(l.name).second) throw ParseError("duplicate label '" + l.name + "'", 1, 1);
    return kb;
  }

 private:
  void next() { cur_ = lex_.next(); }
  void expect(Tok k, const char* what) {
    if (cur_.kind != k) throw ParseError(std::string("expected ") + what, cur_.line, cur_.col);
    next();
  }
  bool at_kw(const char* kw) const { return cur_.kind == Tok::Ident && cur_.text == kw; }

  static bool is_boolean(const Expr& e) {
    switch (e.kind) {
      case ExprKind::Eq:
      case ExprKind::Ne:
      case ExprKind::And:
      case ExprKind::Or:
      case ExprKind::Not:
      case ExprKind::Implies:
      case ExprKind::Same:
      case ExprKind::AllDiff:
      case ExprKind::Pair:
        return true;
      default:
        return false;
    }
  }

  Expr parse_implies() {
    Expr lhs = parse_or();
    if (at_kw("implies")) {
      next();
      Expr e;
      e.kind = ExprKind::Implies;
      e.kids.push_back(std::move(lhs));
      e.kids.push_back(parse_implies());  // right-associative
      return e;
    }
    return lhs;
  }
  Expr parse_or() {
    Expr lhs = parse_and();
    while (at_kw("or")) {
      next();
      Expr e;
      e.kind = ExprKind::Or;
      e.kids.push_back(std::move(lhs));
      e.kids.push_back(parse_and());
      lhs = std::move(e);
    }
    return lhs;
  }
  Expr parse_and() {
    Expr lhs = parse_unary();
    while (at_kw("and")) {
      next();
      Expr e;
      e.kind = ExprKind::And;
      e.kids.push_back(std::move(lhs));
      e.kids.push_back(parse_unary());
      lhs = std::move(e);
    }
    return lhs;
  }
  Expr parse_unary() {
    if (at_kw("not")) {
      next();
      Expr e;
      e.kind = ExprKind::Not;
      e.kids.push_back(parse_unary());
      return e;
    }
    return parse_cmp();
  }
  Expr parse_cmp() {
    Expr lhs = parse_arith();
    if (cur_.kind == Tok::EqEq || cur_.kind == Tok::Ne) {
      Tok op = cur_.kind;
      next();
      Expr e;
      e.kind = op == Tok::EqEq ? ExprKind::Eq : ExprKind::Ne;
      e.kids.push_back(std::move(lhs));
      e.kids.push_back(parse_arith());
      return e;
    }
    return lhs;
  }
  Expr parse_arith() {
    Expr lhs = parse_term();
    if (cur_.kind != Tok::Plus) return lhs;
    Expr e;
    e.kind = ExprKind::Add;
    e.kids.push_back(std::move(lhs));
    while (cur_.kind == Tok::Plus) {
      next();
      e.kids.push_back(parse_term());
    }
    for (const auto& k : e.kids)
      if (is_boolean(k))
        throw ParseError("'+' over a boolean operand", cur_.line, cur_.col);
    return e;
  }
  Expr parse_term() {
    if (cur_.kind == Tok::Int) {
      Expr e;
      e.kind = ExprKind::IntLit;
      e.value = cur_.value;
      next();
      return e;
    }
    if (cur_.kind == Tok::LParen) {
      next();
      Expr e = parse_implies();
      expect(Tok::RParen, "')'");
      return e;
    }
    if (cur_.kind == Tok::Ident) {
      std::string name = cur_.text;
      int line = cur_.line, col = cur_.col;
      if (name == "same" || name == "all_diff" || name == "pair") {
        next();
        expect(Tok::LParen, "'('");
        Expr e;
        e.kind = name == "same" ? ExprKind::Same
                 : name == "all_diff" ? ExprKind::AllDiff
                                      : ExprKind::Pair;
        while (true) {
          if (cur_.kind != Tok::Ident || is_keyword(cur_.text))
            throw ParseError("expected variable name", cur_.line, cur_.col);
          int vi = schema_.var_index(cur_.text);
          if (vi < 0) throw ParseError("unknown variable '" + cur_.text + "'", cur_.line, cur_.col);
          e.pred_vars.push_back(vi);
          e.pred_names.push_back(cur_.text);
          next();
          if (cur_.kind == Tok::Comma) {
            next();
            continue;
          }
          break;
        }
        expect(Tok::RParen, "')'");
        if (e.pred_vars.size() < 2)
          throw ParseError("predicate needs at least two variables", line, col);
        return e;
      }
      if (is_keyword(name)) throw ParseError("unexpected keyword '" + name + "'", line, col);
      int vi = schema_.var_index(name);
      if (vi < 0) throw ParseError("unknown variable '" + name + "'", line, col);
      Expr e;
      e.kind = ExprKind::VarRef;
      e.var = vi;
      e.var_name = name;
      next();
      return e;
    }
    throw ParseError("expected expression", cur_.line, cur_.col);
  }

  Lexer lex_;
  const ConceptSchema& schema_;
  Token cur_;
};

}  // namespace

KnowledgeExpr parse_knowledge(const std::string& source, const ConceptSchema& schema) {
  Parser p(source, schema);
  return p.parse_program();
}

bool Expr::structurally_equal(const Expr& o) const {
  if (kind != o.kind || value != o.value || var != o.var || pred_vars != o.pred_vars ||
      kids.size() != o.kids.size())
    return false;
  for (size_t i = 0; i < kids.size(); ++i)
    if (!kids[i].structurally_equal(o.kids[i])) return false;
  return true;
}

// ---------------------------------------------------------------------------
// Printing
// ---------------------------------------------------------------------------

namespace {

bool atomic_expr(const Expr& e) {
  switch (e.kind) {
    case ExprKind::IntLit:
    case ExprKind::VarRef:
    case ExprKind::Same:
    case ExprKind::AllDiff:
    case ExprKind::Pair:
      return true;
    default:
      return false;
  }
}

std::string pp(const Expr& e);

std::string pp_operand(const Expr& e) {
  return atomic_expr(e) ? pp(e) : "(" + pp(e) + ")";
}

std::string pp(const Expr& e) {
  switch (e.kind) {
    case ExprKind::IntLit: return std::to_string(e.value);
    case ExprKind::VarRef: return e.var_name;
    case ExprKind::Add: {
      std::string s = pp_operand(e.kids[0]);
      for (size_t i = 1; i < e.kids.size(); ++i) s += " + " + pp_operand(e.kids[i]);
      return s;
    }
    case ExprKind::Eq: return pp_operand(e.kids[0]) + " == " + pp_operand(e.kids[1]);
    case ExprKind::Ne: return pp_operand(e.kids[0]) + " != " + pp_operand(e.kids[1]);
    case ExprKind::And: return pp_operand(e.kids[0]) + " and " + pp_operand(e.kids[1]);
    case ExprKind::Or: return pp_operand(e.kids[0]) + " or " + pp_operand(e.kids[1]);
    case ExprKind::Not: return "not " + pp_operand(e.kids[0]);
    case ExprKind::Implies: return pp_operand(e.kids[0]) + " implies " + pp_operand(e.kids[1]);
    case ExprKind::Same:
    case ExprKind::AllDiff:
    case ExprKind::Pair: {
      std::string s = e.kind == ExprKind::Same ? "same(" : e.kind == ExprKind::AllDiff ? "all_diff(" : "pair(";
      for (size_t i = 0; i < e.pred_names.size(); ++i) {
        if (i) s += ", ";
        s += e.pred_names[i];
      }
      return s + ")";
    }
  }
  return "";
}

}  // namespace

std::string pretty_print(const KnowledgeExpr& kb) {
  std::string out;
  for (const auto& l : kb.labels) out += l.name + " := " + pp(l.expr) + ";\n";
  return out;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

namespace {

long eval_expr(const Expr& e, const Assignment& c) {
  switch (e.kind) {
    case ExprKind::IntLit: return e.value;
    case ExprKind::VarRef: return c[e.var];
    case ExprKind::Add: {
      long s = 0;
      for (const auto& k : e.kids) s += eval_expr(k, c);
      return s;
    }
    case ExprKind::Eq: return eval_expr(e.kids[0], c) == eval_expr(e.kids[1], c);
    case ExprKind::Ne: return eval_expr(e.kids[0], c) != eval_expr(e.kids[1], c);
    case ExprKind::And: return (eval_expr(e.kids[0], c) != 0) && (eval_expr(e.kids[1], c) != 0);
    case ExprKind::Or: return (eval_expr(e.kids[0], c) != 0) || (eval_expr(e.kids[1], c) != 0);
    case ExprKind::Not: return eval_expr(e.kids[0], c) == 0;
    case ExprKind::Implies:
      return (eval_expr(e.kids[0], c) == 0) || (eval_expr(e.kids[1], c) != 0);
    case ExprKind::Same: {
      long v0 = c[e.pred_vars[0]];
      for (int vi : e.pred_vars)
        if (c[vi] != v0) return 0;
      return 1;
    }
    case ExprKind::AllDiff: {
      for (size_t i = 0; i < e.pred_vars.size(); ++i)
        for (size_t j = i + 1; j < e.pred_vars.size(); ++j)
          if (c[e.pred_vars[i]] == c[e.pred_vars[j]]) return 0;
      return 1;
    }
    case ExprKind::Pair: {  // neither same nor all_diff
      long v0 = c[e.pred_vars[0]];
      bool same = true;
      for (int vi : e.pred_vars) same = same && c[vi] == v0;
      bool diff = true;
      for (size_t i = 0; i < e.pred_vars.size() && diff; ++i)
        for (size_t j = i + 1; j < e.pred_vars.size() && diff; ++j)
          if (c[e.pred_vars[i]] == c[e.pred_vars[j]]) diff = false;
      return !same && !diff;
    }
  }
  return 0;
}

}  // namespace

long eval_beta(const KnowledgeExpr& kb, const Assignment& c) {
  if (!kb.multi_label()) return eval_expr(kb.labels[0].expr, c);
  long mask = 0;
  for (size_t i = 0; i < kb.labels.size(); ++i)
    if (eval_expr(kb.labels[i].expr, c) != 0) mask |= 1L << i;
  return mask;
}

// ---------------------------------------------------------------------------
// Enumeration helpers
// ---------------------------------------------------------------------------

namespace {

/** Calls fn on every assignment in lexicographic order (first var most
 *  significant). */
template <typename Fn>
void for_each_assignment(const ConceptSchema& schema, const std::vector<int>& vars, Fn&& fn) {
  std::vector<int> vals(vars.size(), 0);
  while (true) {
    fn(vals);
    size_t k = vars.size();
    while (k > 0) {
      --k;
      if (++vals[k] < schema.vars[vars[k]].domain) break;
      vals[k] = 0;
      if (k == 0) return;
    }
    if (vars.empty()) return;
  }
}

std::vector<int> all_vars(const ConceptSchema& schema) {
  std::vector<int> v(schema.vars.size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = static_cast<int>(i);
  return v;
}

}  // namespace

std::vector<Assignment> admissible_set(const KnowledgeExpr& kb, long y,
                                       const ConceptSchema& schema, double max_enum) {
  if (schema.joint_size() > max_enum)
    throw std::runtime_error("admissible_set: joint space too large");
  std::vector<Assignment> out;
  for_each_assignment(schema, all_vars(schema), [&](const Assignment& c) {
    if (eval_beta(kb, c) == y) out.push_back(c);
  });
  return out;
}

std::map<long, double> label_distribution_naive(const KnowledgeExpr& kb,
                                                const ConceptSchema& schema, const Factors& p,
                                                double max_enum) {
  if (schema.joint_size() > max_enum)
    throw std::runtime_error("label_distribution_naive: joint space too large");
  std::map<long, double> out;
  for_each_assignment(schema, all_vars(schema), [&](const Assignment& c) {
    double prob = 1.0;
    for (size_t j = 0; j < c.size(); ++j) prob *= p[j][c[j]];
    out[eval_beta(kb, c)] += prob;
  });
  return out;
}

// ---------------------------------------------------------------------------
// Plan compilation
// ---------------------------------------------------------------------------

namespace {

struct Atom {
  std::string key;
  std::vector<int> vars;  // sorted, unique
  Expr* node = nullptr;   // first occurrence
  bool is_const = false;
  char const_truth = 0;
};

/** Collect boolean atoms; returns false if the expression is not a logical
 *  combination of atoms. */
bool collect_atoms(Expr& e, std::vector<Atom>& atoms, std::map<std::string, int>& by_key) {
  switch (e.kind) {
    case ExprKind::And:
    case ExprKind::Or:
    case ExprKind::Not:
    case ExprKind::Implies: {
      for (auto& k : e.kids)
        if (!collect_atoms(k, atoms, by_key)) return false;
      return true;
    }
    case ExprKind::Add:
      return false;  // bare arithmetic in boolean position
    case ExprKind::IntLit:
    case ExprKind::VarRef:
    case ExprKind::Eq:
    case ExprKind::Ne:
    case ExprKind::Same:
    case ExprKind::AllDiff:
    case ExprKind::Pair: {
      Atom a;
      a.key = pp(e);
      std::set<int> vs;
      std::vector<Expr*> stack{&e};
      while (!stack.empty()) {
        Expr* n = stack.back();
        stack.pop_back();
        if (n->kind == ExprKind::VarRef) vs.insert(n->var);
        for (int v : n->pred_vars) vs.insert(v);
        for (auto& k : n->kids) stack.push_back(&k);
      }
      a.vars.assign(vs.begin(), vs.end());
      if (a.vars.empty()) {
        a.is_const = true;
        Assignment empty;
        a.const_truth = eval_expr(e, empty) != 0;
      }
      auto it = by_key.find(a.key);
      if (it == by_key.end()) {
        e.atom_id = static_cast<int>(atoms.size());
        by_key[a.key] = e.atom_id;
        a.node = &e;
        atoms.push_back(std::move(a));
      } else {
        e.atom_id = it->second;
      }
      return true;
    }
  }
  return false;
}

long eval_with_atoms(const Expr& e, const std::vector<char>& truth) {
  if (e.atom_id >= 0) return truth[e.atom_id];
  switch (e.kind) {
    case ExprKind::And: return (eval_with_atoms(e.kids[0], truth) != 0) && (eval_with_atoms(e.kids[1], truth) != 0);
    case ExprKind::Or: return (eval_with_atoms(e.kids[0], truth) != 0) || (eval_with_atoms(e.kids[1], truth) != 0);
    case ExprKind::Not: return eval_with_atoms(e.kids[0], truth) == 0;
    case ExprKind::Implies:
      return (eval_with_atoms(e.kids[0], truth) == 0) || (eval_with_atoms(e.kids[1], truth) != 0);
    default:
      throw std::runtime_error("eval_with_atoms: non-annotated node");
  }
}

int uf_find(std::vector<int>& parent, int x) {
  while (parent[x] != x) {
    parent[x] = parent[parent[x]];
    x = parent[x];
  }
  return x;
}

/** Try to read the label expression as a sum of distinct variables plus a
 *  constant. */
bool collect_sum(const Expr& e, std::vector<int>& vars, long& cnst) {
  switch (e.kind) {
    case ExprKind::IntLit:
      cnst += e.value;
      return true;
    case ExprKind::VarRef:
      if (std::count(vars.begin(), vars.end(), e.var)) return false;  // repeated var
      vars.push_back(e.var);
      return true;
    case ExprKind::Add:
      for (const auto& k : e.kids)
        if (!collect_sum(k, vars, cnst)) return false;
      return true;
    default:
      return false;
  }
}

}  // namespace

ReasoningPlan compile_plan(const KnowledgeExpr& kb, const ConceptSchema& schema,
                           double max_enum) {
  ReasoningPlan plan;
  plan.schema = schema;
  plan.kb = kb;

  // Sum-of-variables label: convolution plan.
  if (kb.labels.size() == 1 && !kb.labels[0].boolean) {
    std::vector<int> svars;
    long cnst = 0;
    if (collect_sum(kb.labels[0].expr, svars, cnst)) {
      plan.kind = ReasoningPlan::Kind::SumConv;
      plan.sum_vars = svars;
      plan.sum_const = cnst;
      long span = 0;
      for (int vi : svars) span += schema.vars[vi].domain - 1;
      for (long y = cnst; y <= cnst + span; ++y) plan.label_values.push_back(y);
      return plan;
    }
  }

  plan.kind = ReasoningPlan::Kind::Factored;

  // Atom-factorized plan for purely logical labels.
  bool all_bool = true;
  for (const auto& l : kb.labels) all_bool = all_bool && l.boolean;
  std::vector<Atom> atoms;
  bool logical = all_bool;
  if (all_bool) {
    std::map<std::string, int> by_key;
    for (auto& l : plan.kb.labels)
      if (!collect_atoms(l.expr, atoms, by_key)) {
        logical = false;
        break;
      }
  }

  std::vector<std::vector<int>> comp_atom_ids;  // per component
  if (logical) {
    // Connected components of variables under atom co-occurrence.
    int n = static_cast<int>(schema.vars.size());
    std::vector<int> parent(n);
    for (int i = 0; i < n; ++i) parent[i] = i;
    for (const auto& a : atoms)
      for (size_t i = 1; i < a.vars.size(); ++i)
        parent[uf_find(parent, a.vars[i])] = uf_find(parent, a.vars[0]);
    std::map<int, int> root_to_comp;
    std::vector<char> in_atom(n, 0);
    for (const auto& a : atoms)
      for (int v : a.vars) in_atom[v] = 1;
    for (int v = 0; v < n; ++v) {
      if (!in_atom[v]) continue;  // variable never constrains a label
      int r = uf_find(parent, v);
      auto it = root_to_comp.find(r);
      int ci;
      if (it == root_to_comp.end()) {
        ci = static_cast<int>(plan.comps.size());
        root_to_comp[r] = ci;
        plan.comps.emplace_back();
        comp_atom_ids.emplace_back();
      } else {
        ci = it->second;
      }
      plan.comps[ci].vars.push_back(v);
    }
    for (size_t ai = 0; ai < atoms.size(); ++ai) {
      if (atoms[ai].is_const) continue;
      int r = uf_find(parent, atoms[ai].vars[0]);
      comp_atom_ids[root_to_comp[r]].push_back(static_cast<int>(ai));
    }
  } else {
    // Full enumeration as a single component whose pattern is the label.
    plan.comps.emplace_back();
    plan.comps[0].vars = all_vars(schema);
    comp_atom_ids.emplace_back();
  }

  // Enumerate each component, mapping assignments to patterns.
  std::vector<std::vector<std::vector<char>>> pattern_truths(plan.comps.size());
  std::vector<std::vector<long>> full_enum_labels(plan.comps.size());
  double combos = 1;
  for (size_t ci = 0; ci < plan.comps.size(); ++ci) {
    auto& comp = plan.comps[ci];
    double size = 1;
    for (int vi : comp.vars) size *= schema.vars[vi].domain;
    if (size > max_enum)
      throw std::runtime_error("label_distribution: joint space too large for enumeration");
    std::map<std::vector<char>, int> pat_ids;
    std::map<long, int> label_ids;
    Assignment full(schema.vars.size(), 0);
    for_each_assignment(schema, comp.vars, [&](const std::vector<int>& vals) {
      comp.assigns.push_back(vals);
      int pid;
      if (logical) {
        std::vector<char> pat;
        for (size_t k = 0; k < comp.vars.size(); ++k) full[comp.vars[k]] = vals[k];
        for (int ai : comp_atom_ids[ci])
          pat.push_back(eval_expr(*atoms[ai].node, full) != 0);
        auto it = pat_ids.find(pat);
        if (it == pat_ids.end()) {
          pid = static_cast<int>(pat_ids.size());
          pat_ids[pat] = pid;
          pattern_truths[ci].push_back(pat);
        } else {
          pid = it->second;
        }
      } else {
        for (size_t k = 0; k < comp.vars.size(); ++k) full[comp.vars[k]] = vals[k];
        long y = eval_beta(kb, full);
        auto it = label_ids.find(y);
        if (it == label_ids.end()) {
          pid = static_cast<int>(label_ids.size());
          label_ids[y] = pid;
          full_enum_labels[ci].push_back(y);
        } else {
          pid = it->second;
        }
      }
      comp.pattern_of_assign.push_back(pid);
    });
    comp.n_patterns = logical ? static_cast<int>(pattern_truths[ci].size())
                              : static_cast<int>(full_enum_labels[ci].size());
    combos *= comp.n_patterns;
  }
  if (combos > max_enum)
    throw std::runtime_error("label_distribution: pattern combination space too large");

  // Label per pattern combination.
  long n_combos = 1;
  for (const auto& c : plan.comps) n_combos *= c.n_patterns;
  plan.combo_label.resize(n_combos);
  std::set<long> labels_seen;
  if (logical) {
    std::vector<char> truth(atoms.size(), 0);
    for (size_t ai = 0; ai < atoms.size(); ++ai)
      if (atoms[ai].is_const) truth[ai] = atoms[ai].const_truth;
    for (long combo = 0; combo < n_combos; ++combo) {
      long rest = combo;
      for (size_t ci = plan.comps.size(); ci-- > 0;) {
        int pid = static_cast<int>(rest % plan.comps[ci].n_patterns);
        rest /= plan.comps[ci].n_patterns;
        const auto& pat = pattern_truths[ci][pid];
        for (size_t k = 0; k < comp_atom_ids[ci].size(); ++k)
          truth[comp_atom_ids[ci][k]] = pat[k];
      }
      long mask = 0;
      if (!plan.kb.multi_label()) {
        mask = eval_with_atoms(plan.kb.labels[0].expr, truth);
      } else {
        for (size_t i = 0; i < plan.kb.labels.size(); ++i)
          if (eval_with_atoms(plan.kb.labels[i].expr, truth) != 0) mask |= 1L << i;
      }
      plan.combo_label[combo] = mask;
      labels_seen.insert(mask);
    }
  } else {
    for (long combo = 0; combo < n_combos; ++combo) {
      plan.combo_label[combo] = full_enum_labels[0][combo];
      labels_seen.insert(plan.combo_label[combo]);
    }
  }
  plan.label_values.assign(labels_seen.begin(), labels_seen.end());
  return plan;
}

// ---------------------------------------------------------------------------
// Plan evaluation
// ---------------------------------------------------------------------------

namespace {

std::vector<double> sum_convolve(const ReasoningPlan& plan, const Factors& p) {
  std::vector<double> cur{1.0};
  for (int vi : plan.sum_vars) {
    const auto& f = p[vi];
    std::vector<double> next(cur.size() + f.size() - 1, 0.0);
    for (size_t s = 0; s < cur.size(); ++s)
      for (size_t v = 0; v < f.size(); ++v) next[s + v] += cur[s] * f[v];
    cur = std::move(next);
  }
  return cur;  // index = sum of variable values
}

/** Per-component pattern probabilities. */
std::vector<std::vector<double>> component_pattern_probs(const ReasoningPlan& plan,
                                                         const Factors& p) {
  std::vector<std::vector<double>> P(plan.comps.size());
  for (size_t ci = 0; ci < plan.comps.size(); ++ci) {
    const auto& comp = plan.comps[ci];
    P[ci].assign(comp.n_patterns, 0.0);
    for (size_t a = 0; a < comp.assigns.size(); ++a) {
      double prob = 1.0;
      for (size_t k = 0; k < comp.vars.size(); ++k) prob *= p[comp.vars[k]][comp.assigns[a][k]];
      P[ci][comp.pattern_of_assign[a]] += prob;
    }
  }
  return P;
}

template <typename Fn>
void for_each_combo(const ReasoningPlan& plan, const std::vector<std::vector<double>>& P,
                    Fn&& fn) {
  long n_combos = static_cast<long>(plan.combo_label.size());
  std::vector<int> pid(plan.comps.size(), 0);
  for (long combo = 0; combo < n_combos; ++combo) {
    long rest = combo;
    for (size_t ci = plan.comps.size(); ci-- > 0;) {
      pid[ci] = static_cast<int>(rest % plan.comps[ci].n_patterns);
      rest /= plan.comps[ci].n_patterns;
    }
    fn(combo, pid);
  }
}

}  // namespace

std::map<long, double> label_distribution(const ReasoningPlan& plan, const Factors& p) {
  std::map<long, double> out;
  if (plan.kind == ReasoningPlan::Kind::SumConv) {
    auto conv = sum_convolve(plan, p);
    for (size_t s = 0; s < conv.size(); ++s) out[plan.sum_const + static_cast<long>(s)] = conv[s];
    return out;
  }
  auto P = component_pattern_probs(plan, p);
  for_each_combo(plan, P, [&](long combo, const std::vector<int>& pid) {
    double prob = 1.0;
    for (size_t ci = 0; ci < plan.comps.size(); ++ci) prob *= P[ci][pid[ci]];
    out[plan.combo_label[combo]] += prob;
  });
  return out;
}

long map_predict(const ReasoningPlan& plan, const Factors& p) {
  auto dist = label_distribution(plan, p);
  long best = dist.begin()->first;
  double best_p = dist.begin()->second;
  for (const auto& [y, prob] : dist)
    if (prob > best_p) {
      best = y;
      best_p = prob;
    }
  return best;
}

double label_prob(const ReasoningPlan& plan, const Factors& p, long y) {
  if (plan.kind == ReasoningPlan::Kind::SumConv) {
    auto conv = sum_convolve(plan, p);
    long idx = y - plan.sum_const;
    if (idx < 0 || idx >= static_cast<long>(conv.size())) return 0.0;
    return conv[idx];
  }
  auto P = component_pattern_probs(plan, p);
  double out = 0.0;
  for_each_combo(plan, P, [&](long combo, const std::vector<int>& pid) {
    if (plan.combo_label[combo] != y) return;
    double prob = 1.0;
    for (size_t ci = 0; ci < plan.comps.size(); ++ci) prob *= P[ci][pid[ci]];
    out += prob;
  });
  return out;
}

void label_prob_grad(const ReasoningPlan& plan, const Factors& p, long y, double upstream,
                     Factors& grad) {
  if (plan.kind == ReasoningPlan::Kind::SumConv) {
    // d p(y) / d p_j(v) = convolution of the other factors at y - const - v.
    size_t n = plan.sum_vars.size();
    std::vector<std::vector<double>> pre(n + 1), suf(n + 1);
    pre[0] = {1.0};
    for (size_t j = 0; j < n; ++j) {
      const auto& f = p[plan.sum_vars[j]];
      pre[j + 1].assign(pre[j].size() + f.size() - 1, 0.0);
      for (size_t s = 0; s < pre[j].size(); ++s)
        for (size_t v = 0; v < f.size(); ++v) pre[j + 1][s + v] += pre[j][s] * f[v];
    }
    suf[n] = {1.0};
    for (size_t j = n; j-- > 0;) {
      const auto& f = p[plan.sum_vars[j]];
      suf[j].assign(suf[j + 1].size() + f.size() - 1, 0.0);
      for (size_t s = 0; s < suf[j + 1].size(); ++s)
        for (size_t v = 0; v < f.size(); ++v) suf[j][s + v] += suf[j + 1][s] * f[v];
    }
    for (size_t j = 0; j < n; ++j) {
      int vi = plan.sum_vars[j];
      for (size_t v = 0; v < p[vi].size(); ++v) {
        long t = y - plan.sum_const - static_cast<long>(v);
        if (t < 0) continue;
        double others = 0.0;
        for (size_t a = 0; a < pre[j].size(); ++a) {
          long b = t - static_cast<long>(a);
          if (b >= 0 && b < static_cast<long>(suf[j + 1].size())) others += pre[j][a] * suf[j + 1][b];
        }
        grad[vi][v] += upstream * others;
      }
    }
    return;
  }

  auto P = component_pattern_probs(plan, p);
  size_t nc = plan.comps.size();
  // dT/dP_c[pat]: leave-one-out products across components per combo.
  std::vector<std::vector<double>> D(nc);
  for (size_t ci = 0; ci < nc; ++ci) D[ci].assign(plan.comps[ci].n_patterns, 0.0);
  std::vector<double> pref(nc + 1), suff(nc + 1);
  for_each_combo(plan, P, [&](long combo, const std::vector<int>& pid) {
    if (plan.combo_label[combo] != y) return;
    pref[0] = 1.0;
    for (size_t ci = 0; ci < nc; ++ci) pref[ci + 1] = pref[ci] * P[ci][pid[ci]];
    suff[nc] = 1.0;
    for (size_t ci = nc; ci-- > 0;) suff[ci] = suff[ci + 1] * P[ci][pid[ci]];
    for (size_t ci = 0; ci < nc; ++ci) D[ci][pid[ci]] += pref[ci] * suff[ci + 1];
  });
  // Push through each component's assignments with leave-one-out over its vars.
  for (size_t ci = 0; ci < nc; ++ci) {
    const auto& comp = plan.comps[ci];
    size_t nv = comp.vars.size();
    std::vector<double> vpre(nv + 1), vsuf(nv + 1);
    for (size_t a = 0; a < comp.assigns.size(); ++a) {
      double u = upstream * D[ci][comp.pattern_of_assign[a]];
      if (u == 0.0) continue;
      vpre[0] = 1.0;
      for (size_t k = 0; k < nv; ++k) vpre[k + 1] = vpre[k] * p[comp.vars[k]][comp.assigns[a][k]];
      vsuf[nv] = 1.0;
      for (size_t k = nv; k-- > 0;) vsuf[k] = vsuf[k + 1] * p[comp.vars[k]][comp.assigns[a][k]];
      for (size_t k = 0; k < nv; ++k)
        grad[comp.vars[k]][comp.assigns[a][k]] += u * vpre[k] * vsuf[k + 1];
    }
  }
}

FigurePatternDist figure_pattern_distribution(const ConceptSchema& schema,
                                              const std::vector<int>& figure_objects,
                                              const Factors& p) {
  if (figure_objects.size() != 3)
    throw std::runtime_error("figure_pattern_distribution: figure must have 3 objects");
  std::vector<int> svars, cvars;
  for (int o : figure_objects) {
    const auto& ov = schema.objects[o];
    if (ov.size() != 2 || schema.vars[ov[0]].domain != 3 || schema.vars[ov[1]].domain != 3)
      throw std::runtime_error("figure_pattern_distribution: objects must be (shape,color) with 3-value domains");
    svars.push_back(ov[0]);
    cvars.push_back(ov[1]);
  }
  FigurePatternDist out{};
  auto flag = [](int a, int b, int c) {
    if (a == b && b == c) return 0;       // same
    if (a != b && b != c && a != c) return 2;  // all_diff
    return 1;                              // pair
  };
  int v[6];
  for (v[0] = 0; v[0] < 3; ++v[0])
    for (v[1] = 0; v[1] < 3; ++v[1])
      for (v[2] = 0; v[2] < 3; ++v[2])
        for (v[3] = 0; v[3] < 3; ++v[3])
          for (v[4] = 0; v[4] < 3; ++v[4])
            for (v[5] = 0; v[5] < 3; ++v[5]) {
              double prob = p[svars[0]][v[0]] * p[svars[1]][v[1]] * p[svars[2]][v[2]] *
                            p[cvars[0]][v[3]] * p[cvars[1]][v[4]] * p[cvars[2]][v[5]];
              out.shape[flag(v[0], v[1], v[2])] += prob;
              out.color[flag(v[3], v[4], v[5])] += prob;
            }
  return out;
}

}  // namespace nesyrs
