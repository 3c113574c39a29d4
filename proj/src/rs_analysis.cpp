#include "nesyrs/rs_analysis.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

namespace nesyrs {

bool AlphaMap::is_identity() const {
  for (const auto& m : maps)
    for (size_t v = 0; v < m.size(); ++v)
      if (m[v] >= 0 && m[v] != static_cast<int>(v)) return false;
  return true;
}

Assignment AlphaMap::apply(const ConceptSchema& schema, const Assignment& g) const {
  Assignment out(g.size(), 0);
  for (size_t obj = 0; obj < schema.objects.size(); ++obj) {
    int grp = schema.group_of_object(static_cast<int>(obj));
    int v = schema.object_value(g, static_cast<int>(obj));
    int mapped = maps[grp][v];
    if (mapped < 0)
      throw std::runtime_error("AlphaMap::apply: value " + std::to_string(v) +
                               " is unconstrained in group " + std::to_string(grp));
    schema.decode_object_value(static_cast<int>(obj), mapped, out);
  }
  return out;
}

OptimalMapSet enumerate_optimal_maps(const ConceptSchema& schema, const KnowledgeExpr& kb,
                                     const std::vector<Assignment>& support, long node_budget) {
  int n_groups = static_cast<int>(schema.groups.size());
  std::vector<long> dom(n_groups, 0);
  for (int grp = 0; grp < n_groups; ++grp)
    dom[grp] = schema.object_domain(schema.groups[grp][0]);

  // Assignment order: (group, value) slots by first appearance in the
  // support, so each row's constraint becomes checkable as early as possible.
  std::vector<std::vector<int>> slot_of(n_groups);  // value -> slot or -1
  for (int grp = 0; grp < n_groups; ++grp) slot_of[grp].assign(dom[grp], -1);
  std::vector<std::pair<int, int>> slots;           // slot -> (group, value)
  std::vector<std::vector<int>> row_slots(support.size());
  std::vector<long> row_label(support.size());
  for (size_t i = 0; i < support.size(); ++i) {
    row_label[i] = eval_beta(kb, support[i]);
    for (size_t obj = 0; obj < schema.objects.size(); ++obj) {
      int grp = schema.group_of_object(static_cast<int>(obj));
      int v = schema.object_value(support[i], static_cast<int>(obj));
      if (slot_of[grp][v] < 0) {
        slot_of[grp][v] = static_cast<int>(slots.size());
        slots.emplace_back(grp, v);
      }
      int s = slot_of[grp][v];
      if (std::find(row_slots[i].begin(), row_slots[i].end(), s) == row_slots[i].end())
        row_slots[i].push_back(s);
    }
  }
  // Empty support: the constraint is vacuous, every total map qualifies.
  if (support.empty())
    for (int grp = 0; grp < n_groups; ++grp)
      for (long v = 0; v < dom[grp]; ++v) slots.emplace_back(grp, static_cast<int>(v));
  std::vector<std::vector<int>> rows_of_slot(slots.size());
  for (size_t i = 0; i < support.size(); ++i)
    for (int s : row_slots[i]) rows_of_slot[s].push_back(static_cast<int>(i));

  OptimalMapSet out;
  out.support = support;
  std::vector<int> assign(slots.size(), -1);
  std::vector<int> remaining(support.size());
  for (size_t i = 0; i < support.size(); ++i) remaining[i] = static_cast<int>(row_slots[i].size());
  long nodes = 0;

  auto row_ok = [&](int i) {
    Assignment mapped(support[i].size(), 0);
    for (size_t obj = 0; obj < schema.objects.size(); ++obj) {
      int grp = schema.group_of_object(static_cast<int>(obj));
      int v = schema.object_value(support[i], static_cast<int>(obj));
      schema.decode_object_value(static_cast<int>(obj), assign[slot_of[grp][v]], mapped);
    }
    return eval_beta(kb, mapped) == row_label[i];
  };

  auto emit = [&]() {
    AlphaMap m;
    m.maps.resize(n_groups);
    for (int grp = 0; grp < n_groups; ++grp) m.maps[grp].assign(dom[grp], -1);
    for (size_t s = 0; s < slots.size(); ++s) m.maps[slots[s].first][slots[s].second] = assign[s];
    out.maps.push_back(std::move(m));
  };

  std::function<void(size_t)> dfs = [&](size_t s) {
    if (s == slots.size()) {
      emit();
      return;
    }
    int grp = slots[s].first;
    for (int cand = 0; cand < dom[grp]; ++cand) {
      if (++nodes > node_budget)
        throw SearchBudgetExceeded("map search exceeded the node budget of " +
                                   std::to_string(node_budget));
      assign[s] = cand;
      bool ok = true;
      for (int i : rows_of_slot[s]) {
        if (--remaining[i] == 0 && !row_ok(i)) ok = false;
      }
      if (ok) dfs(s + 1);
      for (int i : rows_of_slot[s]) ++remaining[i];
      assign[s] = -1;
    }
  };
  dfs(0);
  return out;
}

std::pair<long, long> count_rs(const OptimalMapSet& set) {
  long total = static_cast<long>(set.maps.size());
  bool has_id = false;
  for (const auto& m : set.maps)
    if (m.is_identity()) {
      has_id = true;
      break;
    }
  return {total, has_id ? total - 1 : total};
}

EquivalenceSets equivalence_sets(const OptimalMapSet& set, const ConceptSchema& schema) {
  EquivalenceSets eq(schema.groups.size());
  for (const auto& m : set.maps)
    for (size_t grp = 0; grp < m.maps.size(); ++grp)
      for (size_t v = 0; v < m.maps[grp].size(); ++v)
        if (m.maps[grp][v] >= 0) eq[grp][static_cast<int>(v)].insert(m.maps[grp][v]);
  return eq;
}

std::vector<std::map<int, double>> entropy_bounds(const EquivalenceSets& eq) {
  std::vector<std::map<int, double>> out(eq.size());
  for (size_t grp = 0; grp < eq.size(); ++grp)
    for (const auto& [v, images] : eq[grp])
      out[grp][v] = std::log(static_cast<double>(images.size()));
  return out;
}

void project_simplex(std::vector<double>& v) {
  std::vector<double> u = v;
  std::sort(u.begin(), u.end(), std::greater<double>());
  double css = 0.0, theta = 0.0;
  int rho = 0;
  for (size_t i = 0; i < u.size(); ++i) {
    css += u[i];
    double t = (css - 1.0) / static_cast<double>(i + 1);
    if (u[i] - t > 0.0) {
      rho = static_cast<int>(i + 1);
      theta = t;
    }
  }
  (void)rho;
  for (double& x : v) x = std::max(0.0, x - theta);
}

namespace {

/** Per support row: distinct concept images over the maps, and which image
 *  each map produces. */
struct ImageIndex {
  std::vector<std::vector<int>> img_of_map;  // [row][map] -> image id
  std::vector<int> n_images;                 // per row
};

ImageIndex build_image_index(const OptimalMapSet& set, const ConceptSchema& schema) {
  ImageIndex idx;
  idx.img_of_map.resize(set.support.size());
  idx.n_images.resize(set.support.size());
  for (size_t i = 0; i < set.support.size(); ++i) {
    std::map<Assignment, int> ids;
    idx.img_of_map[i].resize(set.maps.size());
    for (size_t a = 0; a < set.maps.size(); ++a) {
      Assignment c = set.maps[a].apply(schema, set.support[i]);
      auto [it, fresh] = ids.emplace(std::move(c), static_cast<int>(ids.size()));
      (void)fresh;
      idx.img_of_map[i][a] = it->second;
    }
    idx.n_images[i] = static_cast<int>(ids.size());
  }
  return idx;
}

}  // namespace

MaxEntropyResult max_entropy_mixture(const OptimalMapSet& set, const ConceptSchema& schema,
                                     const std::vector<double>& prior) {
  if (set.maps.empty()) throw std::runtime_error("max_entropy_mixture: no maps");
  if (prior.size() != set.support.size())
    throw std::runtime_error("max_entropy_mixture: prior/support size mismatch");
  ImageIndex idx = build_image_index(set, schema);
  size_t n = set.maps.size();
  std::vector<double> omega(n, 1.0 / static_cast<double>(n));

  auto objective = [&](const std::vector<double>& w, std::vector<double>* grad,
                       std::vector<double>* per_row) {
    if (grad) std::fill(grad->begin(), grad->end(), 0.0);
    double total = 0.0;
    for (size_t i = 0; i < set.support.size(); ++i) {
      std::vector<double> q(idx.n_images[i], 0.0);
      for (size_t a = 0; a < n; ++a) q[idx.img_of_map[i][a]] += w[a];
      double h = 0.0;
      for (double p : q)
        if (p > 0.0) h -= p * std::log(p);
      if (per_row) (*per_row)[i] = h;
      total += prior[i] * h;
      if (grad)
        for (size_t a = 0; a < n; ++a) {
          double p = q[idx.img_of_map[i][a]];
          if (p > 0.0) (*grad)[a] -= prior[i] * (std::log(p) + 1.0);
        }
    }
    return total;
  };

  std::vector<double> grad(n);
  double best = objective(omega, &grad, nullptr);
  for (int iter = 0; iter < 10000; ++iter) {
    std::vector<double> next = omega;
    for (size_t a = 0; a < n; ++a) next[a] += 0.1 * grad[a];
    project_simplex(next);
    double val = objective(next, &grad, nullptr);
    omega = std::move(next);
    if (std::abs(val - best) < 1e-9 && val >= best) {
      best = val;
      break;
    }
    best = std::max(best, val);
  }

  MaxEntropyResult res;
  res.weights.omega = omega;
  res.per_support_entropy.assign(set.support.size(), 0.0);
  res.achieved_entropy = objective(omega, nullptr, &res.per_support_entropy);
  return res;
}

std::vector<std::map<int, double>> per_value_entropy(const OptimalMapSet& set,
                                                     const ConceptSchema& schema,
                                                     const MixtureWeights& w) {
  std::vector<std::map<int, double>> out(schema.groups.size());
  if (set.maps.empty()) return out;
  for (size_t grp = 0; grp < schema.groups.size(); ++grp) {
    size_t dom = set.maps[0].maps[grp].size();
    for (size_t v = 0; v < dom; ++v) {
      if (set.maps[0].maps[grp][v] < 0) continue;  // unconstrained value
      std::vector<double> q(dom, 0.0);
      for (size_t a = 0; a < set.maps.size(); ++a)
        q[set.maps[a].maps[grp][v]] += w.omega[a];
      double h = 0.0;
      for (double p : q)
        if (p > 0.0) h -= p * std::log(p);
      out[grp][static_cast<int>(v)] = h;
    }
  }
  return out;
}

ConceptTable table_from_mixture(const OptimalMapSet& set, const ConceptSchema& schema,
                                const MixtureWeights& w) {
  ConceptTable table;
  table.support = set.support;
  table.rows.resize(set.support.size());
  for (size_t i = 0; i < set.support.size(); ++i)
    for (size_t a = 0; a < set.maps.size(); ++a)
      table.rows[i][set.maps[a].apply(schema, set.support[i])] += w.omega[a];
  return table;
}

DecompositionResult decompose_table(const ConceptTable& table, const OptimalMapSet& set,
                                    const ConceptSchema& schema) {
  if (table.support != set.support)
    throw std::runtime_error("decompose_table: table/map support mismatch");
  size_t n = set.maps.size();
  if (n == 0) throw std::runtime_error("decompose_table: no maps");

  // Cells: per row, the union of map images and observed table entries.
  struct Cell {
    double target = 0.0;
    std::vector<int> members;  // maps producing this cell's concept tuple
  };
  std::vector<Cell> cells;
  for (size_t i = 0; i < set.support.size(); ++i) {
    std::map<Assignment, int> cell_of;
    for (size_t a = 0; a < n; ++a) {
      Assignment c = set.maps[a].apply(schema, set.support[i]);
      auto [it, fresh] = cell_of.emplace(std::move(c), static_cast<int>(cells.size()));
      if (fresh) cells.emplace_back();
      cells[it->second].members.push_back(static_cast<int>(a));
    }
    for (const auto& [c, p] : table.rows[i]) {
      auto [it, fresh] = cell_of.emplace(c, static_cast<int>(cells.size()));
      if (fresh) cells.emplace_back();
      cells[it->second].target = p;
    }
  }

  // FISTA on 0.5 * sum_cells (sum_members omega - target)^2 over the simplex.
  double max_row = 0.0, max_col = static_cast<double>(set.support.size());
  for (const auto& cell : cells) max_row = std::max(max_row, static_cast<double>(cell.members.size()));
  double step = 1.0 / std::max(1.0, max_row * max_col);

  std::vector<double> omega(n, 1.0 / static_cast<double>(n)), y = omega, prev = omega, grad(n);
  auto objective = [&](const std::vector<double>& w, std::vector<double>* g) {
    if (g) std::fill(g->begin(), g->end(), 0.0);
    double f = 0.0;
    for (const auto& cell : cells) {
      double s = 0.0;
      for (int a : cell.members) s += w[a];
      double r = s - cell.target;
      f += 0.5 * r * r;
      if (g)
        for (int a : cell.members) (*g)[a] += r;
    }
    return f;
  };

  double tk = 1.0, last = objective(omega, nullptr);
  for (int iter = 0; iter < 50000; ++iter) {
    objective(y, &grad);
    prev = omega;
    omega = y;
    for (size_t a = 0; a < n; ++a) omega[a] -= step * grad[a];
    project_simplex(omega);
    double tn = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * tk * tk));
    for (size_t a = 0; a < n; ++a)
      y[a] = omega[a] + ((tk - 1.0) / tn) * (omega[a] - prev[a]);
    tk = tn;
    double f = objective(omega, nullptr);
    if (std::abs(last - f) < 1e-18 && f <= last) break;
    last = f;
  }

  DecompositionResult res;
  res.weights.omega = omega;
  for (const auto& cell : cells) {
    double s = 0.0;
    for (int a : cell.members) s += omega[a];
    res.max_abs_residual = std::max(res.max_abs_residual, std::abs(s - cell.target));
  }
  return res;
}

ConceptTable empirical_concept_table(const std::vector<Factors>& per_example_probs,
                                     const std::vector<Assignment>& per_example_g,
                                     const std::vector<Assignment>& support, double max_joint) {
  if (per_example_probs.size() != per_example_g.size())
    throw std::runtime_error("empirical_concept_table: probs/labels size mismatch");
  ConceptTable table;
  table.support = support;
  table.rows.resize(support.size());
  std::map<Assignment, int> row_of;
  for (size_t i = 0; i < support.size(); ++i) row_of[support[i]] = static_cast<int>(i);
  std::vector<long> counts(support.size(), 0);

  for (size_t e = 0; e < per_example_probs.size(); ++e) {
    auto it = row_of.find(per_example_g[e]);
    if (it == row_of.end())
      throw std::runtime_error("empirical_concept_table: example outside the support");
    const Factors& p = per_example_probs[e];
    double joint = 1.0;
    for (const auto& f : p) joint *= static_cast<double>(f.size());
    if (joint > max_joint)
      throw std::runtime_error("empirical_concept_table: joint concept space too large");
    Assignment c(p.size(), 0);
    while (true) {
      double prob = 1.0;
      for (size_t j = 0; j < p.size(); ++j) prob *= p[j][c[j]];
      if (prob > 0.0) table.rows[it->second][c] += prob;
      size_t j = 0;
      for (; j < p.size(); ++j) {
        if (++c[j] < static_cast<int>(p[j].size())) break;
        c[j] = 0;
      }
      if (j == p.size()) break;
    }
    ++counts[it->second];
  }
  for (size_t i = 0; i < support.size(); ++i) {
    if (counts[i] == 0) {
      table.missing.push_back(static_cast<int>(i));
      continue;
    }
    for (auto& [c, v] : table.rows[i]) v /= static_cast<double>(counts[i]);
  }
  return table;
}

}  // namespace nesyrs
