#include "nesyrs/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>
#include <stdexcept>

namespace nesyrs {

void TaskSpec::validate() const {
  schema.validate();
  if (name.empty()) throw std::runtime_error("task: missing name");
  if (support.empty()) throw std::runtime_error("task: empty support");
  for (const auto& g : support) {
    if (g.size() != schema.vars.size())
      throw std::runtime_error("task: support tuple arity mismatch");
    for (size_t j = 0; j < g.size(); ++j)
      if (g[j] < 0 || g[j] >= schema.vars[j].domain)
        throw std::runtime_error("task: support value out of domain");
  }
  if (!prior.empty()) {
    if (prior.size() != support.size())
      throw std::runtime_error("task: prior/support size mismatch");
    double s = 0.0;
    for (double p : prior) {
      if (p < 0.0) throw std::runtime_error("task: negative prior mass");
      s += p;
    }
    if (std::abs(s - 1.0) > 1e-9) throw std::runtime_error("task: prior does not sum to 1");
  }
  if (renderer.dim < 1) throw std::runtime_error("task: renderer dim must be positive");
  if (renderer.sigma < 0.0) throw std::runtime_error("task: negative noise sigma");
  for (const auto& ov : renderer.overlaps) {
    if (ov.group < 0 || ov.group >= static_cast<int>(schema.groups.size()))
      throw std::runtime_error("task: overlap group out of range");
    long dom = schema.object_domain(schema.groups[ov.group][0]);
    if (ov.value_a < 0 || ov.value_a >= dom || ov.value_b < 0 || ov.value_b >= dom ||
        ov.value_a == ov.value_b)
      throw std::runtime_error("task: bad overlap values");
    if (ov.distance <= 0.0 || ov.distance >= 2.0)
      throw std::runtime_error("task: overlap distance outside (0,2)");
  }
  if (splits.train < 0 || splits.val < 0 || splits.test < 0 || splits.ood < 0)
    throw std::runtime_error("task: negative split size");
}

std::vector<Assignment> ood_support(const TaskSpec& spec) {
  std::set<Assignment> train_set(spec.support.begin(), spec.support.end());
  std::vector<Assignment> out;
  if (spec.ood_rule == OodRule::SumCompletion) {
    if (spec.ood_max_value < 0)
      throw std::runtime_error("ood_support: completion needs ood_max_value");
    double joint = 1.0;
    for (size_t j = 0; j < spec.schema.vars.size(); ++j)
      joint *= static_cast<double>(spec.ood_max_value + 1);
    if (joint > 1e6) throw std::runtime_error("ood_support: completion space too large");
    Assignment g(spec.schema.vars.size(), 0);
    while (true) {
      if (!train_set.count(g)) out.push_back(g);
      size_t j = g.size();
      while (j-- > 0) {
        if (++g[j] <= spec.ood_max_value) break;
        g[j] = 0;
        if (j == 0) return out;
      }
      if (j == static_cast<size_t>(-1)) break;
    }
    return out;
  }
  for (const auto& g : spec.ood)
    if (train_set.count(g))
      throw std::runtime_error("ood_support: OOD tuple overlaps the training support");
  return spec.ood;
}

namespace {

std::vector<std::vector<std::vector<double>>> draw_centers(const TaskSpec& spec) {
  // One center set per encoder group, shared by every object in the group.
  size_t n_sets = spec.schema.groups.size();
  std::vector<std::vector<std::vector<double>>> centers(n_sets);
  int dim = spec.renderer.dim;
  for (size_t set = 0; set < n_sets; ++set) {
    long dom = spec.schema.object_domain(spec.schema.groups[set][0]);
    Rng r(derive_seed(spec.renderer.seed, "centers" + std::to_string(set)));
    centers[set].resize(dom);
    for (long v = 0; v < dom; ++v) {
      auto& c = centers[set][v];
      c.resize(dim);
      double norm = 0.0;
      for (int d = 0; d < dim; ++d) {
        c[d] = r.normal();
        norm += c[d] * c[d];
      }
      norm = std::sqrt(norm);
      for (int d = 0; d < dim; ++d) c[d] /= norm;
    }
  }
  Rng ov_rng(derive_seed(spec.renderer.seed, "overlaps"));
  for (const auto& ov : spec.renderer.overlaps) {
    const auto& a = centers[ov.group][ov.value_a];
    auto& b = centers[ov.group][ov.value_b];
    int dim_ = static_cast<int>(a.size());
    std::vector<double> u(dim_);
    double dot = 0.0;
    for (int d = 0; d < dim_; ++d) {
      u[d] = ov_rng.normal();
      dot += u[d] * a[d];
    }
    double norm = 0.0;
    for (int d = 0; d < dim_; ++d) {
      u[d] -= dot * a[d];
      norm += u[d] * u[d];
    }
    norm = std::sqrt(norm);
    double theta = 2.0 * std::asin(ov.distance / 2.0);
    for (int d = 0; d < dim_; ++d)
      b[d] = std::cos(theta) * a[d] + std::sin(theta) * (u[d] / norm);
  }
  return centers;
}

int nearest_center(const std::vector<std::vector<double>>& group_centers, const double* x,
                   int dim) {
  int best = -1;
  double best_d = 0.0;
  for (size_t v = 0; v < group_centers.size(); ++v) {
    double d2 = 0.0;
    for (int d = 0; d < dim; ++d) {
      double t = x[d] - group_centers[v][d];
      d2 += t * t;
    }
    if (best < 0 || d2 < best_d) {
      best = static_cast<int>(v);
      best_d = d2;
    }
  }
  return best;
}

Split sample_split(const TaskSpec& spec, const KnowledgeExpr& kb,
                   const std::vector<std::vector<std::vector<double>>>& centers,
                   const std::vector<Assignment>& rows, const std::vector<double>& prior,
                   int size, uint64_t seed, const std::string& tag) {
  Split out;
  out.reserve(size);
  if (size > 0 && rows.empty())
    throw std::runtime_error("generate_dataset: split '" + tag + "' has no support rows");
  Rng r(derive_seed(seed, "split-" + tag));
  int dim = spec.renderer.dim;
  std::vector<double> cum(rows.size(), 0.0);
  double acc = 0.0;
  for (size_t i = 0; i < rows.size(); ++i) {
    acc += prior.empty() ? 1.0 / static_cast<double>(rows.size()) : prior[i];
    cum[i] = acc;
  }
  for (int n = 0; n < size; ++n) {
    double u = r.uniform() * acc;
    size_t row = std::lower_bound(cum.begin(), cum.end(), u) - cum.begin();
    if (row >= rows.size()) row = rows.size() - 1;
    Example ex;
    ex.g = rows[row];
    ex.y = eval_beta(kb, ex.g);
    ex.x.resize(spec.schema.objects.size() * static_cast<size_t>(dim));
    for (size_t obj = 0; obj < spec.schema.objects.size(); ++obj) {
      size_t set = static_cast<size_t>(spec.schema.group_of_object(static_cast<int>(obj)));
      int v = spec.schema.object_value(ex.g, static_cast<int>(obj));
      double* slot = ex.x.data() + obj * static_cast<size_t>(dim);
      for (int d = 0; d < dim; ++d)
        slot[d] = centers[set][v][d] + spec.renderer.sigma * r.normal();
      if (nearest_center(centers[set], slot, dim) != v)
        throw std::runtime_error("generate_dataset: invertibility check failed on split '" + tag +
                                 "' (noise sigma too large for the center layout)");
    }
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace

GeneratedDataset generate_dataset(const TaskSpec& spec, uint64_t seed) {
  spec.validate();
  KnowledgeExpr kb = parse_knowledge(spec.knowledge, spec.schema);
  GeneratedDataset data;
  data.centers = draw_centers(spec);
  data.train = sample_split(spec, kb, data.centers, spec.support, spec.prior, spec.splits.train,
                            seed, "train");
  data.val = sample_split(spec, kb, data.centers, spec.support, spec.prior, spec.splits.val, seed,
                          "val");
  data.test = sample_split(spec, kb, data.centers, spec.support, spec.prior, spec.splits.test,
                           seed, "test");
  if (spec.splits.ood > 0) {
    std::vector<Assignment> rows = ood_support(spec);
    data.ood = sample_split(spec, kb, data.centers, rows, {}, spec.splits.ood, seed, "ood");
  }
  return data;
}

int Oracle::reveal(int example, int var) {
  if (example < 0 || example >= static_cast<int>(train_->size()))
    throw std::runtime_error("oracle: example index out of range");
  if (var < 0 || var >= static_cast<int>(schema_->vars.size()))
    throw std::runtime_error("oracle: variable index out of range");
  int value = (*train_)[example].g[var];
  if (seen_.insert({example, var}).second) log_.push_back({example, var, value});
  return value;
}

int Oracle::reveal(int example, const std::string& var_name) {
  int var = schema_->var_index(var_name);
  if (var < 0) throw std::runtime_error("oracle: unknown variable '" + var_name + "'");
  return reveal(example, var);
}

namespace {

TaskSpec make_sum_task(const std::string& name, int digits, int domain,
                       const std::vector<Assignment>& support, const std::vector<double>& prior,
                       SplitSizes splits, int ood_max) {
  TaskSpec spec;
  spec.name = name;
  for (int j = 0; j < digits; ++j)
    spec.schema.vars.push_back({"d" + std::to_string(j + 1), domain});
  for (int j = 0; j < digits; ++j) spec.schema.objects.push_back({j});
  std::vector<int> all_objs(digits);
  for (int j = 0; j < digits; ++j) all_objs[j] = j;
  spec.schema.groups.push_back(all_objs);  // both digits share one encoder
  std::string sum = "d1";
  for (int j = 1; j < digits; ++j) sum += " + d" + std::to_string(j + 1);
  spec.knowledge = "y := " + sum + ";\n";
  spec.support = support;
  spec.prior = prior;
  spec.splits = splits;
  spec.ood_rule = OodRule::SumCompletion;
  spec.ood_max_value = ood_max;
  return spec;
}

std::string figure_share_clause(int f1, int f2, const char* attr) {
  auto triple = [&](int f) {
    std::string s;
    for (int o = 1; o <= 3; ++o) {
      if (o > 1) s += ", ";
      s += std::string(attr) + std::to_string(f) + std::to_string(o);
    }
    return s;
  };
  std::string a = triple(f1), b = triple(f2), out;
  const char* preds[] = {"same", "pair", "all_diff"};
  for (int k = 0; k < 3; ++k) {
    if (k > 0) out += " or ";
    out += std::string("(") + preds[k] + "(" + a + ") and " + preds[k] + "(" + b + "))";
  }
  return out;
}

TaskSpec make_kandinsky() {
  TaskSpec spec;
  spec.name = "kandinsky_mini";
  for (int f = 1; f <= 3; ++f)
    for (int o = 1; o <= 3; ++o) {
      spec.schema.vars.push_back({"shape" + std::to_string(f) + std::to_string(o), 3});
      spec.schema.vars.push_back({"color" + std::to_string(f) + std::to_string(o), 3});
      int base = static_cast<int>(spec.schema.vars.size()) - 2;
      spec.schema.objects.push_back({base, base + 1});
    }
  std::vector<int> all_objs(9);
  for (int o = 0; o < 9; ++o) all_objs[o] = o;
  spec.schema.groups.push_back(all_objs);  // one shared object encoder

  std::string y = "y := ";
  int pairs[3][2] = {{1, 2}, {1, 3}, {2, 3}};
  for (int p = 0; p < 3; ++p) {
    if (p > 0) y += "\n  and ";
    y += "((" + figure_share_clause(pairs[p][0], pairs[p][1], "shape") + ")\n   or (" +
         figure_share_clause(pairs[p][0], pairs[p][1], "color") + "))";
  }
  spec.knowledge = y + ";\n";

  // Balanced support: 500 positive / 500 negative distinct tuples from a
  // fixed stream; generation then samples uniformly from this list.
  KnowledgeExpr kb = parse_knowledge(spec.knowledge, spec.schema);
  Rng r(derive_seed(7777, "kandinsky-support"));
  std::set<Assignment> seen;
  std::vector<Assignment> pos, neg;
  while (pos.size() < 500 || neg.size() < 500) {
    Assignment g(spec.schema.vars.size());
    for (auto& v : g) v = static_cast<int>(r.below(3));
    if (!seen.insert(g).second) continue;
    bool label = eval_beta(kb, g) != 0;
    if (label && pos.size() < 500) pos.push_back(g);
    else if (!label && neg.size() < 500) neg.push_back(g);
  }
  spec.support = pos;
  spec.support.insert(spec.support.end(), neg.begin(), neg.end());
  spec.splits = {1000, 200, 200, 0};
  // Tight clusters keep the concept clustering unambiguous, so label training
  // commits to one of the label-preserving value permutations.
  spec.renderer.sigma = 0.05;
  return spec;
}

}  // namespace

TaskSpec builtin_task(const std::string& name) {
  if (name == "mnist_half") {
    TaskSpec spec = make_sum_task("mnist_half", 2, 5, {{0, 0}, {0, 1}, {2, 3}, {2, 4}},
                                  {0.15, 0.15, 0.35, 0.35}, {2940, 840, 420, 1080}, 4);
    // Digits 2 and 4 are rendered as near-overlapping clusters (confusable
    // classes); smaller noise keeps nearest-center decoding exact.
    spec.renderer.sigma = 0.05;
    spec.renderer.overlaps.push_back({0, 2, 4, 0.5});
    return spec;
  }
  if (name == "mnist_even_odd") {
    return make_sum_task("mnist_even_odd", 2, 11,
                         {{0, 6}, {2, 8}, {4, 6}, {4, 8}, {1, 5}, {3, 7}, {1, 9}, {3, 9}}, {},
                         {6720, 1920, 960, 5040}, 9);
  }
  if (name == "traffic_mini") {
    TaskSpec spec;
    spec.name = "traffic_mini";
    spec.schema.vars = {{"grn", 2}, {"red", 2}, {"ped", 2}};
    spec.schema.objects = {{0}, {1, 2}};
    spec.schema.groups = {{0}, {1}};
    spec.knowledge = "stop := red or ped;\ngo := grn and not red and not ped;\n";
    spec.support = {{0, 0, 0}, {1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
    spec.splits = {800, 200, 200, 0};
    return spec;
  }
  if (name == "kandinsky_mini") return make_kandinsky();
  throw std::runtime_error("unknown builtin task '" + name + "'");
}

nlohmann::json task_to_json(const TaskSpec& spec) {
  nlohmann::json j;
  j["format"] = "nesyrs-task";
  j["schema_version"] = 1;
  j["name"] = spec.name;
  j["vars"] = nlohmann::json::array();
  for (const auto& v : spec.schema.vars) j["vars"].push_back({{"name", v.name}, {"domain", v.domain}});
  j["objects"] = spec.schema.objects;
  j["groups"] = spec.schema.groups;
  j["knowledge"] = spec.knowledge;
  j["support"] = spec.support;
  j["prior"] = spec.prior;
  j["renderer"] = {{"dim", spec.renderer.dim},
                   {"sigma", spec.renderer.sigma},
                   {"seed", spec.renderer.seed}};
  j["renderer"]["overlaps"] = nlohmann::json::array();
  for (const auto& ov : spec.renderer.overlaps)
    j["renderer"]["overlaps"].push_back({{"group", ov.group},
                                         {"value_a", ov.value_a},
                                         {"value_b", ov.value_b},
                                         {"distance", ov.distance}});
  j["splits"] = {{"train", spec.splits.train},
                 {"val", spec.splits.val},
                 {"test", spec.splits.test},
                 {"ood", spec.splits.ood}};
  j["ood_rule"] = spec.ood_rule == OodRule::SumCompletion ? "sum_completion" : "none";
  j["ood"] = spec.ood;
  j["ood_max_value"] = spec.ood_max_value;
  return j;
}

TaskSpec task_from_json(const nlohmann::json& j) {
  if (!j.contains("schema_version") || j["schema_version"].get<int>() != 1)
    throw std::runtime_error("task file: missing or unsupported schema_version");
  TaskSpec spec;
  spec.name = j.at("name").get<std::string>();
  for (const auto& v : j.at("vars"))
    spec.schema.vars.push_back({v.at("name").get<std::string>(), v.at("domain").get<int>()});
  spec.schema.objects = j.at("objects").get<std::vector<std::vector<int>>>();
  spec.schema.groups = j.at("groups").get<std::vector<std::vector<int>>>();
  spec.knowledge = j.at("knowledge").get<std::string>();
  spec.support = j.at("support").get<std::vector<Assignment>>();
  spec.prior = j.value("prior", std::vector<double>{});
  const auto& r = j.at("renderer");
  spec.renderer.dim = r.at("dim").get<int>();
  spec.renderer.sigma = r.at("sigma").get<double>();
  spec.renderer.seed = r.at("seed").get<uint64_t>();
  for (const auto& ov : r.value("overlaps", nlohmann::json::array()))
    spec.renderer.overlaps.push_back({ov.at("group").get<int>(), ov.at("value_a").get<int>(),
                                      ov.at("value_b").get<int>(),
                                      ov.at("distance").get<double>()});
  const auto& s = j.at("splits");
  spec.splits = {s.at("train").get<int>(), s.at("val").get<int>(), s.at("test").get<int>(),
                 s.at("ood").get<int>()};
  std::string rule = j.value("ood_rule", "none");
  spec.ood_rule = rule == "sum_completion" ? OodRule::SumCompletion : OodRule::None;
  spec.ood = j.value("ood", std::vector<Assignment>{});
  spec.ood_max_value = j.value("ood_max_value", -1);
  spec.validate();
  return spec;
}

std::string task_hash(const TaskSpec& spec) {
  uint64_t h = fnv1a(task_to_json(spec).dump());
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

void export_dataset_csv(const GeneratedDataset& data, const ConceptSchema& schema,
                        std::ostream& out) {
  size_t x_dim = 0;
  const Split* splits[] = {&data.train, &data.val, &data.test, &data.ood};
  const char* tags[] = {"train", "val", "test", "ood"};
  for (const Split* s : splits)
    if (!s->empty()) x_dim = (*s)[0].x.size();
  out << "split";
  for (size_t d = 0; d < x_dim; ++d) out << ",x" << d;
  for (const auto& v : schema.vars) out << ",g_" << v.name;
  out << ",y\n";
  char buf[64];
  for (int si = 0; si < 4; ++si) {
    for (const auto& ex : *splits[si]) {
      out << tags[si];
      for (double v : ex.x) {
        std::snprintf(buf, sizeof buf, "%.17g", v);
        out << ',' << buf;
      }
      for (int v : ex.g) out << ',' << v;
      out << ',' << ex.y << '\n';
    }
  }
}

}  // namespace nesyrs
