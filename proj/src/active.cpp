#include "nesyrs/active.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace nesyrs {

double object_entropy(const std::vector<Factors>& member_probs, const std::vector<int>& obj_vars) {
  if (member_probs.empty()) throw std::runtime_error("object_entropy: no members");
  long joint = 1;
  for (int vi : obj_vars) joint *= static_cast<long>(member_probs[0][vi].size());
  std::vector<double> mix(joint, 0.0);
  for (const Factors& p : member_probs) {
    for (long a = 0; a < joint; ++a) {
      double prob = 1.0;
      long rest = a;
      for (size_t k = obj_vars.size(); k-- > 0;) {
        const auto& f = p[obj_vars[k]];
        prob *= f[rest % static_cast<long>(f.size())];
        rest /= static_cast<long>(f.size());
      }
      mix[a] += prob;
    }
  }
  double h = 0.0;
  for (double q : mix) {
    q /= static_cast<double>(member_probs.size());
    if (q > 0.0) h -= q * std::log(q);
  }
  return h;
}

std::vector<int> select_queries(Strategy strategy, const std::vector<double>& entropies,
                                int pool_size, int k, uint64_t seed,
                                const std::vector<char>& excluded) {
  std::vector<int> avail;
  for (int i = 0; i < pool_size; ++i)
    if (excluded.empty() || !excluded[i]) avail.push_back(i);
  if (k > static_cast<int>(avail.size()))
    throw std::runtime_error("select_queries: k exceeds the available pool");
  if (strategy == Strategy::Entropy) {
    if (static_cast<int>(entropies.size()) != pool_size)
      throw std::runtime_error("select_queries: entropy/pool size mismatch");
    std::stable_sort(avail.begin(), avail.end(), [&](int a, int b) {
      if (entropies[a] != entropies[b]) return entropies[a] > entropies[b];
      return a < b;
    });
    avail.resize(k);
    std::sort(avail.begin(), avail.end());
    return avail;
  }
  Rng r(seed);
  r.shuffle(avail);
  avail.resize(k);
  std::sort(avail.begin(), avail.end());
  return avail;
}

double ensemble_concept_accuracy(const Ensemble& ens, const Split& split) {
  if (split.empty()) throw std::runtime_error("ensemble_concept_accuracy: empty split");
  double correct = 0.0, total = 0.0;
  for (const auto& ex : split) {
    Factors p = ensemble_concept_probs(ens, ex.x);
    for (size_t j = 0; j < p.size(); ++j) {
      int arg = 0;
      for (size_t v = 1; v < p[j].size(); ++v)
        if (p[j][v] > p[j][arg]) arg = static_cast<int>(v);
      correct += arg == ex.g[j] ? 1.0 : 0.0;
      total += 1.0;
    }
  }
  return correct / total;
}

double ensemble_label_accuracy(const Ensemble& ens, const Split& split) {
  if (split.empty()) throw std::runtime_error("ensemble_label_accuracy: empty split");
  double correct = 0.0;
  for (const auto& ex : split) {
    auto dist = ensemble_label_dist(ens, ex.x);
    long arg = dist.begin()->first;
    double best = dist.begin()->second;
    for (const auto& [y, p] : dist)
      if (p > best) {
        best = p;
        arg = y;
      }
    correct += arg == ex.y ? 1.0 : 0.0;
  }
  return correct / static_cast<double>(split.size());
}

ActiveResult active_loop(const ConceptSchema& schema, const KnowledgeExpr& kb, const Split& train,
                         const Split& eval, Oracle& oracle, const ActiveConfig& cfg,
                         const std::vector<std::pair<int, int>>& init_objects) {
  if (cfg.batch_k < 1 || cfg.budget < 0 || cfg.budget % cfg.batch_k != 0)
    throw std::runtime_error("active_loop: budget must be a nonnegative multiple of batch_k");
  int n_objects = static_cast<int>(schema.objects.size());
  int pool_size = static_cast<int>(train.size()) * n_objects;
  std::vector<char> revealed(pool_size, 0);

  auto reveal_object = [&](int example, int obj) {
    for (int vi : schema.objects[obj]) oracle.reveal(example, vi);
    revealed[example * n_objects + obj] = 1;
  };
  for (const auto& [example, obj] : init_objects) reveal_object(example, obj);

  ActiveResult res;
  int rounds = cfg.budget / cfg.batch_k;
  for (int round = 0; round <= rounds; ++round) {
    const Ensemble* init = (round > 0 && !cfg.cold_start) ? &res.model : nullptr;
    res.model = train_ensemble(cfg.train, schema, kb, train, oracle.log(), init);
    res.curve.push_back({round * cfg.batch_k, ensemble_concept_accuracy(res.model, eval),
                         ensemble_label_accuracy(res.model, eval)});
    if (round == rounds) break;

    std::vector<double> entropies(pool_size, 0.0);
    if (cfg.strategy == Strategy::Entropy) {
      std::vector<Factors> member_probs(res.model.members.size());
      for (size_t e = 0; e < train.size(); ++e) {
        for (size_t m = 0; m < res.model.members.size(); ++m)
          member_probs[m] = concept_probs(res.model.members[m], train[e].x);
        for (int obj = 0; obj < n_objects; ++obj)
          entropies[e * n_objects + obj] = object_entropy(member_probs, schema.objects[obj]);
      }
    }
    uint64_t select_seed = derive_seed(cfg.train.seed, "acquire" + std::to_string(round));
    for (int idx : select_queries(cfg.strategy, entropies, pool_size, cfg.batch_k, select_seed,
                                  revealed))
      reveal_object(idx / n_objects, idx % n_objects);
  }
  return res;
}

}  // namespace nesyrs
