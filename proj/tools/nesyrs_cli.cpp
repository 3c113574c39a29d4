#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"

#include "nesyrs/active.hpp"
#include "nesyrs/metrics.hpp"
#include "nesyrs/rs_analysis.hpp"

namespace fs = std::filesystem;
using namespace nesyrs;

namespace {

constexpr int kExitMissingTask = 2;
constexpr int kExitSearchBudget = 3;
constexpr int kExitHashMismatch = 4;

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

/** Resolve --task: builtin name or path to a task JSON file. */
TaskSpec load_task(const std::string& arg) {
  bool is_path = arg.find('/') != std::string::npos ||
                 (arg.size() > 5 && arg.substr(arg.size() - 5) == ".json");
  if (!is_path) {
    try {
      return builtin_task(arg);
    } catch (const std::exception&) {
      std::cerr << "error: unknown task '" << arg << "'\n";
      std::exit(kExitMissingTask);
    }
  }
  std::ifstream in(arg);
  if (!in) {
    std::cerr << "error: task file '" << arg << "' not found\n";
    std::exit(kExitMissingTask);
  }
  nlohmann::json j;
  in >> j;
  return task_from_json(j);
}

fs::path output_root(const std::string& out_flag) {
  if (!out_flag.empty()) return out_flag;
  if (const char* env = std::getenv("NESYRS_OUT")) return env;
  return "out";
}

struct CommonOpts {
  std::string task_arg;
  std::string method = "dpl";
  std::string seeds = "0";
  double gamma1 = -1.0, gamma2 = -1.0;  // -1 = use task/method default
  int ensemble_size = -1;
  int mc_samples = 30;
  int epochs = -1;
  int batch = -1;
  double lr = -1.0;
  int bins = 10;
  double w_c = -1.0;
  std::string out;
};

void add_common(CLI::App* cmd, CommonOpts& o, bool need_method) {
  cmd->add_option("--task", o.task_arg, "builtin task name or task JSON path")->required();
  if (need_method)
    cmd->add_option("--method", o.method, "dpl|sl|bears|de|mcdo")
        ->check(CLI::IsMember({"dpl", "sl", "bears", "de", "mcdo"}));
  cmd->add_option("--seed", o.seeds, "single seed (alias of --seeds)");
  cmd->add_option("--seeds", o.seeds, "comma-separated seed list");
  cmd->add_option("--gamma1", o.gamma1, "repulsion weight");
  cmd->add_option("--gamma2", o.gamma2, "entropy-penalty weight");
  cmd->add_option("--ensemble-size", o.ensemble_size, "ensemble members");
  cmd->add_option("--mc-samples", o.mc_samples, "MC-Dropout samples");
  cmd->add_option("--epochs", o.epochs, "training epochs");
  cmd->add_option("--batch-size", o.batch, "minibatch size");
  cmd->add_option("--lr", o.lr, "learning rate");
  cmd->add_option("--bins", o.bins, "calibration bins");
  cmd->add_option("--w-c", o.w_c, "concept supervision weight");
  cmd->add_option("--out", o.out, "output directory (default $NESYRS_OUT or ./out)");
}

std::vector<uint64_t> parse_seeds(const std::string& s) {
  std::vector<uint64_t> seeds;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) seeds.push_back(std::stoull(tok));
  if (seeds.empty()) seeds.push_back(0);
  return seeds;
}

TrainConfig resolve_config(const TaskSpec& task, const CommonOpts& o, uint64_t seed) {
  TrainConfig cfg;
  cfg.kind = o.method == "sl" ? PredictorKind::SL : PredictorKind::DPL;
  cfg.seed = seed;
  cfg.slot_dim = task.renderer.dim;
  bool kand = task.name == "kandinsky_mini";
  cfg.lr = o.lr > 0 ? o.lr : (kand ? 1e-3 : 5e-4);
  cfg.batch = o.batch > 0 ? o.batch : (kand ? 16 : 64);
  cfg.epochs = o.epochs > 0 ? o.epochs : 30;
  cfg.lr_decay = kand ? 0.98 : 0.95;
  cfg.mc_samples = o.mc_samples;
  cfg.dropout = o.method == "mcdo" ? 0.5 : 0.0;
  if (o.method == "bears" || o.method == "de") {
    cfg.ensemble_size = o.ensemble_size > 0 ? o.ensemble_size : 5;
    if (o.method == "bears") {
      cfg.gamma1 = o.gamma1 >= 0 ? o.gamma1 : (kand ? 0.2 : 0.8);
      cfg.gamma2 = o.gamma2 >= 0 ? o.gamma2 : 0.0;
    }
  } else {
    cfg.ensemble_size = 1;
  }
  if (o.w_c >= 0) cfg.w_c = o.w_c;
  return cfg;
}

nlohmann::json config_to_json(const TrainConfig& cfg, const std::string& method) {
  return {{"method", method},
          {"kind", cfg.kind == PredictorKind::SL ? "sl" : "dpl"},
          {"ensemble_size", cfg.ensemble_size},
          {"gamma1", cfg.gamma1},
          {"gamma2", cfg.gamma2},
          {"epochs", cfg.epochs},
          {"batch", cfg.batch},
          {"lr", cfg.lr},
          {"lr_decay", cfg.lr_decay},
          {"seed", cfg.seed},
          {"w_sl", cfg.w_sl},
          {"w_c", cfg.w_c},
          {"mc_samples", cfg.mc_samples},
          {"slot_dim", cfg.slot_dim},
          {"hidden", cfg.hidden},
          {"dropout", cfg.dropout}};
}

/** Per-example scores: concept mixture and label distribution. */
struct Scorer {
  const Ensemble* ens = nullptr;
  bool mcdo = false;
  int mc_samples = 30;
  uint64_t seed = 0;

  Factors concepts(const std::vector<double>& x, long example) const {
    if (!mcdo) return ensemble_concept_probs(*ens, x);
    return mc_dropout_probs(ens->members[0], x, mc_samples,
                            derive_seed(seed, "mcdo-eval" + std::to_string(example)));
  }
  std::map<long, double> label_dist(const std::vector<double>& x, long example) const {
    if (!mcdo) return ensemble_label_dist(*ens, x);
    const NesyPredictor& pred = ens->members[0];
    std::map<long, double> mix;
    Rng rng(derive_seed(seed, "mcdo-eval" + std::to_string(example)));
    for (int s = 0; s < mc_samples; ++s) {
      Factors p = concept_probs_sampled(pred, x, rng);
      for (const auto& [y, q] : label_distribution(pred.plan, p))
        mix[y] += q / static_cast<double>(mc_samples);
    }
    return mix;
  }
};

struct OvaKey {
  int group, attr, cls;
};

std::vector<OvaKey> ova_layout(const ConceptSchema& schema) {
  std::vector<OvaKey> keys;
  for (size_t grp = 0; grp < schema.groups.size(); ++grp) {
    std::vector<int> layout = schema.group_layout(static_cast<int>(grp));
    for (size_t a = 0; a < layout.size(); ++a)
      for (int c = 0; c < layout[a]; ++c)
        keys.push_back({static_cast<int>(grp), static_cast<int>(a), c});
  }
  return keys;
}

void write_results_header(std::ostream& out, const ConceptSchema& schema) {
  out << "method,task,seed,split,acc_y,acc_c,ece_y,ece_c,mece_c,macro_f1";
  for (const auto& k : ova_layout(schema))
    out << ",ova_g" << k.group << "_a" << k.attr << "_c" << k.cls;
  out << "\n";
}

void write_results_row(std::ostream& out, const Scorer& scorer, const TaskSpec& task,
                       const ReasoningPlan& plan, const Split& split,
                       const std::string& split_tag, const std::string& method, uint64_t seed,
                       int bins) {
  if (split.empty()) return;
  const ConceptSchema& schema = task.schema;
  std::vector<PredictionRecord> y_recs, c_pooled;
  std::vector<int> y_pred, y_true;
  // Per (group, attr): pooled records for mECE; per (group, attr, class):
  // pooled probabilities for OVA entropy.
  std::map<std::pair<int, int>, std::vector<PredictionRecord>> comp_recs;
  std::map<std::tuple<int, int, int>, std::vector<double>> ova_probs;

  for (size_t e = 0; e < split.size(); ++e) {
    const Example& ex = split[e];
    Factors p = scorer.concepts(ex.x, static_cast<long>(e));
    auto dist = scorer.label_dist(ex.x, static_cast<long>(e));
    long arg_y = dist.begin()->first;
    double best = dist.begin()->second;
    for (const auto& [y, q] : dist)
      if (q > best) {
        best = q;
        arg_y = y;
      }
    y_recs.push_back({best, arg_y == ex.y});
    int cls_pred = -1, cls_true = -1;
    for (size_t k = 0; k < plan.label_values.size(); ++k) {
      if (plan.label_values[k] == arg_y) cls_pred = static_cast<int>(k);
      if (plan.label_values[k] == ex.y) cls_true = static_cast<int>(k);
    }
    y_pred.push_back(cls_pred);
    y_true.push_back(cls_true);

    for (size_t obj = 0; obj < schema.objects.size(); ++obj) {
      int grp = schema.group_of_object(static_cast<int>(obj));
      for (size_t a = 0; a < schema.objects[obj].size(); ++a) {
        int vi = schema.objects[obj][a];
        int arg = 0;
        for (size_t v = 1; v < p[vi].size(); ++v)
          if (p[vi][v] > p[vi][arg]) arg = static_cast<int>(v);
        PredictionRecord rec{p[vi][arg], arg == ex.g[vi]};
        c_pooled.push_back(rec);
        comp_recs[{grp, static_cast<int>(a)}].push_back(rec);
        for (size_t c = 0; c < p[vi].size(); ++c)
          ova_probs[{grp, static_cast<int>(a), static_cast<int>(c)}].push_back(p[vi][c]);
      }
    }
  }

  std::vector<double> comp_eces;
  for (const auto& [key, recs] : comp_recs) comp_eces.push_back(ece(recs, bins));

  out << method << ',' << task.name << ',' << seed << ',' << split_tag << ','
      << fmt(accuracy(y_recs)) << ',' << fmt(accuracy(c_pooled)) << ',' << fmt(ece(y_recs, bins))
      << ',' << fmt(ece_concepts(c_pooled, bins)) << ',' << fmt(mece(comp_eces)) << ','
      << fmt(macro_f1(y_pred, y_true, static_cast<int>(plan.label_values.size())));
  for (const auto& k : ova_layout(schema))
    out << ',' << fmt(ova_entropy(ova_probs[{k.group, k.attr, k.cls}]));
  out << "\n";
}

nlohmann::json ensemble_to_json(const Ensemble& ens, const TrainConfig& cfg,
                                const TaskSpec& task, const std::string& method) {
  nlohmann::json j;
  j["format"] = "nesyrs-ensemble";
  j["version"] = 1;
  j["task"] = task.name;
  j["task_hash"] = task_hash(task);
  j["config"] = config_to_json(cfg, method);
  j["lambda"] = ens.lambda;
  j["final_nll"] = ens.final_nll;
  j["members"] = nlohmann::json::array();
  for (const auto& m : ens.members) {
    nlohmann::json member;
    member["encoders"] = nlohmann::json::array();
    for (const auto& enc : m.encoders)
      member["encoders"].push_back(nlohmann::json::parse(mlp_to_json(enc)));
    if (m.kind == PredictorKind::SL)
      member["sl_head"] = nlohmann::json::parse(mlp_to_json(m.sl_head));
    j["members"].push_back(std::move(member));
  }
  return j;
}

Ensemble ensemble_from_json(const nlohmann::json& j, const TaskSpec& task,
                            const KnowledgeExpr& kb) {
  if (j.value("format", "") != "nesyrs-ensemble")
    throw std::runtime_error("checkpoint: unrecognized format");
  const auto& cfg = j.at("config");
  PredictorKind kind = cfg.at("kind").get<std::string>() == "sl" ? PredictorKind::SL
                                                                 : PredictorKind::DPL;
  Ensemble ens;
  ens.lambda = j.at("lambda").get<std::vector<double>>();
  ens.final_nll = j.value("final_nll", std::vector<double>{});
  for (const auto& member : j.at("members")) {
    NesyPredictor pred = make_predictor(task.schema, kb, kind, cfg.at("slot_dim").get<int>(),
                                        cfg.at("hidden").get<int>(),
                                        cfg.at("dropout").get<double>(),
                                        cfg.at("seed").get<uint64_t>());
    pred.w_sl = cfg.value("w_sl", 1.0);
    size_t gi = 0;
    for (const auto& enc : member.at("encoders")) pred.encoders[gi++] = mlp_from_json(enc.dump());
    if (kind == PredictorKind::SL) pred.sl_head = mlp_from_json(member.at("sl_head").dump());
    ens.members.push_back(std::move(pred));
  }
  return ens;
}

void write_manifest(const fs::path& dir, const std::string& command, const TaskSpec& task,
                    const nlohmann::json& extra) {
  nlohmann::json j;
  j["command"] = command;
  j["task"] = task.name;
  j["task_hash"] = task_hash(task);
  j["resolved"] = extra;
  std::ofstream out(dir / "manifest.json");
  out << j.dump(2) << "\n";
}

int cmd_train(const CommonOpts& o) {
  TaskSpec task = load_task(o.task_arg);
  KnowledgeExpr kb = parse_knowledge(task.knowledge, task.schema);
  ReasoningPlan plan = compile_plan(kb, task.schema);
  fs::path dir = output_root(o.out);
  fs::create_directories(dir);

  std::ofstream csv(dir / "results.csv");
  write_results_header(csv, task.schema);
  nlohmann::json manifest_cfgs = nlohmann::json::array();
  for (uint64_t seed : parse_seeds(o.seeds)) {
    TrainConfig cfg = resolve_config(task, o, seed);
    GeneratedDataset data = generate_dataset(task, derive_seed(seed, "data"));
    Ensemble ens = o.method == "de"
                       ? train_deep_ensemble(cfg, task.schema, kb, data.train)
                       : train_ensemble(cfg, task.schema, kb, data.train);
    Scorer scorer{&ens, o.method == "mcdo", cfg.mc_samples, seed};
    write_results_row(csv, scorer, task, plan, data.test, "test", o.method, seed, o.bins);
    write_results_row(csv, scorer, task, plan, data.ood, "ood", o.method, seed, o.bins);
    std::ofstream ck(dir / ("checkpoint_seed" + std::to_string(seed) + ".json"));
    ck << ensemble_to_json(ens, cfg, task, o.method).dump(2) << "\n";
    manifest_cfgs.push_back(config_to_json(cfg, o.method));
  }
  write_manifest(dir, "train", task, {{"runs", manifest_cfgs}, {"bins", o.bins}});
  return 0;
}

int cmd_analyze_rs(const CommonOpts& o) {
  TaskSpec task = load_task(o.task_arg);
  KnowledgeExpr kb = parse_knowledge(task.knowledge, task.schema);
  fs::path dir = output_root(o.out);
  fs::create_directories(dir);

  OptimalMapSet maps;
  try {
    maps = enumerate_optimal_maps(task.schema, kb, task.support);
  } catch (const SearchBudgetExceeded& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitSearchBudget;
  }
  auto [total, rs] = count_rs(maps);
  EquivalenceSets eq = equivalence_sets(maps, task.schema);
  std::vector<double> prior = task.prior;
  if (prior.empty())
    prior.assign(task.support.size(), 1.0 / static_cast<double>(task.support.size()));
  MaxEntropyResult me = max_entropy_mixture(maps, task.schema, prior);
  auto pve = per_value_entropy(maps, task.schema, me.weights);
  auto bounds = entropy_bounds(eq);

  nlohmann::json j;
  j["task"] = task.name;
  j["task_hash"] = task_hash(task);
  j["total_optima"] = total;
  j["rs_count"] = rs;
  j["maps"] = nlohmann::json::array();
  for (const auto& m : maps.maps) j["maps"].push_back(m.maps);
  j["equivalence_sets"] = nlohmann::json::array();
  j["entropy_bounds"] = nlohmann::json::array();
  j["max_entropy_per_value"] = nlohmann::json::array();
  for (size_t grp = 0; grp < eq.size(); ++grp) {
    nlohmann::json ge = nlohmann::json::object(), gb = nlohmann::json::object(),
                   gm = nlohmann::json::object();
    for (const auto& [v, images] : eq[grp])
      ge[std::to_string(v)] = std::vector<int>(images.begin(), images.end());
    for (const auto& [v, b] : bounds[grp]) gb[std::to_string(v)] = b;
    for (const auto& [v, h] : pve[grp]) gm[std::to_string(v)] = h;
    j["equivalence_sets"].push_back(ge);
    j["entropy_bounds"].push_back(gb);
    j["max_entropy_per_value"].push_back(gm);
  }
  j["max_entropy_mixture"] = me.weights.omega;
  j["max_entropy_objective"] = me.achieved_entropy;
  std::ofstream out(dir / "rs.json");
  out << j.dump(2) << "\n";
  write_manifest(dir, "analyze-rs", task, {{"node_budget", 50000000}});
  std::cout << "total_optima=" << total << " rs_count=" << rs << "\n";
  return 0;
}

int cmd_active(const CommonOpts& o, int budget, int batch_k, bool cold_start,
               const std::string& strategy_flag) {
  TaskSpec task = load_task(o.task_arg);
  KnowledgeExpr kb = parse_knowledge(task.knowledge, task.schema);
  fs::path dir = output_root(o.out);
  fs::create_directories(dir);

  std::vector<Strategy> strategies;
  if (strategy_flag == "entropy" || strategy_flag == "both")
    strategies.push_back(Strategy::Entropy);
  if (strategy_flag == "random" || strategy_flag == "both")
    strategies.push_back(Strategy::Random);
  if (strategies.empty()) {
    std::cerr << "error: --strategy must be entropy|random|both\n";
    return 1;
  }

  std::ofstream csv(dir / "curve.csv");
  csv << "strategy,method,seed,queries,acc_c,acc_y\n";
  nlohmann::json manifest_cfgs = nlohmann::json::array();
  for (uint64_t seed : parse_seeds(o.seeds)) {
    GeneratedDataset data = generate_dataset(task, derive_seed(seed, "data"));
    // Initial supervision: 10 objects of class (0,0) ("red squares").
    std::vector<std::pair<int, int>> init;
    for (size_t e = 0; e < data.train.size() && init.size() < 10; ++e)
      for (size_t obj = 0; obj < task.schema.objects.size() && init.size() < 10; ++obj)
        if (task.schema.object_value(data.train[e].g, static_cast<int>(obj)) == 0)
          init.emplace_back(static_cast<int>(e), static_cast<int>(obj));
    for (Strategy strat : strategies) {
      ActiveConfig cfg;
      cfg.train = resolve_config(task, o, seed);
      // The repulsion term resists annotation-driven consensus, so the
      // ensemble needs a larger supervision weight than a single model.
      if (o.w_c < 0) cfg.train.w_c = o.method == "bears" ? 1.0 : 0.2;
      cfg.strategy = strat;
      cfg.budget = budget;
      cfg.batch_k = batch_k;
      cfg.cold_start = cold_start;
      Oracle oracle(&data.train, &task.schema);
      ActiveResult res =
          active_loop(task.schema, kb, data.train, data.test, oracle, cfg, init);
      const char* tag = strat == Strategy::Entropy ? "entropy" : "random";
      for (const auto& pt : res.curve)
        csv << tag << ',' << o.method << ',' << seed << ',' << pt.queries << ','
            << fmt(pt.acc_c) << ',' << fmt(pt.acc_y) << "\n";
      manifest_cfgs.push_back(config_to_json(cfg.train, o.method));
    }
  }
  write_manifest(dir, "active", task,
                 {{"runs", manifest_cfgs},
                  {"budget", budget},
                  {"batch_k", batch_k},
                  {"cold_start", cold_start},
                  {"strategy", strategy_flag}});
  return 0;
}

int cmd_eval(const CommonOpts& o, const std::string& checkpoint, const std::string& split_tag) {
  TaskSpec task = load_task(o.task_arg);
  KnowledgeExpr kb = parse_knowledge(task.knowledge, task.schema);
  ReasoningPlan plan = compile_plan(kb, task.schema);
  std::ifstream in(checkpoint);
  if (!in) {
    std::cerr << "error: checkpoint '" << checkpoint << "' not found\n";
    return 1;
  }
  nlohmann::json j;
  in >> j;
  if (j.value("task_hash", "") != task_hash(task)) {
    std::cerr << "error: checkpoint task hash does not match '" << task.name << "'\n";
    return kExitHashMismatch;
  }
  Ensemble ens = ensemble_from_json(j, task, kb);
  uint64_t seed = j.at("config").at("seed").get<uint64_t>();
  std::string method = j.at("config").at("method").get<std::string>();
  GeneratedDataset data = generate_dataset(task, derive_seed(seed, "data"));
  const Split* split = &data.test;
  if (split_tag == "train") split = &data.train;
  else if (split_tag == "val") split = &data.val;
  else if (split_tag == "ood") split = &data.ood;
  else if (split_tag != "test") {
    std::cerr << "error: unknown split '" << split_tag << "'\n";
    return 1;
  }
  fs::path dir = output_root(o.out);
  fs::create_directories(dir);
  std::ofstream csv(dir / "eval.csv");
  write_results_header(csv, task.schema);
  Scorer scorer{&ens, method == "mcdo", j.at("config").at("mc_samples").get<int>(), seed};
  write_results_row(csv, scorer, task, plan, *split, split_tag, method, seed, o.bins);
  write_manifest(dir, "eval", task, {{"checkpoint", checkpoint}, {"split", split_tag}});
  return 0;
}

int cmd_gen_data(const CommonOpts& o) {
  TaskSpec task = load_task(o.task_arg);
  fs::path dir = output_root(o.out);
  fs::create_directories(dir);
  uint64_t seed = parse_seeds(o.seeds)[0];
  GeneratedDataset data = generate_dataset(task, derive_seed(seed, "data"));
  std::ofstream csv(dir / (task.name + "_data.csv"));
  export_dataset_csv(data, task.schema, csv);
  std::ofstream tj(dir / (task.name + "_task.json"));
  tj << task_to_json(task).dump(2) << "\n";
  write_manifest(dir, "gen-data", task, {{"seed", seed}});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"neuro-symbolic RS-awareness experiments"};
  app.require_subcommand(1);

  CommonOpts train_o, rs_o, active_o, eval_o, gen_o;
  auto* train = app.add_subcommand("train", "train a method and write metrics");
  add_common(train, train_o, true);
  auto* rs = app.add_subcommand("analyze-rs", "enumerate and analyze reasoning shortcuts");
  add_common(rs, rs_o, false);
  auto* active = app.add_subcommand("active", "active concept acquisition");
  add_common(active, active_o, true);
  int budget = 50, batch_k = 10;
  bool cold_start = false;
  std::string strategy = "both";
  active->add_option("--budget", budget, "total objects to acquire");
  active->add_option("--batch-k", batch_k, "objects per acquisition round");
  active->add_flag("--cold-start", cold_start, "retrain from scratch each round");
  active->add_option("--strategy", strategy, "entropy|random|both");
  auto* evalc = app.add_subcommand("eval", "evaluate a checkpoint");
  add_common(evalc, eval_o, false);
  std::string checkpoint, split_tag = "test";
  evalc->add_option("--checkpoint", checkpoint, "ensemble checkpoint path")->required();
  evalc->add_option("--split", split_tag, "train|val|test|ood");
  auto* gen = app.add_subcommand("gen-data", "export a dataset and the task spec");
  add_common(gen, gen_o, false);

  CLI11_PARSE(app, argc, argv);
  try {
    if (*train) return cmd_train(train_o);
    if (*rs) return cmd_analyze_rs(rs_o);
    if (*active) return cmd_active(active_o, budget, batch_k, cold_start, strategy);
    if (*evalc) return cmd_eval(eval_o, checkpoint, split_tag);
    if (*gen) return cmd_gen_data(gen_o);
  } catch (const SearchBudgetExceeded& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitSearchBudget;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
