// caiac: command-line driver for the augmentation pipeline.
//
// Every subcommand reads the run config (--config, defaults when omitted),
// applies flag overrides, and writes into --out. Inputs default to the
// standard artifact names inside --out, so subcommands chain without flags.
//
// exit status: 0 ok, 1 validation error or missing input, 2 runtime failure

#include <CLI11.hpp>
#include <chrono>
#include <iostream>

#include "caiac/caiac.hpp"

namespace fs = std::filesystem;
using namespace caiac;

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = ".";
  std::optional<double> theta;
  std::optional<double> ratio;
  std::string regime = "both";
  std::optional<unsigned> jobs;
  std::string data, model, scores, policy;
  std::string methods = "caiac,random_swap";
  std::size_t max_states = 1000;
  bool oracle = false;
  bool all_states = false;
};

struct Context {
  RunConfig cfg;
  std::string hash;
  fs::path out;
  Options opt;

  fs::path input(const std::string& flag, const char* name) const {
    fs::path p = flag.empty() ? out / name : fs::path(flag);
    if (!fs::exists(p)) throw ConfigError("missing input file '" + p.string() + "'");
    return p;
  }
  fs::path output(const std::string& name) const { return out / name; }
  std::string tagged(std::string_view stem, std::string_view id, std::string_view ext) const {
    return std::string(stem) + "_" + std::string(id) + "_" + hash + std::string(ext);
  }
};

Context make_context(const Options& opt) {
  Context c;
  c.opt = opt;
  c.cfg = opt.config.empty() ? RunConfig{} : load_config(opt.config);
  if (opt.seed) c.cfg.seed = *opt.seed;
  if (opt.theta) c.cfg.theta = *opt.theta;
  if (opt.ratio) c.cfg.cf_ratio = *opt.ratio;
  if (opt.jobs) c.cfg.jobs = *opt.jobs;
  c.cfg.validate();
  c.cfg.model.seed = c.cfg.stage_seed("model");
  c.hash = config_hash(c.cfg);
  c.out = opt.out;
  fs::create_directories(c.out);
  return c;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open '" + p.string() + "' for writing");
  os << text;
}

void write_json(const fs::path& p, const nlohmann::json& j) { write_text(p, j.dump(2) + "\n"); }

std::string real(double v) {
  std::string s;
  detail::append_real(s, v);
  return s;
}

SplitSpec split_spec(const RunConfig& cfg) { return {cfg.dataset.split_fraction, cfg.stage_seed("split")}; }

// ----------------------------------------------------------------------------

std::vector<fs::path> cmd_gen_data(const Context& c) {
  const auto& cfg = c.cfg;
  const auto d = generate_dataset(cfg.world, cfg.tasks, cfg.dataset.n_trajectories, cfg.dataset.expert_fraction,
                                  cfg.dataset.horizon, cfg.stage_seed("data"));
  const auto p = c.output("dataset.jsonl");
  save(d, p);
  std::cout << "gen-data: " << d.trajectories.size() << " trajectories, " << d.transition_count() << " transitions -> "
            << p.string() << "\n";
  return {p};
}

std::vector<fs::path> cmd_train_model(const Context& c) {
  const auto d = load(c.input(c.opt.data, "dataset.jsonl"));
  const auto [train, val] = split(d, split_spec(c.cfg));
  const auto res = train_model(train, val, c.cfg.model);
  const auto mp = c.output("model.bin");
  save_model(res.model, mp, c.hash);
  std::string csv = "step,train_nll,val_nll,val_mse\n";
  for (const auto& p : res.curve)
    csv += std::to_string(p.step) + "," + real(p.train_nll) + "," + real(p.val_nll) + "," + real(p.val_mse) + "\n";
  const auto cp = c.output("model_curve.csv");
  write_text(cp, csv);
  const auto& last = res.curve.back();
  std::cout << "train-model: step " << res.selected_step << " selected, val_nll " << real(last.val_nll) << " val_mse "
            << real(last.val_mse) << " -> " << mp.string() << "\n";
  return {mp, cp};
}

int cmd_check_grad(const Context& c) {
  const auto& cfg = c.cfg;
  const auto d = generate_dataset(cfg.world, cfg.tasks, 2, 0.5, 4, cfg.stage_seed("check-grad"));
  const auto layout = layout_for(cfg.world);
  const auto model = GaussianTransitionModel::create(layout, cfg.model.hidden, cfg.stage_seed("check-grad"));
  const auto rep = check_gradients(model, dataset_batch(layout, d));
  std::cout << "check-grad: max relative error " << real(rep.max_relative_error) << "\n";
  return rep.max_relative_error < 1e-4 ? 0 : 1;
}

std::vector<fs::path> cmd_score(const Context& c) {
  const auto d = load(c.input(c.opt.data, "dataset.jsonl"));
  const auto seed = c.cfg.stage_seed("score");
  InfluenceScores sc;
  if (c.opt.oracle) {
    sc = score_dataset(d, OracleDynamics(d.config), c.cfg.k_actions, seed, c.cfg.jobs);
  } else {
    const auto m = load_model(c.input(c.opt.model, "model.bin"));
    sc = score_dataset(d, m, c.cfg.k_actions, seed, c.cfg.jobs);
  }
  const auto p = c.output("scores.jsonl");
  save_scores(sc, p, c.opt.theta);
  std::cout << "score: " << sc.state_count() << " states (" << sc.scorer_id << ") -> " << p.string() << "\n";
  return {p};
}

std::vector<fs::path> cmd_roc(const Context& c) {
  const auto d = load(c.input(c.opt.data, "dataset.jsonl"));
  const auto sc = load_scores(c.input(c.opt.scores, "scores.jsonl"));
  check_alignment(sc, d);
  std::vector<std::size_t> idx;
  if (c.opt.all_states) {
    idx.resize(d.trajectories.size());
    std::iota(idx.begin(), idx.end(), 0);
  } else {
    idx = split_indices(d.trajectories.size(), split_spec(c.cfg)).second;
  }
  // First max_states states of the selected trajectories.
  Dataset sub{{}, d.config, d.provenance};
  InfluenceScores sub_sc{sc.K, sc.scorer_id, sc.seed, {}};
  std::size_t states = 0;
  for (std::size_t i : idx) {
    if (states >= c.opt.max_states) break;
    auto t = d.trajectories[i];
    auto v = sc.values[i];
    const std::size_t keep = std::min(t.states.size(), c.opt.max_states - states);
    t.states.resize(keep);
    t.actions.resize(keep > 0 ? keep - 1 : 0);
    v.resize(keep);
    states += keep;
    sub.trajectories.push_back(std::move(t));
    sub_sc.values.push_back(std::move(v));
  }
  const auto ls = label_scores(sub_sc, sub);
  const auto r = roc_analysis(ls.scores, ls.labels);
  const auto y = r.youden();
  const auto jp = c.output(c.tagged("roc", sc.scorer_id, ".json"));
  write_json(jp, {{"scorer_id", sc.scorer_id},
                  {"states", states},
                  {"positives", r.positives},
                  {"negatives", r.negatives},
                  {"auc", r.auc},
                  {"youden_threshold", y.threshold},
                  {"youden_tpr", y.tpr},
                  {"youden_fpr", y.fpr},
                  {"config_hash", c.hash}});
  std::string csv = "threshold,tpr,fpr\n";
  for (const auto& p : r.points) csv += real(p.threshold) + "," + real(p.tpr) + "," + real(p.fpr) + "\n";
  const auto cp = c.output(c.tagged("roc", sc.scorer_id, ".csv"));
  write_text(cp, csv);
  std::cout << "roc: auc " << real(r.auc) << " over " << states << " states -> " << jp.string() << "\n";
  return {jp, cp};
}

std::vector<fs::path> cmd_augment(const Context& c) {
  const auto d = load(c.input(c.opt.data, "dataset.jsonl"));
  const auto sc = load_scores(c.input(c.opt.scores, "scores.jsonl"));
  const auto res = augment_dataset(d, sc, c.cfg.augment_config());
  const auto p = c.output("augmented.jsonl");
  save(res.dataset, p);
  std::cout << "augment: " << res.records.size() << " counterfactual windows from " << res.original_windows
            << " originals (" << res.skipped_draws << " empty draws) -> " << p.string() << "\n";
  return {p};
}

std::vector<AugmentMethod> parse_methods(const std::string& s) {
  std::vector<AugmentMethod> out;
  for (const auto& m : detail::split_list(s, ',')) out.push_back(parse_method(m));
  if (out.empty()) throw ConfigError("--methods is empty");
  return out;
}

std::vector<MethodReport> compare(const Context& c, const std::vector<AugmentMethod>& methods) {
  const auto d = load(c.input(c.opt.data, "dataset.jsonl"));
  const auto sc = load_scores(c.input(c.opt.scores, "scores.jsonl"));
  const Augmenter aug(d, sc, c.cfg.augment_config());
  return compare_methods(aug, methods, {c.cfg.eval.n_records, c.cfg.eval.k_sims, c.cfg.stage_seed("audit")});
}

std::vector<fs::path> cmd_eval_feasibility(const Context& c) {
  std::vector<fs::path> out;
  for (const auto& rep : compare(c, parse_methods(c.opt.methods))) {
    auto j = to_json(rep.feasibility);
    j["config_hash"] = c.hash;
    const auto jp = c.output(c.tagged("feasibility", rep.method_id, ".json"));
    write_json(jp, j);
    std::ostringstream csv;
    write_feasibility_csv(csv, rep.feasibility);
    const auto cp = c.output(c.tagged("feasibility", rep.method_id, ".csv"));
    write_text(cp, csv.str());
    std::cout << "eval-feasibility: " << rep.method_id << " pass rate " << real(rep.feasibility.pass_rate) << " over "
              << rep.records << " records -> " << jp.string() << "\n";
    out.push_back(jp);
    out.push_back(cp);
  }
  return out;
}

std::vector<fs::path> cmd_eval_support(const Context& c) {
  auto methods = parse_methods(c.opt.methods);
  if (std::find(methods.begin(), methods.end(), AugmentMethod::None) == methods.end())
    methods.insert(methods.begin(), AugmentMethod::None);
  std::vector<fs::path> out;
  for (const auto& rep : compare(c, methods)) {
    auto j = to_json(rep.support);
    j["config_hash"] = c.hash;
    j["records"] = rep.records;
    const auto p = c.output(c.tagged("support", rep.method_id, ".json"));
    write_json(p, j);
    std::cout << "eval-support: " << rep.method_id << " " << rep.support.occupied << "/" << rep.support.maximum
              << " occupied -> " << p.string() << "\n";
    out.push_back(p);
  }
  return out;
}

std::vector<fs::path> cmd_train_policy(const Context& c) {
  const auto d = load(c.input(c.opt.data, "dataset.jsonl"));
  const auto sc = load_scores(c.input(c.opt.scores, "scores.jsonl"));
  const auto res = train_policy(d, sc, c.cfg.policy_experiment(), c.cfg.cf_ratio, c.cfg.stage_seed("policy"));
  const auto pp = c.output("policy.bin");
  save_policy(res.policy, pp, c.hash);
  std::string csv = "step,mse\n";
  for (const auto& [s, l] : res.loss_curve) csv += std::to_string(s) + "," + real(l) + "\n";
  const auto cp = c.output("policy_curve.csv");
  write_text(cp, csv);
  std::cout << "train-policy: cf_ratio " << real(c.cfg.cf_ratio) << ", final mse " << real(res.loss_curve.back().second)
            << " -> " << pp.string() << "\n";
  return {pp, cp};
}

std::vector<fs::path> cmd_eval_policy(const Context& c) {
  const auto policy = load_policy(c.input(c.opt.policy, "policy.bin"));
  const auto& task = find_task(c.cfg.tasks, c.cfg.policy_task);
  std::vector<Regime> regimes;
  if (c.opt.regime == "both") regimes = {Regime::ID, Regime::OOD};
  else regimes = {parse_regime(c.opt.regime)};
  std::vector<fs::path> out;
  for (Regime r : regimes) {
    const auto rep = evaluate(policy, c.cfg.world, task, r, c.cfg.eval.episodes, c.cfg.eval.horizon,
                              derive_seed(c.cfg.stage_seed("policy"), "eval"), c.cfg.jobs);
    auto j = to_json(rep);
    j["config_hash"] = c.hash;
    const auto jp = c.output(c.tagged("eval", to_string(r), ".json"));
    write_json(jp, j);
    const auto cp = c.output(c.tagged("eval", to_string(r), ".csv"));
    write_text(cp, "task_id,regime,episodes,successes,success_rate,ci_low,ci_high\n" + rep.task_id + "," +
                       to_string(r) + "," + std::to_string(rep.episodes) + "," + std::to_string(rep.successes) + "," +
                       real(rep.success_rate) + "," + real(rep.ci_low) + "," + real(rep.ci_high) + "\n");
    std::cout << "eval-policy: " << task.id << " " << to_string(r) << " success " << real(rep.success_rate) << " -> "
              << jp.string() << "\n";
    out.push_back(jp);
    out.push_back(cp);
  }
  return out;
}

std::vector<fs::path> cmd_ablate_ratio(const Context& c) {
  const auto d = load(c.input(c.opt.data, "dataset.jsonl"));
  const auto sc = load_scores(c.input(c.opt.scores, "scores.jsonl"));
  auto ratios = c.cfg.ablation.ratios;
  if (c.opt.ratio) ratios = {*c.opt.ratio};
  const auto seeds = c.cfg.ablation_seeds();
  const auto rows = ratio_ablation(d, sc, c.cfg.policy_experiment(), ratios, seeds);
  std::ostringstream csv;
  write_ablation_csv(csv, rows);
  const auto cp = c.output(c.tagged("ablation", "cf_ratio", ".csv"));
  write_text(cp, csv.str());
  nlohmann::json summary = nlohmann::json::array();
  for (double r : ratios) {
    std::vector<double> id, ood;
    for (const auto& row : rows)
      if (row.cf_ratio == r) {
        id.push_back(row.id.success_rate);
        ood.push_back(row.ood.success_rate);
      }
    auto mean = [](const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); };
    auto sd = [&](const std::vector<double>& v) {
      if (v.size() < 2) return 0.0;
      const double m = mean(v);
      double s = 0.0;
      for (double x : v) s += (x - m) * (x - m);
      return std::sqrt(s / static_cast<double>(v.size() - 1));
    };
    summary.push_back({{"cf_ratio", r}, {"seeds", id.size()}, {"id_mean", mean(id)}, {"id_std", sd(id)},
                       {"ood_mean", mean(ood)}, {"ood_std", sd(ood)}});
    std::cout << "ablate-ratio: cf_ratio " << real(r) << " id " << real(mean(id)) << " ood " << real(mean(ood))
              << " (sd " << real(sd(ood)) << ")\n";
  }
  const auto jp = c.output(c.tagged("ablation", "cf_ratio", ".json"));
  write_json(jp, {{"config_hash", c.hash}, {"rows", summary}});
  return {cp, jp};
}

std::string file_hash(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return hex64(hash_string(ss.str()));
}

void cmd_pipeline(const Context& c) {
  const fs::path cfg_path = c.output("config.ini");
  write_text(cfg_path, to_ini(c.cfg));
  std::vector<std::pair<std::string, std::vector<fs::path>>> stages;
  stages.emplace_back("gen-data", cmd_gen_data(c));
  stages.emplace_back("train-model", cmd_train_model(c));
  stages.emplace_back("score", cmd_score(c));
  stages.emplace_back("roc", cmd_roc(c));
  stages.emplace_back("augment", cmd_augment(c));
  stages.emplace_back("eval-feasibility", cmd_eval_feasibility(c));
  stages.emplace_back("eval-support", cmd_eval_support(c));
  stages.emplace_back("train-policy", cmd_train_policy(c));
  stages.emplace_back("eval-policy", cmd_eval_policy(c));

  nlohmann::json artifacts = nlohmann::json::array();
  artifacts.push_back({{"stage", "config"}, {"path", "config.ini"}, {"hash", file_hash(cfg_path)}});
  for (const auto& [stage, paths] : stages)
    for (const auto& p : paths)
      artifacts.push_back({{"stage", stage}, {"path", p.filename().string()}, {"hash", file_hash(p)}});
  const auto mp = c.output("manifest.json");
  write_json(mp, {{"config_hash", c.hash}, {"seed", c.cfg.seed}, {"artifacts", artifacts}});
  std::cout << "pipeline: " << artifacts.size() << " artifacts -> " << mp.string() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"caiac: counterfactual augmentation from causal action influence"};
  app.require_subcommand(1);
  Options opt;

  auto add_common = [&](CLI::App* s) {
    s->add_option("--config", opt.config, "run config (ini); defaults when omitted");
    s->add_option("--seed", opt.seed, "override run.seed");
    s->add_option("--out", opt.out, "output directory")->capture_default_str();
    s->add_option("--jobs", opt.jobs, "worker threads");
  };
  auto add_inputs = [&](CLI::App* s) {
    s->add_option("--data", opt.data, "dataset (default <out>/dataset.jsonl)");
    s->add_option("--scores", opt.scores, "scores (default <out>/scores.jsonl)");
  };

  std::map<std::string, CLI::App*> sub;
  auto add = [&](const std::string& name, const std::string& help) {
    auto* s = app.add_subcommand(name, help);
    add_common(s);
    sub[name] = s;
    return s;
  };

  add("gen-data", "generate the offline dataset");
  add("train-model", "train the Gaussian transition model")->add_option("--data", opt.data, "dataset");
  add("check-grad", "finite-difference gradient check on a toy batch");
  {
    auto* s = add("score", "CAI scores for every state");
    s->add_option("--data", opt.data, "dataset");
    s->add_option("--model", opt.model, "model checkpoint (default <out>/model.bin)");
    s->add_option("--theta", opt.theta, "also emit uncontrollable sets");
    s->add_flag("--oracle", opt.oracle, "score with the ground-truth dynamics");
  }
  {
    auto* s = add("roc", "ROC of scores against ground-truth influence");
    add_inputs(s);
    s->add_option("--max-states", opt.max_states, "states to evaluate")->capture_default_str();
    s->add_flag("--all", opt.all_states, "use every trajectory, not just the validation split");
  }
  for (const char* name : {"augment", "eval-feasibility", "eval-support", "train-policy", "ablate-ratio"}) {
    auto* s = add(name, "");
    add_inputs(s);
    s->add_option("--theta", opt.theta, "override influence.theta");
    s->add_option("--ratio", opt.ratio, "override augment.cf_ratio");
  }
  sub["augment"]->description("materialize a counterfactual dataset");
  sub["eval-feasibility"]->description("simulator replay of counterfactual windows");
  sub["eval-support"]->description("binned joint support of raw and augmented states");
  sub["train-policy"]->description("goal-conditioned behaviour cloning");
  sub["ablate-ratio"]->description("policy success across cf_ratio values and seeds");
  for (const char* name : {"eval-feasibility", "eval-support"})
    sub[name]->add_option("--methods", opt.methods, "comma separated: caiac, random_swap, none")->capture_default_str();
  {
    auto* s = add("eval-policy", "policy success in ID and OOD resets");
    s->add_option("--policy", opt.policy, "policy checkpoint (default <out>/policy.bin)");
    s->add_option("--regime", opt.regime, "ID, OOD or both")->capture_default_str();
  }
  {
    auto* s = add("pipeline", "gen-data through eval-policy, with a manifest");
    s->add_option("--theta", opt.theta, "override influence.theta");
    s->add_option("--ratio", opt.ratio, "override augment.cf_ratio");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  const std::string name = app.get_subcommands().front()->get_name();
  try {
    const Context c = make_context(opt);
    if (name == "gen-data") cmd_gen_data(c);
    else if (name == "train-model") cmd_train_model(c);
    else if (name == "check-grad") return cmd_check_grad(c);
    else if (name == "score") cmd_score(c);
    else if (name == "roc") cmd_roc(c);
    else if (name == "augment") cmd_augment(c);
    else if (name == "eval-feasibility") cmd_eval_feasibility(c);
    else if (name == "eval-support") cmd_eval_support(c);
    else if (name == "train-policy") cmd_train_policy(c);
    else if (name == "eval-policy") cmd_eval_policy(c);
    else if (name == "ablate-ratio") cmd_ablate_ratio(c);
    else if (name == "pipeline") cmd_pipeline(c);
    return 0;
  } catch (const ConfigError& e) {
    std::cerr << "caiac " << name << ": " << e.what() << "\n";
    return 1;
  } catch (const SchemaError& e) {
    std::cerr << "caiac " << name << ": " << e.what() << "\n";
    return 1;
  } catch (const ParseError& e) {
    std::cerr << "caiac " << name << ": " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "caiac " << name << ": " << e.what() << "\n";
    return 2;
  }
}
