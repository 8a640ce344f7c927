#pragma once

// Run configuration: flat key = value pairs under [section] headers.
//
//   [run]        seed, jobs
//   [world]      WorldConfig fields
//   [task.<id>]  goal_entities, goal_positions, success_radius, nuisance,
//                ood_randomize, ood_pin, ood_randomize_prob
//   [dataset]    n_trajectories, expert_fraction, horizon, split_fraction
//   [model]      hidden, steps, batch_size, lr, eval_every, selection
//   [influence]  k_actions, theta
//   [augment]    kappa, cf_ratio
//   [policy]     task, hidden, steps, batch_size, lr
//   [eval]       episodes, horizon, n_records, k_sims
//   [ablation]   ratios, seeds
//
// Lists are comma separated; point lists use ';' between points and ','
// inside them ("-0.5,0; 0.5,0"); entity maps are "3:0.7,0.7; 4:0.7,-0.7".
// Any [task.*] section replaces the built-in tasks.

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "caiac/policy.hpp"

namespace caiac {

struct DatasetConfig {
  std::size_t n_trajectories = 2400;
  double expert_fraction = 0.3;
  int horizon = 50;
  double split_fraction = 0.9;
};

struct EvalConfig {
  std::size_t episodes = 50;
  int horizon = 400;
  std::size_t n_records = 1000;
  std::size_t k_sims = 50;
};

struct AblationConfig {
  std::vector<double> ratios{0.0, 0.5, 0.9, 1.0};
  std::size_t seeds = 10;
};

struct RunConfig {
  std::uint64_t seed = 0;
  unsigned jobs = 1;
  WorldConfig world;
  std::vector<TaskSpec> tasks = default_tasks();
  DatasetConfig dataset;
  ModelTrainConfig model{{64, 64}, 60000, 256, 8e-4, 500, 0, "final"};
  std::size_t k_actions = 64;
  double theta = 0.2;
  std::size_t kappa = 1;
  double cf_ratio = 0.5;
  std::string policy_task = "push1";
  BcTrainConfig policy;
  EvalConfig eval;
  AblationConfig ablation;

  void validate() const;

  /// Seed for one pipeline stage: derive_seed(seed, stage).
  std::uint64_t stage_seed(std::string_view stage) const { return derive_seed(seed, stage); }

  AugmentConfig augment_config() const { return {theta, kappa, cf_ratio, stage_seed("augment")}; }

  PolicyExperiment policy_experiment() const {
    PolicyExperiment e;
    e.tasks = tasks;
    e.task_id = policy_task;
    e.augment = augment_config();
    e.bc = policy;
    e.episodes = eval.episodes;
    e.horizon = eval.horizon;
    e.jobs = jobs;
    return e;
  }

  std::vector<std::uint64_t> ablation_seeds() const {
    std::vector<std::uint64_t> s;
    for (std::size_t i = 0; i < ablation.seeds; ++i) s.push_back(derive_seed(seed, "ablation", i));
    return s;
  }
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split_list(std::string_view s, char sep) {
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

template <typename T>
T parse_number(const std::string& key, const std::string& text) {
  const std::string t = trim(text);
  T v{};
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
  if (ec != std::errc{} || ptr != t.data() + t.size() || t.empty())
    throw ConfigError("config key '" + key + "': cannot parse '" + t + "'");
  return v;
}

template <typename T>
std::vector<T> parse_number_list(const std::string& key, const std::string& text) {
  std::vector<T> out;
  for (const auto& item : split_list(text, ',')) out.push_back(parse_number<T>(key, item));
  return out;
}

inline Vec2 parse_point(const std::string& key, const std::string& text) {
  const auto v = parse_number_list<double>(key, text);
  if (v.size() != 2) throw ConfigError("config key '" + key + "': expected a point 'x,y', got '" + text + "'");
  return {v[0], v[1]};
}

inline std::map<int, Vec2> parse_entity_points(const std::string& key, const std::string& text) {
  std::map<int, Vec2> out;
  for (const auto& item : split_list(text, ';')) {
    const auto colon = item.find(':');
    if (colon == std::string::npos) throw ConfigError("config key '" + key + "': expected 'entity:x,y', got '" + item + "'");
    out[parse_number<int>(key, item.substr(0, colon))] = parse_point(key, item.substr(colon + 1));
  }
  return out;
}

template <typename T>
std::string join(const std::vector<T>& v, std::string_view sep = ",") {
  std::ostringstream os;
  os.precision(17);
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? sep : "") << v[i];
  return os.str();
}

/// Shortest text that reads back to the same double.
inline std::string fmt(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return {buf, r.ptr};
}

inline std::string fmt_point(const Vec2& p) { return fmt(p[0]) + "," + fmt(p[1]); }

inline TaskSpec parse_task(const std::string& id, const boost::property_tree::ptree& sec) {
  TaskSpec t;
  t.id = id;
  for (const auto& [k, node] : sec) {
    const std::string key = "task." + id + "." + k;
    const std::string v = node.get_value<std::string>();
    if (k == "goal_entities") t.goal_entities = parse_number_list<int>(key, v);
    else if (k == "goal_positions") {
      t.goal_positions.clear();
      for (const auto& p : split_list(v, ';')) t.goal_positions.push_back(parse_point(key, p));
    } else if (k == "success_radius") t.success_radius = parse_number<double>(key, v);
    else if (k == "nuisance") t.nuisance_rule = parse_entity_points(key, v);
    else if (k == "ood_randomize") {
      const auto l = parse_number_list<int>(key, v);
      t.ood_randomize = {l.begin(), l.end()};
    } else if (k == "ood_pin") t.ood_pin = parse_entity_points(key, v);
    else if (k == "ood_randomize_prob") t.ood_randomize_prob = parse_number<double>(key, v);
    else throw ConfigError("unknown config key '" + key + "'");
  }
  return t;
}

}  // namespace detail

inline void RunConfig::validate() const {
  world.validate();
  if (tasks.empty()) throw ConfigError("config defines no tasks");
  for (const auto& t : tasks) t.validate(world);
  find_task(tasks, policy_task);
  if (jobs < 1) throw ConfigError("run.jobs must be >= 1");
  if (dataset.n_trajectories < 2) throw ConfigError("dataset.n_trajectories must be >= 2");
  if (!(dataset.expert_fraction >= 0.0 && dataset.expert_fraction <= 1.0))
    throw ConfigError("dataset.expert_fraction must be in [0,1]");
  if (dataset.horizon < 1) throw ConfigError("dataset.horizon must be >= 1");
  if (!(dataset.split_fraction > 0.0 && dataset.split_fraction < 1.0))
    throw ConfigError("dataset.split_fraction must be in (0,1)");
  if (model.hidden.empty() || model.steps < 1 || model.batch_size < 1 || model.eval_every < 1 || !(model.lr > 0.0))
    throw ConfigError("invalid [model] section");
  if (model.selection != "final" && model.selection != "best_val_nll")
    throw ConfigError("model.selection must be 'final' or 'best_val_nll'");
  if (k_actions < 2) throw ConfigError("influence.k_actions must be >= 2");
  augment_config().validate();
  if (policy.hidden.empty() || policy.steps < 1 || policy.batch_size < 1 || !(policy.lr > 0.0))
    throw ConfigError("invalid [policy] section");
  if (eval.episodes < 1 || eval.horizon < 1 || eval.n_records < 1 || eval.k_sims < 2)
    throw ConfigError("invalid [eval] section");
  for (double r : ablation.ratios)
    if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("ablation.ratios must lie in [0,1]");
  if (ablation.seeds < 1) throw ConfigError("ablation.seeds must be >= 1");
}

inline RunConfig parse_config(std::istream& is) {
  namespace pt = boost::property_tree;
  pt::ptree tree;
  try {
    pt::ini_parser::read_ini(is, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError("config: " + e.message() + " (line " + std::to_string(e.line()) + ")");
  }
  RunConfig c;
  std::vector<TaskSpec> tasks;
  for (const auto& [section, sec] : tree) {
    if (section.rfind("task.", 0) == 0) {
      tasks.push_back(detail::parse_task(section.substr(5), sec));
      continue;
    }
    if (sec.empty() && !sec.data().empty()) throw ConfigError("config key '" + section + "' outside any [section]");
    for (const auto& [k, node] : sec) {
      const std::string key = section + "." + k;
      const std::string v = node.get_value<std::string>();
      using detail::parse_number;
      using detail::parse_number_list;
      if (key == "run.seed") c.seed = parse_number<std::uint64_t>(key, v);
      else if (key == "run.jobs") c.jobs = parse_number<unsigned>(key, v);
      else if (key == "world.n_objects") c.world.n_objects = parse_number<int>(key, v);
      else if (key == "world.arena_half_extent") c.world.arena_half_extent = parse_number<double>(key, v);
      else if (key == "world.interact_radius") c.world.interact_radius = parse_number<double>(key, v);
      else if (key == "world.max_action_step") c.world.max_action_step = parse_number<double>(key, v);
      else if (key == "world.noise_std") c.world.noise_std = parse_number<double>(key, v);
      else if (key == "dataset.n_trajectories") c.dataset.n_trajectories = parse_number<std::size_t>(key, v);
      else if (key == "dataset.expert_fraction") c.dataset.expert_fraction = parse_number<double>(key, v);
      else if (key == "dataset.horizon") c.dataset.horizon = parse_number<int>(key, v);
      else if (key == "dataset.split_fraction") c.dataset.split_fraction = parse_number<double>(key, v);
      else if (key == "model.hidden") c.model.hidden = parse_number_list<int>(key, v);
      else if (key == "model.steps") c.model.steps = parse_number<long>(key, v);
      else if (key == "model.batch_size") c.model.batch_size = parse_number<int>(key, v);
      else if (key == "model.lr") c.model.lr = parse_number<double>(key, v);
      else if (key == "model.eval_every") c.model.eval_every = parse_number<long>(key, v);
      else if (key == "model.selection") c.model.selection = detail::trim(v);
      else if (key == "influence.k_actions") c.k_actions = parse_number<std::size_t>(key, v);
      else if (key == "influence.theta") c.theta = parse_number<double>(key, v);
      else if (key == "augment.kappa") c.kappa = parse_number<std::size_t>(key, v);
      else if (key == "augment.cf_ratio") c.cf_ratio = parse_number<double>(key, v);
      else if (key == "policy.task") c.policy_task = detail::trim(v);
      else if (key == "policy.hidden") c.policy.hidden = parse_number_list<int>(key, v);
      else if (key == "policy.steps") c.policy.steps = parse_number<long>(key, v);
      else if (key == "policy.batch_size") c.policy.batch_size = parse_number<int>(key, v);
      else if (key == "policy.lr") c.policy.lr = parse_number<double>(key, v);
      else if (key == "eval.episodes") c.eval.episodes = parse_number<std::size_t>(key, v);
      else if (key == "eval.horizon") c.eval.horizon = parse_number<int>(key, v);
      else if (key == "eval.n_records") c.eval.n_records = parse_number<std::size_t>(key, v);
      else if (key == "eval.k_sims") c.eval.k_sims = parse_number<std::size_t>(key, v);
      else if (key == "ablation.ratios") c.ablation.ratios = parse_number_list<double>(key, v);
      else if (key == "ablation.seeds") c.ablation.seeds = parse_number<std::size_t>(key, v);
      else throw ConfigError("unknown config key '" + key + "'");
    }
  }
  if (!tasks.empty()) c.tasks = std::move(tasks);
  c.validate();
  return c;
}

inline RunConfig parse_config(const std::string& text) {
  std::istringstream is(text);
  return parse_config(is);
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file '" + path.string() + "'");
  return parse_config(is);
}

/// Canonical text form; every field is written, so it also documents defaults.
inline std::string to_ini(const RunConfig& c) {
  using detail::fmt;
  using detail::join;
  std::ostringstream os;
  os << "[run]\nseed = " << c.seed << "\njobs = " << c.jobs << "\n\n";
  os << "[world]\nn_objects = " << c.world.n_objects << "\narena_half_extent = " << fmt(c.world.arena_half_extent)
     << "\ninteract_radius = " << fmt(c.world.interact_radius) << "\nmax_action_step = " << fmt(c.world.max_action_step)
     << "\nnoise_std = " << fmt(c.world.noise_std) << "\n\n";
  for (const auto& t : c.tasks) {
    std::vector<std::string> goals, nuisance, pins;
    for (const auto& g : t.goal_positions) goals.push_back(detail::fmt_point(g));
    for (const auto& [j, p] : t.nuisance_rule) nuisance.push_back(std::to_string(j) + ":" + detail::fmt_point(p));
    for (const auto& [j, p] : t.ood_pin) pins.push_back(std::to_string(j) + ":" + detail::fmt_point(p));
    os << "[task." << t.id << "]\ngoal_entities = " << join(t.goal_entities) << "\ngoal_positions = " << join(goals, "; ")
       << "\nsuccess_radius = " << fmt(t.success_radius) << "\nnuisance = " << join(nuisance, "; ")
       << "\nood_randomize = " << join(std::vector<int>(t.ood_randomize.begin(), t.ood_randomize.end()))
       << "\nood_pin = " << join(pins, "; ") << "\nood_randomize_prob = " << fmt(t.ood_randomize_prob) << "\n\n";
  }
  os << "[dataset]\nn_trajectories = " << c.dataset.n_trajectories << "\nexpert_fraction = " << fmt(c.dataset.expert_fraction)
     << "\nhorizon = " << c.dataset.horizon << "\nsplit_fraction = " << fmt(c.dataset.split_fraction) << "\n\n";
  os << "[model]\nhidden = " << join(c.model.hidden) << "\nsteps = " << c.model.steps << "\nbatch_size = " << c.model.batch_size
     << "\nlr = " << fmt(c.model.lr) << "\neval_every = " << c.model.eval_every << "\nselection = " << c.model.selection
     << "\n\n";
  os << "[influence]\nk_actions = " << c.k_actions << "\ntheta = " << fmt(c.theta) << "\n\n";
  os << "[augment]\nkappa = " << c.kappa << "\ncf_ratio = " << fmt(c.cf_ratio) << "\n\n";
  os << "[policy]\ntask = " << c.policy_task << "\nhidden = " << join(c.policy.hidden) << "\nsteps = " << c.policy.steps
     << "\nbatch_size = " << c.policy.batch_size << "\nlr = " << fmt(c.policy.lr) << "\n\n";
  os << "[eval]\nepisodes = " << c.eval.episodes << "\nhorizon = " << c.eval.horizon << "\nn_records = " << c.eval.n_records
     << "\nk_sims = " << c.eval.k_sims << "\n\n";
  std::vector<std::string> ratios;
  for (double r : c.ablation.ratios) ratios.push_back(fmt(r));
  os << "[ablation]\nratios = " << join(ratios) << "\nseeds = " << c.ablation.seeds << "\n";
  return os.str();
}

inline std::string hex64(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

/// Hash of the canonical form, so formatting and key order do not matter.
/// jobs is excluded: it never changes results.
inline std::string config_hash(const RunConfig& c) {
  RunConfig copy = c;
  copy.jobs = 1;
  return hex64(hash_string(to_ini(copy)));
}

}  // namespace caiac
