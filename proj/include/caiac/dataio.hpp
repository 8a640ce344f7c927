#pragma once

// Offline data: scripted expert and random behaviour policies, dataset
// generation, JSON Lines storage and train/validation splitting.
//
// File layout (one JSON object per line):
//   line 1   {"format":"caiac-dataset","version":1,"world":{...},"provenance":{...},
//             "n_trajectories":N}
//   line 2.. {"task_id","regime","seed","policy","entity_dims","states","actions"
//             [,"counterfactual":{"source":[traj,step],"swaps":[[entity,traj,step],...]}]}
// Reals are written with 17 significant digits so load(save(d)) == d.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <span>
#include <sstream>

#include <json.hpp>

#include "caiac/world.hpp"

namespace caiac {

/// (trajectory index, step index) into a dataset.
struct StepRef {
  std::size_t traj = 0;
  std::size_t step = 0;
  friend bool operator==(const StepRef&, const StepRef&) = default;
  friend auto operator<=>(const StepRef&, const StepRef&) = default;
};

struct SwapSource {
  int entity = 0;
  StepRef donor;
  friend bool operator==(const SwapSource&, const SwapSource&) = default;
};

struct CounterfactualProvenance {
  StepRef source;
  std::vector<SwapSource> swaps;
  friend bool operator==(const CounterfactualProvenance&, const CounterfactualProvenance&) = default;
};

struct Trajectory {
  std::vector<FactoredState> states;
  std::vector<Action> actions;
  std::string task_id;
  Regime regime = Regime::ID;
  std::uint64_t seed = 0;
  std::string policy;  // "expert", "random" or "counterfactual"
  std::optional<CounterfactualProvenance> counterfactual;

  std::size_t length() const { return actions.size(); }

  void validate() const {
    if (states.size() != actions.size() + 1)
      throw SchemaError("trajectory '" + task_id + "': expected len(states) == len(actions) + 1");
    for (const auto& s : states)
      if (s.size() != states.front().size())
        throw SchemaError("trajectory '" + task_id + "': inconsistent entity layout");
  }

  friend bool operator==(const Trajectory&, const Trajectory&) = default;
};

struct Provenance {
  double expert_fraction = 0.0;
  std::uint64_t generator_seed = 0;
  std::string created_by{kVersion};
  friend bool operator==(const Provenance&, const Provenance&) = default;
};

struct Dataset {
  std::vector<Trajectory> trajectories;
  WorldConfig config;
  Provenance provenance;

  std::size_t transition_count() const {
    std::size_t n = 0;
    for (const auto& t : trajectories) n += t.length();
    return n;
  }
  std::size_t state_count() const {
    std::size_t n = 0;
    for (const auto& t : trajectories) n += t.states.size();
    return n;
  }

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

struct SplitSpec {
  double train_fraction = 0.9;
  std::uint64_t split_seed = 0;
};

// ----------------------------------------------------------------------------
// Behaviour policies
// ----------------------------------------------------------------------------

/// Greedy two-phase controller. Walks to the point just behind the first
/// unsolved goal object (relative to its goal), then pushes it to the goal.
inline Action scripted_expert(const FactoredState& state, const TaskSpec& task, const WorldConfig& config) {
  if (is_success(state, task)) return {};
  const Vec2& agent = state.agent();
  for (std::size_t g = 0; g < task.goal_entities.size(); ++g) {
    const Vec2& obj = state[task.goal_entities[g]];
    const Vec2& goal = task.goal_positions[g];
    if (distance(obj, goal) <= task.success_radius) continue;

    if (within_reach(agent, obj, config)) {
      return clip_action(Action{{goal[0] - obj[0], goal[1] - obj[1]}}, config);
    }
    const double d = distance(obj, goal);
    const double back = 0.5 * config.interact_radius;
    Vec2 target{obj[0] - back * (goal[0] - obj[0]) / d, obj[1] - back * (goal[1] - obj[1]) / d};
    target = {clamp_to_arena(target[0], config), clamp_to_arena(target[1], config)};
    return clip_action(Action{{target[0] - agent[0], target[1] - agent[1]}}, config);
  }
  return {};
}

inline Action random_policy(const WorldConfig& config, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "random-policy"));
  const double m = config.max_action_step;
  return Action{{rng.uniform(-m, m), rng.uniform(-m, m)}};
}

inline const TaskSpec& find_task(const std::vector<TaskSpec>& tasks, std::string_view id) {
  for (const auto& t : tasks)
    if (t.id == id) return t;
  throw ConfigError("unknown task id '" + std::string(id) + "'");
}

inline Trajectory rollout_behaviour(const WorldConfig& config, const TaskSpec& task, bool expert,
                                    int horizon, std::uint64_t seed) {
  Trajectory traj;
  traj.task_id = task.id;
  traj.regime = Regime::ID;
  traj.seed = seed;
  traj.policy = expert ? "expert" : "random";
  traj.states.push_back(reset(config, task, Regime::ID, seed));
  for (int t = 0; t < horizon; ++t) {
    const auto& s = traj.states.back();
    const Action a = expert ? scripted_expert(s, task, config)
                            : random_policy(config, derive_seed(seed, "action", t));
    traj.actions.push_back(a);
    traj.states.push_back(step(s, a, config, derive_seed(seed, "noise", t)));
  }
  return traj;
}

/// The first round(n * expert_fraction) trajectories are expert rollouts;
/// tasks are assigned round-robin.
inline Dataset generate_dataset(const WorldConfig& config, const std::vector<TaskSpec>& tasks,
                                std::size_t n_trajectories, double expert_fraction, int horizon,
                                std::uint64_t seed) {
  config.validate();
  if (tasks.empty()) throw ConfigError("dataset generation needs at least one task");
  if (n_trajectories < 1) throw ConfigError("dataset.n_trajectories must be >= 1");
  if (horizon < 1) throw ConfigError("dataset.horizon must be >= 1");
  if (!(expert_fraction >= 0.0 && expert_fraction <= 1.0))
    throw ConfigError("dataset.expert_fraction must be in [0,1]");
  for (const auto& t : tasks) t.validate(config);

  Dataset d;
  d.config = config;
  d.provenance = {expert_fraction, seed, std::string(kVersion)};
  const auto n_expert = static_cast<std::size_t>(std::llround(expert_fraction * n_trajectories));
  d.trajectories.reserve(n_trajectories);
  for (std::size_t i = 0; i < n_trajectories; ++i) {
    const auto& task = tasks[i % tasks.size()];
    d.trajectories.push_back(
        rollout_behaviour(config, task, i < n_expert, horizon, derive_seed(seed, "traj", i)));
  }
  return d;
}

// ----------------------------------------------------------------------------
// Serialization
// ----------------------------------------------------------------------------

namespace detail {

inline void append_real(std::string& out, double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  out += buf;
}

inline void append_vec(std::string& out, const Vec2& v) {
  out += '[';
  append_real(out, v[0]);
  out += ',';
  append_real(out, v[1]);
  out += ']';
}

inline std::string quote(std::string_view s) { return nlohmann::json(std::string(s)).dump(); }

inline nlohmann::json world_to_json(const WorldConfig& c) {
  return {{"n_objects", c.n_objects},
          {"arena_half_extent", c.arena_half_extent},
          {"interact_radius", c.interact_radius},
          {"max_action_step", c.max_action_step},
          {"noise_std", c.noise_std},
          {"entity_dim", kEntityDim}};
}

inline WorldConfig world_from_json(const nlohmann::json& j) {
  WorldConfig c;
  c.n_objects = j.at("n_objects").get<int>();
  c.arena_half_extent = j.at("arena_half_extent").get<double>();
  c.interact_radius = j.at("interact_radius").get<double>();
  c.max_action_step = j.at("max_action_step").get<double>();
  c.noise_std = j.at("noise_std").get<double>();
  if (j.value("entity_dim", kEntityDim) != kEntityDim) throw SchemaError("entity_dim must be 2");
  c.validate();
  return c;
}

inline Vec2 vec_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 2) throw SchemaError("expected a 2-vector");
  return {j[0].get<double>(), j[1].get<double>()};
}

}  // namespace detail

inline std::string trajectory_to_line(const Trajectory& t) {
  std::string out;
  out.reserve(64 + t.states.size() * t.states.front().size() * 48);
  out += "{\"task_id\":" + detail::quote(t.task_id);
  out += ",\"regime\":\"" + to_string(t.regime) + "\"";
  out += ",\"seed\":" + std::to_string(t.seed);
  out += ",\"policy\":" + detail::quote(t.policy);
  out += ",\"entity_dims\":[";
  for (std::size_t j = 0; j < t.states.front().size(); ++j) out += j ? ",2" : "2";
  out += "],\"states\":[";
  for (std::size_t i = 0; i < t.states.size(); ++i) {
    if (i) out += ',';
    out += '[';
    for (std::size_t j = 0; j < t.states[i].size(); ++j) {
      if (j) out += ',';
      detail::append_vec(out, t.states[i][j]);
    }
    out += ']';
  }
  out += "],\"actions\":[";
  for (std::size_t i = 0; i < t.actions.size(); ++i) {
    if (i) out += ',';
    detail::append_vec(out, t.actions[i].delta);
  }
  out += ']';
  if (t.counterfactual) {
    const auto& cf = *t.counterfactual;
    out += ",\"counterfactual\":{\"source\":[" + std::to_string(cf.source.traj) + "," +
           std::to_string(cf.source.step) + "],\"swaps\":[";
    for (std::size_t i = 0; i < cf.swaps.size(); ++i) {
      if (i) out += ',';
      out += "[" + std::to_string(cf.swaps[i].entity) + "," + std::to_string(cf.swaps[i].donor.traj) +
             "," + std::to_string(cf.swaps[i].donor.step) + "]";
    }
    out += "]}";
  }
  out += '}';
  return out;
}

inline Trajectory trajectory_from_json(const nlohmann::json& j, const WorldConfig& config) {
  Trajectory t;
  t.task_id = j.at("task_id").get<std::string>();
  t.regime = parse_regime(j.at("regime").get<std::string>());
  t.seed = j.at("seed").get<std::uint64_t>();
  t.policy = j.value("policy", std::string{});

  const auto& dims = j.at("entity_dims");
  if (!dims.is_array() || static_cast<int>(dims.size()) != config.n_entities())
    throw SchemaError("entity_dims has " + std::to_string(dims.size()) + " entries, header expects " +
                      std::to_string(config.n_entities()));
  for (const auto& d : dims)
    if (d.get<int>() != kEntityDim) throw SchemaError("entity_dims entry differs from header entity_dim 2");

  for (const auto& sj : j.at("states")) {
    FactoredState s;
    if (static_cast<int>(sj.size()) != config.n_entities())
      throw SchemaError("state entity count does not match entity_dims");
    for (const auto& e : sj) s.entities.push_back(detail::vec_from_json(e));
    t.states.push_back(std::move(s));
  }
  for (const auto& aj : j.at("actions")) t.actions.push_back(Action{detail::vec_from_json(aj)});
  if (auto it = j.find("counterfactual"); it != j.end()) {
    CounterfactualProvenance cf;
    const auto& src = it->at("source");
    cf.source = {src.at(0).get<std::size_t>(), src.at(1).get<std::size_t>()};
    for (const auto& sw : it->at("swaps"))
      cf.swaps.push_back({sw.at(0).get<int>(), {sw.at(1).get<std::size_t>(), sw.at(2).get<std::size_t>()}});
    t.counterfactual = std::move(cf);
  }
  t.validate();
  return t;
}

inline std::string dataset_header_line(const Dataset& d) {
  nlohmann::json h = {{"format", "caiac-dataset"},
                      {"version", 1},
                      {"world", detail::world_to_json(d.config)},
                      {"provenance",
                       {{"expert_fraction", d.provenance.expert_fraction},
                        {"generator_seed", d.provenance.generator_seed},
                        {"created_by", d.provenance.created_by}}},
                      {"n_trajectories", d.trajectories.size()}};
  return h.dump();
}

inline void write_dataset(std::ostream& os, const Dataset& d) {
  os << dataset_header_line(d) << '\n';
  for (const auto& t : d.trajectories) os << trajectory_to_line(t) << '\n';
}

/// Reads a whole dataset or throws; never returns a partial result.
inline Dataset read_dataset(std::istream& is) {
  std::string line;
  std::size_t lineno = 0;
  auto parse = [&](const std::string& text) {
    try {
      return nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(lineno, e.what());
    }
  };

  if (!std::getline(is, line)) throw ParseError(1, "empty file, missing header");
  ++lineno;
  Dataset d;
  std::size_t expected = 0;
  {
    const auto h = parse(line);
    try {
      if (h.value("format", std::string{}) != "caiac-dataset") throw ParseError(lineno, "not a caiac dataset header");
      d.config = detail::world_from_json(h.at("world"));
      const auto& p = h.at("provenance");
      d.provenance.expert_fraction = p.at("expert_fraction").get<double>();
      d.provenance.generator_seed = p.at("generator_seed").get<std::uint64_t>();
      d.provenance.created_by = p.at("created_by").get<std::string>();
      expected = h.at("n_trajectories").get<std::size_t>();
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(lineno, std::string("bad header: ") + e.what());
    }
  }
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto j = parse(line);
    try {
      d.trajectories.push_back(trajectory_from_json(j, d.config));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(lineno, e.what());
    } catch (const SchemaError& e) {
      throw SchemaError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (d.trajectories.size() != expected)
    throw ParseError(lineno, "header announces " + std::to_string(expected) + " trajectories, found " +
                                 std::to_string(d.trajectories.size()) + " (truncated file?)");
  return d;
}

inline void save(const Dataset& d, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  write_dataset(os, d);
  if (!os) throw std::runtime_error("write failed for '" + path.string() + "'");
}

inline Dataset load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("missing input file '" + path.string() + "'");
  return read_dataset(is);
}

// ----------------------------------------------------------------------------

/// Trajectory indices of the train and validation parts, in shuffled order.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(std::size_t n, const SplitSpec& spec) {
  if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0))
    throw ConfigError("train_fraction must be in (0,1)");
  if (n < 2) throw ConfigError("cannot split a dataset with fewer than 2 trajectories");

  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(derive_seed(spec.split_seed, "split"));
  for (std::size_t i = n - 1; i > 0; --i) std::swap(idx[i], idx[rng.index(i + 1)]);

  auto n_train = static_cast<std::size_t>(std::floor(static_cast<double>(n) * spec.train_fraction));
  n_train = std::clamp<std::size_t>(n_train, 1, n - 1);
  std::vector<std::size_t> train(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<std::size_t> val(idx.begin() + static_cast<std::ptrdiff_t>(n_train), idx.end());
  return {train, val};
}

inline Dataset subset(const Dataset& d, std::span<const std::size_t> indices) {
  Dataset out{{}, d.config, d.provenance};
  for (std::size_t i : indices) out.trajectories.push_back(d.trajectories.at(i));
  return out;
}

inline std::pair<Dataset, Dataset> split(const Dataset& d, const SplitSpec& spec) {
  const auto [train, val] = split_indices(d.trajectories.size(), spec);
  return {subset(d, train), subset(d, val)};
}

}  // namespace caiac
