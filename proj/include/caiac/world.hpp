#pragma once

// 2-D particle-push world. The agent (entity 0) moves by a bounded delta each
// step and drags along every object within interact_radius of it. Objects
// never influence each other, so action influence is exactly known per state.

#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "caiac/common.hpp"

namespace caiac {

using Vec2 = std::array<double, 2>;

inline constexpr int kEntityDim = 2;

inline double distance(const Vec2& a, const Vec2& b) {
  return std::hypot(a[0] - b[0], a[1] - b[1]);
}

struct WorldConfig {
  int n_objects = 4;
  double arena_half_extent = 1.0;
  double interact_radius = 0.1;
  double max_action_step = 0.05;
  double noise_std = 0.0;

  int n_entities() const { return n_objects + 1; }

  void validate() const {
    if (n_objects < 1) throw ConfigError("world.n_objects must be >= 1");
    if (!(arena_half_extent > 0.0)) throw ConfigError("world.arena_half_extent must be > 0");
    if (!(interact_radius > 0.0)) throw ConfigError("world.interact_radius must be > 0");
    if (!(max_action_step > 0.0)) throw ConfigError("world.max_action_step must be > 0");
    if (!(noise_std >= 0.0)) throw ConfigError("world.noise_std must be >= 0");
  }

  friend bool operator==(const WorldConfig&, const WorldConfig&) = default;
};

/// Ordered per-entity positions; entities[0] is the agent.
struct FactoredState {
  std::vector<Vec2> entities;

  std::size_t size() const { return entities.size(); }
  const Vec2& agent() const { return entities.front(); }
  Vec2& operator[](std::size_t j) { return entities[j]; }
  const Vec2& operator[](std::size_t j) const { return entities[j]; }

  friend bool operator==(const FactoredState&, const FactoredState&) = default;
};

struct Action {
  Vec2 delta{0.0, 0.0};
  friend bool operator==(const Action&, const Action&) = default;
};

enum class Regime { ID, OOD };

inline std::string to_string(Regime r) { return r == Regime::ID ? "ID" : "OOD"; }

inline Regime parse_regime(std::string_view s) {
  if (s == "ID" || s == "id") return Regime::ID;
  if (s == "OOD" || s == "ood") return Regime::OOD;
  throw ConfigError("unknown regime '" + std::string(s) + "' (expected ID or OOD)");
}

struct TaskSpec {
  std::string id;
  std::vector<int> goal_entities;
  std::vector<Vec2> goal_positions;
  double success_radius = 0.05;
  /// Positions pinned in the ID regime (the spurious correlation).
  std::map<int, Vec2> nuisance_rule;
  /// Objects drawn uniformly in the OOD regime.
  std::set<int> ood_randomize;
  /// Optional OOD-regime pins (e.g. a nuisance flipped to another fixed value).
  std::map<int, Vec2> ood_pin;
  /// Probability that each ood_randomize object is actually randomized; the
  /// remainder keep their ID pin.
  double ood_randomize_prob = 1.0;

  void validate(const WorldConfig& config) const {
    auto check_object = [&](int j, const char* field) {
      if (j < 1 || j > config.n_objects)
        throw ConfigError("task '" + id + "': " + field + " index " + std::to_string(j) +
                          " outside 1.." + std::to_string(config.n_objects));
    };
    if (goal_entities.size() != goal_positions.size())
      throw ConfigError("task '" + id + "': goal_entities and goal_positions differ in length");
    for (int j : goal_entities) check_object(j, "goal_entities");
    for (const auto& [j, p] : nuisance_rule) check_object(j, "nuisance_rule");
    for (int j : ood_randomize) check_object(j, "ood_randomize");
    for (const auto& [j, p] : ood_pin) {
      check_object(j, "ood_pin");
      if (ood_randomize.count(j))
        throw ConfigError("task '" + id + "': object " + std::to_string(j) +
                          " is both pinned and randomized in the OOD regime");
    }
    if (!(success_radius > 0.0)) throw ConfigError("task '" + id + "': success_radius must be > 0");
    if (!(ood_randomize_prob >= 0.0 && ood_randomize_prob <= 1.0))
      throw ConfigError("task '" + id + "': ood_randomize_prob must be in [0,1]");
    auto in_arena = [&](const Vec2& p) {
      return std::abs(p[0]) <= config.arena_half_extent && std::abs(p[1]) <= config.arena_half_extent;
    };
    for (const auto& g : goal_positions)
      if (!in_arena(g)) throw ConfigError("task '" + id + "': goal position outside arena");
    for (const auto& [j, p] : nuisance_rule)
      if (!in_arena(p)) throw ConfigError("task '" + id + "': nuisance position outside arena");
    for (const auto& [j, p] : ood_pin)
      if (!in_arena(p)) throw ConfigError("task '" + id + "': ood_pin position outside arena");
  }
};

// ----------------------------------------------------------------------------

inline double clamp_to_arena(double v, const WorldConfig& config) {
  return std::clamp(v, -config.arena_half_extent, config.arena_half_extent);
}

inline Action clip_action(const Action& a, const WorldConfig& config) {
  const double m = config.max_action_step;
  return Action{{std::clamp(a.delta[0], -m, m), std::clamp(a.delta[1], -m, m)}};
}

/// Closed ball: an object exactly at interact_radius is in reach.
inline bool within_reach(const Vec2& agent, const Vec2& object, const WorldConfig& config) {
  const double dx = agent[0] - object[0];
  const double dy = agent[1] - object[1];
  return dx * dx + dy * dy <= config.interact_radius * config.interact_radius;
}

inline bool in_bounds(const FactoredState& s, const WorldConfig& config) {
  if (static_cast<int>(s.size()) != config.n_entities()) return false;
  for (const auto& e : s.entities)
    for (double v : e)
      if (!(std::abs(v) <= config.arena_half_extent)) return false;
  return true;
}

inline FactoredState reset(const WorldConfig& config, const TaskSpec& task, Regime regime,
                           std::uint64_t seed) {
  config.validate();
  task.validate(config);
  Rng rng(derive_seed(seed, "reset"));

  const double ext = config.arena_half_extent;
  FactoredState s;
  s.entities.resize(config.n_entities());
  // Agent starts uniformly in a disc of radius 0.05 around the origin.
  const double r = 0.05 * std::sqrt(rng.uniform());
  const double phi = 2.0 * std::numbers::pi * rng.uniform();
  s[0] = {clamp_to_arena(r * std::cos(phi), config), clamp_to_arena(r * std::sin(phi), config)};

  for (int j = 1; j <= config.n_objects; ++j) {
    // Always draw, so the stream for object j is the same in both regimes.
    Vec2 uniform_pos{rng.uniform(-ext, ext), rng.uniform(-ext, ext)};
    const double coin = rng.uniform();
    s[j] = uniform_pos;
    if (regime == Regime::ID) {
      if (auto it = task.nuisance_rule.find(j); it != task.nuisance_rule.end()) s[j] = it->second;
    } else {
      if (auto it = task.ood_pin.find(j); it != task.ood_pin.end()) {
        s[j] = it->second;
      } else if (task.ood_randomize.count(j)) {
        if (coin >= task.ood_randomize_prob) {
          if (auto pin = task.nuisance_rule.find(j); pin != task.nuisance_rule.end()) s[j] = pin->second;
        }
      } else if (auto pin = task.nuisance_rule.find(j); pin != task.nuisance_rule.end()) {
        s[j] = pin->second;
      }
    }
  }
  return s;
}

inline FactoredState step(const FactoredState& state, const Action& action, const WorldConfig& config,
                          std::uint64_t noise_seed = 0) {
  const Action a = clip_action(action, config);
  FactoredState next = state;
  const Vec2 agent = state.agent();
  Vec2 agent_delta = a.delta;
  if (config.noise_std > 0.0) {
    Rng rng(derive_seed(noise_seed, "step-noise"));
    agent_delta[0] += config.noise_std * rng.normal();
    agent_delta[1] += config.noise_std * rng.normal();
  }
  next[0] = {clamp_to_arena(agent[0] + agent_delta[0], config),
             clamp_to_arena(agent[1] + agent_delta[1], config)};
  for (std::size_t j = 1; j < state.size(); ++j) {
    if (within_reach(agent, state[j], config)) {
      next[j] = {clamp_to_arena(state[j][0] + a.delta[0], config),
                 clamp_to_arena(state[j][1] + a.delta[1], config)};
    }
  }
  return next;
}

/// Entry j is true iff the action can move entity j from this state.
inline std::vector<bool> ground_truth_influence(const FactoredState& state, const WorldConfig& config) {
  std::vector<bool> influenced(state.size(), false);
  influenced[0] = true;
  for (std::size_t j = 1; j < state.size(); ++j)
    influenced[j] = within_reach(state.agent(), state[j], config);
  return influenced;
}

inline bool is_success(const FactoredState& state, const TaskSpec& task) {
  for (std::size_t g = 0; g < task.goal_entities.size(); ++g) {
    if (distance(state[task.goal_entities[g]], task.goal_positions[g]) > task.success_radius)
      return false;
  }
  return true;
}

/// Four single-object push tasks. Object k rests at a fixed home corner
/// whenever it is not the task's goal object, so each task's data shows the
/// other three objects frozen in place (the spurious correlation); the OOD
/// regime scatters them uniformly.
inline std::vector<TaskSpec> default_tasks() {
  const std::array<Vec2, 4> home{Vec2{-0.7, 0.7}, Vec2{0.7, 0.7}, Vec2{0.7, -0.7}, Vec2{-0.7, -0.7}};
  const std::array<Vec2, 4> goal{Vec2{-0.4, 0.0}, Vec2{0.0, 0.4}, Vec2{0.4, 0.0}, Vec2{0.0, -0.4}};
  std::vector<TaskSpec> tasks;
  for (int k = 1; k <= 4; ++k) {
    TaskSpec t;
    t.id = "push" + std::to_string(k);
    t.goal_entities = {k};
    t.goal_positions = {goal[static_cast<std::size_t>(k - 1)]};
    for (int j = 1; j <= 4; ++j) {
      if (j == k) continue;
      t.nuisance_rule[j] = home[static_cast<std::size_t>(j - 1)];
      t.ood_randomize.insert(j);
    }
    tasks.push_back(std::move(t));
  }
  return tasks;
}

}  // namespace caiac
