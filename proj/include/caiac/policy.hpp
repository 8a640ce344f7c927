#pragma once

// Goal-conditioned behaviour cloning on (possibly augmented) expert windows,
// plus rollout evaluation with bootstrap confidence intervals.

#include "caiac/evalharness.hpp"

namespace caiac {

/// Per object: (x, y, 1) for goal entities, zeros otherwise.
inline Vector goal_vector(int n_objects, std::span<const int> goal_entities, std::span<const Vec2> goal_positions) {
  Vector g = Vector::Zero(3 * n_objects);
  for (std::size_t i = 0; i < goal_entities.size(); ++i) {
    const int j = goal_entities[i] - 1;
    g(3 * j) = goal_positions[i][0];
    g(3 * j + 1) = goal_positions[i][1];
    g(3 * j + 2) = 1.0;
  }
  return g;
}

inline Vector task_goal_vector(const TaskSpec& task, int n_objects) {
  return goal_vector(n_objects, task.goal_entities, task.goal_positions);
}

/// Hindsight goal for a training window: goal-entity positions at the end of
/// its source trajectory. A swapped goal entity takes its position at the end
/// of the (post-swap) window instead, i.e. the donor's.
class GoalExtractor {
 public:
  GoalExtractor(const Dataset& d, std::vector<TaskSpec> tasks) : data_(&d), tasks_(std::move(tasks)) {}

  Vector operator()(const CounterfactualRecord& w) const {
    const auto& src = data_->trajectories.at(w.original.traj);
    const auto& task = find_task(tasks_, src.task_id);
    const auto& final_state = src.states.back();
    std::vector<Vec2> pos;
    for (int j : task.goal_entities) {
      Vec2 p = final_state[static_cast<std::size_t>(j)];
      for (const auto& s : w.swaps)
        if (s.entity == j) p = w.states.back()[static_cast<std::size_t>(j)];
      pos.push_back(p);
    }
    return goal_vector(data_->config.n_objects, task.goal_entities, pos);
  }

 private:
  const Dataset* data_;
  std::vector<TaskSpec> tasks_;
};

struct BcTrainConfig {
  std::vector<int> hidden{64, 64};
  long steps = 20000;
  int batch_size = 256;
  double lr = 1e-3;
  /// Samples used to estimate input standardization statistics.
  std::size_t stats_samples = 8192;
  std::uint64_t seed = 0;
};

inline constexpr double kInputStdEpsilon = 1e-3;

class BcPolicy {
 public:
  BcPolicy() = default;
  BcPolicy(MlpParams params, Vector in_mean, Vector in_std, double action_bound)
      : params_(std::move(params)), in_mean_(std::move(in_mean)), in_std_(std::move(in_std)),
        action_bound_(action_bound) {}

  /// Agent position, objects relative to the agent, goal vector.
  static Vector raw_features(const FactoredState& s, const Vector& goal) {
    const auto n = static_cast<Eigen::Index>(s.size() * kEntityDim);
    Vector x(n + goal.size());
    flatten_into(s, x.head(n));
    for (Eigen::Index i = kEntityDim; i < n; i += kEntityDim) x.segment(i, kEntityDim) -= x.head(kEntityDim);
    x.tail(goal.size()) = goal;
    return x;
  }

  Matrix normalize(const Matrix& raw) const {
    return ((raw.colwise() - in_mean_).array().colwise() / in_std_.array()).matrix();
  }

  Action act(const FactoredState& s, const Vector& goal) const {
    const auto out = mlp_forward(params_, normalize(raw_features(s, goal))).outputs[0];
    const double m = action_bound_;
    return Action{{std::clamp(out(0) * m, -m, m), std::clamp(out(1) * m, -m, m)}};
  }

  /// Rollout adapter: the goal comes from the task definition.
  Action act(const FactoredState& s, const TaskSpec& task, std::uint64_t) const {
    return act(s, task_goal_vector(task, static_cast<int>(s.size()) - 1));
  }

  const MlpParams& params() const { return params_; }
  MlpParams& params() { return params_; }
  const Vector& input_mean() const { return in_mean_; }
  const Vector& input_std() const { return in_std_; }
  double action_bound() const { return action_bound_; }

  friend bool operator==(const BcPolicy&, const BcPolicy&) = default;

 private:
  MlpParams params_;
  Vector in_mean_;
  Vector in_std_;
  double action_bound_ = 0.05;
};

struct BcTrainResult {
  BcPolicy policy;
  std::vector<std::pair<long, double>> loss_curve;  // (step, mean MSE since last point)
};

namespace detail {

inline void stream_to_matrices(const std::vector<StreamSample>& batch, const GoalExtractor& goals, double bound,
                               Matrix& x, Matrix& y) {
  const auto B = static_cast<Eigen::Index>(batch.size());
  for (Eigen::Index i = 0; i < B; ++i) {
    const auto& w = batch[static_cast<std::size_t>(i)].window;
    const Vector f = BcPolicy::raw_features(w.states.front(), goals(w));
    if (x.rows() != f.size() || x.cols() != B) x.resize(f.size(), B);
    if (y.rows() != kEntityDim || y.cols() != B) y.resize(kEntityDim, B);
    x.col(i) = f;
    y(0, i) = w.actions.front().delta[0] / bound;
    y(1, i) = w.actions.front().delta[1] / bound;
  }
}

}  // namespace detail

/// Minimizes mean squared (normalized) action error on the stream's first
/// transition of every window.
inline BcTrainResult train_bc(AugmentStream& stream, const GoalExtractor& goals, const WorldConfig& world,
                              const BcTrainConfig& cfg) {
  if (cfg.steps < 1 || cfg.batch_size < 1) throw ConfigError("invalid policy training config");
  const double bound = world.max_action_step;
  Matrix x, y;

  // Input standardization from a sample of the stream itself.
  std::vector<StreamSample> probe;
  while (probe.size() < cfg.stats_samples) {
    auto b = stream.next_batch(static_cast<std::size_t>(cfg.batch_size));
    probe.insert(probe.end(), std::make_move_iterator(b.begin()), std::make_move_iterator(b.end()));
  }
  detail::stream_to_matrices(probe, goals, bound, x, y);
  const Vector mean = x.rowwise().mean();
  const Vector stdev =
      ((x.colwise() - mean).array().square().rowwise().mean().sqrt() + kInputStdEpsilon).matrix();

  const int in_dim = static_cast<int>(x.rows());
  BcPolicy policy(init_orthogonal({in_dim, cfg.hidden, {kEntityDim}}, derive_seed(cfg.seed, "bc-init")), mean, stdev,
                  bound);
  auto adam = AdamState::for_params(policy.params(), cfg.lr);
  BcTrainResult res;
  double running = 0.0;
  long since = 0;
  for (long it = 1; it <= cfg.steps; ++it) {
    const auto batch = stream.next_batch(static_cast<std::size_t>(cfg.batch_size));
    detail::stream_to_matrices(batch, goals, bound, x, y);
    const auto cache = mlp_forward(policy.params(), policy.normalize(x));
    const Matrix err = cache.outputs[0] - y;
    const double loss = err.array().square().mean();
    if (!std::isfinite(loss)) throw DivergenceError("policy training diverged at step " + std::to_string(it));
    const Matrix d_out = 2.0 * err / static_cast<double>(err.size());
    adam_step(policy.params(), mlp_backward(policy.params(), cache, {d_out}), adam);
    running += loss;
    ++since;
    if (it % 250 == 0 || it == cfg.steps) {
      res.loss_curve.emplace_back(it, running / static_cast<double>(since));
      running = 0.0;
      since = 0;
    }
  }
  res.policy = std::move(policy);
  return res;
}

/// Expert windows of the given tasks (all tasks when empty): the originals a
/// policy learns from. Windows starting in an already solved state are
/// dropped, as a demonstration would end there.
inline std::vector<StepRef> expert_windows(const Dataset& d, const std::vector<TaskSpec>& tasks,
                                           std::span<const std::string> task_ids, std::size_t kappa) {
  std::vector<StepRef> out;
  for (std::size_t i = 0; i < d.trajectories.size(); ++i) {
    const auto& t = d.trajectories[i];
    if (t.policy != "expert") continue;
    if (!task_ids.empty() && std::find(task_ids.begin(), task_ids.end(), t.task_id) == task_ids.end()) continue;
    const auto& task = find_task(tasks, t.task_id);
    for (std::size_t s = 0; s + kappa <= t.length() && !is_success(t.states[s], task); ++s) out.push_back({i, s});
  }
  return out;
}

// ----------------------------------------------------------------------------
// Evaluation
// ----------------------------------------------------------------------------

template <typename P>
concept RolloutPolicy = requires(const P& p, const FactoredState& s, const TaskSpec& t, std::uint64_t seed) {
  { p.act(s, t, seed) } -> std::convertible_to<Action>;
};

struct ZeroPolicy {
  Action act(const FactoredState&, const TaskSpec&, std::uint64_t) const { return {}; }
};

struct RandomRolloutPolicy {
  WorldConfig config;
  Action act(const FactoredState&, const TaskSpec&, std::uint64_t seed) const { return random_policy(config, seed); }
};

struct ExpertRolloutPolicy {
  WorldConfig config;
  Action act(const FactoredState& s, const TaskSpec& t, std::uint64_t) const { return scripted_expert(s, t, config); }
};

struct EvalReport {
  std::string task_id;
  Regime regime = Regime::ID;
  std::size_t episodes = 0;
  std::size_t successes = 0;
  double success_rate = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  double ci_half_width() const { return 0.5 * (ci_high - ci_low); }
};

/// 95% percentile bootstrap of the mean of 0/1 outcomes.
inline std::pair<double, double> bootstrap_ci(const std::vector<int>& outcomes, std::uint64_t seed,
                                              std::size_t resamples = 1000) {
  if (outcomes.empty()) return {0.0, 0.0};
  Rng rng(derive_seed(seed, "bootstrap"));
  std::vector<double> means(resamples);
  for (auto& m : means) {
    std::size_t s = 0;
    for (std::size_t i = 0; i < outcomes.size(); ++i) s += static_cast<std::size_t>(outcomes[rng.index(outcomes.size())]);
    m = static_cast<double>(s) / static_cast<double>(outcomes.size());
  }
  std::sort(means.begin(), means.end());
  auto q = [&](double p) { return means[static_cast<std::size_t>(std::floor(p * static_cast<double>(resamples - 1)))]; };
  return {q(0.025), q(0.975)};
}

/// Episodes end at the first successful state or after `horizon` steps.
template <RolloutPolicy P>
EvalReport evaluate(const P& policy, const WorldConfig& config, const TaskSpec& task, Regime regime,
                    std::size_t episodes, int horizon, std::uint64_t seed, unsigned jobs = 1) {
  if (episodes < 1) throw ConfigError("evaluation needs at least one episode");
  std::vector<int> outcome(episodes, 0);
  parallel_for(episodes, jobs, [&](std::size_t e) {
    const std::uint64_t es = derive_seed(seed, "episode", task.id, to_string(regime), e);
    FactoredState s = reset(config, task, regime, es);
    for (int t = 0; t <= horizon; ++t) {
      if (is_success(s, task)) {
        outcome[e] = 1;
        break;
      }
      if (t == horizon) break;
      s = step(s, policy.act(s, task, derive_seed(es, "act", t)), config, derive_seed(es, "noise", t));
    }
  });
  EvalReport rep{task.id, regime, episodes, 0, 0.0, 0.0, 0.0};
  for (int o : outcome) rep.successes += static_cast<std::size_t>(o);
  rep.success_rate = static_cast<double>(rep.successes) / static_cast<double>(episodes);
  std::tie(rep.ci_low, rep.ci_high) = bootstrap_ci(outcome, seed);
  return rep;
}

inline nlohmann::json to_json(const EvalReport& r) {
  return {{"task_id", r.task_id},       {"regime", to_string(r.regime)}, {"episodes", r.episodes},
          {"successes", r.successes},   {"success_rate", r.success_rate}, {"ci_low", r.ci_low},
          {"ci_high", r.ci_high},       {"ci_half_width", r.ci_half_width()}};
}

// ----------------------------------------------------------------------------
// Experiment drivers
// ----------------------------------------------------------------------------

struct PolicyExperiment {
  std::vector<TaskSpec> tasks;
  std::string task_id = "push1";  // trained on and evaluated
  AugmentConfig augment;          // theta, kappa; cf_ratio set per run
  BcTrainConfig bc;
  std::size_t episodes = 50;
  int horizon = 400;
  unsigned jobs = 1;
};

struct PolicyRun {
  double cf_ratio = 0.0;
  std::uint64_t seed = 0;
  EvalReport id;
  EvalReport ood;
  double final_loss = 0.0;
};

inline BcTrainResult train_policy(const Dataset& d, const InfluenceScores& scores, const PolicyExperiment& exp,
                                  double cf_ratio, std::uint64_t seed) {
  const std::vector<std::string> ids{exp.task_id};
  auto cfg = exp.augment;
  cfg.cf_ratio = cf_ratio;
  const Augmenter aug(d, scores, cfg, expert_windows(d, exp.tasks, ids, cfg.kappa));
  AugmentStream stream(aug, cf_ratio, derive_seed(seed, "stream"));
  const GoalExtractor goals(d, exp.tasks);
  auto bc = exp.bc;
  bc.seed = derive_seed(seed, "bc");
  return train_bc(stream, goals, d.config, bc);
}

inline PolicyRun run_policy_experiment(const Dataset& d, const InfluenceScores& scores, const PolicyExperiment& exp,
                                       double cf_ratio, std::uint64_t seed) {
  const auto trained = train_policy(d, scores, exp, cf_ratio, seed);
  const auto& task = find_task(exp.tasks, exp.task_id);
  PolicyRun run;
  run.cf_ratio = cf_ratio;
  run.seed = seed;
  run.final_loss = trained.loss_curve.back().second;
  run.id = evaluate(trained.policy, d.config, task, Regime::ID, exp.episodes, exp.horizon, derive_seed(seed, "eval"),
                    exp.jobs);
  run.ood = evaluate(trained.policy, d.config, task, Regime::OOD, exp.episodes, exp.horizon,
                     derive_seed(seed, "eval"), exp.jobs);
  return run;
}

/// One trained policy per (ratio, seed).
inline std::vector<PolicyRun> ratio_ablation(const Dataset& d, const InfluenceScores& scores,
                                             const PolicyExperiment& exp, std::span<const double> ratios,
                                             std::span<const std::uint64_t> seeds) {
  std::vector<PolicyRun> rows;
  for (double r : ratios)
    for (std::uint64_t s : seeds) rows.push_back(run_policy_experiment(d, scores, exp, r, s));
  return rows;
}

inline void write_ablation_csv(std::ostream& os, std::span<const PolicyRun> rows) {
  os << "cf_ratio,seed,id_success,ood_success,final_loss\n";
  for (const auto& r : rows) {
    std::string a, b, c, l;
    detail::append_real(a, r.cf_ratio);
    detail::append_real(b, r.id.success_rate);
    detail::append_real(c, r.ood.success_rate);
    detail::append_real(l, r.final_loss);
    os << a << ',' << r.seed << ',' << b << ',' << c << ',' << l << '\n';
  }
}

// ----------------------------------------------------------------------------

inline void save_policy(const BcPolicy& p, const std::filesystem::path& path, const std::string& config_hash = "") {
  write_checkpoint(path,
                   {{"kind", "bc-policy"},
                    {"config_hash", config_hash},
                    {"action_bound", p.action_bound()},
                    {"input_mean", std::vector<double>(p.input_mean().begin(), p.input_mean().end())},
                    {"input_std", std::vector<double>(p.input_std().begin(), p.input_std().end())}},
                   p.params());
}

inline BcPolicy load_policy(const std::filesystem::path& path) {
  auto c = read_checkpoint(path);
  if (c.header.value("kind", std::string{}) != "bc-policy")
    throw SchemaError("'" + path.string() + "' is not a policy checkpoint");
  const auto m = c.header.at("input_mean").get<std::vector<double>>();
  const auto s = c.header.at("input_std").get<std::vector<double>>();
  return {std::move(c.params), Eigen::Map<const Vector>(m.data(), static_cast<Eigen::Index>(m.size())),
          Eigen::Map<const Vector>(s.data(), static_cast<Eigen::Index>(s.size())),
          c.header.at("action_bound").get<double>()};
}

}  // namespace caiac
