#pragma once

// Causal action influence: C^j(s) = E_a[ KL( p(s'_j | s, a) || p(s'_j | s) ) ]
// with the marginal approximated by the uniform mixture over K sampled
// actions and the Gaussian-vs-mixture KL replaced by its variational bound.

#include <concepts>
#include <exception>
#include <mutex>
#include <thread>

#include "caiac/neural.hpp"

namespace caiac {

struct DiagGaussian {
  Vector mean;
  Vector variance;

  Eigen::Index dim() const { return mean.size(); }
  void validate() const {
    if (mean.size() != variance.size()) throw ShapeError("DiagGaussian: mean/variance length mismatch");
    if (!(variance.array() > 0.0).all()) throw ShapeError("DiagGaussian: variance must be > 0");
  }
};

/// Uniformly weighted mixture.
struct GaussianMixture {
  std::vector<DiagGaussian> components;
  std::size_t size() const { return components.size(); }
};

inline double kl_diag_gaussian(const DiagGaussian& f, const DiagGaussian& g) {
  if (f.dim() != g.dim() || f.variance.size() != f.dim() || g.variance.size() != g.dim())
    throw ShapeError("kl_diag_gaussian: dimension mismatch");
  double kl = 0.0;
  for (Eigen::Index d = 0; d < f.dim(); ++d) {
    const double diff = f.mean(d) - g.mean(d);
    kl += 0.5 * (std::log(g.variance(d) / f.variance(d)) + (f.variance(d) + diff * diff) / g.variance(d) - 1.0);
  }
  return std::max(kl, 0.0);
}

namespace detail {

inline double log_sum_exp(std::span<const double> xs) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : xs) m = std::max(m, x);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double x : xs) s += std::exp(x - m);
  return m + std::log(s);
}

}  // namespace detail

/// -log sum_k (1/K) exp(-KL(f || g_k)); exact for K = 1.
inline double kl_gaussian_vs_mixture(const DiagGaussian& f, const GaussianMixture& g) {
  if (g.components.empty()) throw ShapeError("kl_gaussian_vs_mixture: empty mixture");
  std::vector<double> neg(g.size());
  for (std::size_t k = 0; k < g.size(); ++k) neg[k] = -kl_diag_gaussian(f, g.components[k]);
  const double v = std::log(static_cast<double>(g.size())) - detail::log_sum_exp(neg);
  return std::max(v, 0.0);
}

inline double log_density(const DiagGaussian& f, const Vector& x) {
  const double log2pi = std::log(2.0 * std::numbers::pi);
  double lp = 0.0;
  for (Eigen::Index d = 0; d < f.dim(); ++d) {
    const double r = x(d) - f.mean(d);
    lp += -0.5 * (log2pi + std::log(f.variance(d)) + r * r / f.variance(d));
  }
  return lp;
}

inline double log_density(const GaussianMixture& g, const Vector& x) {
  std::vector<double> lp(g.size());
  for (std::size_t k = 0; k < g.size(); ++k) lp[k] = log_density(g.components[k], x);
  return detail::log_sum_exp(lp) - std::log(static_cast<double>(g.size()));
}

/// Plain Monte-Carlo estimate of KL(f || g) from samples of f.
inline double kl_mc_oracle(const DiagGaussian& f, const GaussianMixture& g, std::size_t n_samples,
                           std::uint64_t seed) {
  if (n_samples < 1) throw std::invalid_argument("kl_mc_oracle needs at least one sample");
  Rng rng(derive_seed(seed, "kl-mc"));
  Vector x(f.dim());
  double acc = 0.0;
  for (std::size_t i = 0; i < n_samples; ++i) {
    for (Eigen::Index d = 0; d < f.dim(); ++d) x(d) = f.mean(d) + std::sqrt(f.variance(d)) * rng.normal();
    acc += log_density(f, x) - log_density(g, x);
  }
  return acc / static_cast<double>(n_samples);
}

// ----------------------------------------------------------------------------
// Predictors
// ----------------------------------------------------------------------------

/// Anything that maps (state, K actions) to per-dimension Gaussian
/// next-state predictions, laid out entity-major with one column per action.
template <typename M>
concept TransitionPredictor = requires(const M& m, const FactoredState& s, std::span<const Action> a) {
  { m.predict_actions(s, a).mean } -> std::convertible_to<Matrix>;
  { m.predict_actions(s, a).variance } -> std::convertible_to<Matrix>;
  { m.action_bound() } -> std::convertible_to<double>;
  { m.entity_dim() } -> std::convertible_to<int>;
};

/// Ground-truth dynamics posing as a transition model, with every variance
/// at the 1e-8 floor. Only valid for the deterministic world.
class OracleDynamics {
 public:
  explicit OracleDynamics(WorldConfig config) : config_(config) {}

  struct ActionPredictions {
    Matrix mean;
    Matrix variance;
  };

  ActionPredictions predict_actions(const FactoredState& s, std::span<const Action> actions) const {
    const auto D = static_cast<Eigen::Index>(s.size() * kEntityDim);
    ActionPredictions p{Matrix(D, static_cast<Eigen::Index>(actions.size())),
                        Matrix::Constant(D, static_cast<Eigen::Index>(actions.size()), kVarianceFloor)};
    for (std::size_t k = 0; k < actions.size(); ++k)
      flatten_into(step(s, actions[k], config_), p.mean.col(static_cast<Eigen::Index>(k)));
    return p;
  }

  double action_bound() const { return config_.max_action_step; }
  int entity_dim() const { return kEntityDim; }

 private:
  WorldConfig config_;
};

inline std::vector<Action> sample_uniform_actions(std::size_t K, double bound, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "cai-actions"));
  std::vector<Action> a(K);
  for (auto& x : a) x.delta = {rng.uniform(-bound, bound), rng.uniform(-bound, bound)};
  return a;
}

/// CAI from a block of K predictions (columns) for each entity.
inline std::vector<double> cai_from_predictions(const Matrix& mean, const Matrix& variance, int entity_dim) {
  const auto K = mean.cols();
  const auto n_entities = mean.rows() / entity_dim;
  std::vector<double> scores(static_cast<std::size_t>(n_entities), 0.0);
  const Matrix log_var = variance.array().log().matrix();
  const double log_k = std::log(static_cast<double>(K));
  std::vector<double> neg(static_cast<std::size_t>(K));
  for (Eigen::Index j = 0; j < n_entities; ++j) {
    const Eigen::Index r0 = j * entity_dim;
    double total = 0.0;
    for (Eigen::Index i = 0; i < K; ++i) {
      for (Eigen::Index k = 0; k < K; ++k) {
        double kl = 0.0;
        for (Eigen::Index d = r0; d < r0 + entity_dim; ++d) {
          const double diff = mean(d, i) - mean(d, k);
          kl += log_var(d, k) - log_var(d, i) + (variance(d, i) + diff * diff) / variance(d, k) - 1.0;
        }
        neg[static_cast<std::size_t>(k)] = -std::max(0.5 * kl, 0.0);
      }
      total += std::max(log_k - detail::log_sum_exp(neg), 0.0);
    }
    scores[static_cast<std::size_t>(j)] = total / static_cast<double>(K);
  }
  return scores;
}

/// Per-entity CAI score of one state under K uniformly drawn actions.
template <TransitionPredictor M>
std::vector<double> cai_score(const FactoredState& state, const M& model, std::size_t K, std::uint64_t action_seed) {
  if (K < 2) throw ConfigError("influence.K must be >= 2");
  const auto actions = sample_uniform_actions(K, model.action_bound(), action_seed);
  const auto p = model.predict_actions(state, actions);
  return cai_from_predictions(p.mean, p.variance, model.entity_dim());
}

// ----------------------------------------------------------------------------
// Dataset scoring
// ----------------------------------------------------------------------------

struct InfluenceScores {
  std::size_t K = 64;
  std::string scorer_id = "cai";
  std::uint64_t seed = 0;
  /// values[traj][step][entity]
  std::vector<std::vector<std::vector<double>>> values;

  std::size_t state_count() const {
    std::size_t n = 0;
    for (const auto& t : values) n += t.size();
    return n;
  }

  friend bool operator==(const InfluenceScores&, const InfluenceScores&) = default;
};

/// Runs f(i) for i in [0, n) on up to `jobs` threads.
template <typename F>
void parallel_for(std::size_t n, unsigned jobs, F&& f) {
  jobs = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(n)));
  if (jobs <= 1) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::vector<std::thread> pool;
  std::exception_ptr err;
  std::mutex err_mu;
  for (unsigned w = 0; w < jobs; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += jobs) f(i);
      } catch (...) {
        std::lock_guard lk(err_mu);
        if (!err) err = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  if (err) std::rethrow_exception(err);
}

/// Action seeds are keyed by (seed, trajectory seed, step), so reordering
/// trajectories reorders the output and nothing else.
template <TransitionPredictor M>
InfluenceScores score_dataset(const Dataset& d, const M& model, std::size_t K, std::uint64_t seed,
                              unsigned jobs = 1) {
  InfluenceScores out;
  out.K = K;
  out.seed = seed;
  out.scorer_id = std::is_same_v<M, OracleDynamics> ? "oracle_dynamics" : "cai";
  out.values.resize(d.trajectories.size());
  for (const auto& t : d.trajectories) {
    if (static_cast<int>(t.states.front().size()) != d.config.n_entities())
      throw ShapeError("state layout does not match dataset config");
  }
  parallel_for(d.trajectories.size(), jobs, [&](std::size_t i) {
    const auto& t = d.trajectories[i];
    auto& v = out.values[i];
    v.resize(t.states.size());
    for (std::size_t s = 0; s < t.states.size(); ++s)
      v[s] = cai_score(t.states[s], model, K, derive_seed(seed, "cai", t.seed, s));
  });
  return out;
}

/// Ground truth scorer: 1 for influenced entities, 0 otherwise.
inline InfluenceScores oracle_distance_scores(const Dataset& d) {
  InfluenceScores out;
  out.K = 0;
  out.scorer_id = "oracle_distance";
  for (const auto& t : d.trajectories) {
    auto& v = out.values.emplace_back();
    for (const auto& s : t.states) {
      const auto gt = ground_truth_influence(s, d.config);
      v.emplace_back(gt.begin(), gt.end());
    }
  }
  return out;
}

// ----------------------------------------------------------------------------
// Scores sidecar: header line, then {"traj","step","scores"[,"uncontrollable"]}
// ----------------------------------------------------------------------------

inline void save_scores(const InfluenceScores& sc, const std::filesystem::path& path,
                        std::optional<double> theta = std::nullopt) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  nlohmann::json h = {{"format", "caiac-scores"},     {"version", 1},
                      {"K", sc.K},                    {"scorer_id", sc.scorer_id},
                      {"seed", sc.seed},              {"n_trajectories", sc.values.size()},
                      {"n_states", sc.state_count()}};
  if (theta) h["theta"] = *theta;
  os << h.dump() << '\n';
  std::string line;
  for (std::size_t i = 0; i < sc.values.size(); ++i) {
    for (std::size_t s = 0; s < sc.values[i].size(); ++s) {
      line = "{\"traj\":" + std::to_string(i) + ",\"step\":" + std::to_string(s) + ",\"scores\":[";
      const auto& v = sc.values[i][s];
      for (std::size_t j = 0; j < v.size(); ++j) {
        if (j) line += ',';
        detail::append_real(line, v[j]);
      }
      line += ']';
      if (theta) {
        line += ",\"uncontrollable\":[";
        bool first = true;
        for (std::size_t j = 1; j < v.size(); ++j) {
          if (v[j] <= *theta) {
            if (!first) line += ',';
            line += std::to_string(j);
            first = false;
          }
        }
        line += ']';
      }
      os << line << "}\n";
    }
  }
}

inline InfluenceScores load_scores(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("missing input file '" + path.string() + "'");
  std::string line;
  std::size_t lineno = 0;
  auto parse = [&](const std::string& text) {
    try {
      return nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(lineno, e.what());
    }
  };
  if (!std::getline(is, line)) throw ParseError(1, "empty scores file");
  ++lineno;
  const auto h = parse(line);
  if (h.value("format", std::string{}) != "caiac-scores") throw ParseError(1, "not a caiac scores file");
  InfluenceScores sc;
  sc.K = h.at("K").get<std::size_t>();
  sc.scorer_id = h.at("scorer_id").get<std::string>();
  sc.seed = h.at("seed").get<std::uint64_t>();
  sc.values.resize(h.at("n_trajectories").get<std::size_t>());
  const auto n_states = h.at("n_states").get<std::size_t>();
  std::size_t seen = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto j = parse(line);
    const auto i = j.at("traj").get<std::size_t>();
    const auto s = j.at("step").get<std::size_t>();
    if (i >= sc.values.size()) throw ParseError(lineno, "trajectory index out of range");
    if (s != sc.values[i].size()) throw ParseError(lineno, "steps must be listed in order");
    sc.values[i].push_back(j.at("scores").get<std::vector<double>>());
    ++seen;
  }
  if (seen != n_states) throw ParseError(lineno, "scores file truncated");
  return sc;
}

/// Checks that scores cover every state of the dataset with the right layout.
inline void check_alignment(const InfluenceScores& sc, const Dataset& d) {
  if (sc.values.size() != d.trajectories.size())
    throw SchemaError("scores cover " + std::to_string(sc.values.size()) + " trajectories, dataset has " +
                      std::to_string(d.trajectories.size()));
  for (std::size_t i = 0; i < sc.values.size(); ++i) {
    if (sc.values[i].size() != d.trajectories[i].states.size())
      throw SchemaError("scores for trajectory " + std::to_string(i) + " do not cover all states");
    for (const auto& v : sc.values[i])
      if (static_cast<int>(v.size()) != d.config.n_entities())
        throw SchemaError("score vector length does not match entity count");
  }
}

// ----------------------------------------------------------------------------
// ROC
// ----------------------------------------------------------------------------

struct RocPoint {
  double threshold;  // predict "influenced" iff score > threshold
  double tpr;
  double fpr;
};

struct RocResult {
  std::vector<RocPoint> points;  // threshold ascending, so TPR/FPR descending
  double auc = 0.0;
  std::size_t positives = 0;
  std::size_t negatives = 0;

  /// Threshold maximising TPR - FPR.
  RocPoint youden() const {
    return *std::max_element(points.begin(), points.end(),
                             [](const RocPoint& a, const RocPoint& b) { return a.tpr - a.fpr < b.tpr - b.fpr; });
  }
};

inline RocResult roc_analysis(std::span<const double> scores, const std::vector<bool>& labels) {
  if (scores.size() != labels.size()) throw ShapeError("roc_analysis: scores and labels differ in length");
  RocResult r;
  for (bool l : labels) (l ? r.positives : r.negatives)++;
  if (r.positives == 0 || r.negatives == 0) throw ConfigError("roc_analysis needs both classes in the labels");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  const double P = static_cast<double>(r.positives);
  const double N = static_cast<double>(r.negatives);
  // Threshold below every score: everything predicted positive.
  std::size_t tp = r.positives, fp = r.negatives;
  r.points.push_back({-std::numeric_limits<double>::infinity(), 1.0, 1.0});
  for (std::size_t i = 0; i < order.size();) {
    const double thr = scores[order[i]];
    while (i < order.size() && scores[order[i]] == thr) {
      (labels[order[i]] ? tp : fp)--;
      ++i;
    }
    r.points.push_back({thr, static_cast<double>(tp) / P, static_cast<double>(fp) / N});
  }
  for (std::size_t i = 1; i < r.points.size(); ++i) {
    const auto& a = r.points[i - 1];
    const auto& b = r.points[i];
    r.auc += (a.fpr - b.fpr) * 0.5 * (a.tpr + b.tpr);
  }
  return r;
}

/// Object entities only: the agent is influenced by definition.
struct LabeledScores {
  std::vector<double> scores;
  std::vector<bool> labels;
};

inline LabeledScores label_scores(const InfluenceScores& sc, const Dataset& d) {
  check_alignment(sc, d);
  LabeledScores out;
  for (std::size_t i = 0; i < d.trajectories.size(); ++i) {
    for (std::size_t s = 0; s < d.trajectories[i].states.size(); ++s) {
      const auto gt = ground_truth_influence(d.trajectories[i].states[s], d.config);
      for (std::size_t j = 1; j < gt.size(); ++j) {
        out.scores.push_back(sc.values[i][s][j]);
        out.labels.push_back(gt[j]);
      }
    }
  }
  return out;
}

}  // namespace caiac
