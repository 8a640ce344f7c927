#pragma once

// Counterfactual quality audits: simulator replay (is the counterfactual a
// trajectory the world could actually produce?) and binned joint support.

#include <map>

#include "caiac/augment.hpp"

namespace caiac {

inline constexpr double kReplayTolerance = 1e-6;
inline constexpr double kFitVarianceFloor = 1e-12;

struct FeasibilityVerdict {
  StepRef original;
  std::vector<int> swapped;
  bool pass = false;
  double max_deviation = 0.0;  // deterministic replay
  double log_likelihood = std::numeric_limits<double>::quiet_NaN();  // stochastic replay
};

struct FeasibilityReport {
  std::string method_id;
  /// "exact-replay" (noise_std == 0) or "gaussian-fit" (diagonal MLE over K_sims rollouts).
  std::string criterion;
  double tolerance = kReplayTolerance;
  std::size_t k_sims = 0;
  std::vector<FeasibilityVerdict> verdicts;
  double pass_rate = 0.0;
};

/// Replays each record's actions from its first state.
///
/// Deterministic world: pass iff the final state matches within 1e-6
/// (max-norm). Noisy world: K_sims rollouts, diagonal Gaussian fit by maximum
/// likelihood (variance floored at 1e-12); the verdict is the log-likelihood
/// of the counterfactual's final state, and it passes when that is at least
/// the likelihood of a point three standard deviations out in every dimension.
inline FeasibilityReport feasibility_replay(std::span<const CounterfactualRecord> records, const WorldConfig& config,
                                            std::size_t k_sims, std::uint64_t seed, std::string method_id = "") {
  FeasibilityReport rep;
  rep.method_id = std::move(method_id);
  const bool deterministic = config.noise_std == 0.0;
  rep.criterion = deterministic ? "exact-replay" : "gaussian-fit";
  rep.k_sims = deterministic ? 1 : k_sims;
  if (!deterministic && k_sims < 2) throw ConfigError("stochastic feasibility replay needs k_sims >= 2");

  std::size_t passed = 0;
  for (std::size_t r = 0; r < records.size(); ++r) {
    const auto& rec = records[r];
    if (rec.states.size() != rec.actions.size() + 1 || rec.actions.empty())
      throw SchemaError("feasibility_replay: record has no kappa-length action sequence");
    if (static_cast<int>(rec.states.front().size()) != config.n_entities())
      throw SchemaError("feasibility_replay: record entity count does not match world config");

    FeasibilityVerdict v{rec.original, rec.swapped_entities()};
    const auto& target = rec.states.back();
    if (deterministic) {
      FactoredState s = rec.states.front();
      for (const auto& a : rec.actions) s = step(s, a, config);
      for (std::size_t j = 0; j < s.size(); ++j)
        for (int d = 0; d < kEntityDim; ++d) v.max_deviation = std::max(v.max_deviation, std::abs(s[j][d] - target[j][d]));
      v.pass = v.max_deviation <= kReplayTolerance;
    } else {
      const auto D = static_cast<Eigen::Index>(target.size() * kEntityDim);
      Matrix finals(D, static_cast<Eigen::Index>(k_sims));
      for (std::size_t k = 0; k < k_sims; ++k) {
        FactoredState s = rec.states.front();
        for (std::size_t t = 0; t < rec.actions.size(); ++t)
          s = step(s, rec.actions[t], config, derive_seed(seed, "replay", r, k, t));
        flatten_into(s, finals.col(static_cast<Eigen::Index>(k)));
      }
      const Vector mu = finals.rowwise().mean();
      const Vector var =
          ((finals.colwise() - mu).array().square().rowwise().sum() / static_cast<double>(k_sims)).max(kFitVarianceFloor);
      Vector x(D);
      flatten_into(target, x);
      const double log2pi = std::log(2.0 * std::numbers::pi);
      double ll = 0.0, ll_3sigma = 0.0;
      for (Eigen::Index d = 0; d < D; ++d) {
        ll += -0.5 * (log2pi + std::log(var(d)) + (x(d) - mu(d)) * (x(d) - mu(d)) / var(d));
        ll_3sigma += -0.5 * (log2pi + std::log(var(d)) + 9.0);
      }
      v.log_likelihood = ll;
      v.pass = ll >= ll_3sigma;
    }
    passed += v.pass ? 1 : 0;
    rep.verdicts.push_back(std::move(v));
  }
  rep.pass_rate = records.empty() ? 0.0 : static_cast<double>(passed) / static_cast<double>(records.size());
  return rep;
}

// ----------------------------------------------------------------------------

struct SupportReport {
  std::string method_id;
  std::size_t occupied = 0;
  std::size_t maximum = 0;  // 2^N
  double ratio = 0.0;
};

inline constexpr int kMaxSupportObjects = 20;

/// Objects binned by x-coordinate sign (x < 0 -> 0, else 1); counts distinct
/// joint categories over all given states.
inline SupportReport support_estimate(std::span<const FactoredState> states, const WorldConfig& config,
                                      std::string method_id = "") {
  if (config.n_objects > kMaxSupportObjects)
    throw ConfigError("support_estimate supports at most " + std::to_string(kMaxSupportObjects) +
                      " objects; a sketch-based estimator would be needed beyond that");
  SupportReport rep;
  rep.method_id = std::move(method_id);
  rep.maximum = std::size_t{1} << config.n_objects;
  std::vector<bool> seen(rep.maximum, false);
  for (const auto& s : states) {
    std::size_t code = 0;
    for (int j = 1; j <= config.n_objects; ++j)
      if (s[static_cast<std::size_t>(j)][0] >= 0.0) code |= std::size_t{1} << (j - 1);
    if (!seen[code]) {
      seen[code] = true;
      ++rep.occupied;
    }
  }
  rep.ratio = static_cast<double>(rep.occupied) / static_cast<double>(rep.maximum);
  return rep;
}

inline std::vector<FactoredState> all_states(const Dataset& d) {
  std::vector<FactoredState> out;
  out.reserve(d.state_count());
  for (const auto& t : d.trajectories) out.insert(out.end(), t.states.begin(), t.states.end());
  return out;
}

inline SupportReport support_estimate(const Dataset& d, std::string method_id = "") {
  const auto states = all_states(d);
  return support_estimate(states, d.config, std::move(method_id));
}

// ----------------------------------------------------------------------------
// Method comparison
// ----------------------------------------------------------------------------

enum class AugmentMethod { Caiac, RandomSwap, None };

inline std::string to_string(AugmentMethod m) {
  switch (m) {
    case AugmentMethod::Caiac: return "caiac";
    case AugmentMethod::RandomSwap: return "random_swap";
    case AugmentMethod::None: return "none";
  }
  return "?";
}

inline AugmentMethod parse_method(std::string_view s) {
  if (s == "caiac") return AugmentMethod::Caiac;
  if (s == "random_swap") return AugmentMethod::RandomSwap;
  if (s == "none") return AugmentMethod::None;
  throw ConfigError("unknown augmentation method '" + std::string(s) + "'");
}

/// Draws n records with the given method; originals come from the
/// augmenter's pool with a seed shared across methods.
inline std::vector<CounterfactualRecord> draw_records(const Augmenter& aug, AugmentMethod method, std::size_t n,
                                                      std::uint64_t seed) {
  std::vector<CounterfactualRecord> out;
  out.reserve(n);
  Rng originals(derive_seed(seed, "audit-originals"));
  Rng donors(derive_seed(seed, "audit-donors", to_string(method)));
  std::size_t attempts = 0;
  while (out.size() < n && attempts < 1000 * std::max<std::size_t>(n, 1)) {
    ++attempts;
    const StepRef ref = aug.draw_original(originals);
    switch (method) {
      case AugmentMethod::None:
        out.push_back(identity_record(aug.view(ref)));
        break;
      case AugmentMethod::RandomSwap:
        out.push_back(aug.random_swap_from(ref, donors));
        break;
      case AugmentMethod::Caiac:
        if (auto r = aug.caiac_from(ref, donors)) out.push_back(std::move(*r));
        break;
    }
  }
  return out;
}

struct MethodReport {
  std::string method_id;
  FeasibilityReport feasibility;
  SupportReport support;
  std::size_t records = 0;
};

struct CompareOptions {
  std::size_t n_records = 1000;
  std::size_t k_sims = 50;
  std::uint64_t seed = 0;
};

/// States of the dataset a method would materialize at the augmenter's
/// cf_ratio: originals (unless r = 1) plus counterfactual_count(W, r) windows
/// drawn like augment_dataset, so caiac matches its output exactly.
inline std::vector<FactoredState> augmented_states(const Augmenter& aug, AugmentMethod method) {
  const auto& d = aug.dataset();
  const double r = aug.config().cf_ratio;
  std::vector<FactoredState> out;
  if (r < 1.0 || method == AugmentMethod::None) out = all_states(d);
  if (method == AugmentMethod::None || r == 0.0) return out;
  const std::size_t n_cf = counterfactual_count(aug.windows().size(), r);
  Rng rng(derive_seed(aug.config().seed, "augment"));
  const std::size_t max_draws = 100 * std::max<std::size_t>(n_cf, 1);
  for (std::size_t made = 0, draws = 0; made < n_cf && draws < max_draws; ++draws) {
    std::optional<CounterfactualRecord> rec;
    if (method == AugmentMethod::Caiac)
      rec = aug.caiac_from(aug.draw_original(rng), rng);
    else
      rec = aug.random_swap_from(aug.draw_original(rng), rng);
    if (!rec) continue;
    out.insert(out.end(), rec->states.begin(), rec->states.end());
    ++made;
  }
  return out;
}

/// Per method: feasibility of n_records audited counterfactual windows, and
/// support of the augmented dataset the method would produce.
inline std::vector<MethodReport> compare_methods(const Augmenter& aug, std::span<const AugmentMethod> methods,
                                                 const CompareOptions& opt) {
  const auto& d = aug.dataset();
  std::vector<MethodReport> out;
  for (AugmentMethod m : methods) {
    MethodReport rep;
    rep.method_id = to_string(m);
    const auto records = draw_records(aug, m, opt.n_records, opt.seed);
    rep.records = records.size();
    rep.feasibility = feasibility_replay(records, d.config, opt.k_sims, derive_seed(opt.seed, "replay"), rep.method_id);
    rep.support = support_estimate(augmented_states(aug, m), d.config, rep.method_id);
    out.push_back(std::move(rep));
  }
  return out;
}

inline nlohmann::json to_json(const FeasibilityReport& r) {
  std::vector<double> lls;
  for (const auto& v : r.verdicts)
    if (!std::isnan(v.log_likelihood)) lls.push_back(v.log_likelihood);
  nlohmann::json j = {{"method_id", r.method_id}, {"criterion", r.criterion}, {"tolerance", r.tolerance},
                      {"k_sims", r.k_sims},       {"records", r.verdicts.size()}, {"pass_rate", r.pass_rate}};
  if (!lls.empty()) {
    std::sort(lls.begin(), lls.end());
    auto q = [&](double p) { return lls[static_cast<std::size_t>(p * static_cast<double>(lls.size() - 1))]; };
    j["log_likelihood_quantiles"] = {{"q05", q(0.05)}, {"q25", q(0.25)}, {"q50", q(0.5)}, {"q75", q(0.75)}, {"q95", q(0.95)}};
    j["covariance"] = "diagonal";
  }
  return j;
}

inline nlohmann::json to_json(const SupportReport& r) {
  return {{"method_id", r.method_id}, {"occupied", r.occupied}, {"maximum", r.maximum}, {"ratio", r.ratio}};
}

inline void write_feasibility_csv(std::ostream& os, const FeasibilityReport& r) {
  os << "traj,step,swapped,pass,max_deviation,log_likelihood\n";
  for (const auto& v : r.verdicts) {
    std::string sw;
    for (std::size_t i = 0; i < v.swapped.size(); ++i) sw += (i ? ";" : "") + std::to_string(v.swapped[i]);
    std::string dev, ll;
    detail::append_real(dev, v.max_deviation);
    if (!std::isnan(v.log_likelihood)) detail::append_real(ll, v.log_likelihood);
    os << v.original.traj << ',' << v.original.step << ',' << sw << ',' << (v.pass ? 1 : 0) << ',' << dev << ',' << ll
       << '\n';
  }
}

}  // namespace caiac
