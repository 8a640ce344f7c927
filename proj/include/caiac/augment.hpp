#pragma once

// Counterfactual augmentation. Entities the action cannot influence over a
// window (score <= theta at every step) are swapped, state sequence and all,
// with the same entity from an independently drawn donor window.

#include "caiac/influence.hpp"

namespace caiac {

struct UncontrollableSet {
  std::vector<int> entities;  // sorted object indices
  double theta = 0.0;
  std::size_t kappa = 1;

  bool contains(int j) const { return std::binary_search(entities.begin(), entities.end(), j); }
  bool empty() const { return entities.empty(); }
};

/// {j >= 1 : score_j <= theta}. The agent (entity 0) is never uncontrollable.
inline UncontrollableSet uncontrollable_set(std::span<const double> scores, double theta) {
  UncontrollableSet u{{}, theta, 1};
  for (std::size_t j = 1; j < scores.size(); ++j)
    if (scores[j] <= theta) u.entities.push_back(static_cast<int>(j));
  return u;
}

/// Intersection of the per-step sets over the first kappa score vectors.
inline UncontrollableSet windowed_uncontrollable_set(std::span<const std::vector<double>> scores, std::size_t kappa,
                                                     double theta) {
  if (kappa < 1) throw ConfigError("augment.kappa must be >= 1");
  if (scores.size() < kappa)
    throw ShapeError("windowed_uncontrollable_set: " + std::to_string(scores.size()) + " score vectors for a window of " +
                     std::to_string(kappa));
  UncontrollableSet u = uncontrollable_set(scores[0], theta);
  for (std::size_t t = 1; t < kappa; ++t) {
    const auto next = uncontrollable_set(scores[t], theta);
    std::vector<int> keep;
    std::set_intersection(u.entities.begin(), u.entities.end(), next.entities.begin(), next.entities.end(),
                          std::back_inserter(keep));
    u.entities = std::move(keep);
  }
  u.kappa = kappa;
  return u;
}

struct AugmentConfig {
  double theta = 0.05;
  std::size_t kappa = 1;
  double cf_ratio = 0.5;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(theta >= 0.0)) throw ConfigError("augment theta must be >= 0");
    if (kappa < 1) throw ConfigError("augment.kappa must be >= 1");
    if (!(cf_ratio >= 0.0 && cf_ratio <= 1.0)) throw ConfigError("augment.cf_ratio must be in [0,1]");
  }
};

/// kappa transitions starting at `ref`: kappa+1 states, kappa actions.
struct WindowView {
  StepRef ref;
  std::span<const FactoredState> states;
  std::span<const Action> actions;
};

inline WindowView window_view(const Dataset& d, StepRef ref, std::size_t kappa) {
  const auto& t = d.trajectories.at(ref.traj);
  if (ref.step + kappa > t.length()) throw ShapeError("window runs past the end of its trajectory");
  return {ref, std::span(t.states).subspan(ref.step, kappa + 1), std::span(t.actions).subspan(ref.step, kappa)};
}

struct CounterfactualRecord {
  StepRef original;
  std::vector<SwapSource> swaps;  // one entry per swapped entity, with its donor window
  std::vector<FactoredState> states;
  std::vector<Action> actions;
  std::optional<bool> feasible;

  std::vector<int> swapped_entities() const {
    std::vector<int> e;
    for (const auto& s : swaps) e.push_back(s.entity);
    return e;
  }
  std::size_t kappa() const { return actions.size(); }
};

inline CounterfactualRecord identity_record(const WindowView& w) {
  return {w.ref, {}, {w.states.begin(), w.states.end()}, {w.actions.begin(), w.actions.end()}, std::nullopt};
}

/// Replaces entity j's whole state sequence in `rec` with the donor's.
inline void swap_entity(CounterfactualRecord& rec, const WindowView& donor, int j) {
  if (donor.states.size() != rec.states.size()) throw ShapeError("swap: window lengths differ");
  if (donor.states.front().size() != rec.states.front().size()) throw ShapeError("swap: entity layouts differ");
  if (j < 0 || static_cast<std::size_t>(j) >= rec.states.front().size()) throw ShapeError("swap: entity out of range");
  for (std::size_t t = 0; t < rec.states.size(); ++t) rec.states[t][static_cast<std::size_t>(j)] = donor.states[t][static_cast<std::size_t>(j)];
  rec.swaps.push_back({j, donor.ref});
}

/// Swaps every entity of `shared` from donor into original. An empty set is
/// the no-op signal: nullopt, and the caller skips the sample.
inline std::optional<CounterfactualRecord> swap(const WindowView& original, const WindowView& donor,
                                                const UncontrollableSet& shared) {
  if (original.states.size() != donor.states.size() || original.states.front().size() != donor.states.front().size())
    throw ShapeError("swap: window layouts differ");
  if (shared.empty()) return std::nullopt;
  auto rec = identity_record(original);
  for (int j : shared.entities) swap_entity(rec, donor, j);
  return rec;
}

/// Precomputed window index and per-window uncontrollable sets for a scored
/// dataset; draws counterfactuals per the CAIAC loop or the random control.
class Augmenter {
 public:
  Augmenter(const Dataset& d, const InfluenceScores& scores, const AugmentConfig& cfg,
            std::vector<StepRef> original_pool = {})
      : data_(&d), cfg_(cfg), pool_(std::move(original_pool)) {
    cfg_.validate();
    check_alignment(scores, d);
    if (d.config.n_entities() > 64) throw ConfigError("augmentation supports at most 63 objects");
    for (std::size_t i = 0; i < d.trajectories.size(); ++i) {
      const auto& t = d.trajectories[i];
      offsets_.push_back(windows_.size());
      if (t.length() < cfg_.kappa) continue;
      for (std::size_t s = 0; s + cfg_.kappa <= t.length(); ++s) {
        windows_.push_back({i, s});
        const auto u = windowed_uncontrollable_set(std::span(scores.values[i]).subspan(s, cfg_.kappa), cfg_.kappa,
                                                   cfg_.theta);
        std::uint64_t mask = 0;
        for (int j : u.entities) mask |= std::uint64_t{1} << j;
        masks_.push_back(mask);
      }
    }
    if (windows_.empty()) throw ConfigError("dataset has no window of length kappa = " + std::to_string(cfg_.kappa));
    if (pool_.empty()) pool_ = windows_;
  }

  const Dataset& dataset() const { return *data_; }
  const AugmentConfig& config() const { return cfg_; }
  const std::vector<StepRef>& windows() const { return windows_; }
  const std::vector<StepRef>& original_pool() const { return pool_; }

  WindowView view(StepRef ref) const { return window_view(*data_, ref, cfg_.kappa); }

  UncontrollableSet uncontrollable(StepRef ref) const {
    const std::uint64_t m = masks_.at(index_of(ref));
    UncontrollableSet u{{}, cfg_.theta, cfg_.kappa};
    for (int j = 1; j < data_->config.n_entities(); ++j)
      if (m >> j & 1u) u.entities.push_back(j);
    return u;
  }

  StepRef draw_original(Rng& rng) const { return pool_[rng.index(pool_.size())]; }
  StepRef draw_donor(Rng& rng) const { return windows_[rng.index(windows_.size())]; }

  /// One draw of the CAIAC loop on a given original: for each uncontrollable
  /// entity, sample a donor and swap only if the donor also has that entity
  /// uncontrollable. nullopt when nothing was swapped.
  std::optional<CounterfactualRecord> caiac_from(StepRef original, Rng& rng) const {
    const std::uint64_t mine = masks_.at(index_of(original));
    auto rec = identity_record(view(original));
    for (int j = 1; j < data_->config.n_entities(); ++j) {
      if (!(mine >> j & 1u)) continue;
      const StepRef donor = draw_donor(rng);
      if (masks_[index_of(donor)] >> j & 1u) swap_entity(rec, view(donor), j);
    }
    if (rec.swaps.empty()) return std::nullopt;
    return rec;
  }

  /// Causality-unaware control: swap one uniformly chosen entity (agent
  /// included) with a uniformly drawn donor, ignoring influence.
  CounterfactualRecord random_swap_from(StepRef original, Rng& rng) const {
    auto rec = identity_record(view(original));
    const int j = static_cast<int>(rng.index(static_cast<std::size_t>(data_->config.n_entities())));
    swap_entity(rec, view(draw_donor(rng)), j);
    return rec;
  }

  /// Draws originals until one yields a counterfactual; nullopt after
  /// `max_attempts` empty draws.
  std::optional<CounterfactualRecord> draw_caiac(Rng& rng, std::size_t max_attempts = 1000) const {
    for (std::size_t a = 0; a < max_attempts; ++a)
      if (auto r = caiac_from(draw_original(rng), rng)) return r;
    return std::nullopt;
  }

 private:
  std::size_t index_of(StepRef ref) const { return offsets_.at(ref.traj) + ref.step; }

  const Dataset* data_;
  AugmentConfig cfg_;
  std::vector<StepRef> windows_;
  std::vector<std::uint64_t> masks_;
  std::vector<std::size_t> offsets_;
  std::vector<StepRef> pool_;
};

inline Trajectory record_to_trajectory(const CounterfactualRecord& rec, const Dataset& d) {
  const auto& src = d.trajectories.at(rec.original.traj);
  Trajectory t;
  t.states = rec.states;
  t.actions = rec.actions;
  t.task_id = src.task_id;
  t.regime = src.regime;
  t.seed = src.seed;
  t.policy = "counterfactual";
  t.counterfactual = CounterfactualProvenance{rec.original, rec.swaps};
  return t;
}

struct AugmentResult {
  Dataset dataset;
  std::vector<CounterfactualRecord> records;
  std::size_t original_windows = 0;
  std::size_t skipped_draws = 0;
};

/// Counterfactual windows to add to W originals for ratio r: round(W r / (1 - r)),
/// or W when r = 1 (originals are then dropped).
inline std::size_t counterfactual_count(std::size_t W, double r) {
  if (r >= 1.0) return W;
  return static_cast<std::size_t>(std::llround(static_cast<double>(W) * r / (1.0 - r)));
}

/// Materialized augmentation. With W original windows and ratio r < 1 the
/// output holds the original trajectories plus counterfactual_count(W, r)
/// counterfactual windows; r = 1 yields W counterfactuals and no originals.
inline AugmentResult augment_dataset(const Dataset& d, const InfluenceScores& scores, const AugmentConfig& cfg) {
  if (d.trajectories.empty()) throw ConfigError("cannot augment an empty dataset");
  cfg.validate();
  AugmentResult res;
  res.dataset.config = d.config;
  res.dataset.provenance = d.provenance;
  if (cfg.cf_ratio == 0.0) {
    res.dataset = d;
    for (const auto& t : d.trajectories)
      if (t.length() >= cfg.kappa) res.original_windows += t.length() - cfg.kappa + 1;
    return res;
  }
  const Augmenter aug(d, scores, cfg);
  const std::size_t W = aug.windows().size();
  res.original_windows = W;
  const std::size_t n_cf = counterfactual_count(W, cfg.cf_ratio);
  if (cfg.cf_ratio < 1.0) res.dataset.trajectories = d.trajectories;
  Rng rng(derive_seed(cfg.seed, "augment"));
  const std::size_t max_draws = 100 * std::max<std::size_t>(n_cf, 1);
  std::size_t draws = 0;
  while (res.records.size() < n_cf && draws < max_draws) {
    ++draws;
    if (auto r = aug.caiac_from(aug.draw_original(rng), rng)) {
      res.dataset.trajectories.push_back(record_to_trajectory(*r, d));
      res.records.push_back(std::move(*r));
    } else {
      ++res.skipped_draws;
    }
  }
  return res;
}

/// Training-stream view of an augmenter: each batch holds exactly
/// round(cf_ratio * B) counterfactual windows (fewer only if none can be made).
struct StreamSample {
  CounterfactualRecord window;  // swaps empty for original samples
  bool counterfactual = false;
};

class AugmentStream {
 public:
  AugmentStream(const Augmenter& aug, double cf_ratio, std::uint64_t seed)
      : aug_(&aug), ratio_(cf_ratio), rng_(derive_seed(seed, "augment-stream")) {
    if (!(cf_ratio >= 0.0 && cf_ratio <= 1.0)) throw ConfigError("cf_ratio must be in [0,1]");
  }

  std::vector<StreamSample> next_batch(std::size_t B) {
    const auto n_cf = static_cast<std::size_t>(std::llround(ratio_ * static_cast<double>(B)));
    std::vector<StreamSample> out;
    out.reserve(B);
    for (std::size_t i = 0; i < n_cf; ++i) {
      if (auto r = aug_->draw_caiac(rng_)) {
        out.push_back({std::move(*r), true});
      } else {
        ++shortfall_;
      }
    }
    while (out.size() < B) out.push_back({identity_record(aug_->view(aug_->draw_original(rng_))), false});
    return out;
  }

  std::size_t shortfall() const { return shortfall_; }

 private:
  const Augmenter* aug_;
  double ratio_;
  Rng rng_;
  std::size_t shortfall_ = 0;
};

}  // namespace caiac
