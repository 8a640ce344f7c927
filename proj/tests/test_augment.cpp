#include <gtest/gtest.h>

#include "caiac/augment.hpp"

using namespace caiac;

namespace {

struct Fixture {
  Dataset d;
  InfluenceScores sc;
};

Fixture oracle_fixture(std::uint64_t seed = 1, std::size_t n = 24) {
  Fixture f;
  f.d = generate_dataset(WorldConfig{}, default_tasks(), n, 0.5, 30, seed);
  f.sc = oracle_distance_scores(f.d);
  return f;
}

std::set<int> as_set(const UncontrollableSet& u) { return {u.entities.begin(), u.entities.end()}; }

bool subset(const std::set<int>& a, const std::set<int>& b) { return std::includes(b.begin(), b.end(), a.begin(), a.end()); }

/// Checks locality and donor fidelity of one record against the dataset.
void expect_faithful(const CounterfactualRecord& rec, const Dataset& d, std::size_t kappa) {
  const auto orig = window_view(d, rec.original, kappa);
  ASSERT_EQ(rec.states.size(), kappa + 1);
  EXPECT_TRUE(std::equal(rec.actions.begin(), rec.actions.end(), orig.actions.begin()));
  std::set<int> swapped;
  for (const auto& s : rec.swaps) {
    swapped.insert(s.entity);
    const auto donor = window_view(d, s.donor, kappa);
    for (std::size_t t = 0; t <= kappa; ++t)
      EXPECT_EQ(rec.states[t][static_cast<std::size_t>(s.entity)], donor.states[t][static_cast<std::size_t>(s.entity)]);
  }
  for (std::size_t t = 0; t <= kappa; ++t)
    for (std::size_t j = 0; j < rec.states[t].size(); ++j)
      if (!swapped.count(static_cast<int>(j))) EXPECT_EQ(rec.states[t][j], orig.states[t][j]);
}

}  // namespace

TEST(Uncontrollable, ThresholdExamples) {
  const std::vector<double> s{9.0, 0.5, 0.01, 0.3};
  EXPECT_EQ(uncontrollable_set(s, 0.1).entities, std::vector<int>{2});
  const std::vector<double> pos{1.0, 0.2, 0.01, 0.3};
  EXPECT_TRUE(uncontrollable_set(pos, 0.0).empty());
  // The agent is never uncontrollable.
  const std::vector<double> zeros(4, 0.0);
  EXPECT_EQ(uncontrollable_set(zeros, 0.0).entities, (std::vector<int>{1, 2, 3}));
}

TEST(Uncontrollable, MonotoneInThetaProperty) {
  Rng rng(3);
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> s(6);
    for (auto& v : s) v = rng.uniform() < 0.2 ? 0.0 : rng.uniform(0, 2);
    const double a = rng.uniform(0, 2), b = rng.uniform(0, 2);
    EXPECT_TRUE(subset(as_set(uncontrollable_set(s, std::min(a, b))), as_set(uncontrollable_set(s, std::max(a, b)))));
  }
}

TEST(Window, KappaOneEqualsPerStep) {
  const std::vector<std::vector<double>> s{{1, 0.0, 0.3, 0.01}};
  EXPECT_EQ(windowed_uncontrollable_set(s, 1, 0.1).entities, uncontrollable_set(s[0], 0.1).entities);
}

TEST(Window, IntersectionSemantics) {
  const std::vector<std::vector<double>> s{{1, 0.0, 0.0}, {1, 0.0, 0.0}, {1, 0.0, 0.9}, {1, 0.0, 0.0}};
  EXPECT_EQ(windowed_uncontrollable_set(s, 4, 0.1).entities, std::vector<int>{1});
  EXPECT_THROW(windowed_uncontrollable_set(s, 5, 0.1), ShapeError);
}

TEST(Window, SubsetOfEveryStepProperty) {
  Rng rng(4);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t kappa = 1 + rng.index(5);
    std::vector<std::vector<double>> s(kappa, std::vector<double>(6));
    for (auto& v : s)
      for (auto& x : v) x = rng.uniform() < 0.6 ? 0.0 : 1.0;
    const auto w = as_set(windowed_uncontrollable_set(s, kappa, 0.5));
    for (const auto& step_scores : s) EXPECT_TRUE(subset(w, as_set(uncontrollable_set(step_scores, 0.5))));
    std::set<int> all;
    for (int j = 1; j < 6; ++j)
      if (std::all_of(s.begin(), s.end(), [&](const auto& v) { return v[static_cast<std::size_t>(j)] <= 0.5; })) all.insert(j);
    EXPECT_EQ(w, all);
  }
}

TEST(Swap, EmptySetIsNoop) {
  const auto f = oracle_fixture();
  const auto v = window_view(f.d, {0, 0}, 2);
  EXPECT_FALSE(swap(v, window_view(f.d, {1, 3}, 2), UncontrollableSet{}).has_value());
}

TEST(Swap, LocalToSwappedEntity) {
  const auto f = oracle_fixture();
  const auto o = window_view(f.d, {0, 2}, 3);
  const auto donor = window_view(f.d, {5, 7}, 3);
  const auto rec = swap(o, donor, UncontrollableSet{{3}, 0.1, 3});
  ASSERT_TRUE(rec);
  for (std::size_t t = 0; t < rec->states.size(); ++t) {
    for (std::size_t j = 0; j < rec->states[t].size(); ++j) {
      if (j == 3) EXPECT_EQ(rec->states[t][j], donor.states[t][j]);
      else EXPECT_EQ(rec->states[t][j], o.states[t][j]);
    }
  }
  expect_faithful(*rec, f.d, 3);
}

TEST(Swap, WithItselfIsIdentity) {
  const auto f = oracle_fixture();
  const auto o = window_view(f.d, {2, 4}, 2);
  const auto rec = swap(o, o, UncontrollableSet{{1, 2, 3, 4}, 0.1, 2});
  ASSERT_TRUE(rec);
  EXPECT_TRUE(std::equal(rec->states.begin(), rec->states.end(), o.states.begin()));
}

TEST(Swap, LayoutMismatch) {
  const auto f = oracle_fixture();
  EXPECT_THROW(swap(window_view(f.d, {0, 0}, 2), window_view(f.d, {0, 0}, 3), UncontrollableSet{{1}, 0.1, 2}),
               ShapeError);
}

TEST(Augmenter, CaiacRecordsRespectBothSetsProperty) {
  const auto f = oracle_fixture(2);
  for (std::size_t kappa : {1u, 3u}) {
    const Augmenter aug(f.d, f.sc, {0.5, kappa, 0.5, 0});
    Rng rng(9);
    for (int i = 0; i < 300; ++i) {
      const auto ref = aug.draw_original(rng);
      const auto rec = aug.caiac_from(ref, rng);
      if (!rec) continue;
      const auto mine = as_set(aug.uncontrollable(ref));
      for (const auto& s : rec->swaps) {
        EXPECT_TRUE(mine.count(s.entity));
        EXPECT_TRUE(as_set(aug.uncontrollable(s.donor)).count(s.entity));
      }
      expect_faithful(*rec, f.d, kappa);
    }
  }
}

TEST(Augmenter, RandomSwapTouchesOneEntity) {
  const auto f = oracle_fixture(2);
  const Augmenter aug(f.d, f.sc, {0.5, 2, 0.5, 0});
  Rng rng(1);
  std::set<int> seen;
  for (int i = 0; i < 400; ++i) {
    const auto rec = aug.random_swap_from(aug.draw_original(rng), rng);
    ASSERT_EQ(rec.swaps.size(), 1u);
    seen.insert(rec.swaps[0].entity);
    expect_faithful(rec, f.d, 2);
  }
  EXPECT_EQ(seen, (std::set<int>{0, 1, 2, 3, 4}));
}

TEST(AugmentDataset, RatioZeroIsOriginal) {
  const auto f = oracle_fixture();
  EXPECT_EQ(augment_dataset(f.d, f.sc, {0.5, 1, 0.0, 0}).dataset, f.d);
}

TEST(AugmentDataset, HalfRatioDoublesWindows) {
  const auto f = oracle_fixture(3);
  const auto r = augment_dataset(f.d, f.sc, {0.5, 1, 0.5, 4});
  EXPECT_EQ(r.original_windows, f.d.transition_count());
  EXPECT_EQ(r.records.size(), r.original_windows);
  EXPECT_EQ(r.dataset.trajectories.size(), f.d.trajectories.size() + r.records.size());
  for (std::size_t i = f.d.trajectories.size(); i < r.dataset.trajectories.size(); ++i) {
    const auto& t = r.dataset.trajectories[i];
    ASSERT_TRUE(t.counterfactual.has_value());
    EXPECT_EQ(t.policy, "counterfactual");
  }
  EXPECT_EQ(r.dataset, augment_dataset(f.d, f.sc, {0.5, 1, 0.5, 4}).dataset);
}

TEST(AugmentDataset, SerializesWithProvenance) {
  const auto f = oracle_fixture(3, 8);
  const auto r = augment_dataset(f.d, f.sc, {0.5, 2, 0.5, 4});
  std::ostringstream os;
  write_dataset(os, r.dataset);
  std::istringstream is(os.str());
  EXPECT_EQ(read_dataset(is), r.dataset);
}

TEST(AugmentDataset, EmptyDatasetRejected) {
  Dataset empty;
  EXPECT_THROW(augment_dataset(empty, InfluenceScores{}, {0.5, 1, 0.5, 0}), ConfigError);
}

TEST(Stream, ExactCounterfactualShare) {
  const auto f = oracle_fixture(5);
  const Augmenter aug(f.d, f.sc, {0.5, 1, 0.5, 0});
  for (double r : {0.0, 0.3, 0.5, 0.9, 1.0}) {
    AugmentStream st(aug, r, 2);
    for (std::size_t B : {1u, 7u, 64u}) {
      const auto batch = st.next_batch(B);
      ASSERT_EQ(batch.size(), B);
      const auto n_cf = std::count_if(batch.begin(), batch.end(), [](const auto& s) { return s.counterfactual; });
      EXPECT_EQ(static_cast<std::size_t>(n_cf), static_cast<std::size_t>(std::llround(r * static_cast<double>(B))));
    }
  }
}

TEST(Stream, OriginalPoolRestrictsOriginals) {
  const auto f = oracle_fixture(5);
  const std::vector<StepRef> pool{{0, 0}, {0, 1}};
  const Augmenter aug(f.d, f.sc, {0.5, 1, 0.5, 0}, pool);
  AugmentStream st(aug, 0.5, 1);
  for (const auto& s : st.next_batch(50))
    EXPECT_TRUE(s.window.original == pool[0] || s.window.original == pool[1]);
}

TEST(Replay, OutOfReachSwapsReplayExactly) {
  // With exact influence labels and theta just above 0, a counterfactual whose
  // swapped objects never come within reach of the agent replays exactly.
  const auto f = oracle_fixture(6, 40);
  const Augmenter aug(f.d, f.sc, {1e-9, 3, 0.5, 0});
  Rng rng(2);
  int checked = 0;
  for (int i = 0; i < 500; ++i) {
    const auto rec = aug.draw_caiac(rng);
    ASSERT_TRUE(rec);
    bool far = true;
    for (const auto& s : rec->states)
      for (const auto& sw : rec->swaps) far &= !within_reach(s.agent(), s[static_cast<std::size_t>(sw.entity)], f.d.config);
    if (!far) continue;
    ++checked;
    FactoredState s = rec->states.front();
    for (const auto& a : rec->actions) s = step(s, a, f.d.config);
    EXPECT_EQ(s, rec->states.back());
  }
  EXPECT_GT(checked, 100);
}
