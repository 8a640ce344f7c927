#include <gtest/gtest.h>

#include "caiac/evalharness.hpp"

using namespace caiac;

namespace {

Dataset data(std::uint64_t seed, std::size_t n = 24, WorldConfig c = {}) {
  return generate_dataset(c, default_tasks(), n, 0.5, 30, seed);
}

std::vector<CounterfactualRecord> genuine_windows(const Dataset& d, std::size_t kappa) {
  std::vector<CounterfactualRecord> out;
  for (std::size_t i = 0; i < d.trajectories.size(); ++i)
    for (std::size_t s = 0; s + kappa <= d.trajectories[i].length(); s += kappa)
      out.push_back(identity_record(window_view(d, {i, s}, kappa)));
  return out;
}

/// Teleports object 1 onto the agent's path from the second state on.
CounterfactualRecord teleported(const Dataset& d) {
  for (std::size_t i = 0; i < d.trajectories.size(); ++i) {
    const auto& t = d.trajectories[i];
    for (std::size_t s = 0; s + 4 <= t.length(); ++s) {
      auto rec = identity_record(window_view(d, {i, s}, 4));
      const Vec2 a0 = rec.states[0].agent(), a4 = rec.states[4].agent();
      if (distance(a0, a4) < 0.05 || within_reach(a0, rec.states[0][1], d.config)) continue;
      for (std::size_t k = 1; k < rec.states.size(); ++k) rec.states[k][1] = rec.states[k].agent();
      return rec;
    }
  }
  throw std::logic_error("no moving window");
}

}  // namespace

TEST(Feasibility, GenuineWindowsAllPass) {
  const auto d = data(1);
  for (std::size_t kappa : {1u, 5u}) {
    const auto rep = feasibility_replay(genuine_windows(d, kappa), d.config, 50, 0, "none");
    EXPECT_EQ(rep.criterion, "exact-replay");
    EXPECT_EQ(rep.pass_rate, 1.0);
  }
}

TEST(Feasibility, TeleportedObjectFails) {
  const auto d = data(2);
  const std::vector<CounterfactualRecord> recs{teleported(d)};
  const auto rep = feasibility_replay(recs, d.config, 50, 0);
  EXPECT_EQ(rep.pass_rate, 0.0);
  EXPECT_GT(rep.verdicts[0].max_deviation, 1e-3);
}

TEST(Feasibility, StochasticWorldUsesGaussianFit) {
  WorldConfig c;
  c.noise_std = 0.005;
  const auto d = data(3, 12, c);
  const auto genuine = feasibility_replay(genuine_windows(d, 2), c, 50, 1);
  EXPECT_EQ(genuine.criterion, "gaussian-fit");
  EXPECT_GE(genuine.pass_rate, 0.9);
  const std::vector<CounterfactualRecord> bad{teleported(d)};
  EXPECT_EQ(feasibility_replay(bad, c, 50, 1).pass_rate, 0.0);
  EXPECT_THROW(feasibility_replay(bad, c, 1, 1), ConfigError);
}

TEST(Feasibility, LayoutMismatch) {
  const auto d = data(1, 4);
  WorldConfig other;
  other.n_objects = 2;
  EXPECT_THROW(feasibility_replay(genuine_windows(d, 1), other, 2, 0), SchemaError);
}

TEST(Support, PinnedObjectAtMostHalf) {
  WorldConfig c;
  TaskSpec t;
  t.id = "pinned";
  t.nuisance_rule[3] = {0.8, 0.8};
  const auto d = generate_dataset(c, {t}, 100, 0.0, 20, 4);
  const auto rep = support_estimate(d);
  EXPECT_LE(rep.ratio, 0.5);
  EXPECT_EQ(rep.maximum, 16u);
}

TEST(Support, BinningOracle) {
  // Count categories by building the code string independently.
  const auto d = data(5);
  std::set<std::string> cats;
  for (const auto& s : all_states(d)) {
    std::string code;
    for (std::size_t j = 1; j < s.size(); ++j) code += s[j][0] < 0.0 ? '0' : '1';
    cats.insert(code);
  }
  EXPECT_EQ(support_estimate(d).occupied, cats.size());
}

TEST(Support, MonotoneUnderUnionAndDuplicationInvariant) {
  const auto a = all_states(data(6));
  const auto b = all_states(data(7));
  const WorldConfig c;
  auto ab = a;
  ab.insert(ab.end(), b.begin(), b.end());
  EXPECT_GE(support_estimate(ab, c).occupied, support_estimate(a, c).occupied);
  auto aa = a;
  aa.insert(aa.end(), a.begin(), a.end());
  EXPECT_EQ(support_estimate(aa, c).occupied, support_estimate(a, c).occupied);
}

TEST(Support, TooManyObjects) {
  WorldConfig c;
  c.n_objects = 21;
  EXPECT_THROW(support_estimate(std::vector<FactoredState>{}, c), ConfigError);
}

TEST(Compare, NoneMatchesRawAndIsReproducible) {
  const auto d = data(8, 40);
  const auto sc = oracle_distance_scores(d);
  const Augmenter aug(d, sc, {0.5, 1, 0.5, 0});
  const std::vector<AugmentMethod> methods{AugmentMethod::None, AugmentMethod::Caiac, AugmentMethod::RandomSwap};
  const auto a = compare_methods(aug, methods, {200, 5, 3});
  const auto b = compare_methods(aug, methods, {200, 5, 3});
  ASSERT_EQ(a.size(), 3u);
  EXPECT_EQ(a[0].support.occupied, support_estimate(d).occupied);
  EXPECT_EQ(a[0].feasibility.pass_rate, 1.0);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(to_json(a[i].feasibility), to_json(b[i].feasibility));
    EXPECT_EQ(to_json(a[i].support), to_json(b[i].support));
    EXPECT_GE(a[i].support.occupied, a[0].support.occupied);
  }
  EXPECT_LE(a[2].feasibility.pass_rate, a[1].feasibility.pass_rate);
}

TEST(Compare, CaiacSupportIsAugmentedDatasetSupport) {
  const auto d = data(8, 40);
  const auto sc = oracle_distance_scores(d);
  for (double r : {0.3, 1.0}) {
    const AugmentConfig cfg{0.5, 1, r, 4};
    const Augmenter aug(d, sc, cfg);
    const std::vector<AugmentMethod> methods{AugmentMethod::Caiac};
    EXPECT_EQ(compare_methods(aug, methods, {20, 5, 3})[0].support.occupied,
              support_estimate(augment_dataset(d, sc, cfg).dataset).occupied);
  }
}

TEST(Compare, MethodNames) {
  for (auto m : {AugmentMethod::Caiac, AugmentMethod::RandomSwap, AugmentMethod::None})
    EXPECT_EQ(parse_method(to_string(m)), m);
  EXPECT_THROW(parse_method("coda"), ConfigError);
}

TEST(Reports, CsvHasOneRowPerRecord) {
  const auto d = data(1, 4);
  const auto rep = feasibility_replay(genuine_windows(d, 1), d.config, 2, 0);
  std::ostringstream os;
  write_feasibility_csv(os, rep);
  const auto text = os.str();
  EXPECT_EQ(static_cast<std::size_t>(std::count(text.begin(), text.end(), '\n')), rep.verdicts.size() + 1);
}
