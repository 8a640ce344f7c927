#include <gtest/gtest.h>

#include "caiac/world.hpp"

using namespace caiac;

namespace {

TaskSpec pinned_task() {
  TaskSpec t;
  t.id = "t";
  t.nuisance_rule[3] = {0.8, 0.8};
  t.ood_randomize = {3};
  return t;
}

FactoredState two_entities(Vec2 agent, Vec2 object) { return FactoredState{{agent, object}}; }

WorldConfig one_object() {
  WorldConfig c;
  c.n_objects = 1;
  return c;
}

}  // namespace

TEST(Reset, IdPinsNuisanceObject) {
  const auto s = reset(WorldConfig{}, pinned_task(), Regime::ID, 7);
  EXPECT_EQ(s[3], (Vec2{0.8, 0.8}));
}

TEST(Reset, OodRandomizesWithinBounds) {
  WorldConfig c;
  bool moved = false;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto s = reset(c, pinned_task(), Regime::OOD, seed);
    ASSERT_TRUE(in_bounds(s, c));
    moved |= s[3] != Vec2{0.8, 0.8};
  }
  EXPECT_TRUE(moved);
}

TEST(Reset, EqualSeedsEqualStates) {
  for (auto r : {Regime::ID, Regime::OOD})
    EXPECT_EQ(reset(WorldConfig{}, pinned_task(), r, 11), reset(WorldConfig{}, pinned_task(), r, 11));
}

TEST(Reset, ConflictingTaskRejected) {
  auto t = pinned_task();
  t.ood_pin[3] = {0.1, 0.1};
  EXPECT_THROW(reset(WorldConfig{}, t, Regime::OOD, 0), ConfigError);
}

TEST(Step, FarObjectUnchanged) {
  const auto c = one_object();
  const auto s = two_entities({0, 0}, {5 * c.interact_radius, 0});
  const auto n = step(s, Action{{0.05, 0.0}}, c);
  EXPECT_EQ(n[1], s[1]);
}

TEST(Step, AdditivePush) {
  const auto n = step(two_entities({0, 0}, {0.05, 0}), Action{{0.03, 0.0}}, one_object());
  EXPECT_NEAR(n[1][0], 0.08, 1e-15);
  EXPECT_EQ(n[1][1], 0.0);
  EXPECT_NEAR(n[0][0], 0.03, 1e-15);
}

TEST(Step, ClipsAndClamps) {
  const auto c = one_object();
  auto n = step(two_entities({0, 0}, {0.5, 0.5}), Action{{10, 10}}, c);
  EXPECT_EQ(n[0], (Vec2{0.05, 0.05}));
  n = step(two_entities({0.99, -0.99}, {0.5, 0.5}), Action{{10, -10}}, c);
  EXPECT_EQ(n[0], (Vec2{1.0, -1.0}));
}

TEST(Step, DeterministicWithoutNoise) {
  const auto s = reset(WorldConfig{}, default_tasks()[0], Regime::ID, 3);
  EXPECT_EQ(step(s, Action{{0.01, 0.02}}, WorldConfig{}, 1), step(s, Action{{0.01, 0.02}}, WorldConfig{}, 2));
}

TEST(Step, StaysInBoundsProperty) {
  WorldConfig c;
  Rng rng(5);
  for (int ep = 0; ep < 50; ++ep) {
    auto s = reset(c, default_tasks()[ep % 4], Regime::OOD, static_cast<std::uint64_t>(ep));
    for (int t = 0; t < 100; ++t) {
      s = step(s, Action{{rng.uniform(-1, 1), rng.uniform(-1, 1)}}, c);
      ASSERT_TRUE(in_bounds(s, c));
    }
  }
}

TEST(GroundTruth, AllFarOnlyAgent) {
  WorldConfig c;
  FactoredState s{{{0, 0}, {0.5, 0}, {-0.5, 0}, {0, 0.5}, {0, -0.5}}};
  EXPECT_EQ(ground_truth_influence(s, c), (std::vector<bool>{true, false, false, false, false}));
}

TEST(GroundTruth, BoundaryInclusive) {
  const auto c = one_object();
  EXPECT_TRUE(ground_truth_influence(two_entities({0, 0}, {0.1, 0}), c)[1]);
  EXPECT_FALSE(ground_truth_influence(two_entities({0, 0}, {0.1000001, 0}), c)[1]);
}

TEST(GroundTruth, MatchesWhetherAnyActionMovesObject) {
  // Oracle: try the extreme actions and see whether the object moves.
  WorldConfig c;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    FactoredState s{{{rng.uniform(-0.9, 0.9), rng.uniform(-0.9, 0.9)}}};
    for (int j = 0; j < c.n_objects; ++j)
      s.entities.push_back({s[0][0] + rng.uniform(-0.2, 0.2), s[0][1] + rng.uniform(-0.2, 0.2)});
    const auto gt = ground_truth_influence(s, c);
    for (std::size_t j = 1; j < s.size(); ++j) {
      bool moves = false;
      for (double dx : {-0.05, 0.05})
        for (double dy : {-0.05, 0.05}) moves |= step(s, Action{{dx, dy}}, c)[j] != s[j];
      EXPECT_EQ(gt[j], moves);
    }
  }
}

TEST(Success, Examples) {
  TaskSpec t;
  t.goal_entities = {1};
  t.goal_positions = {{0.3, 0.3}};
  EXPECT_TRUE(is_success(two_entities({0, 0}, {0.3, 0.3}), t));
  EXPECT_FALSE(is_success(two_entities({0, 0}, {0.36, 0.3}), t));
  TaskSpec empty;
  EXPECT_TRUE(is_success(two_entities({0, 0}, {0.36, 0.3}), empty));
}

TEST(Tasks, DefaultsValidate) {
  for (const auto& t : default_tasks()) EXPECT_NO_THROW(t.validate(WorldConfig{}));
}

TEST(Regime, ParseRoundTrip) {
  EXPECT_EQ(parse_regime(to_string(Regime::OOD)), Regime::OOD);
  EXPECT_THROW(parse_regime("sideways"), ConfigError);
}
