#include <gtest/gtest.h>

#include <set>

#include "caiac/dataio.hpp"

using namespace caiac;

namespace {

Dataset small(std::uint64_t seed = 1, std::size_t n = 10) {
  return generate_dataset(WorldConfig{}, default_tasks(), n, 0.3, 15, seed);
}

std::string serialize(const Dataset& d) {
  std::ostringstream os;
  write_dataset(os, d);
  return os.str();
}

}  // namespace

TEST(Expert, ZeroActionWhenSolved) {
  const auto t = default_tasks()[0];
  auto s = reset(WorldConfig{}, t, Regime::ID, 0);
  s[1] = t.goal_positions[0];
  EXPECT_EQ(scripted_expert(s, t, WorldConfig{}), Action{});
}

TEST(Expert, SolvesIdResets) {
  WorldConfig c;
  for (const auto& task : default_tasks()) {
    int solved = 0;
    for (std::uint64_t seed = 0; seed < 50; ++seed) {
      auto s = reset(c, task, Regime::ID, seed);
      for (int t = 0; t < 400 && !is_success(s, task); ++t) {
        const auto a = scripted_expert(s, task, c);
        ASSERT_LE(std::abs(a.delta[0]), c.max_action_step);
        ASSERT_LE(std::abs(a.delta[1]), c.max_action_step);
        s = step(s, a, c);
      }
      solved += is_success(s, task);
    }
    EXPECT_GE(solved, 45) << task.id;
  }
}

TEST(RandomPolicy, BoundsAndDeterminism) {
  WorldConfig c;
  EXPECT_EQ(random_policy(c, 9), random_policy(c, 9));
  double sum = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const auto a = random_policy(c, static_cast<std::uint64_t>(i));
    ASSERT_LE(std::abs(a.delta[0]), c.max_action_step);
    ASSERT_LE(std::abs(a.delta[1]), c.max_action_step);
    sum += a.delta[0];
  }
  // Uniform on [-m, m]: sd m / sqrt(3).
  const double se = c.max_action_step / std::sqrt(3.0) / std::sqrt(static_cast<double>(n));
  EXPECT_LE(std::abs(sum / n), 3 * se);
}

TEST(Generate, ExpertFraction) {
  const auto d = generate_dataset(WorldConfig{}, default_tasks(), 100, 0.3, 5, 0);
  std::size_t experts = 0;
  for (const auto& t : d.trajectories) experts += t.policy == "expert";
  EXPECT_EQ(experts, 30u);
  const auto r = generate_dataset(WorldConfig{}, default_tasks(), 20, 0.0, 5, 0);
  for (const auto& t : r.trajectories) EXPECT_EQ(t.policy, "random");
}

TEST(Generate, ByteIdenticalRegeneration) { EXPECT_EQ(serialize(small(4)), serialize(small(4))); }

TEST(Generate, TrajectoriesReplay) {
  const auto d = small(2);
  for (const auto& t : d.trajectories) {
    ASSERT_NO_THROW(t.validate());
    for (std::size_t i = 0; i < t.length(); ++i) ASSERT_EQ(step(t.states[i], t.actions[i], d.config), t.states[i + 1]);
  }
}

TEST(Serialization, RoundTripExact) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto d = small(seed);
    std::istringstream is(serialize(d));
    EXPECT_EQ(read_dataset(is), d);
  }
}

TEST(Serialization, RoundTripArbitraryDoubles) {
  auto d = small(0, 2);
  Rng rng(1);
  for (auto& t : d.trajectories)
    for (auto& s : t.states)
      for (auto& e : s.entities) e = {rng.uniform(-1, 1) * 1e-3 / 3.0, std::nextafter(rng.uniform(-1, 1), 2.0)};
  std::istringstream is(serialize(d));
  EXPECT_EQ(read_dataset(is), d);
}

TEST(Serialization, FileRoundTrip) {
  const auto d = small(3);
  const auto p = std::filesystem::temp_directory_path() / "caiac_dataio_roundtrip.jsonl";
  save(d, p);
  EXPECT_EQ(load(p), d);
  std::filesystem::remove(p);
}

TEST(Serialization, TruncatedFileIsParseError) {
  const auto text = serialize(small(1));
  const auto cut = text.substr(0, text.size() / 2);
  std::istringstream is(cut);
  EXPECT_THROW(read_dataset(is), ParseError);
}

TEST(Serialization, MissingLinesIsParseError) {
  const auto text = serialize(small(1));
  const auto last = text.rfind('\n', text.size() - 2);
  std::istringstream is(text.substr(0, last + 1));
  EXPECT_THROW(read_dataset(is), ParseError);
}

TEST(Serialization, EntityDimsMismatchIsSchemaError) {
  auto text = serialize(small(1, 2));
  const auto pos = text.find("\"entity_dims\":[2,2,2,2,2]");
  ASSERT_NE(pos, std::string::npos);
  text.replace(pos, 25, "\"entity_dims\":[2,2,2,2,3]");
  std::istringstream is(text);
  EXPECT_THROW(read_dataset(is), SchemaError);
}

TEST(Serialization, MissingFileNamed) {
  try {
    load("/nonexistent/caiac.jsonl");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("/nonexistent/caiac.jsonl"), std::string::npos);
  }
}

TEST(Split, NineOne) {
  const auto [train, val] = split(small(0, 10), {0.9, 3});
  EXPECT_EQ(train.trajectories.size(), 9u);
  EXPECT_EQ(val.trajectories.size(), 1u);
}

TEST(Split, PartitionAndDeterminism) {
  const auto d = small(0, 37);
  const auto [tr, va] = split_indices(d.trajectories.size(), {0.8, 5});
  EXPECT_EQ(tr.size(), 29u);
  std::multiset<std::size_t> all(tr.begin(), tr.end());
  all.insert(va.begin(), va.end());
  std::multiset<std::size_t> expect;
  for (std::size_t i = 0; i < d.trajectories.size(); ++i) expect.insert(i);
  EXPECT_EQ(all, expect);
  EXPECT_EQ(split_indices(37, {0.8, 5}), split_indices(37, {0.8, 5}));
  EXPECT_EQ(split(d, {0.8, 5}), split(d, {0.8, 5}));
}

TEST(Split, Errors) {
  EXPECT_THROW(split(small(0, 1), {0.9, 0}), ConfigError);
  EXPECT_THROW(split(small(0, 4), {1.0, 0}), ConfigError);
}
