#include <gtest/gtest.h>

#include "caiac/neural.hpp"

using namespace caiac;

namespace {

WorldConfig three_entities() {
  WorldConfig c;
  c.n_objects = 2;
  return c;
}

TaskSpec free_task() {
  TaskSpec t;
  t.id = "free";
  return t;
}

/// States placed so that some objects are in reach of the agent.
TransitionBatch toy_batch(const WorldConfig& c, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<FactoredState> s, nx;
  std::vector<Action> a;
  for (std::size_t i = 0; i < n; ++i) {
    FactoredState st{{{rng.uniform(-0.5, 0.5), rng.uniform(-0.5, 0.5)}}};
    for (int j = 0; j < c.n_objects; ++j)
      st.entities.push_back({st[0][0] + rng.uniform(-0.15, 0.15), st[0][1] + rng.uniform(-0.15, 0.15)});
    const Action act{{rng.uniform(-0.05, 0.05), rng.uniform(-0.05, 0.05)}};
    s.push_back(st);
    a.push_back(act);
    nx.push_back(step(st, act, c));
  }
  return make_batch(layout_for(c), s, a, nx);
}

double direct_nll(const Matrix& mu, const Matrix& var, const Matrix& x) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < mu.size(); ++i) {
    const double density = std::exp(-(x(i) - mu(i)) * (x(i) - mu(i)) / (2 * var(i))) / std::sqrt(2 * std::numbers::pi * var(i));
    total += -std::log(density);
  }
  return total / static_cast<double>(mu.size());
}

}  // namespace

TEST(Init, OrthogonalRowsAndZeroBias) {
  const auto p = init_orthogonal({12, {64, 64}, {10, 10}}, 3);
  for (const auto* layers : {&p.trunk, &p.heads}) {
    for (const auto& l : *layers) {
      const Matrix& w = l.weight;
      const Matrix g = w.rows() <= w.cols() ? Matrix(w * w.transpose()) : Matrix(w.transpose() * w);
      EXPECT_LT((g - Matrix::Identity(g.rows(), g.cols())).cwiseAbs().maxCoeff(), 1e-6);
      EXPECT_TRUE(l.bias.isZero(0.0));
    }
  }
}

TEST(Init, DeterministicPerSeed) {
  EXPECT_EQ(init_orthogonal({7, {16}, {3}}, 9), init_orthogonal({7, {16}, {3}}, 9));
  EXPECT_FALSE(init_orthogonal({7, {16}, {3}}, 9) == init_orthogonal({7, {16}, {3}}, 10));
}

TEST(Variance, SoftplusFloorAndCeiling) {
  EXPECT_DOUBLE_EQ(head_variance(0.0), std::log(2.0) + 1e-8);
  EXPECT_GE(head_variance(-1000.0), 1e-8);
  EXPECT_EQ(head_variance(1e6), 200.0);
}

TEST(Variance, BoundedForAnyInput) {
  const auto c = three_entities();
  auto m = GaussianTransitionModel::create(layout_for(c), {32}, 1);
  m.params().heads[1].weight *= 500.0;
  const auto p = m.predict(toy_batch(c, 64, 2));
  EXPECT_GE(p.variance.minCoeff(), 1e-8);
  EXPECT_LE(p.variance.maxCoeff(), 200.0);
}

TEST(Nll, ZeroResidualUnitVariance) {
  const Matrix mu = Matrix::Random(4, 3);
  EXPECT_NEAR(gaussian_nll(mu, Matrix::Ones(4, 3), mu), 0.5 * std::log(2 * std::numbers::pi), 1e-15);
}

TEST(Nll, MatchesDirectDensity) {
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    Matrix mu(3, 5), var(3, 5), x(3, 5);
    for (Eigen::Index i = 0; i < mu.size(); ++i) {
      mu(i) = rng.uniform(-1, 1);
      var(i) = rng.uniform(0.05, 2.0);
      x(i) = rng.uniform(-1, 1);
    }
    EXPECT_NEAR(gaussian_nll(mu, var, x), direct_nll(mu, var, x), 1e-12);
  }
}

TEST(Nll, DecreasesTowardTarget) {
  const Matrix x = Matrix::Zero(2, 2);
  const Matrix var = Matrix::Constant(2, 2, 0.3);
  EXPECT_LT(gaussian_nll(Matrix::Constant(2, 2, 0.1), var, x), gaussian_nll(Matrix::Constant(2, 2, 0.4), var, x));
}

TEST(Backward, FiniteDifferencesThreeEntities) {
  const auto c = three_entities();
  const auto m = GaussianTransitionModel::create(layout_for(c), {16, 16}, 5);
  const auto rep = check_gradients(m, toy_batch(c, 6, 6));
  EXPECT_LT(rep.max_relative_error, 1e-4);
}

TEST(Backward, FiniteDifferencesAfterTraining) {
  const auto c = three_entities();
  const auto batch = toy_batch(c, 64, 7);
  auto m = GaussianTransitionModel::create(layout_for(c), {16}, 8);
  auto adam = AdamState::for_params(m.params(), 1e-3);
  for (int i = 0; i < 200; ++i) adam_step(m.params(), nll_backward(m, batch).grad, adam);
  EXPECT_LT(check_gradients(m, toy_batch(c, 6, 9)).max_relative_error, 1e-4);
}

TEST(Backward, ZeroResidualMeanHeadGradient) {
  const auto c = three_entities();
  const auto m = GaussianTransitionModel::create(layout_for(c), {16}, 5);
  auto batch = toy_batch(c, 8, 3);
  batch.target = m.predict(batch).mean;
  const auto g = nll_backward(m, batch).grad;
  EXPECT_LT(g.heads[0].weight.cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT(g.heads[0].bias.cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Backward, DuplicatedBatchSameGradient) {
  const auto c = three_entities();
  const auto m = GaussianTransitionModel::create(layout_for(c), {16}, 5);
  const auto b = toy_batch(c, 5, 3);
  std::vector<Eigen::Index> twice{0, 1, 2, 3, 4, 0, 1, 2, 3, 4};
  const auto g1 = nll_backward(m, b).grad.flatten();
  const auto g2 = nll_backward(m, gather_columns(b, twice)).grad.flatten();
  for (std::size_t i = 0; i < g1.size(); ++i) EXPECT_NEAR(g1[i], g2[i], 1e-12 * (1 + std::abs(g1[i])));
}

TEST(Adam, ZeroGradientLeavesParams) {
  auto p = init_orthogonal({4, {8}, {2}}, 1);
  const auto before = p;
  auto st = AdamState::for_params(p);
  adam_step(p, zeros_like(p), st);
  EXPECT_EQ(p, before);
}

TEST(Adam, FirstStepIsSignTimesLr) {
  auto p = init_orthogonal({4, {8}, {2}}, 1);
  const auto before = p.flatten();
  auto g = zeros_like(p);
  Rng rng(2);
  g.for_each_tensor([&](double* d, Eigen::Index n) {
    for (Eigen::Index i = 0; i < n; ++i) d[i] = rng.uniform(-1, 1);
  });
  auto st = AdamState::for_params(p, 1e-3);
  adam_step(p, g, st);
  const auto after = p.flatten();
  const auto gf = g.flatten();
  for (std::size_t i = 0; i < gf.size(); ++i)
    EXPECT_NEAR(after[i] - before[i], -1e-3 * (gf[i] > 0 ? 1.0 : -1.0), 1e-3 * 1e-5 / std::abs(gf[i]) + 1e-12);
}

TEST(Adam, ShapeMismatchThrows) {
  auto p = init_orthogonal({4, {8}, {2}}, 1);
  auto st = AdamState::for_params(p);
  EXPECT_THROW(adam_step(p, init_orthogonal({4, {9}, {2}}, 1), st), ShapeError);
}

TEST(Model, PredictsAbsoluteNextState) {
  // With all weights zero the mean head outputs a zero delta: prediction = s.
  const auto c = three_entities();
  auto m = GaussianTransitionModel::create(layout_for(c), {8}, 1);
  m.params() = zeros_like(m.params());
  const auto b = toy_batch(c, 4, 1);
  EXPECT_EQ(m.predict(b).mean, b.current);
}

TEST(Model, NonFiniteInputRejected) {
  const auto c = three_entities();
  FactoredState s{{{0, 0}, {std::nan(""), 0}, {0, 0}}};
  const auto m = GaussianTransitionModel::create(layout_for(c), {8}, 1);
  EXPECT_THROW(m.forward(s, Action{}), std::domain_error);
}

TEST(Training, ImprovesAndIsReproducible) {
  const auto c = three_entities();
  const auto d = generate_dataset(c, {free_task()}, 40, 0.0, 25, 3);
  const auto [train, val] = split(d, {0.9, 1});
  ModelTrainConfig cfg{{32, 32}, 1500, 64, 1e-3, 500, 2, "final"};
  const auto a = train_model(train, val, cfg);
  const auto b = train_model(train, val, cfg);
  EXPECT_EQ(a.model.params(), b.model.params());
  EXPECT_LT(a.curve.back().val_nll, a.curve.front().val_nll);
  EXPECT_LT(a.curve.back().val_mse, a.curve.front().val_mse);
  EXPECT_EQ(a.curve.size(), 4u);
  EXPECT_EQ(a.selected_step, 1500);
}

TEST(Training, BestValidationSelection) {
  const auto c = three_entities();
  const auto d = generate_dataset(c, {free_task()}, 20, 0.0, 10, 3);
  const auto [train, val] = split(d, {0.9, 1});
  ModelTrainConfig cfg{{16}, 600, 32, 1e-3, 100, 2, "best_val_nll"};
  const auto r = train_model(train, val, cfg);
  double best = r.curve.front().val_nll;
  long at = 0;
  for (const auto& p : r.curve)
    if (p.val_nll < best) best = p.val_nll, at = p.step;
  EXPECT_EQ(r.selected_step, at);
  const auto l = layout_for(c);
  EXPECT_DOUBLE_EQ(nll_loss(r.model, dataset_batch(l, val)), best);
  cfg.selection = "median";
  EXPECT_THROW(train_model(train, val, cfg), ConfigError);
}

TEST(Checkpoint, RoundTripExact) {
  const auto c = three_entities();
  const auto m = GaussianTransitionModel::create(layout_for(c), {8, 8}, 4);
  const auto p = std::filesystem::temp_directory_path() / "caiac_neural_ckpt.bin";
  save_model(m, p, "abc");
  const auto back = load_model(p);
  EXPECT_EQ(back.params(), m.params());
  EXPECT_EQ(back.layout(), m.layout());
  std::filesystem::remove(p);
}

TEST(Checkpoint, RejectsGarbage) {
  const auto p = std::filesystem::temp_directory_path() / "caiac_neural_garbage.bin";
  std::ofstream(p) << "not a checkpoint";
  EXPECT_THROW(load_model(p), ParseError);
  std::filesystem::remove(p);
}
