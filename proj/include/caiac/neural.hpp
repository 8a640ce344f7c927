#pragma once

// Small dense networks with hand-written backprop, Adam, orthogonal init and
// a Gaussian transition model P(s'_j | s, a) with diagonal covariance per
// entity. Batches are column-major: one sample per column.

#include <bit>
#include <filesystem>
#include <fstream>
#include <functional>
#include <span>

#include <Eigen/Dense>
#include <json.hpp>

#include "caiac/dataio.hpp"

namespace caiac {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct DenseLayer {
  Matrix weight;  // out x in
  Vector bias;    // out
  friend bool operator==(const DenseLayer& a, const DenseLayer& b) {
    return a.weight == b.weight && a.bias == b.bias;
  }
};

struct MlpShape {
  int input_dim = 0;
  std::vector<int> hidden;
  std::vector<int> heads;
  friend bool operator==(const MlpShape&, const MlpShape&) = default;
};

/// ReLU trunk followed by independent linear heads. Also used as the
/// gradient and Adam-moment container, since those share its shapes.
struct MlpParams {
  std::vector<DenseLayer> trunk;
  std::vector<DenseLayer> heads;

  MlpShape shape() const {
    MlpShape s;
    s.input_dim = trunk.empty() ? static_cast<int>(heads.at(0).weight.cols())
                                : static_cast<int>(trunk.front().weight.cols());
    for (const auto& l : trunk) s.hidden.push_back(static_cast<int>(l.weight.rows()));
    for (const auto& h : heads) s.heads.push_back(static_cast<int>(h.weight.rows()));
    return s;
  }

  template <typename F>
  void for_each_tensor(F&& f) {
    for (auto& l : trunk) {
      f(l.weight.data(), l.weight.size());
      f(l.bias.data(), l.bias.size());
    }
    for (auto& l : heads) {
      f(l.weight.data(), l.weight.size());
      f(l.bias.data(), l.bias.size());
    }
  }

  template <typename F>
  void for_each_tensor(F&& f) const {
    const_cast<MlpParams*>(this)->for_each_tensor(
        [&](double* p, Eigen::Index n) { f(static_cast<const double*>(p), n); });
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each_tensor([&](const double*, Eigen::Index k) { n += static_cast<std::size_t>(k); });
    return n;
  }

  std::vector<double> flatten() const {
    std::vector<double> out;
    out.reserve(parameter_count());
    for_each_tensor([&](const double* p, Eigen::Index k) { out.insert(out.end(), p, p + k); });
    return out;
  }

  void assign(std::span<const double> flat) {
    if (flat.size() != parameter_count()) throw ShapeError("parameter block size mismatch");
    std::size_t off = 0;
    for_each_tensor([&](double* p, Eigen::Index k) {
      std::copy_n(flat.begin() + static_cast<std::ptrdiff_t>(off), k, p);
      off += static_cast<std::size_t>(k);
    });
  }

  bool all_finite() const {
    bool ok = true;
    for_each_tensor([&](const double* p, Eigen::Index k) {
      for (Eigen::Index i = 0; i < k; ++i) ok = ok && std::isfinite(p[i]);
    });
    return ok;
  }

  friend bool operator==(const MlpParams&, const MlpParams&) = default;
};

inline MlpParams zeros_like(const MlpParams& p) {
  MlpParams z = p;
  z.for_each_tensor([](double* d, Eigen::Index n) { std::fill_n(d, n, 0.0); });
  return z;
}

namespace detail {

/// Orthonormal rows when rows <= cols, orthonormal columns otherwise.
inline Matrix orthogonal_matrix(int rows, int cols, Rng& rng) {
  const bool tall = rows > cols;
  const int r = tall ? rows : cols;
  const int c = tall ? cols : rows;
  Matrix a(r, c);
  for (int j = 0; j < c; ++j)
    for (int i = 0; i < r; ++i) a(i, j) = rng.normal();
  Eigen::HouseholderQR<Matrix> qr(a);
  Matrix q = qr.householderQ() * Matrix::Identity(r, c);
  // Sign convention from diag(R) makes the draw uniform over the group.
  const Matrix rmat = qr.matrixQR().topLeftCorner(c, c);
  for (int j = 0; j < c; ++j)
    if (rmat(j, j) < 0) q.col(j) *= -1.0;
  return tall ? q : Matrix(q.transpose());
}

}  // namespace detail

inline MlpParams init_orthogonal(const MlpShape& shape, std::uint64_t seed) {
  if (shape.input_dim < 1 || shape.heads.empty()) throw ShapeError("MLP needs an input and at least one head");
  Rng rng(derive_seed(seed, "orthogonal-init"));
  MlpParams p;
  int in = shape.input_dim;
  for (int h : shape.hidden) {
    if (h < 1) throw ShapeError("hidden width must be positive");
    p.trunk.push_back({detail::orthogonal_matrix(h, in, rng), Vector::Zero(h)});
    in = h;
  }
  for (int o : shape.heads) {
    if (o < 1) throw ShapeError("head width must be positive");
    p.heads.push_back({detail::orthogonal_matrix(o, in, rng), Vector::Zero(o)});
  }
  return p;
}

struct MlpCache {
  std::vector<Matrix> activations;  // [0] = input, then each post-ReLU hidden layer
  std::vector<Matrix> outputs;      // one per head
};

inline MlpCache mlp_forward(const MlpParams& p, const Matrix& input) {
  if (input.rows() != p.shape().input_dim) throw ShapeError("MLP input dimension mismatch");
  MlpCache c;
  c.activations.reserve(p.trunk.size() + 1);
  c.activations.push_back(input);
  for (const auto& l : p.trunk) {
    Matrix z = l.weight * c.activations.back();
    z.colwise() += l.bias;
    c.activations.push_back(z.cwiseMax(0.0));
  }
  for (const auto& h : p.heads) {
    Matrix o = h.weight * c.activations.back();
    o.colwise() += h.bias;
    c.outputs.push_back(std::move(o));
  }
  return c;
}

/// Gradient of a scalar loss given dLoss/dHead for each head.
inline MlpParams mlp_backward(const MlpParams& p, const MlpCache& c, const std::vector<Matrix>& head_grads) {
  if (head_grads.size() != p.heads.size()) throw ShapeError("one gradient per head expected");
  MlpParams g = zeros_like(p);
  const Matrix& top = c.activations.back();
  Matrix d_top = Matrix::Zero(top.rows(), top.cols());
  for (std::size_t h = 0; h < p.heads.size(); ++h) {
    g.heads[h].weight.noalias() = head_grads[h] * top.transpose();
    g.heads[h].bias = head_grads[h].rowwise().sum();
    d_top.noalias() += p.heads[h].weight.transpose() * head_grads[h];
  }
  Matrix delta = std::move(d_top);
  for (std::size_t k = p.trunk.size(); k-- > 0;) {
    const Matrix& post = c.activations[k + 1];
    delta = delta.cwiseProduct((post.array() > 0.0).cast<double>().matrix());
    g.trunk[k].weight.noalias() = delta * c.activations[k].transpose();
    g.trunk[k].bias = delta.rowwise().sum();
    if (k > 0) delta = p.trunk[k].weight.transpose() * delta;
  }
  return g;
}

// ----------------------------------------------------------------------------
// Adam
// ----------------------------------------------------------------------------

struct AdamState {
  MlpParams m;
  MlpParams v;
  long step = 0;
  double lr = 8e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  static AdamState for_params(const MlpParams& p, double lr = 8e-4) {
    AdamState s;
    s.m = zeros_like(p);
    s.v = zeros_like(p);
    s.lr = lr;
    return s;
  }
};

inline void adam_step(MlpParams& params, const MlpParams& grads, AdamState& st) {
  if (grads.shape() != params.shape() || st.m.shape() != params.shape())
    throw ShapeError("adam_step: gradient/moment shapes do not match parameters");
  ++st.step;
  const double c1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
  const double c2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
  std::vector<const double*> gp;
  grads.for_each_tensor([&](const double* p, Eigen::Index) { gp.push_back(p); });
  std::vector<double*> mp, vp;
  st.m.for_each_tensor([&](double* p, Eigen::Index) { mp.push_back(p); });
  st.v.for_each_tensor([&](double* p, Eigen::Index) { vp.push_back(p); });
  std::size_t t = 0;
  params.for_each_tensor([&](double* w, Eigen::Index n) {
    const double* g = gp[t];
    double* m = mp[t];
    double* v = vp[t];
    for (Eigen::Index i = 0; i < n; ++i) {
      m[i] = st.beta1 * m[i] + (1.0 - st.beta1) * g[i];
      v[i] = st.beta2 * v[i] + (1.0 - st.beta2) * g[i] * g[i];
      w[i] -= st.lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + st.eps);
    }
    ++t;
  });
}

// ----------------------------------------------------------------------------
// Gaussian transition model
// ----------------------------------------------------------------------------

inline constexpr double kVarianceFloor = 1e-8;
inline constexpr double kVarianceCeiling = 200.0;

inline double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
inline double sigmoid(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

/// softplus(pre) + 1e-8, then clipped at 200.
inline double head_variance(double pre_variance) {
  return std::min(softplus(pre_variance) + kVarianceFloor, kVarianceCeiling);
}

struct GaussianHeadOutput {
  Vector mean;
  Vector variance;
};

struct TransitionLayout {
  int n_entities = 5;
  int entity_dim = kEntityDim;
  int action_dim = kEntityDim;
  /// Actions enter the network divided by this (the action bound).
  double action_scale = 0.05;

  int state_dim() const { return n_entities * entity_dim; }
  int input_dim() const { return state_dim() + action_dim; }
  friend bool operator==(const TransitionLayout&, const TransitionLayout&) = default;
};

inline TransitionLayout layout_for(const WorldConfig& c) {
  return {c.n_entities(), kEntityDim, kEntityDim, c.max_action_step};
}

/// Column of flattened entity coordinates.
inline void flatten_into(const FactoredState& s, Eigen::Ref<Vector> out) {
  for (std::size_t j = 0; j < s.size(); ++j) {
    out(static_cast<Eigen::Index>(2 * j)) = s[j][0];
    out(static_cast<Eigen::Index>(2 * j + 1)) = s[j][1];
  }
}

/// Column-major batch of transitions ready for the network. Network inputs
/// hold the agent position, every object relative to the agent, and the
/// action in units of the maximal step.
struct TransitionBatch {
  Matrix inputs;   // input_dim x B
  Matrix current;  // state_dim x B
  Matrix target;   // state_dim x B

  Eigen::Index size() const { return inputs.cols(); }
};

inline TransitionBatch make_batch(const TransitionLayout& layout, std::span<const FactoredState> states,
                                  std::span<const Action> actions, std::span<const FactoredState> next) {
  const auto B = static_cast<Eigen::Index>(states.size());
  TransitionBatch b{Matrix(layout.input_dim(), B), Matrix(layout.state_dim(), B),
                    Matrix(layout.state_dim(), B)};
  for (Eigen::Index i = 0; i < B; ++i) {
    const auto& s = states[static_cast<std::size_t>(i)];
    if (static_cast<int>(s.size()) != layout.n_entities) throw ShapeError("state layout does not match model");
    flatten_into(s, b.current.col(i));
    b.inputs.col(i).head(layout.state_dim()) = b.current.col(i);
    for (int j = 1; j < layout.n_entities; ++j)
      b.inputs.col(i).segment(j * layout.entity_dim, layout.entity_dim) -= b.current.col(i).head(layout.entity_dim);
    const auto& a = actions[static_cast<std::size_t>(i)];
    b.inputs(layout.state_dim(), i) = a.delta[0] / layout.action_scale;
    b.inputs(layout.state_dim() + 1, i) = a.delta[1] / layout.action_scale;
    if (!next.empty()) flatten_into(next[static_cast<std::size_t>(i)], b.target.col(i));
  }
  if (!b.inputs.allFinite()) throw std::domain_error("non-finite model input");
  return b;
}

/// Every (s_t, a_t, s_{t+1}) of a dataset as one batch.
inline TransitionBatch dataset_batch(const TransitionLayout& layout, const Dataset& d) {
  std::vector<FactoredState> s, n;
  std::vector<Action> a;
  for (const auto& t : d.trajectories) {
    for (std::size_t i = 0; i < t.length(); ++i) {
      s.push_back(t.states[i]);
      a.push_back(t.actions[i]);
      n.push_back(t.states[i + 1]);
    }
  }
  return make_batch(layout, s, a, n);
}

inline TransitionBatch gather_columns(const TransitionBatch& b, std::span<const Eigen::Index> cols) {
  const auto B = static_cast<Eigen::Index>(cols.size());
  TransitionBatch out{Matrix(b.inputs.rows(), B), Matrix(b.current.rows(), B), Matrix(b.target.rows(), B)};
  for (Eigen::Index i = 0; i < B; ++i) {
    out.inputs.col(i) = b.inputs.col(cols[static_cast<std::size_t>(i)]);
    out.current.col(i) = b.current.col(cols[static_cast<std::size_t>(i)]);
    out.target.col(i) = b.target.col(cols[static_cast<std::size_t>(i)]);
  }
  return out;
}

struct GaussianPrediction {
  Matrix mean;          // absolute next state, state_dim x B
  Matrix variance;      // state_dim x B
  Matrix pre_variance;  // raw head output
  MlpCache cache;
};

/// One network jointly predicting every entity's next-state distribution.
/// Internally the mean head regresses (s' - s) / max_action_step; callers
/// only ever see s'. Variances are in world units.
class GaussianTransitionModel {
 public:
  GaussianTransitionModel() = default;
  GaussianTransitionModel(TransitionLayout layout, MlpParams params)
      : layout_(layout), params_(std::move(params)) {
    const auto s = params_.shape();
    if (s.input_dim != layout_.input_dim() || s.heads.size() != 2 || s.heads[0] != layout_.state_dim() ||
        s.heads[1] != layout_.state_dim())
      throw ShapeError("parameters do not fit the transition layout");
  }

  static GaussianTransitionModel create(const TransitionLayout& layout, std::vector<int> hidden,
                                        std::uint64_t seed) {
    MlpShape shape{layout.input_dim(), std::move(hidden), {layout.state_dim(), layout.state_dim()}};
    return {layout, init_orthogonal(shape, seed)};
  }

  const TransitionLayout& layout() const { return layout_; }
  const MlpParams& params() const { return params_; }
  MlpParams& params() { return params_; }

  GaussianPrediction predict(const TransitionBatch& batch) const {
    GaussianPrediction p;
    p.cache = mlp_forward(params_, batch.inputs);
    const double scale = layout_.action_scale;
    p.mean = batch.current + scale * p.cache.outputs[0];
    p.pre_variance = p.cache.outputs[1];
    p.variance = p.pre_variance.unaryExpr([](double x) { return head_variance(x); });
    return p;
  }

  /// Predictions for one state under several actions, one column per action.
  struct ActionPredictions {
    Matrix mean;
    Matrix variance;
  };

  ActionPredictions predict_actions(const FactoredState& s, std::span<const Action> actions) const {
    std::vector<FactoredState> states(actions.size(), s);
    auto p = predict(make_batch(layout_, states, actions, {}));
    return {std::move(p.mean), std::move(p.variance)};
  }

  double action_bound() const { return layout_.action_scale; }
  int entity_dim() const { return layout_.entity_dim; }

  /// Per-entity predictive distribution for one (state, action).
  std::vector<GaussianHeadOutput> forward(const FactoredState& s, const Action& a) const {
    const auto b = make_batch(layout_, std::span(&s, 1), std::span(&a, 1), {});
    const auto p = predict(b);
    std::vector<GaussianHeadOutput> out(static_cast<std::size_t>(layout_.n_entities));
    for (int j = 0; j < layout_.n_entities; ++j) {
      out[static_cast<std::size_t>(j)].mean = p.mean.col(0).segment(j * layout_.entity_dim, layout_.entity_dim);
      out[static_cast<std::size_t>(j)].variance =
          p.variance.col(0).segment(j * layout_.entity_dim, layout_.entity_dim);
    }
    return out;
  }

 private:
  TransitionLayout layout_;
  MlpParams params_;
};

/// Mean over samples, entities and dims of 0.5 [log(2 pi var) + (x - mu)^2 / var].
inline double gaussian_nll(const Matrix& mean, const Matrix& variance, const Matrix& target) {
  const auto r2 = (target - mean).array().square();
  const double log2pi = std::log(2.0 * std::numbers::pi);
  return (0.5 * ((variance.array().log() + log2pi) + r2 / variance.array())).mean();
}

inline double nll_loss(const GaussianTransitionModel& model, const TransitionBatch& batch) {
  const auto p = model.predict(batch);
  return gaussian_nll(p.mean, p.variance, batch.target);
}

struct LossAndGradient {
  double loss = 0.0;
  MlpParams grad;
};

inline LossAndGradient nll_backward(const GaussianTransitionModel& model, const TransitionBatch& batch) {
  const auto p = model.predict(batch);
  const double n = static_cast<double>(p.mean.size());
  const double scale = model.layout().action_scale;
  const Matrix r = batch.target - p.mean;
  Matrix d_mean = -(r.array() / p.variance.array()).matrix() * (scale / n);
  Matrix d_pre(p.pre_variance.rows(), p.pre_variance.cols());
  for (Eigen::Index i = 0; i < d_pre.size(); ++i) {
    const double v = p.variance(i);
    const double pre = p.pre_variance(i);
    const bool clipped = softplus(pre) + kVarianceFloor > kVarianceCeiling;
    const double d_v = 0.5 * (1.0 / v - r(i) * r(i) / (v * v));
    d_pre(i) = clipped ? 0.0 : d_v * sigmoid(pre) / n;
  }
  return {gaussian_nll(p.mean, p.variance, batch.target),
          mlp_backward(model.params(), p.cache, {d_mean, d_pre})};
}

/// Mean squared error of the predicted mean.
inline double one_step_mse(const GaussianTransitionModel& model, const TransitionBatch& batch) {
  const auto p = model.predict(batch);
  return (p.mean - batch.target).array().square().mean();
}

// ----------------------------------------------------------------------------
// Gradient check
// ----------------------------------------------------------------------------

struct GradientCheckReport {
  std::vector<double> per_tensor_relative_error;
  double max_relative_error = 0.0;
};

/// Central finite differences on every parameter; relative error is
/// ||analytic - numeric|| / max(||analytic||, ||numeric||) per tensor.
inline GradientCheckReport check_gradients(const GaussianTransitionModel& model, const TransitionBatch& batch,
                                           double h = 1e-5) {
  const auto analytic = nll_backward(model, batch).grad.flatten();
  GaussianTransitionModel probe = model;
  std::vector<double> flat = model.params().flatten();
  std::vector<double> numeric(flat.size());
  for (std::size_t i = 0; i < flat.size(); ++i) {
    const double w = flat[i];
    flat[i] = w + h;
    probe.params().assign(flat);
    const double up = nll_loss(probe, batch);
    flat[i] = w - h;
    probe.params().assign(flat);
    const double down = nll_loss(probe, batch);
    flat[i] = w;
    numeric[i] = (up - down) / (2.0 * h);
  }
  GradientCheckReport rep;
  std::size_t off = 0;
  model.params().for_each_tensor([&](const double*, Eigen::Index k) {
    double diff = 0.0, na = 0.0, nn = 0.0;
    for (Eigen::Index i = 0; i < k; ++i) {
      const double a = analytic[off + static_cast<std::size_t>(i)];
      const double b = numeric[off + static_cast<std::size_t>(i)];
      diff += (a - b) * (a - b);
      na += a * a;
      nn += b * b;
    }
    off += static_cast<std::size_t>(k);
    const double denom = std::max({std::sqrt(na), std::sqrt(nn), 1e-12});
    rep.per_tensor_relative_error.push_back(std::sqrt(diff) / denom);
  });
  rep.max_relative_error =
      *std::max_element(rep.per_tensor_relative_error.begin(), rep.per_tensor_relative_error.end());
  return rep;
}

// ----------------------------------------------------------------------------
// Training
// ----------------------------------------------------------------------------

struct ModelTrainConfig {
  std::vector<int> hidden{64, 64};
  long steps = 20000;
  int batch_size = 256;
  double lr = 8e-4;
  long eval_every = 500;
  std::uint64_t seed = 0;
  /// "final" keeps the last parameters, "best_val_nll" the evaluated
  /// parameters with the lowest validation NLL.
  std::string selection = "final";
};

struct LossPoint {
  long step = 0;
  double train_nll = 0.0;  // mean over the steps since the previous point
  double val_nll = 0.0;
  double val_mse = 0.0;
};

struct ModelTrainResult {
  GaussianTransitionModel model;
  std::vector<LossPoint> curve;
  long selected_step = 0;
};

/// Minimizes NLL with Adam on uniformly drawn minibatches. Validation NLL
/// and MSE are recorded every eval_every steps.
inline ModelTrainResult train_model(const Dataset& train, const Dataset& val, const ModelTrainConfig& cfg) {
  const auto layout = layout_for(train.config);
  const auto train_batch = dataset_batch(layout, train);
  const auto val_batch = dataset_batch(layout, val);
  if (train_batch.size() == 0 || val_batch.size() == 0) throw ConfigError("train_model needs non-empty sets");
  if (cfg.steps < 1 || cfg.batch_size < 1 || cfg.eval_every < 1) throw ConfigError("invalid model training config");
  if (cfg.selection != "final" && cfg.selection != "best_val_nll")
    throw ConfigError("model.selection must be 'final' or 'best_val_nll'");
  const bool keep_best = cfg.selection == "best_val_nll";

  auto model = GaussianTransitionModel::create(layout, cfg.hidden, derive_seed(cfg.seed, "model-init"));
  auto adam = AdamState::for_params(model.params(), cfg.lr);
  Rng rng(derive_seed(cfg.seed, "model-batches"));

  ModelTrainResult res{model, {}, 0};
  res.curve.push_back({0, nll_loss(model, train_batch), nll_loss(model, val_batch), one_step_mse(model, val_batch)});
  double best = res.curve.front().val_nll;

  std::vector<Eigen::Index> cols(static_cast<std::size_t>(cfg.batch_size));
  double running = 0.0;
  long since = 0;
  for (long it = 1; it <= cfg.steps; ++it) {
    for (auto& c : cols) c = static_cast<Eigen::Index>(rng.index(static_cast<std::size_t>(train_batch.size())));
    auto [loss, grad] = nll_backward(model, gather_columns(train_batch, cols));
    if (!std::isfinite(loss) || !grad.all_finite())
      throw DivergenceError("transition model diverged at step " + std::to_string(it) +
                            " (loss " + std::to_string(loss) + ")");
    adam_step(model.params(), grad, adam);
    running += loss;
    ++since;
    if (it % cfg.eval_every == 0 || it == cfg.steps) {
      const double v = nll_loss(model, val_batch);
      const double mse = one_step_mse(model, val_batch);
      if (!std::isfinite(v) || !std::isfinite(mse))
        throw DivergenceError("validation loss became non-finite at step " + std::to_string(it));
      res.curve.push_back({it, running / static_cast<double>(since), v, mse});
      running = 0.0;
      since = 0;
      if (keep_best && v < best) {
        best = v;
        res.selected_step = it;
        res.model = model;
      }
    }
  }
  if (!keep_best) {
    res.model = std::move(model);
    res.selected_step = cfg.steps;
  }
  return res;
}

// ----------------------------------------------------------------------------
// Checkpoints: "CAIACNN1", u64 header length, JSON header, u64 count, f64 LE block
// ----------------------------------------------------------------------------

namespace detail {

template <typename T>
void write_le(std::ostream& os, T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  auto bytes = std::bit_cast<std::array<char, sizeof(T)>>(v);
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  os.write(bytes.data(), sizeof(T));
}

template <typename T>
T read_le(std::istream& is) {
  std::array<char, sizeof(T)> bytes{};
  if (!is.read(bytes.data(), sizeof(T))) throw ParseError(0, "checkpoint truncated");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  return std::bit_cast<T>(bytes);
}

inline nlohmann::json shape_to_json(const MlpShape& s) {
  return {{"input_dim", s.input_dim}, {"hidden", s.hidden}, {"heads", s.heads}};
}

inline MlpShape shape_from_json(const nlohmann::json& j) {
  return {j.at("input_dim").get<int>(), j.at("hidden").get<std::vector<int>>(),
          j.at("heads").get<std::vector<int>>()};
}

}  // namespace detail

inline constexpr std::string_view kCheckpointMagic = "CAIACNN1";

inline void write_checkpoint(const std::filesystem::path& path, nlohmann::json header, const MlpParams& params) {
  header["shape"] = detail::shape_to_json(params.shape());
  const std::string h = header.dump();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  os.write(kCheckpointMagic.data(), static_cast<std::streamsize>(kCheckpointMagic.size()));
  detail::write_le<std::uint64_t>(os, h.size());
  os.write(h.data(), static_cast<std::streamsize>(h.size()));
  const auto flat = params.flatten();
  detail::write_le<std::uint64_t>(os, flat.size());
  for (double v : flat) detail::write_le(os, v);
  if (!os) throw std::runtime_error("write failed for '" + path.string() + "'");
}

struct Checkpoint {
  nlohmann::json header;
  MlpParams params;
};

inline Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("missing input file '" + path.string() + "'");
  std::string magic(kCheckpointMagic.size(), '\0');
  if (!is.read(magic.data(), static_cast<std::streamsize>(magic.size())) || magic != kCheckpointMagic)
    throw ParseError(0, "'" + path.string() + "' is not a caiac checkpoint");
  const auto hlen = detail::read_le<std::uint64_t>(is);
  std::string h(hlen, '\0');
  if (!is.read(h.data(), static_cast<std::streamsize>(hlen))) throw ParseError(0, "checkpoint header truncated");
  Checkpoint c;
  c.header = nlohmann::json::parse(h);
  c.params = init_orthogonal(detail::shape_from_json(c.header.at("shape")), 0);
  const auto n = detail::read_le<std::uint64_t>(is);
  if (n != c.params.parameter_count()) throw SchemaError("checkpoint parameter count does not match its shape");
  std::vector<double> flat(n);
  for (auto& v : flat) v = detail::read_le<double>(is);
  c.params.assign(flat);
  return c;
}

inline void save_model(const GaussianTransitionModel& m, const std::filesystem::path& path,
                       const std::string& config_hash = "") {
  const auto& l = m.layout();
  write_checkpoint(path,
                   {{"kind", "gaussian-transition"},
                    {"config_hash", config_hash},
                    {"layout",
                     {{"n_entities", l.n_entities},
                      {"entity_dim", l.entity_dim},
                      {"action_dim", l.action_dim},
                      {"action_scale", l.action_scale}}}},
                   m.params());
}

inline GaussianTransitionModel load_model(const std::filesystem::path& path) {
  auto c = read_checkpoint(path);
  if (c.header.value("kind", std::string{}) != "gaussian-transition")
    throw SchemaError("'" + path.string() + "' is not a transition-model checkpoint");
  const auto& l = c.header.at("layout");
  TransitionLayout layout{l.at("n_entities").get<int>(), l.at("entity_dim").get<int>(),
                          l.at("action_dim").get<int>(), l.at("action_scale").get<double>()};
  return {layout, std::move(c.params)};
}

}  // namespace caiac
