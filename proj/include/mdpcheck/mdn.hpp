#ifndef MDPCHECK_MDN_HPP_
#define MDPCHECK_MDN_HPP_

// Mixture-density world model. Given (s_t, a_t) the network predicts a scalar
// reward and a K-component diagonal Gaussian mixture over s_{t+1}:
//
//   x      = [ (s - shift) * scale * mask / keep_prob , onehot(a) ]   (d + 2)
//   h_l    = tanh(W_l h_{l-1} + b_l)                       (hidden trunk)
//   out    = W_o h_L + b_o = [ r_hat | logits(K) | mu(K*d) | log_sigma(K*d) ]
//   alpha  = softmax(logits), sigma = clamp(exp(log_sigma), s_min, s_max)
//   mu     = s + mu_head when residual_mean, else mu_head
//
// shift/scale standardize each state feature with training-set statistics;
// they are fixed before training and are not optimized.
// Loss per example: (r_hat - r)^2 - log sum_k alpha_k N(s' | mu_k, sigma_k).
// Output rows of mu and log_sigma are component-major: row k*d + i.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <numbers>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "mdpcheck/dataset.hpp"
#include "mdpcheck/error.hpp"
#include "mdpcheck/rng.hpp"

namespace mdpcheck {

struct ModelConfig {
  int d = 10;
  int K = 5;
  std::vector<int> hidden_sizes{32, 32};
  double input_dropout_rate = 0.2;
  int M = 1;
  double learn_rate = 1e-3;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int train_batches = 1000;
  int batch_size = 1024;
  double sigma_min = 0.1;
  double sigma_max = 1e3;
  bool residual_mean = true;
  bool standardize_inputs = true;
  std::uint64_t seed = 0;

  int input_size() const noexcept { return d + 2; }
  int output_size() const noexcept { return 1 + K + 2 * K * d; }

  void validate() const {
    if (d < 1) throw ConfigError("model: d must be >= 1");
    if (K < 1) throw ConfigError("model: K must be >= 1");
    if (M != 1) throw ConfigError("model: only single-step history (M=1) is supported");
    if (!(input_dropout_rate >= 0.0 && input_dropout_rate < 1.0)) {
      throw ConfigError("model: input_dropout_rate must be in [0, 1)");
    }
    for (int h : hidden_sizes) {
      if (h < 1) throw ConfigError("model: hidden layer widths must be >= 1");
    }
    if (!(learn_rate > 0.0)) throw ConfigError("model: learn_rate must be > 0");
    if (train_batches < 0) throw ConfigError("model: train_batches must be >= 0");
    if (batch_size < 1) throw ConfigError("model: batch_size must be >= 1");
    if (!(sigma_min > 0.0 && sigma_min < sigma_max)) {
      throw ConfigError("model: need 0 < sigma_min < sigma_max");
    }
  }

  bool operator==(const ModelConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"d", c.d},
                     {"K", c.K},
                     {"hidden_sizes", c.hidden_sizes},
                     {"input_dropout_rate", c.input_dropout_rate},
                     {"M", c.M},
                     {"learn_rate", c.learn_rate},
                     {"adam_beta1", c.adam_beta1},
                     {"adam_beta2", c.adam_beta2},
                     {"adam_eps", c.adam_eps},
                     {"train_batches", c.train_batches},
                     {"batch_size", c.batch_size},
                     {"sigma_min", c.sigma_min},
                     {"sigma_max", c.sigma_max},
                     {"residual_mean", c.residual_mean},
                     {"standardize_inputs", c.standardize_inputs},
                     {"seed", c.seed}};
}

/// Missing keys keep their current value, so a partial object overlays defaults.
inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("d", c.d);
  get("K", c.K);
  get("hidden_sizes", c.hidden_sizes);
  get("input_dropout_rate", c.input_dropout_rate);
  get("M", c.M);
  get("learn_rate", c.learn_rate);
  get("adam_beta1", c.adam_beta1);
  get("adam_beta2", c.adam_beta2);
  get("adam_eps", c.adam_eps);
  get("train_batches", c.train_batches);
  get("batch_size", c.batch_size);
  get("sigma_min", c.sigma_min);
  get("sigma_max", c.sigma_max);
  get("residual_mean", c.residual_mean);
  get("standardize_inputs", c.standardize_inputs);
  get("seed", c.seed);
}

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <typename S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

template <typename S>
struct Layer {
  Mat<S> W;  // out x in
  Vec<S> b;  // out

  bool operator==(const Layer& o) const { return W == o.W && b == o.b; }
};

/// Network weights. Layers are the hidden trunk followed by the output head.
template <typename S>
struct ModelParams {
  ModelConfig config;
  std::vector<Layer<S>> layers;
  Vec<S> input_shift;  // d
  Vec<S> input_scale;  // d

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += static_cast<std::size_t>(l.W.size() + l.b.size());
    return n;
  }

  /// Flat order: for each layer, W row-major then b.
  std::vector<S> flatten() const {
    std::vector<S> out;
    out.reserve(parameter_count());
    for (const auto& l : layers) {
      for (Eigen::Index r = 0; r < l.W.rows(); ++r)
        for (Eigen::Index c = 0; c < l.W.cols(); ++c) out.push_back(l.W(r, c));
      for (Eigen::Index r = 0; r < l.b.size(); ++r) out.push_back(l.b(r));
    }
    return out;
  }

  void unflatten(std::span<const S> flat) {
    if (flat.size() != parameter_count()) {
      throw CheckpointError("parameter block has " + std::to_string(flat.size()) +
                            " values, model needs " +
                            std::to_string(parameter_count()));
    }
    std::size_t k = 0;
    for (auto& l : layers) {
      for (Eigen::Index r = 0; r < l.W.rows(); ++r)
        for (Eigen::Index c = 0; c < l.W.cols(); ++c) l.W(r, c) = flat[k++];
      for (Eigen::Index r = 0; r < l.b.size(); ++r) l.b(r) = flat[k++];
    }
  }

  template <typename T>
  ModelParams<T> cast() const {
    ModelParams<T> out;
    out.config = config;
    out.input_shift = input_shift.template cast<T>();
    out.input_scale = input_scale.template cast<T>();
    for (const auto& l : layers) {
      out.layers.push_back({l.W.template cast<T>(), l.b.template cast<T>()});
    }
    return out;
  }

  bool all_finite() const {
    for (const auto& l : layers) {
      if (!l.W.allFinite() || !l.b.allFinite()) return false;
    }
    return input_shift.allFinite() && input_scale.allFinite();
  }

  bool operator==(const ModelParams& o) const {
    return config == o.config && layers == o.layers && input_shift == o.input_shift &&
           input_scale == o.input_scale;
  }
};

/// Same shape as the parameters, plus the batch loss they were computed at.
template <typename S>
struct Gradients {
  std::vector<Layer<S>> layers;
  double loss = 0.0;
};

/// Zero-filled parameters with the shapes implied by `config`.
template <typename S>
ModelParams<S> zero_params(const ModelConfig& config) {
  config.validate();
  ModelParams<S> p;
  p.config = config;
  p.input_shift = Vec<S>::Zero(config.d);
  p.input_scale = Vec<S>::Ones(config.d);
  int fan_in = config.input_size();
  for (int h : config.hidden_sizes) {
    p.layers.push_back({Mat<S>::Zero(h, fan_in), Vec<S>::Zero(h)});
    fan_in = h;
  }
  p.layers.push_back({Mat<S>::Zero(config.output_size(), fan_in),
                      Vec<S>::Zero(config.output_size())});
  return p;
}

/// Glorot-uniform weights, W ~ U(-a, a) with a = sqrt(6 / (fan_in + fan_out)),
/// drawn row-major layer by layer from Rng(config.seed). Biases start at zero,
/// so log_sigma starts near 0 and sigma near 1.
template <typename S = float>
ModelParams<S> init(const ModelConfig& config) {
  auto p = zero_params<S>(config);
  Rng rng(derive_seed(config.seed, "init"));
  for (auto& l : p.layers) {
    const double a = std::sqrt(6.0 / static_cast<double>(l.W.rows() + l.W.cols()));
    for (Eigen::Index r = 0; r < l.W.rows(); ++r)
      for (Eigen::Index c = 0; c < l.W.cols(); ++c)
        l.W(r, c) = static_cast<S>(rng.uniform(-a, a));
  }
  return p;
}

/// Per-example prediction.
template <typename S>
struct MdnOutput {
  S r_hat{};
  Vec<S> alpha;  // K
  Mat<S> mu;     // K x d
  Mat<S> sigma;  // K x d
};

/// Predictions for a whole batch, one column per example.
template <typename S>
struct BatchOutput {
  int K = 0;
  int d = 0;
  Vec<S> r_hat;  // B
  Mat<S> alpha;  // K x B
  Mat<S> mu;     // K*d x B, row k*d + i
  Mat<S> sigma;  // K*d x B

  Eigen::Index size() const { return r_hat.size(); }

  MdnOutput<S> example(Eigen::Index b) const {
    MdnOutput<S> o;
    o.r_hat = r_hat(b);
    o.alpha = alpha.col(b);
    o.mu.resize(K, d);
    o.sigma.resize(K, d);
    for (int k = 0; k < K; ++k)
      for (int i = 0; i < d; ++i) {
        o.mu(k, i) = mu(k * d + i, b);
        o.sigma(k, i) = sigma(k * d + i, b);
      }
    return o;
  }
};

/// Optional per-example input dropout mask, d x B entries in {0, 1}.
template <typename S>
using DropoutMask = Mat<S>;

namespace detail {

template <typename S>
Mat<S> build_input(const ModelParams<S>& p, std::span<const double> states,
                   std::span<const int> actions, const DropoutMask<S>* mask) {
  const ModelConfig& cfg = p.config;
  const auto B = static_cast<Eigen::Index>(actions.size());
  const int d = cfg.d;
  if (states.size() != actions.size() * static_cast<std::size_t>(d)) {
    throw ValidationError("forward: state block does not match d x batch");
  }
  const S inv_keep = static_cast<S>(1.0 / (1.0 - cfg.input_dropout_rate));
  Mat<S> x(cfg.input_size(), B);
  for (Eigen::Index b = 0; b < B; ++b) {
    for (int i = 0; i < d; ++i) {
      const double v = states[static_cast<std::size_t>(b) * d + i];
      if (!std::isfinite(v)) throw NumericError("forward: non-finite state input");
      S s = (static_cast<S>(v) - p.input_shift(i)) * p.input_scale(i);
      if (mask) s = s * (*mask)(i, b) * inv_keep;
      x(i, b) = s;
    }
    const int a = actions[static_cast<std::size_t>(b)];
    if (a != 0 && a != 1) throw ValidationError("forward: action must be 0 or 1");
    x(d, b) = a == 0 ? S(1) : S(0);
    x(d + 1, b) = a == 1 ? S(1) : S(0);
  }
  return x;
}

/// Activations of every layer; acts[0] is the input, acts.back() the raw head.
template <typename S>
std::vector<Mat<S>> forward_trace(const ModelParams<S>& p, Mat<S> x) {
  std::vector<Mat<S>> acts;
  acts.reserve(p.layers.size() + 1);
  acts.push_back(std::move(x));
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    Mat<S> z = p.layers[l].W * acts.back();
    z.colwise() += p.layers[l].b;
    if (l + 1 < p.layers.size()) z = z.array().tanh().matrix();
    acts.push_back(std::move(z));
  }
  return acts;
}

template <typename S>
BatchOutput<S> decode_heads(const ModelConfig& cfg, const Mat<S>& out,
                            std::span<const double> states) {
  const int K = cfg.K, d = cfg.d;
  BatchOutput<S> o;
  o.K = K;
  o.d = d;
  o.r_hat = out.row(0).transpose();
  const Mat<S> logits = out.middleRows(1, K);
  const auto row_max = logits.colwise().maxCoeff();
  Mat<S> e = (logits.rowwise() - row_max).array().exp().matrix();
  o.alpha = e.array().rowwise() / e.colwise().sum().array();
  o.mu = out.middleRows(1 + K, K * d);
  if (cfg.residual_mean) {
    for (Eigen::Index b = 0; b < out.cols(); ++b)
      for (int k = 0; k < K; ++k)
        for (int i = 0; i < d; ++i)
          o.mu(k * d + i, b) += static_cast<S>(states[static_cast<std::size_t>(b) * d + i]);
  }
  o.sigma = out.middleRows(1 + K + K * d, K * d)
                .array()
                .exp()
                .max(static_cast<S>(cfg.sigma_min))
                .min(static_cast<S>(cfg.sigma_max))
                .matrix();
  return o;
}

}  // namespace detail

/// Batched forward pass. `mask` is only passed during training.
template <typename S>
BatchOutput<S> forward_batch(const ModelParams<S>& p, std::span<const double> states,
                             std::span<const int> actions,
                             const DropoutMask<S>* mask = nullptr) {
  auto acts = detail::forward_trace(p, detail::build_input(p, states, actions, mask));
  return detail::decode_heads(p.config, acts.back(), states);
}

template <typename S>
BatchOutput<S> forward_batch(const ModelParams<S>& p, const MiniBatch& batch) {
  return forward_batch(p, std::span<const double>(batch.states),
                       std::span<const int>(batch.actions));
}

template <typename S>
MdnOutput<S> forward(const ModelParams<S>& p, std::span<const double> state, int action,
                     const std::optional<std::vector<double>>& dropout_mask = std::nullopt) {
  const int a[1] = {action};
  if (dropout_mask) {
    DropoutMask<S> m(p.config.d, 1);
    for (int i = 0; i < p.config.d; ++i) m(i, 0) = static_cast<S>((*dropout_mask)[i]);
    return forward_batch(p, state, std::span<const int>(a, 1), &m).example(0);
  }
  return forward_batch(p, state, std::span<const int>(a, 1)).example(0);
}

/// log sum_k exp(v_k), shifted by the max.
template <typename S>
S log_sum_exp(const Eigen::Ref<const Vec<S>>& v) {
  const S m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.array() - m).exp().sum());
}

/// Mixture log-density terms log alpha_k + log N(x | mu_k, sigma_k), per k.
template <typename S>
Vec<S> component_log_terms(const MdnOutput<S>& out, std::span<const double> x) {
  const auto K = out.alpha.size();
  const auto d = out.mu.cols();
  const S half_log_2pi = static_cast<S>(0.5 * std::log(2.0 * std::numbers::pi));
  Vec<S> terms(K);
  for (Eigen::Index k = 0; k < K; ++k) {
    S lp = std::log(out.alpha(k));
    for (Eigen::Index i = 0; i < d; ++i) {
      const S z = (static_cast<S>(x[static_cast<std::size_t>(i)]) - out.mu(k, i)) / out.sigma(k, i);
      lp -= half_log_2pi + std::log(out.sigma(k, i)) + S(0.5) * z * z;
    }
    terms(k) = lp;
  }
  return terms;
}

/// (r_hat - r)^2 - log sum_k alpha_k N(next | mu_k, sigma_k), diagonal Gaussians.
template <typename S>
S loss(const MdnOutput<S>& out, double reward_target,
       std::span<const double> next_state_target) {
  const S dr = out.r_hat - static_cast<S>(reward_target);
  return dr * dr - log_sum_exp<S>(component_log_terms(out, next_state_target));
}

namespace detail {

/// Loss of column b of the raw head output, and d(loss)/d(head) into `grad`.
/// Clamped sigmas pass zero gradient to their log_sigma row.
template <typename S>
S head_loss_and_grad(const ModelConfig& cfg, const Eigen::Ref<const Vec<S>>& head,
                     double reward, std::span<const double> next_state,
                     Eigen::Ref<Vec<S>> grad) {
  const int K = cfg.K, d = cfg.d;
  const S smin = static_cast<S>(cfg.sigma_min), smax = static_cast<S>(cfg.sigma_max);
  const S half_log_2pi = static_cast<S>(0.5 * std::log(2.0 * std::numbers::pi));

  const S dr = head(0) - static_cast<S>(reward);
  grad(0) = S(2) * dr;

  const auto logits = head.segment(1, K);
  const S lse_logits = log_sum_exp<S>(logits);

  Vec<S> log_terms(K);
  for (int k = 0; k < K; ++k) {
    S lp = logits(k) - lse_logits;
    for (int i = 0; i < d; ++i) {
      const S ls = head(1 + K + K * d + k * d + i);
      const S sigma = std::clamp(std::exp(ls), smin, smax);
      const S z = (static_cast<S>(next_state[static_cast<std::size_t>(i)]) -
                   head(1 + K + k * d + i)) / sigma;
      lp -= half_log_2pi + std::log(sigma) + S(0.5) * z * z;
    }
    log_terms(k) = lp;
  }
  const S log_mix = log_sum_exp<S>(log_terms);

  for (int k = 0; k < K; ++k) {
    const S alpha = std::exp(logits(k) - lse_logits);
    const S resp = std::exp(log_terms(k) - log_mix);
    grad(1 + k) = alpha - resp;
    for (int i = 0; i < d; ++i) {
      const int mu_row = 1 + K + k * d + i;
      const int ls_row = 1 + K + K * d + k * d + i;
      const S raw = std::exp(head(ls_row));
      const S sigma = std::clamp(raw, smin, smax);
      const S diff = static_cast<S>(next_state[static_cast<std::size_t>(i)]) - head(mu_row);
      const S z = diff / sigma;
      grad(mu_row) = -resp * z / sigma;
      const bool clamped = raw < smin || raw > smax;
      grad(ls_row) = clamped ? S(0) : resp * (S(1) - z * z);
    }
  }
  return dr * dr - log_mix;
}

}  // namespace detail

/// Per-example Bernoulli keep masks for a batch, drawn feature-major per example.
template <typename S>
DropoutMask<S> sample_dropout_mask(int d, Eigen::Index batch, double rate,
                                   std::uint64_t seed) {
  DropoutMask<S> m(d, batch);
  Rng rng(seed);
  for (Eigen::Index b = 0; b < batch; ++b)
    for (int i = 0; i < d; ++i) m(i, b) = rng.uniform() < rate ? S(0) : S(1);
  return m;
}

/// Mean-over-batch loss and its gradient with respect to every parameter.
/// Dropout masks are sampled from `dropout_seed` when the rate is positive.
template <typename S>
Gradients<S> gradients(const ModelParams<S>& p, const MiniBatch& batch,
                       std::uint64_t dropout_seed) {
  if (batch.size() == 0) throw TrainingError("gradients: empty batch");
  const ModelConfig& cfg = p.config;
  const auto B = static_cast<Eigen::Index>(batch.size());

  std::optional<DropoutMask<S>> mask;
  if (cfg.input_dropout_rate > 0.0) {
    mask = sample_dropout_mask<S>(cfg.d, B, cfg.input_dropout_rate, dropout_seed);
  }
  auto acts = detail::forward_trace(
      p, detail::build_input(p, std::span<const double>(batch.states),
                             std::span<const int>(batch.actions),
                             mask ? &*mask : nullptr));

  const Mat<S>& head = acts.back();
  Mat<S> delta(head.rows(), B);
  double total = 0.0;
  const auto w = static_cast<std::size_t>(cfg.d);
  std::vector<double> target(w);
  for (Eigen::Index b = 0; b < B; ++b) {
    const auto n = static_cast<std::size_t>(b);
    // With a residual mean the mu head regresses s' - s.
    for (std::size_t i = 0; i < w; ++i) {
      target[i] = batch.next_states[n * w + i] -
                  (cfg.residual_mean ? batch.states[n * w + i] : 0.0);
    }
    total += static_cast<double>(detail::head_loss_and_grad<S>(
        cfg, head.col(b), batch.rewards[n], target, delta.col(b)));
  }
  const S inv_b = S(1) / static_cast<S>(B);
  delta *= inv_b;

  Gradients<S> g;
  g.loss = total / static_cast<double>(B);
  g.layers.resize(p.layers.size());
  for (std::size_t l = p.layers.size(); l-- > 0;) {
    g.layers[l].W = delta * acts[l].transpose();
    g.layers[l].b = delta.rowwise().sum();
    if (l == 0) break;
    Mat<S> back = p.layers[l].W.transpose() * delta;
    // acts[l] is tanh output of layer l-1: d tanh = 1 - h^2.
    delta = (back.array() * (S(1) - acts[l].array().square())).matrix();
  }

  for (std::size_t l = 0; l < g.layers.size(); ++l) {
    if (!g.layers[l].W.allFinite() || !g.layers[l].b.allFinite()) {
      const bool head_layer = l + 1 == g.layers.size();
      throw TrainingError("non-finite gradient in " +
                          (head_layer ? std::string("output head")
                                      : "hidden layer " + std::to_string(l)));
    }
  }
  return g;
}

/// Mean loss over a batch without dropout.
template <typename S>
double batch_loss(const ModelParams<S>& p, const MiniBatch& batch) {
  auto out = forward_batch(p, batch);
  double total = 0.0;
  for (Eigen::Index b = 0; b < out.size(); ++b) {
    total += static_cast<double>(
        loss(out.example(b), batch.rewards[static_cast<std::size_t>(b)],
             batch.next_state(static_cast<std::size_t>(b))));
  }
  return total / static_cast<double>(out.size());
}

/// Adam with bias correction.
template <typename S>
class Adam {
 public:
  explicit Adam(const ModelParams<S>& p) : cfg_(p.config) {
    for (const auto& l : p.layers) {
      m_.push_back({Mat<S>::Zero(l.W.rows(), l.W.cols()), Vec<S>::Zero(l.b.size())});
      v_.push_back(m_.back());
    }
  }

  void step(ModelParams<S>& p, const Gradients<S>& g) {
    ++t_;
    const S b1 = static_cast<S>(cfg_.adam_beta1), b2 = static_cast<S>(cfg_.adam_beta2);
    const S c1 = static_cast<S>(1.0 - std::pow(cfg_.adam_beta1, t_));
    const S c2 = static_cast<S>(1.0 - std::pow(cfg_.adam_beta2, t_));
    const S lr = static_cast<S>(cfg_.learn_rate), eps = static_cast<S>(cfg_.adam_eps);
    auto update = [&](auto& param, auto& m, auto& v, const auto& grad) {
      m = b1 * m + (S(1) - b1) * grad;
      v = b2 * v + (S(1) - b2) * grad.cwiseProduct(grad);
      param.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
    };
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
      update(p.layers[l].W, m_[l].W, v_[l].W, g.layers[l].W);
      update(p.layers[l].b, m_[l].b, v_[l].b, g.layers[l].b);
    }
  }

 private:
  ModelConfig cfg_;
  std::vector<Layer<S>> m_, v_;
  long t_ = 0;
};

struct TrainOptions {
  /// Permute actions inside every training batch (the shuffled baseline).
  bool shuffle_actions = false;
};

struct TrainResult {
  ModelParams<float> params;
  std::vector<double> loss_curve;  // batch loss before each optimizer step
  double initial_loss = 0.0;       // loss of the untrained model on the first batch
};

/// Per-feature mean and 1/std over the dataset states. Constant features get
/// scale 1.
inline std::pair<Eigen::VectorXd, Eigen::VectorXd> feature_standardization(const Dataset& ds) {
  const int d = ds.d();
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(d), sq = Eigen::VectorXd::Zero(d);
  for (std::size_t n = 0; n < ds.size(); ++n) {
    auto s = ds.state(n);
    for (int i = 0; i < d; ++i) mean(i) += s[static_cast<std::size_t>(i)];
  }
  mean /= static_cast<double>(std::max<std::size_t>(ds.size(), 1));
  for (std::size_t n = 0; n < ds.size(); ++n) {
    auto s = ds.state(n);
    for (int i = 0; i < d; ++i) {
      const double c = s[static_cast<std::size_t>(i)] - mean(i);
      sq(i) += c * c;
    }
  }
  Eigen::VectorXd scale(d);
  for (int i = 0; i < d; ++i) {
    const double sd = std::sqrt(sq(i) / static_cast<double>(std::max<std::size_t>(ds.size(), 1)));
    scale(i) = sd > 1e-12 ? 1.0 / sd : 1.0;
  }
  return {mean, scale};
}

/// Runs config.train_batches Adam steps. Batches cycle through `ds`, reshuffled
/// on every pass. All randomness derives from config.seed:
///   init            derive_seed(seed, "init")
///   pass order      derive_seed(seed, "order", pass)
///   dropout masks   derive_seed(seed, "dropout", step)
///   action shuffle  derive_seed(seed, "action-shuffle", step)
inline TrainResult train(const Dataset& ds, const ModelConfig& config,
                         const TrainOptions& opt = {}) {
  config.validate();
  if (ds.d() != config.d) {
    throw ConfigError("train: dataset d=" + std::to_string(ds.d()) +
                      " but model d=" + std::to_string(config.d));
  }
  const auto bs = static_cast<std::size_t>(config.batch_size);
  if (ds.size() < bs) {
    throw ConfigError("train: dataset has fewer rows than one batch");
  }
  TrainResult res;
  res.params = init<float>(config);
  if (config.standardize_inputs) {
    const auto [shift, scale] = feature_standardization(ds);
    res.params.input_shift = shift.cast<float>();
    res.params.input_scale = scale.cast<float>();
  }
  Adam<float> adam(res.params);
  res.loss_curve.reserve(static_cast<std::size_t>(config.train_batches));

  std::vector<std::vector<std::size_t>> pass;
  std::size_t cursor = 0;
  std::uint64_t pass_no = 0;
  for (int s = 0; s < config.train_batches; ++s) {
    if (cursor == pass.size()) {
      pass = batch_indices(ds.size(), bs,
                           {.shuffle_seed = derive_seed(config.seed, "order", pass_no++)});
      cursor = 0;
    }
    MiniBatch batch = gather(ds, pass[cursor++]);
    const auto step = static_cast<std::uint64_t>(s);
    if (opt.shuffle_actions) {
      Rng rng(derive_seed(config.seed, "action-shuffle", step));
      shuffle_actions_in_place(batch, rng);
    }
    auto g = gradients(res.params, batch, derive_seed(config.seed, "dropout", step));
    if (!std::isfinite(g.loss)) {
      throw TrainingError("training diverged at step " + std::to_string(s));
    }
    if (s == 0) res.initial_loss = g.loss;
    res.loss_curve.push_back(g.loss);
    adam.step(res.params, g);
    if (!res.params.all_finite()) {
      throw TrainingError("non-finite parameters after step " + std::to_string(s));
    }
  }
  return res;
}

// ---------------------------------------------------------------------------
// Checkpoints: one JSON header line, then the flat parameter block as
// little-endian IEEE-754 float32 in ModelParams::flatten() order.

struct Checkpoint {
  ModelParams<float> params;
  std::vector<double> loss_curve;
  nlohmann::json extra = nlohmann::json::object();  // caller metadata (kind, index)
};

inline std::string serialize_checkpoint(const Checkpoint& ck) {
  nlohmann::json header;
  header["format"] = "mdpcheck-checkpoint";
  header["version"] = 1;
  header["config"] = ck.params.config;
  header["seed"] = ck.params.config.seed;
  header["param_count"] = ck.params.parameter_count();
  header["layout"] = "per layer (hidden..., head): W row-major, then b; float32 LE";
  header["input_shift"] = std::vector<double>(ck.params.input_shift.begin(), ck.params.input_shift.end());
  header["input_scale"] = std::vector<double>(ck.params.input_scale.begin(), ck.params.input_scale.end());
  header["loss_curve"] = ck.loss_curve;
  header["extra"] = ck.extra;
  std::string out = header.dump();
  out += '\n';
  const auto flat = ck.params.flatten();
  const std::size_t start = out.size();
  out.resize(start + flat.size() * 4);
  for (std::size_t i = 0; i < flat.size(); ++i) {
    auto bits = std::bit_cast<std::uint32_t>(flat[i]);
    for (int byte = 0; byte < 4; ++byte) {
      out[start + i * 4 + static_cast<std::size_t>(byte)] =
          static_cast<char>((bits >> (8 * byte)) & 0xFFu);
    }
  }
  return out;
}

inline Checkpoint parse_checkpoint(const std::string& bytes,
                                   const std::optional<ModelConfig>& expect = std::nullopt) {
  const auto nl = bytes.find('\n');
  if (nl == std::string::npos) throw CheckpointError("checkpoint: missing header");
  nlohmann::json header;
  Checkpoint ck;
  ModelConfig cfg;
  std::size_t count = 0;
  std::vector<double> shift, scale;
  try {
    header = nlohmann::json::parse(bytes.substr(0, nl));
    if (header.at("format") != "mdpcheck-checkpoint") {
      throw CheckpointError("checkpoint: wrong format tag");
    }
    cfg = header.at("config").get<ModelConfig>();
    count = header.at("param_count").get<std::size_t>();
    ck.loss_curve = header.at("loss_curve").get<std::vector<double>>();
    shift = header.at("input_shift").get<std::vector<double>>();
    scale = header.at("input_scale").get<std::vector<double>>();
    if (header.contains("extra")) ck.extra = header["extra"];
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("checkpoint header: ") + e.what());
  }
  if (expect) {
    ModelConfig want = *expect;
    want.seed = cfg.seed;
    if (!(want == cfg)) {
      throw CheckpointError("checkpoint config does not match (d=" +
                            std::to_string(cfg.d) + ", K=" + std::to_string(cfg.K) +
                            "; expected d=" + std::to_string(expect->d) +
                            ", K=" + std::to_string(expect->K) + ")");
    }
  }
  try {
    ck.params = zero_params<float>(cfg);
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("checkpoint config invalid: ") + e.what());
  }
  if (count != ck.params.parameter_count()) {
    throw CheckpointError("checkpoint param_count does not match its config");
  }
  const std::size_t need = nl + 1 + count * 4;
  if (bytes.size() != need) {
    throw CheckpointError("checkpoint parameter block has " +
                          std::to_string(bytes.size() - nl - 1) + " bytes, expected " +
                          std::to_string(count * 4));
  }
  std::vector<float> flat(count);
  for (std::size_t i = 0; i < count; ++i) {
    std::uint32_t bits = 0;
    for (int byte = 0; byte < 4; ++byte) {
      bits |= static_cast<std::uint32_t>(
                  static_cast<unsigned char>(bytes[nl + 1 + i * 4 + static_cast<std::size_t>(byte)]))
              << (8 * byte);
    }
    flat[i] = std::bit_cast<float>(bits);
  }
  ck.params.unflatten(flat);
  if (shift.size() != static_cast<std::size_t>(cfg.d) || scale.size() != shift.size()) {
    throw CheckpointError("checkpoint standardization vectors do not match d");
  }
  for (int i = 0; i < cfg.d; ++i) {
    ck.params.input_shift(i) = static_cast<float>(shift[static_cast<std::size_t>(i)]);
    ck.params.input_scale(i) = static_cast<float>(scale[static_cast<std::size_t>(i)]);
  }
  if (!ck.params.all_finite()) throw CheckpointError("checkpoint holds non-finite weights");
  return ck;
}

inline void save_checkpoint(const Checkpoint& ck, const std::string& path) {
  detail::write_file(path, serialize_checkpoint(ck));
}

inline Checkpoint load_checkpoint(const std::string& path,
                                  const std::optional<ModelConfig>& expect = std::nullopt) {
  return parse_checkpoint(detail::read_file(path), expect);
}

}  // namespace mdpcheck

#endif  // MDPCHECK_MDN_HPP_
