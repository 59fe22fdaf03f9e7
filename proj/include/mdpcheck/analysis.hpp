#ifndef MDPCHECK_ANALYSIS_HPP_
#define MDPCHECK_ANALYSIS_HPP_

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "mdpcheck/dataset.hpp"
#include "mdpcheck/error.hpp"
#include "mdpcheck/mdn.hpp"
#include "mdpcheck/outcome.hpp"
#include "mdpcheck/parallel.hpp"
#include "mdpcheck/rng.hpp"

namespace mdpcheck {

enum class EnsembleKind { original, shuffled_baseline };

constexpr std::string_view to_string(EnsembleKind k) noexcept {
  return k == EnsembleKind::original ? "original" : "baseline";
}

/// N world models sharing one configuration, each trained from its own seed.
struct Ensemble {
  EnsembleKind kind = EnsembleKind::original;
  ModelConfig config;
  std::vector<ModelParams<float>> models;
  std::vector<std::uint64_t> seeds;
  std::vector<std::vector<double>> loss_curves;

  std::size_t size() const noexcept { return models.size(); }
};

/// Seed of ensemble member j. Original and baseline members with the same
/// index share it, so the two ensembles differ only in the action shuffle.
inline std::uint64_t member_seed(std::uint64_t base_seed, std::size_t j) {
  return derive_seed(base_seed, "model", j);
}

/// Trains member j. Errors come back tagged with the member index.
inline TrainResult train_member(const Dataset& ds, ModelConfig config,
                                std::uint64_t base_seed, std::size_t j,
                                bool shuffle_actions) {
  config.seed = member_seed(base_seed, j);
  try {
    return train(ds, config, {.shuffle_actions = shuffle_actions});
  } catch (const TrainingError& e) {
    throw TrainingError(std::string(shuffle_actions ? "baseline" : "original") +
                        " model " + std::to_string(j) + ": " + e.what());
  }
}

inline Ensemble train_ensemble(const Dataset& ds, const ModelConfig& config, int N,
                               std::uint64_t base_seed, bool shuffle_actions,
                               int jobs = 1) {
  if (N < 1) throw ConfigError("ensemble size N must be >= 1");
  const auto n = static_cast<std::size_t>(N);
  std::vector<TrainResult> results(n);
  parallel_for(n, jobs, [&](std::size_t j) {
    results[j] = train_member(ds, config, base_seed, j, shuffle_actions);
  });
  Ensemble ens;
  ens.kind = shuffle_actions ? EnsembleKind::shuffled_baseline : EnsembleKind::original;
  ens.config = config;
  for (std::size_t j = 0; j < n; ++j) {
    ens.seeds.push_back(member_seed(base_seed, j));
    ens.models.push_back(std::move(results[j].params));
    ens.loss_curves.push_back(std::move(results[j].loss_curve));
  }
  return ens;
}

enum class StatisticKind { reward_contribution, action_sensitivity, offset_action_sensitivity };

constexpr std::string_view to_string(StatisticKind k) noexcept {
  switch (k) {
    case StatisticKind::reward_contribution: return "reward_contribution";
    case StatisticKind::action_sensitivity: return "action_sensitivity";
    case StatisticKind::offset_action_sensitivity: return "offset_action_sensitivity";
  }
  return "?";
}

/// Samples of one statistic: row i is feature i, column j * num_batches + b is
/// (model j, eval batch b).
struct StatPopulation {
  StatisticKind kind = StatisticKind::reward_contribution;
  std::size_t num_models = 0;
  std::size_t num_batches = 0;
  Eigen::MatrixXd values;

  int d() const noexcept { return static_cast<int>(values.rows()); }
  std::size_t samples() const noexcept { return static_cast<std::size_t>(values.cols()); }
  Eigen::Index column(std::size_t model, std::size_t batch) const {
    return static_cast<Eigen::Index>(model * num_batches + batch);
  }
  std::vector<double> feature(int i) const {
    std::vector<double> out(samples());
    for (std::size_t c = 0; c < out.size(); ++c) out[c] = values(i, static_cast<Eigen::Index>(c));
    return out;
  }
};

namespace detail {

inline std::vector<std::vector<std::size_t>> eval_batches(const Dataset& eval,
                                                          std::size_t batch_size) {
  if (eval.empty()) throw ConfigError("analysis: empty evaluation set");
  return batch_indices(eval.size(), batch_size);
}

inline StatPopulation make_population(StatisticKind kind, int d, std::size_t models,
                                      std::size_t batches) {
  StatPopulation pop;
  pop.kind = kind;
  pop.num_models = models;
  pop.num_batches = batches;
  pop.values = Eigen::MatrixXd::Zero(d, static_cast<Eigen::Index>(models * batches));
  return pop;
}

}  // namespace detail

/// Per-feature increase of reward MAE when feature i of every example in the
/// batch is replaced by the batch mean of feature i. Dropout is off.
template <typename S>
Eigen::VectorXd reward_contribution_sample(const ModelParams<S>& model,
                                           const MiniBatch& batch) {
  const int d = batch.d;
  const std::size_t B = batch.size();
  if (B == 0) throw AnalysisError("reward_contribution: empty batch");
  const auto w = static_cast<std::size_t>(d);

  std::vector<double> means(w, 0.0);
  for (std::size_t n = 0; n < B; ++n)
    for (std::size_t i = 0; i < w; ++i) means[i] += batch.states[n * w + i];
  for (double& m : means) m /= static_cast<double>(B);

  // Block 0 is the unperturbed batch, block 1 + i has feature i mean-replaced.
  std::vector<double> states;
  std::vector<int> actions;
  states.reserve(B * w * (w + 1));
  actions.reserve(B * (w + 1));
  for (std::size_t blk = 0; blk <= w; ++blk) {
    states.insert(states.end(), batch.states.begin(), batch.states.end());
    actions.insert(actions.end(), batch.actions.begin(), batch.actions.end());
    if (blk > 0) {
      const std::size_t base = blk * B * w;
      for (std::size_t n = 0; n < B; ++n) states[base + n * w + (blk - 1)] = means[blk - 1];
    }
  }
  auto out = forward_batch(model, std::span<const double>(states), std::span<const int>(actions));

  auto mae = [&](std::size_t blk) {
    double acc = 0.0;
    for (std::size_t n = 0; n < B; ++n) {
      acc += std::abs(static_cast<double>(out.r_hat(static_cast<Eigen::Index>(blk * B + n))) -
                      batch.rewards[n]);
    }
    return acc / static_cast<double>(B);
  };
  const double base = mae(0);
  Eigen::VectorXd sample(d);
  for (int i = 0; i < d; ++i) sample(i) = mae(static_cast<std::size_t>(i) + 1) - base;
  return sample;
}

inline StatPopulation reward_contribution(const Ensemble& ens, const Dataset& eval,
                                          std::size_t batch_size, int jobs = 1) {
  if (ens.kind != EnsembleKind::original) {
    throw AnalysisError("reward_contribution needs the original ensemble");
  }
  if (ens.models.empty()) throw AnalysisError("reward_contribution: empty ensemble");
  const auto rows = detail::eval_batches(eval, batch_size);
  auto pop = detail::make_population(StatisticKind::reward_contribution, eval.d(),
                                     ens.size(), rows.size());
  parallel_for(ens.size() * rows.size(), jobs, [&](std::size_t task) {
    const std::size_t j = task / rows.size(), b = task % rows.size();
    pop.values.col(pop.column(j, b)) = reward_contribution_sample(ens.models[j], gather(eval, rows[b]));
  });
  return pop;
}

/// sum_n sum_k (alpha_k(s_n, a_n) + alpha_k(s_n, a'_n)) / 2 * |mu_k(s_n, a_n) - mu_k(s_n, a'_n)|
/// evaluated per feature, from predictions on the original and shuffled actions.
template <typename S>
Eigen::VectorXd action_sensitivity_sum(const BatchOutput<S>& original,
                                       const BatchOutput<S>& shuffled) {
  const int K = original.K, d = original.d;
  if (shuffled.K != K || shuffled.d != d || shuffled.size() != original.size()) {
    throw AnalysisError("action_sensitivity: prediction shapes differ");
  }
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(d);
  for (Eigen::Index n = 0; n < original.size(); ++n) {
    for (int k = 0; k < K; ++k) {
      const double w = 0.5 * (static_cast<double>(original.alpha(k, n)) +
                              static_cast<double>(shuffled.alpha(k, n)));
      for (int i = 0; i < d; ++i) {
        const auto row = static_cast<Eigen::Index>(k * d + i);
        sum(i) += w * std::abs(static_cast<double>(original.mu(row, n)) -
                               static_cast<double>(shuffled.mu(row, n)));
      }
    }
  }
  return sum;
}

/// Seed of the action permutation applied to eval batch b. Shared by every
/// model of both ensembles.
/// Action-shuffle seed of an eval batch, keyed by the batch contents so that
/// reordering batches only reorders population columns.
inline std::uint64_t eval_shuffle_seed(std::uint64_t shuffle_seed, const MiniBatch& batch) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  auto mix = [&h](const void* data, std::size_t bytes) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < bytes; ++i) {
      h ^= p[i];
      h *= 0x100000001B3ULL;
    }
  };
  mix(batch.states.data(), batch.states.size() * sizeof(double));
  mix(batch.actions.data(), batch.actions.size() * sizeof(int));
  mix(batch.rewards.data(), batch.rewards.size() * sizeof(double));
  mix(batch.next_states.data(), batch.next_states.size() * sizeof(double));
  return derive_seed(shuffle_seed, "eval-batch", h);
}

template <typename S>
Eigen::VectorXd action_sensitivity_sample(const ModelParams<S>& model, const MiniBatch& batch,
                                          const MiniBatch& shuffled) {
  auto a = forward_batch(model, batch);
  auto b = forward_batch(model, shuffled);
  return action_sensitivity_sum(a, b);
}

inline StatPopulation action_sensitivity(const Ensemble& ens, const Dataset& eval,
                                         std::size_t batch_size, std::uint64_t shuffle_seed,
                                         int jobs = 1) {
  if (ens.models.empty()) throw AnalysisError("action_sensitivity: empty ensemble");
  const auto rows = detail::eval_batches(eval, batch_size);
  auto pop = detail::make_population(StatisticKind::action_sensitivity, eval.d(),
                                     ens.size(), rows.size());
  std::vector<MiniBatch> originals(rows.size()), shuffled(rows.size());
  for (std::size_t b = 0; b < rows.size(); ++b) {
    originals[b] = gather(eval, rows[b]);
    shuffled[b] = shuffle_actions_within_batch(originals[b], eval_shuffle_seed(shuffle_seed, originals[b]));
  }
  parallel_for(ens.size() * rows.size(), jobs, [&](std::size_t task) {
    const std::size_t j = task / rows.size(), b = task % rows.size();
    pop.values.col(pop.column(j, b)) =
        action_sensitivity_sample(ens.models[j], originals[b], shuffled[b]);
  });
  return pop;
}

/// actual - baseline, paired by (model, batch).
inline StatPopulation offset_sensitivity(const StatPopulation& actual,
                                         const StatPopulation& baseline) {
  if (actual.values.rows() != baseline.values.rows() ||
      actual.values.cols() != baseline.values.cols() ||
      actual.num_models != baseline.num_models || actual.num_batches != baseline.num_batches) {
    throw AnalysisError("offset_sensitivity: population shapes differ");
  }
  StatPopulation out = actual;
  out.kind = StatisticKind::offset_action_sensitivity;
  out.values = actual.values - baseline.values;
  return out;
}

/// Linear-interpolation quantile of sorted data, q in [0, 1]:
/// h = (n - 1) q, x[floor h] + (h - floor h)(x[floor h + 1] - x[floor h]).
inline double quantile_sorted(std::span<const double> sorted, double q) {
  if (sorted.empty()) throw AnalysisError("quantile of an empty sample");
  const double h = (static_cast<double>(sorted.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= sorted.size()) return sorted.back();
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[lo + 1] - sorted[lo]);
}

inline double quantile(std::vector<double> values, double q) {
  std::sort(values.begin(), values.end());
  return quantile_sorted(values, q);
}

/// How the X-percentile of a population is read.
enum class PercentileConvention {
  /// The level that X% of the samples lie above (quantile (100 - X) / 100),
  /// i.e. the lower box edge for X = 75. Significant iff X% of samples are
  /// (essentially) positive. Raising X can only lower it.
  exceeded_by,
  /// The textbook X-th percentile (quantile X / 100).
  standard,
};

constexpr std::string_view to_string(PercentileConvention c) noexcept {
  return c == PercentileConvention::exceeded_by ? "exceeded_by" : "standard";
}

/// Global percentile level with optional per-feature overrides.
struct PercentileLevel {
  double global = 75.0;
  std::vector<std::optional<double>> per_feature;  // may be shorter than d

  double for_feature(int i) const {
    const auto k = static_cast<std::size_t>(i);
    if (k < per_feature.size() && per_feature[k]) return *per_feature[k];
    return global;
  }
};

struct SignificanceReport {
  StatisticKind kind = StatisticKind::reward_contribution;
  PercentileConvention convention = PercentileConvention::exceeded_by;
  std::vector<double> level;             // X per feature, percent
  std::vector<double> percentile_value;  // per feature
  std::vector<bool> significant;         // percentile_value > 0

  std::vector<int> significant_features() const {
    std::vector<int> out;
    for (std::size_t i = 0; i < significant.size(); ++i)
      if (significant[i]) out.push_back(static_cast<int>(i));
    return out;
  }
};

inline double percentile_position(double X, PercentileConvention c) {
  return c == PercentileConvention::exceeded_by ? (100.0 - X) / 100.0 : X / 100.0;
}

inline SignificanceReport percentile_significance(
    const StatPopulation& pop, const PercentileLevel& X = {},
    PercentileConvention convention = PercentileConvention::exceeded_by) {
  if (pop.samples() == 0 || pop.values.rows() == 0) {
    throw AnalysisError("percentile_significance: empty population");
  }
  SignificanceReport rep;
  rep.kind = pop.kind;
  rep.convention = convention;
  for (int i = 0; i < pop.d(); ++i) {
    const double level = X.for_feature(i);
    if (!(level > 0.0 && level < 100.0)) {
      throw ConfigError("percentile level must be in (0, 100), got " + std::to_string(level));
    }
    const double v = quantile(pop.feature(i), percentile_position(level, convention));
    rep.level.push_back(level);
    rep.percentile_value.push_back(v);
    rep.significant.push_back(v > 0.0);
  }
  return rep;
}

struct Verdict {
  Outcome outcome = Outcome::NoRewardSignal;
  std::vector<int> reward_features;      // significant reward contribution
  std::vector<int> action_features;      // significant offset sensitivity (any)
  std::vector<int> actionable_features;  // reward_features ∩ action_features
};

/// No reward feature -> NoRewardSignal; no reward feature that is also action
/// sensitive -> NoActionControl; otherwise PotentiallySuitable.
inline Verdict decide_verdict(const SignificanceReport& reward_report,
                              const SignificanceReport& action_report) {
  if (reward_report.significant.size() != action_report.significant.size()) {
    throw AnalysisError("decide_verdict: reports cover different feature counts");
  }
  Verdict v;
  v.reward_features = reward_report.significant_features();
  v.action_features = action_report.significant_features();
  std::set_intersection(v.reward_features.begin(), v.reward_features.end(),
                        v.action_features.begin(), v.action_features.end(),
                        std::back_inserter(v.actionable_features));
  if (v.reward_features.empty()) {
    v.outcome = Outcome::NoRewardSignal;
  } else if (v.actionable_features.empty()) {
    v.outcome = Outcome::NoActionControl;
  } else {
    v.outcome = Outcome::PotentiallySuitable;
  }
  return v;
}

struct AnalysisOptions {
  std::size_t batch_size = 1024;
  std::uint64_t shuffle_seed = 0;
  PercentileLevel level;
  PercentileConvention convention = PercentileConvention::exceeded_by;
  int jobs = 1;
};

struct AnalysisResult {
  StatPopulation reward;
  StatPopulation sensitivity;
  StatPopulation baseline_sensitivity;
  StatPopulation offset;
  SignificanceReport reward_report;
  SignificanceReport action_report;
  Verdict verdict;
};

/// Full feature analysis of one original/baseline ensemble pair.
inline AnalysisResult analyze(const Ensemble& original, const Ensemble& baseline,
                              const Dataset& eval, const AnalysisOptions& opt) {
  if (original.kind != EnsembleKind::original ||
      baseline.kind != EnsembleKind::shuffled_baseline) {
    throw AnalysisError("analyze: expected (original, shuffled_baseline) ensembles");
  }
  if (original.size() != baseline.size()) {
    throw AnalysisError("analyze: ensembles differ in size");
  }
  AnalysisResult r;
  r.reward = reward_contribution(original, eval, opt.batch_size, opt.jobs);
  r.sensitivity = action_sensitivity(original, eval, opt.batch_size, opt.shuffle_seed, opt.jobs);
  r.baseline_sensitivity =
      action_sensitivity(baseline, eval, opt.batch_size, opt.shuffle_seed, opt.jobs);
  r.offset = offset_sensitivity(r.sensitivity, r.baseline_sensitivity);
  r.reward_report = percentile_significance(r.reward, opt.level, opt.convention);
  r.action_report = percentile_significance(r.offset, opt.level, opt.convention);
  r.verdict = decide_verdict(r.reward_report, r.action_report);
  return r;
}

}  // namespace mdpcheck

#endif  // MDPCHECK_ANALYSIS_HPP_
