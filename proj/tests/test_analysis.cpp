#include <gtest/gtest.h>

#include "mdpcheck/analysis.hpp"

using namespace mdpcheck;

namespace {

// Linear model with no hidden layers: head row 0 reads the raw state.
ModelParams<double> linear_reward_model(int d, int K, const std::vector<double>& weights) {
  ModelConfig cfg;
  cfg.d = d;
  cfg.K = K;
  cfg.hidden_sizes = {};
  cfg.input_dropout_rate = 0.0;
  cfg.standardize_inputs = false;
  auto p = zero_params<double>(cfg);
  for (int i = 0; i < d; ++i) p.layers[0].W(0, i) = weights[static_cast<std::size_t>(i)];
  return p;
}

MiniBatch batch_of(int d, std::vector<double> states, std::vector<int> actions,
                   std::vector<double> rewards) {
  MiniBatch b;
  b.d = d;
  b.states = states;
  b.next_states = std::move(states);
  b.actions = std::move(actions);
  b.rewards = std::move(rewards);
  return b;
}

StatPopulation population(std::vector<std::vector<double>> rows) {
  StatPopulation pop;
  pop.num_models = 1;
  pop.num_batches = rows[0].size();
  pop.values.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t c = 0; c < rows[i].size(); ++c)
      pop.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = rows[i][c];
  return pop;
}

SignificanceReport report(std::vector<bool> sig) {
  SignificanceReport r;
  r.significant = std::move(sig);
  return r;
}

Ensemble trained(const Dataset& ds, bool shuffle, int N = 2) {
  ModelConfig cfg;
  cfg.train_batches = 40;
  cfg.batch_size = 50;
  return train_ensemble(ds, cfg, N, 77, shuffle);
}

}  // namespace

TEST(RewardContribution, LinearHeadFixture) {
  // r_hat = 3 f0; states {0, 2}, rewards {0, 6}: MAE 0 before, 3 after.
  const auto p = linear_reward_model(1, 1, {3.0});
  const auto sample = reward_contribution_sample(p, batch_of(1, {0, 2}, {0, 1}, {0, 6}));
  EXPECT_EQ(sample(0), 3.0);

  Dataset ds(1);
  ds.push_back({{0}, 0, 0.0, {0}, 0, 0});
  ds.push_back({{2}, 1, 6.0, {2}, 0, 1});
  Ensemble ens;
  ens.models.push_back(p.cast<float>());
  const auto pop = reward_contribution(ens, ds, 2);
  ASSERT_EQ(pop.samples(), 1u);
  EXPECT_EQ(pop.values(0, 0), 3.0);
}

TEST(RewardContribution, UnusedAndConstantFeaturesGiveZero) {
  const auto p = linear_reward_model(3, 2, {1.5, 0.0, -2.0});
  const auto b = batch_of(3, {1, 4, 7, 2, 5, 7, 3, 6, 7, 4, 9, 7}, {0, 1, 0, 1}, {-12.5, -11, -9.5, -8});
  const auto s = reward_contribution_sample(p, b);
  EXPECT_EQ(s(1), 0.0);  // weight zero
  EXPECT_EQ(s(2), 0.0);  // constant column
  EXPECT_GT(s(0), 0.0);
}

TEST(RewardContribution, Errors) {
  Ensemble baseline;
  baseline.kind = EnsembleKind::shuffled_baseline;
  baseline.models.push_back(linear_reward_model(1, 1, {1.0}).cast<float>());
  Dataset ds(1);
  ds.push_back({{0}, 0, 0.0, {0}, 0, 0});
  EXPECT_THROW(reward_contribution(baseline, ds, 1), AnalysisError);
  Ensemble ens;
  ens.models = baseline.models;
  EXPECT_THROW(reward_contribution(ens, Dataset(1), 1), ConfigError);
}

TEST(ActionSensitivity, TwoComponentFixture) {
  BatchOutput<double> a, b;
  for (auto* o : {&a, &b}) {
    o->K = 2;
    o->d = 1;
    o->r_hat = Vec<double>::Zero(1);
    o->sigma = Mat<double>::Ones(2, 1);
  }
  a.alpha = (Mat<double>(2, 1) << 0.6, 0.4).finished();
  b.alpha = (Mat<double>(2, 1) << 0.2, 0.8).finished();
  a.mu = (Mat<double>(2, 1) << 0.5, -1.0).finished();
  b.mu = (Mat<double>(2, 1) << 1.5, 1.0).finished();
  // 0.4 * 1.0 + 0.6 * 2.0
  EXPECT_DOUBLE_EQ(action_sensitivity_sum(a, b)(0), 1.6);
}

TEST(ActionSensitivity, IdentityShuffleIsZeroAndSamplesNonNegative) {
  ModelConfig cfg;
  cfg.d = 2;
  cfg.seed = 3;
  const auto p = init<double>(cfg);
  const auto b = batch_of(2, {0, 1, 2, 3, 4, 5}, {0, 1, 1}, {0, 0, 1});
  EXPECT_TRUE(action_sensitivity_sample(p, b, b).isZero());
  auto flipped = b;
  flipped.actions = {1, 0, 1};
  const auto s = action_sensitivity_sample(p, b, flipped);
  EXPECT_TRUE((s.array() >= 0).all());
  EXPECT_GT(s.sum(), 0.0);
}

TEST(ActionSensitivity, SingleComponentIsAbsoluteMeanShift) {
  ModelConfig cfg;
  cfg.d = 2;
  cfg.K = 1;
  cfg.seed = 5;
  const auto p = init<double>(cfg);
  const auto b = batch_of(2, {0, 1, 2, 3}, {0, 1}, {0, 1});
  auto f = b;
  f.actions = {1, 0};
  const auto oa = forward_batch(p, b), ob = forward_batch(p, f);
  const Eigen::VectorXd want = (oa.mu - ob.mu).cwiseAbs().rowwise().sum();
  EXPECT_TRUE(action_sensitivity_sample(p, b, f).isApprox(want, 1e-12));
}

TEST(Offset, PairsByColumnAndChecksShape) {
  const auto a = population({{1, 2, 3}, {4, 5, 6}});
  const auto z = population({{0, 0, 0}, {0, 0, 0}});
  EXPECT_EQ(offset_sensitivity(a, z).values, a.values);
  const auto same = offset_sensitivity(a, a);
  EXPECT_TRUE(same.values.isZero());
  EXPECT_EQ(same.kind, StatisticKind::offset_action_sensitivity);
  for (auto c : {PercentileConvention::exceeded_by, PercentileConvention::standard})
    for (double X : {10.0, 50.0, 75.0, 99.0})
      for (bool s : percentile_significance(same, {X}, c).significant) EXPECT_FALSE(s);
  EXPECT_THROW(offset_sensitivity(a, population({{1, 2}, {3, 4}})), AnalysisError);
}

TEST(Percentile, LinearInterpolation) {
  const auto pop = population({{3, -1, 2, 1}});
  const auto standard = percentile_significance(pop, {75.0}, PercentileConvention::standard);
  EXPECT_DOUBLE_EQ(standard.percentile_value[0], 2.25);
  EXPECT_TRUE(standard.significant[0]);
  // Level that 75% of the samples exceed: quantile 0.25.
  const auto exceeded = percentile_significance(pop, {75.0});
  EXPECT_DOUBLE_EQ(exceeded.percentile_value[0], 0.5);
  EXPECT_TRUE(exceeded.significant[0]);
  EXPECT_DOUBLE_EQ(quantile({5.0}, 0.3), 5.0);
}

TEST(Percentile, ZeroIsNotSignificant) {
  const auto pop = population({{0, 0, 0, 0}});
  EXPECT_FALSE(percentile_significance(pop).significant[0]);
}

TEST(Percentile, PerFeatureOverride) {
  const auto pop = population({{-1, 0.5, 1, 2}, {-1, 0.5, 1, 2}});
  PercentileLevel X{50.0, {95.0}};
  const auto r = percentile_significance(pop, X, PercentileConvention::standard);
  EXPECT_EQ(r.level, (std::vector<double>{95.0, 50.0}));
  EXPECT_DOUBLE_EQ(r.percentile_value[0], quantile({-1, 0.5, 1, 2}, 0.95));
  EXPECT_DOUBLE_EQ(r.percentile_value[1], 0.75);
}

TEST(Percentile, RejectsBadLevelsAndEmpty) {
  const auto pop = population({{1, 2}});
  EXPECT_THROW(percentile_significance(pop, {0.0}), ConfigError);
  EXPECT_THROW(percentile_significance(pop, {100.0}), ConfigError);
  EXPECT_THROW(percentile_significance(StatPopulation{}), AnalysisError);
}

TEST(Percentile, RaisingXNeverAddsSignificance) {
  Rng rng(4);
  for (int rep = 0; rep < 200; ++rep) {
    std::vector<double> v(30);
    for (auto& x : v) x = rng.uniform(-1, 1) + rng.uniform(-0.5, 0.5);
    const auto pop = population({v});
    bool was = true;
    for (double X = 1; X < 100; X += 1) {
      const bool now = percentile_significance(pop, {X}).significant[0];
      EXPECT_FALSE(now && !was) << "X=" << X;
      was = now;
    }
  }
}

TEST(Verdict, DecisionTable) {
  struct Case {
    std::vector<bool> reward, action;
    Outcome want;
  };
  const std::vector<Case> cases{
      {{false, false, false}, {false, false, false}, Outcome::NoRewardSignal},
      {{false, false, false}, {true, true, true}, Outcome::NoRewardSignal},
      {{true, false, false}, {false, true, true}, Outcome::NoActionControl},
      {{true, false, false}, {true, true, true}, Outcome::PotentiallySuitable},
  };
  for (const auto& c : cases) EXPECT_EQ(decide_verdict(report(c.reward), report(c.action)).outcome, c.want);
  const auto v = decide_verdict(report({true, false, false}), report({true, true, true}));
  EXPECT_EQ(v.actionable_features, std::vector<int>{0});
  EXPECT_THROW(decide_verdict(report({true}), report({true, false})), AnalysisError);
}

TEST(Ensemble, BaselineSharesMemberSeeds) {
  Env env({5, 10, 10, 1});
  const auto ds = collect(env, 4, 50, 2);
  const auto o = trained(ds, false), b = trained(ds, true);
  EXPECT_EQ(o.seeds, b.seeds);
  EXPECT_NE(o.seeds[0], o.seeds[1]);
  EXPECT_EQ(b.kind, EnsembleKind::shuffled_baseline);
  EXPECT_FALSE(o.models[0] == b.models[0]);
}

TEST(Analyze, DeterministicAndInvariantToBatchOrder) {
  Env env({7, 10, 10, 1});
  const auto ds = collect(env, 4, 50, 2);
  const auto o = trained(ds, false), b = trained(ds, true);
  Env eval_env({7, 10, 10, 3});
  const auto eval = collect(eval_env, 4, 50, 4);
  AnalysisOptions opt;
  opt.batch_size = 50;
  opt.shuffle_seed = 9;
  const auto r1 = analyze(o, b, eval, opt);
  const auto r2 = analyze(o, b, eval, opt);
  EXPECT_EQ(r1.offset.values, r2.offset.values);
  EXPECT_EQ(r1.reward.values, r2.reward.values);
  EXPECT_EQ(r1.offset.samples(), 2u * 4u);

  // Reverse the batch order.
  Dataset rev(10, eval.meta());
  for (int blk = 3; blk >= 0; --blk)
    for (std::size_t n = 0; n < 50; ++n) {
      auto tr = eval[static_cast<std::size_t>(blk) * 50 + n];
      tr.episode_id = 3 - blk;
      rev.push_back(tr);
    }
  const auto r3 = analyze(o, b, rev, opt);
  EXPECT_EQ(r3.reward_report.percentile_value, r1.reward_report.percentile_value);
  EXPECT_EQ(r3.action_report.percentile_value, r1.action_report.percentile_value);
  EXPECT_EQ(r3.offset.values.col(0), r1.offset.values.col(3));

  opt.jobs = 3;
  EXPECT_EQ(analyze(o, b, eval, opt).offset.values, r1.offset.values);
  EXPECT_THROW(analyze(b, o, eval, opt), AnalysisError);
}
