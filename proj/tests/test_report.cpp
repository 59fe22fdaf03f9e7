#include <gtest/gtest.h>

#include "mdpcheck/report.hpp"

using namespace mdpcheck;

namespace {

std::size_t count(const std::string& text, const std::string& needle) {
  std::size_t n = 0;
  for (auto pos = text.find(needle); pos != std::string::npos; pos = text.find(needle, pos + 1)) ++n;
  return n;
}

StatPopulation random_population(StatisticKind kind, int d, int samples, std::uint64_t seed) {
  Rng rng(seed);
  StatPopulation pop;
  pop.kind = kind;
  pop.num_models = 1;
  pop.num_batches = static_cast<std::size_t>(samples);
  pop.values.resize(d, samples);
  for (int i = 0; i < d; ++i)
    for (int c = 0; c < samples; ++c) pop.values(i, c) = rng.uniform(-1, 1) + 0.1 * i;
  return pop;
}

}  // namespace

TEST(BoxStats, LinearInterpolationQuartiles) {
  const auto s = box_stats({3, -1, 2, 1});
  EXPECT_DOUBLE_EQ(s.median, 1.5);
  EXPECT_DOUBLE_EQ(s.q1, 0.5);
  EXPECT_DOUBLE_EQ(s.q3, 2.25);
  EXPECT_DOUBLE_EQ(s.whisker_lo, -1);
  EXPECT_DOUBLE_EQ(s.whisker_hi, 3);
  EXPECT_TRUE(s.outliers.empty());
}

TEST(BoxStats, SingleSampleIsDegenerate) {
  const auto s = box_stats({4.0});
  EXPECT_EQ(s.q1, 4.0);
  EXPECT_EQ(s.median, 4.0);
  EXPECT_EQ(s.q3, 4.0);
  EXPECT_EQ(s.whisker_lo, 4.0);
  EXPECT_EQ(s.whisker_hi, 4.0);
}

TEST(BoxStats, OutliersBeyondOneAndHalfIqr) {
  const auto s = box_stats({0, 1, 2, 3, 4, 100});
  // q1 = 1.25, q3 = 3.75, upper fence 7.5
  ASSERT_EQ(s.outliers.size(), 1u);
  EXPECT_EQ(s.outliers[0], 100);
  EXPECT_EQ(s.whisker_hi, 4);
}

TEST(Svg, TwentyBoxesInTwoPanels) {
  const auto a = random_population(StatisticKind::reward_contribution, 10, 40, 1);
  const auto b = random_population(StatisticKind::offset_action_sensitivity, 10, 40, 2);
  const auto ra = percentile_significance(a), rb = percentile_significance(b);
  const auto pattern = expected_significance(5);
  const auto svg = render_boxplots({{"Reward contribution", &a, &ra, &pattern.reward},
                                    {"Offset action sensitivity", &b, &rb, &pattern.action}});
  EXPECT_EQ(count(svg, "class=\"panel\""), 2u);
  EXPECT_EQ(count(svg, "class=\"box\""), 20u);
  EXPECT_EQ(count(svg, "class=\"median\""), 20u);
  EXPECT_EQ(count(svg, "class=\"percentile\""), 20u);
  EXPECT_EQ(count(svg, "class=\"zero\""), 2u);
  EXPECT_EQ(count(svg, "class=\"expected\""), 20u);
  EXPECT_EQ(svg.rfind("</svg>\n"), svg.size() - 7);
  EXPECT_EQ(svg, render_boxplots({{"Reward contribution", &a, &ra, &pattern.reward},
                                  {"Offset action sensitivity", &b, &rb, &pattern.action}}));
}

TEST(Svg, EmptyInputsRejected) {
  EXPECT_THROW(render_boxplots({}), AnalysisError);
  StatPopulation empty;
  EXPECT_THROW(render_boxplots({{"x", &empty}}), AnalysisError);
}

TEST(Svg, EscapesTitles) {
  const auto a = random_population(StatisticKind::reward_contribution, 2, 5, 3);
  const auto svg = render_boxplots({{"a<b & c", &a}});
  EXPECT_NE(svg.find("a&lt;b &amp; c"), std::string::npos);
}

TEST(Csv, HeaderAndRows) {
  StatPopulation pop;
  pop.num_models = 2;
  pop.num_batches = 1;
  pop.values.resize(2, 2);
  pop.values << 0.5, -1, 2, 0.125;
  EXPECT_EQ(population_to_csv(pop), "feature,m0_b0,m1_b0\n0,0.5,-1\n1,2,0.125\n");
}

TEST(Json, VerdictAndReport) {
  SignificanceReport r;
  r.level = {75, 75};
  r.percentile_value = {0.5, -0.25};
  r.significant = {true, false};
  const auto j = to_json(r);
  EXPECT_EQ(j["significant_features"], nlohmann::json::array({0}));
  EXPECT_EQ(j["convention"], "exceeded_by");
  Verdict v;
  v.outcome = Outcome::NoActionControl;
  v.reward_features = {0};
  EXPECT_EQ(to_json(v)["outcome"], "NoActionControl");
}
