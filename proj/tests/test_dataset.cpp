#include <gtest/gtest.h>

#include <filesystem>
#include <map>

#include "mdpcheck/dataset.hpp"

using namespace mdpcheck;
namespace fs = std::filesystem;

namespace {

Dataset small(int env_id = 5, std::size_t batches = 4, std::size_t bs = 30) {
  Env env({env_id, 10, 10, 17});
  return collect(env, batches, bs, 23);
}

fs::path temp_path(const std::string& name) {
  auto dir = fs::temp_directory_path() / "mdpcheck_test_dataset";
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST(Collect, SizesAndMeta) {
  const auto ds = small();
  EXPECT_EQ(ds.size(), 120u);
  EXPECT_EQ(ds.meta().env_id, 5);
  EXPECT_EQ(ds.meta().num_episodes, 12);
  EXPECT_EQ(ds.episode_id(119), 11);
  for (std::size_t n = 0; n < ds.size(); ++n) EXPECT_EQ(ds.step(n), static_cast<int>(n % 10));
}

TEST(Collect, RemainderPolicy) {
  Env env({1, 10, 10, 1});
  EXPECT_THROW(collect(env, 3, 1024, 2), ConfigError);
  const auto ds = collect(env, 3, 1024, 2, RemainderPolicy::pad_episodes);
  EXPECT_EQ(ds.size(), 3072u);
  EXPECT_EQ(ds.meta().num_episodes, 308);
}

TEST(Collect, Deterministic) { EXPECT_EQ(small(), small()); }

TEST(Dataset, DimensionMismatchRejected) {
  Dataset ds(3);
  Transition tr;
  tr.state = {0, 0, 0};
  tr.next_state = {0, 0};
  EXPECT_THROW(ds.push_back(tr), ValidationError);
}

TEST(Persistence, RoundTripPlainAndGzip) {
  const auto ds = small(7);
  for (const char* name : {"rt.jsonl", "rt.jsonl.gz"}) {
    const auto p = temp_path(name);
    save(ds, p.string());
    EXPECT_EQ(load(p.string()), ds) << name;
  }
}

TEST(Persistence, TruncatedFileReportsCount) {
  const auto text = serialize_dataset(small());
  const auto cut = text.substr(0, text.rfind('\n', text.size() - 2) + 1);
  try {
    parse_dataset(cut);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("expected 120"), std::string::npos) << e.what();
  }
}

TEST(Persistence, MalformedLineCarriesLineNumber) {
  auto text = serialize_dataset(small());
  const auto third = text.find('\n', text.find('\n') + 1) + 1;
  text.insert(third, "{not json\n");
  try {
    parse_dataset(text);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
}

TEST(Persistence, WrongDimensionRejected) {
  auto text = serialize_dataset(small());
  const auto pos = text.find("\"state\":[") + 9;
  text.insert(pos, "0.0,");
  EXPECT_THROW(parse_dataset(text), ValidationError);
}

TEST(Persistence, ExternalDatasetWithoutEnvId) {
  Dataset ds(2);
  ds.push_back({{1.5, -2}, 1, 0.25, {2.5, -2}, 0, 0});
  ds.push_back({{2.5, -2}, 0, 1.0, {2.5, -1}, 0, 1});
  const auto back = parse_dataset(serialize_dataset(ds));
  EXPECT_FALSE(back.meta().env_id.has_value());
  EXPECT_EQ(back, ds);
}

TEST(Batches, PartitionsWithoutOverlap) {
  const auto idx = batch_indices(100, 30, {.shuffle_seed = 4});
  ASSERT_EQ(idx.size(), 3u);
  std::map<std::size_t, int> seen;
  for (const auto& b : idx)
    for (auto r : b) ++seen[r];
  EXPECT_EQ(seen.size(), 90u);
  for (auto [r, c] : seen) EXPECT_EQ(c, 1);
  EXPECT_EQ(batch_indices(100, 30, {.allow_partial = true}).back().size(), 10u);
  EXPECT_THROW(batch_indices(10, 30), ConfigError);
}

TEST(ActionShuffle, PermutesOnlyActions) {
  const auto ds = small();
  const auto b = gather(ds, batch_indices(ds.size(), 60)[0]);
  const auto s = shuffle_actions_within_batch(b, 99);
  EXPECT_EQ(s.states, b.states);
  EXPECT_EQ(s.rewards, b.rewards);
  EXPECT_EQ(s.next_states, b.next_states);
  auto x = b.actions, y = s.actions;
  std::sort(x.begin(), x.end());
  std::sort(y.begin(), y.end());
  EXPECT_EQ(x, y);
  EXPECT_NE(s.actions, b.actions);
}

TEST(ActionShuffle, UniformPosition) {
  MiniBatch b;
  b.d = 1;
  b.actions = {0, 0, 0, 1};
  b.states = b.next_states = {0, 0, 0, 0};
  b.rewards = {0, 0, 0, 0};
  int where[4] = {};
  Rng rng(12);
  for (int rep = 0; rep < 10000; ++rep) {
    auto c = b;
    shuffle_actions_in_place(c, rng);
    for (int i = 0; i < 4; ++i) where[i] += c.actions[i];
  }
  for (int w : where) EXPECT_NEAR(w / 10000.0, 0.25, 0.02);
}
