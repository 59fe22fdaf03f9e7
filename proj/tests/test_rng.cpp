#include <gtest/gtest.h>

#include <array>
#include <set>

#include "mdpcheck/rng.hpp"

using mdpcheck::derive_seed;
using mdpcheck::Rng;

TEST(Rng, SameSeedSameStream) {
  Rng a(42), b(42), c(43);
  bool differs = false;
  for (int i = 0; i < 100; ++i) {
    const auto x = a();
    EXPECT_EQ(x, b());
    differs = differs || x != c();
  }
  EXPECT_TRUE(differs);
}

TEST(Rng, UniformInUnitInterval) {
  Rng r(1);
  double sum = 0.0;
  for (int i = 0; i < 100000; ++i) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    sum += u;
  }
  EXPECT_NEAR(sum / 100000, 0.5, 0.01);
}

TEST(Rng, BelowStaysInRange) {
  Rng r(9);
  std::array<int, 7> hits{};
  for (int i = 0; i < 70000; ++i) {
    const auto v = r.below(7);
    ASSERT_LT(v, 7u);
    ++hits[v];
  }
  for (int h : hits) EXPECT_NEAR(h / 70000.0, 1.0 / 7, 0.01);
}

TEST(DeriveSeed, StreamsAndIndicesAreDistinct) {
  std::set<std::uint64_t> seen;
  for (const char* stream : {"env-train", "env-eval", "policy-train", "ensemble"})
    for (std::uint64_t i = 0; i < 50; ++i) seen.insert(derive_seed(7, stream, i));
  EXPECT_EQ(seen.size(), 200u);
  EXPECT_EQ(derive_seed(7, "model", 3), derive_seed(7, "model", 3));
  EXPECT_NE(derive_seed(7, "model", 3), derive_seed(8, "model", 3));
}

TEST(Shuffle, UniformPlacement) {
  Rng r(5);
  std::array<int, 4> where{};
  for (int rep = 0; rep < 10000; ++rep) {
    std::array<int, 4> v{0, 0, 0, 1};
    mdpcheck::shuffle(std::span<int>(v), r);
    for (int i = 0; i < 4; ++i)
      if (v[i] == 1) ++where[i];
  }
  for (int w : where) EXPECT_NEAR(w / 10000.0, 0.25, 0.02);
}
