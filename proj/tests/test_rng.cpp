#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "disco/rng.hpp"

using namespace disco;

TEST(Rng, MatchesSplitMix64ReferenceStream) {
  // Published SplitMix64 outputs for state 0.
  CounterRng rng(0);
  EXPECT_EQ(rng.next_u64(), 0xe220a8397b1dcdafULL);
  EXPECT_EQ(rng.next_u64(), 0x6e789e6aa1b965f4ULL);
  EXPECT_EQ(rng.next_u64(), 0x06c45d188009454fULL);
}

TEST(Rng, CounterAddressing) {
  CounterRng a(1234);
  std::vector<std::uint64_t> seq;
  for (int i = 0; i < 10; ++i) seq.push_back(a.next_u64());
  CounterRng b(1234, 5);
  EXPECT_EQ(b.next_u64(), seq[5]);
  EXPECT_EQ(a.at(7), seq[7]);
}

TEST(Rng, DeriveKeySeparatesTags) {
  EXPECT_NE(derive_key(1, {1, 2}), derive_key(1, {2, 1}));
  EXPECT_NE(derive_key(1, {0}), derive_key(1, {}));
  EXPECT_EQ(derive_key(9, {3, 4}), derive_key(9, {3, 4}));
}

TEST(Rng, NextBelowPassesChiSquare) {
  CounterRng rng(42);
  constexpr int kBins = 10;
  constexpr int kDraws = 100'000;
  std::vector<int> counts(kBins, 0);
  for (int i = 0; i < kDraws; ++i) {
    const auto v = rng.next_below(kBins);
    ASSERT_LT(v, static_cast<std::uint64_t>(kBins));
    ++counts[v];
  }
  double chi2 = 0.0;
  const double expected = static_cast<double>(kDraws) / kBins;
  for (int c : counts) chi2 += (c - expected) * (c - expected) / expected;
  EXPECT_LT(chi2, 27.88);  // 9 dof, p = 0.001
}

TEST(Rng, UnitIntervalBounds) {
  CounterRng rng(7);
  for (int i = 0; i < 10'000; ++i) {
    const double u = rng.next_unit();
    EXPECT_GE(u, 0.0);
    EXPECT_LT(u, 1.0);
    const double v = rng.next_unit_open_low();
    EXPECT_GT(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(Rng, NormalMoments) {
  CounterRng rng(99);
  constexpr int n = 200'000;
  double sum = 0.0, sq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = rng.next_normal();
    sum += x;
    sq += x * x;
  }
  const double mean = sum / n;
  const double var = sq / n - mean * mean;
  EXPECT_NEAR(mean, 0.0, 5.0 / std::sqrt(n));
  EXPECT_NEAR(var, 1.0, 0.02);
}

TEST(Rng, GammaMoments) {
  for (double shape : {0.3, 1.0, 4.5}) {
    CounterRng rng(static_cast<std::uint64_t>(shape * 1000));
    constexpr int n = 100'000;
    double sum = 0.0, sq = 0.0;
    for (int i = 0; i < n; ++i) {
      const double x = rng.next_gamma(shape);
      ASSERT_GT(x, 0.0);
      sum += x;
      sq += x * x;
    }
    const double mean = sum / n;
    const double var = sq / n - mean * mean;
    EXPECT_NEAR(mean, shape, 0.03 * std::max(1.0, shape)) << shape;
    EXPECT_NEAR(var, shape, 0.08 * std::max(1.0, shape)) << shape;
  }
}
