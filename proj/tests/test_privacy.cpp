#include <gtest/gtest.h>

#include <cmath>

#include "disco/privacy.hpp"
#include "disco/rng.hpp"

using namespace disco;

namespace {

ParamVector vec(std::vector<double> v) {
  ParamVector p;
  p.manifest = {{"out.bias", {v.size()}}};
  p.values = std::move(v);
  return p;
}

ParamVector random_vec(std::size_t n, std::uint64_t seed, double scale) {
  CounterRng rng(seed);
  std::vector<double> v(n);
  for (double& x : v) x = rng.next_normal() * scale;
  return vec(v);
}

}  // namespace

TEST(Clip, ThreeFourFiveTriangle) {
  const ParamVector c = clip_update(vec({3, 4}), 1.0);
  EXPECT_NEAR(c.values[0], 0.6, 1e-15);
  EXPECT_NEAR(c.values[1], 0.8, 1e-15);
  EXPECT_EQ(clip_update(vec({3, 4}), 10.0), vec({3, 4}));
  EXPECT_EQ(clip_update(vec({3, 4}), 0.0), vec({3, 4}));
}

TEST(Clip, NormsNeverExceedRadius) {
  for (std::uint64_t i = 0; i < 1000; ++i) {
    const double radius = 0.1 + static_cast<double>(i % 7);
    const ParamVector c = clip_update(random_vec(50, i, 3.0), radius);
    EXPECT_LE(l2_norm(c.values), radius * (1 + 1e-12));
  }
}

TEST(Noise, StdMatchesScaleTimesRadius) {
  PrivacyConfig cfg{2.0, 0.05, 17};
  const ParamVector n = add_noise(vec(std::vector<double>(100'000, 0.0)), cfg);
  double sq = 0.0, sum = 0.0;
  for (double x : n.values) sum += x, sq += x * x;
  const double mean = sum / 1e5;
  const double sd = std::sqrt(sq / 1e5 - mean * mean);
  EXPECT_NEAR(sd, 0.1, 0.005);
  EXPECT_EQ(n, add_noise(vec(std::vector<double>(100'000, 0.0)), cfg));
}

TEST(Noise, DisabledIsIdentity) {
  const ParamVector u = random_vec(20, 1, 1.0);
  EXPECT_EQ(privatize(u, PrivacyConfig{0.0, 0.0, 5}), u);
  EXPECT_EQ(PrivacyConfig({0.0, 0.3, 0}).noise_std(), 0.3);
}

TEST(Privacy, ValidateRejectsNegatives) {
  EXPECT_THROW((PrivacyConfig{-1.0, 0.0, 0}.validate()), Error);
  EXPECT_THROW((PrivacyConfig{0.0, -0.1, 0}.validate()), Error);
}

TEST(FixedPoint, RoundTripWithinResolution) {
  const FixedPointCodec codec{20};
  const std::vector<double> v{0.0, 1.5, -2.25, 1e-7, -123.456789, 3.14159265358979};
  const auto back = decode_fp(encode_fp(std::span<const double>(v), codec), codec);
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_LE(std::abs(back[i] - v[i]), codec.resolution());
  EXPECT_LE(codec.resolution(), std::ldexp(1.0, -20));
  const std::vector<double> huge{codec.max_magnitude() * 2};
  EXPECT_THROW(encode_fp(std::span<const double>(huge), codec), Error);
}

TEST(Shares, SplitCombineRecoversSecret) {
  const RingVector secret{0, 1, 0xFFFFFFFFFFFFFFFFULL, 123456789};
  for (std::size_t n : {1u, 2u, 5u}) {
    const auto shares = share_split(secret, n, 77 + n, 3, 4);
    ASSERT_EQ(shares.size(), n);
    for (std::size_t i = 0; i < n; ++i) {
      EXPECT_EQ(shares[i].share_index, i);
      EXPECT_EQ(shares[i].owner_id, 3u);
      EXPECT_EQ(shares[i].round, 4u);
    }
    EXPECT_EQ(share_combine(std::span<const SecretShare>(shares)), secret);
  }
}

TEST(Shares, IndividualSharesLookUniform) {
  // The first share of a constant secret should spread over the ring.
  const RingVector secret(20'000, 42);
  const auto shares = share_split(secret, 3, 5);
  std::vector<int> bins(16, 0);
  for (auto v : shares[0].values) ++bins[v >> 60];
  double chi2 = 0.0;
  for (int b : bins) chi2 += (b - 1250.0) * (b - 1250.0) / 1250.0;
  EXPECT_LT(chi2, 37.7);  // 15 dof, p = 0.001
}

TEST(Shares, PartialSumsDecodeToPlainSum) {
  const FixedPointCodec codec{20};
  for (std::size_t n : {2u, 3u, 6u}) {
    std::vector<std::vector<double>> updates;
    std::vector<std::vector<SecretShare>> split;
    for (std::size_t i = 0; i < n; ++i) {
      CounterRng rng(100 * n + i);
      std::vector<double> u(8);
      for (double& x : u) x = rng.next_uniform(-3, 3);
      updates.push_back(u);
      split.push_back(share_split(encode_fp(std::span<const double>(u), codec), n, 900 + i));
    }
    std::vector<RingVector> partials;
    for (std::size_t party = 0; party < n; ++party) {
      RingVector acc(8, 0);
      for (std::size_t owner = 0; owner < n; ++owner) ring_accumulate(acc, split[owner][party].values);
      partials.push_back(acc);
    }
    const auto sum = decode_fp(share_combine(std::span<const RingVector>(partials)), codec);
    for (std::size_t c = 0; c < 8; ++c) {
      double plain = 0.0;
      for (const auto& u : updates) plain += u[c];
      EXPECT_LE(std::abs(sum[c] - plain), n * std::ldexp(1.0, -20));
    }
  }
}

TEST(Shares, Errors) {
  EXPECT_THROW(share_split(RingVector{1}, 0, 1), Error);
  EXPECT_THROW(share_combine(std::span<const RingVector>()), Error);
  const std::vector<RingVector> ragged{{1, 2}, {1}};
  EXPECT_THROW(share_combine(std::span<const RingVector>(ragged)), Error);
}

TEST(Ring, EncodeDecode) {
  const RingVector v{1, 0xFFFFFFFFFFFFFFFFULL, 0};
  const auto bytes = encode_ring(v);
  ASSERT_EQ(bytes.size(), 8u * 4);
  EXPECT_EQ(bytes[0], 3);
  EXPECT_EQ(decode_ring(bytes), v);
  EXPECT_THROW(decode_ring(std::span<const std::uint8_t>(bytes.data(), bytes.size() - 1)), Error);
}
