#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <vector>

#include "disco/model.hpp"
#include "disco/rng.hpp"
#include "util.hpp"

using namespace disco;

namespace {

// Independent forward pass straight from the documented layer layout.
double reference_loss(const ParamVector& p, const Dataset& d, std::size_t hidden) {
  const std::size_t in = d.num_features;
  const std::size_t out = p.manifest.back().dims[0];
  const double* v = p.values.data();
  double total = 0.0;
  for (std::size_t r = 0; r < d.size(); ++r) {
    std::vector<double> x(d.row(r).begin(), d.row(r).end());
    std::vector<double> h = x;
    std::size_t off = 0;
    if (hidden > 0) {
      h.assign(hidden, 0.0);
      for (std::size_t j = 0; j < hidden; ++j) {
        double s = v[in * hidden + j];
        for (std::size_t i = 0; i < in; ++i) s += x[i] * v[i * hidden + j];
        h[j] = s > 0.0 ? s : 0.0;
      }
      off = in * hidden + hidden;
    }
    const std::size_t hd = h.size();
    std::vector<double> z(out);
    for (std::size_t k = 0; k < out; ++k) {
      double s = v[off + hd * out + k];
      for (std::size_t j = 0; j < hd; ++j) s += h[j] * v[off + j * out + k];
      z[k] = s;
    }
    const double m = *std::max_element(z.begin(), z.end());
    double lse = 0.0;
    for (double zk : z) lse += std::exp(zk - m);
    lse = m + std::log(lse);
    total += lse - z[d.labels[r]];
  }
  return total / static_cast<double>(d.size());
}

ParamVector random_params(const ModelSpec& spec, std::uint64_t seed) {
  ParamVector p = zero_params(spec);
  CounterRng rng(seed);
  for (double& x : p.values) x = rng.next_uniform(-0.8, 0.8);
  return p;
}

}  // namespace

TEST(Model, ParameterCountAndManifest) {
  const ModelSpec mlp{784, 32, 10, 1};
  EXPECT_EQ(mlp.parameter_count(), 784u * 32 + 32 + 32 * 10 + 10);
  const ParamVector p = init_params(mlp);
  EXPECT_EQ(p.size(), mlp.parameter_count());
  ASSERT_EQ(p.manifest.size(), 4u);
  EXPECT_EQ(p.manifest[0].name, "hidden.weight");
  EXPECT_EQ(infer_spec(p).hidden_dim, 32u);

  const ModelSpec logreg{5, 0, 3, 1};
  EXPECT_EQ(logreg.parameter_count(), 5u * 3 + 3);
  EXPECT_EQ(init_params(logreg).manifest.size(), 2u);
}

TEST(Model, InitIsGlorotBoundedAndSeeded) {
  const ModelSpec spec{20, 8, 4, 77};
  const ParamVector p = init_params(spec);
  EXPECT_EQ(p, init_params(spec));
  const double bound_h = std::sqrt(6.0 / (20 + 8));
  for (std::size_t i = 0; i < 20 * 8; ++i) EXPECT_LE(std::abs(p.values[i]), bound_h);
  for (std::size_t i = 160; i < 168; ++i) EXPECT_EQ(p.values[i], 0.0);
  ModelSpec other = spec;
  other.seed = 78;
  EXPECT_NE(p, init_params(other));
}

TEST(Model, ValidateRejectsBadSpecs) {
  EXPECT_THROW((ModelSpec{0, 4, 2, 0}.validate()), Error);
  EXPECT_THROW((ModelSpec{4, 4, 1, 0}.validate()), Error);
  EXPECT_THROW((ModelSpec{1000, 1000, 1000, 0}.validate(1000)), Error);
}

TEST(Model, ForwardMatchesIndependentImplementation) {
  for (std::size_t hidden : {0u, 6u}) {
    const Dataset d = disco::testing::blobs(37, 5, 3, 11);
    const ModelSpec spec{5, hidden, 3, 3};
    const ParamVector p = random_params(spec, 5 + hidden);
    const ForwardResult f = forward_loss(p, d.view());
    EXPECT_NEAR(f.loss, reference_loss(p, d, hidden), 1e-12);
    for (std::size_t r = 0; r < f.probs.rows; ++r) {
      double s = 0.0;
      for (std::size_t c = 0; c < f.probs.cols; ++c) s += f.probs(r, c);
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(Model, GradientMatchesFiniteDifferences) {
  double worst = 0.0;
  for (std::uint64_t draw = 0; draw < 20; ++draw) {
    const std::size_t hidden = draw % 2 == 0 ? 5 : 0;
    const Dataset d = disco::testing::blobs(16, 4, 3, 100 + draw, 0.3);
    const ModelSpec spec{4, hidden, 3, draw};
    const ParamVector p = random_params(spec, 1000 + draw);
    const ParamVector g = backward(p, d.view());
    for (std::size_t i = 0; i < p.size(); ++i) {
      ParamVector plus = p, minus = p;
      const double h = 1e-6;
      plus.values[i] += h;
      minus.values[i] -= h;
      const double fd = (reference_loss(plus, d, hidden) - reference_loss(minus, d, hidden)) / (2 * h);
      const double denom = std::max({std::abs(fd), std::abs(g.values[i]), 1e-6});
      worst = std::max(worst, std::abs(fd - g.values[i]) / denom);
    }
  }
  EXPECT_LE(worst, 1e-4);
}

TEST(Model, LossAndGradientAgreesWithParts) {
  const Dataset d = disco::testing::blobs(20, 3, 2, 8);
  const ParamVector p = random_params({3, 4, 2, 0}, 9);
  const LossAndGradient lg = loss_and_gradient(p, d.view());
  EXPECT_NEAR(lg.loss, forward_loss(p, d.view()).loss, 1e-12);
  const ParamVector g = backward(p, d.view());
  for (std::size_t i = 0; i < g.size(); ++i) EXPECT_NEAR(lg.gradient.values[i], g.values[i], 1e-12);
}

TEST(Model, TrainingReducesLossDeterministically) {
  const Dataset d = disco::testing::blobs(300, 2, 3, 21);
  const ModelSpec spec{2, 8, 3, 4};
  TrainConfig cfg;
  cfg.batch_size = 16;
  cfg.epochs_per_round = 15;
  cfg.learning_rate = 0.3;
  cfg.shuffle_seed = 5;
  const ParamVector p0 = init_params(spec);
  const TrainResult a = train_local(p0, d, cfg);
  const TrainResult b = train_local(p0, d, cfg);
  EXPECT_EQ(a.params, b.params);
  ASSERT_EQ(a.metrics.size(), 15u);
  EXPECT_LT(a.metrics.back().loss, a.metrics.front().loss);
  EXPECT_GT(evaluate(a.params, d).accuracy, 0.9);
}

TEST(Model, SingleFullBatchStepIsPlainSgd) {
  const Dataset d = disco::testing::blobs(10, 3, 2, 2);
  const ParamVector p0 = init_params({3, 0, 2, 1});
  TrainConfig cfg;
  cfg.batch_size = 10;
  cfg.epochs_per_round = 1;
  cfg.learning_rate = 0.5;
  const TrainResult r = train_local(p0, d, cfg);
  const ParamVector g = backward(p0, d.view());
  for (std::size_t i = 0; i < p0.size(); ++i) {
    EXPECT_NEAR(r.params.values[i], p0.values[i] - 0.5 * g.values[i], 1e-12);
  }
}

TEST(Model, CheckpointRoundTripAndCorruption) {
  const ParamVector p = init_params({6, 3, 4, 12});
  const auto bytes = encode_checkpoint(p);
  EXPECT_EQ(decode_checkpoint(bytes), p);
  ASSERT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "DSC1");

  auto bad = bytes;
  bad[0] = 'X';
  try {
    decode_checkpoint(bad);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kBadMagic);
  }
  const std::vector<std::uint8_t> cut(bytes.begin(), bytes.end() - 3);
  try {
    decode_checkpoint(cut);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kTruncated);
  }

  disco::testing::TempDir dir("ckpt");
  save_checkpoint(p, dir / "m.dsc");
  EXPECT_EQ(load_checkpoint(dir / "m.dsc"), p);
  EXPECT_THROW(load_checkpoint(dir / "missing.dsc"), Error);
}

TEST(Model, NonFiniteDetection) {
  ParamVector p = init_params({2, 0, 2, 0});
  p.values[1] = std::nan("");
  EXPECT_THROW(p.check_finite("test"), Error);
}
