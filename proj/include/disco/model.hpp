#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "disco/data.hpp"
#include "disco/error.hpp"

namespace disco {

inline constexpr std::size_t kDefaultParamCap = 10'000'000;

// Logistic regression (hidden_dim == 0) or a one-hidden-layer ReLU MLP with a
// softmax output.
struct ModelSpec {
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;
  std::size_t output_dim = 2;
  std::uint64_t seed = 0;

  std::size_t parameter_count() const noexcept;
  void validate(std::size_t param_cap = kDefaultParamCap) const;

  bool operator==(const ModelSpec&) const = default;
};

struct LayerShape {
  std::string name;
  std::vector<std::size_t> dims;

  std::size_t size() const noexcept;
  bool operator==(const LayerShape&) const = default;
};

// Flat parameter (or update) vector plus the per-layer shape manifest. This is
// the unit that moves over the wire.
struct ParamVector {
  std::vector<double> values;
  std::vector<LayerShape> manifest;

  std::size_t size() const noexcept { return values.size(); }
  bool same_shape(const ParamVector& other) const noexcept {
    return manifest == other.manifest && values.size() == other.values.size();
  }
  // Throws kNonFinite naming `where` and the first bad coordinate.
  void check_finite(std::string_view where) const;
  // Throws kManifestMismatch unless sum of layer sizes == values.size().
  void check_consistent() const;

  bool operator==(const ParamVector&) const = default;
};

// Zero-filled vector with the manifest for `spec`. Layer order:
// hidden.weight [in, hidden], hidden.bias, out.weight [hidden|in, out], out.bias.
ParamVector zero_params(const ModelSpec& spec);

// Glorot-uniform weights keyed on spec.seed, zero biases.
ParamVector init_params(const ModelSpec& spec, std::size_t param_cap = kDefaultParamCap);

// Recovers the architecture from a manifest; throws kManifestMismatch for
// anything that is not one of the two supported layouts.
ModelSpec infer_spec(const ParamVector& params);

ParamVector subtract(const ParamVector& a, const ParamVector& b);
ParamVector add(const ParamVector& a, const ParamVector& b);
double l2_norm(std::span<const double> v) noexcept;

// Dense row-major matrix.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

  double& operator()(std::size_t r, std::size_t c) noexcept { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data[r * cols + c]; }
};

struct ForwardResult {
  double loss = 0.0;  // mean negative log-likelihood
  Matrix probs;       // rows sum to 1
};

ForwardResult forward_loss(const ParamVector& params, const BatchView& batch);

// Gradient of the mean cross-entropy, same manifest as `params`.
ParamVector backward(const ParamVector& params, const BatchView& batch);

struct LossAndGradient {
  double loss = 0.0;
  std::size_t correct = 0;
  ParamVector gradient;
};

// One forward + backward pass; what train_local uses per minibatch.
LossAndGradient loss_and_gradient(const ParamVector& params, const BatchView& batch);

struct TrainConfig {
  std::size_t batch_size = 32;
  std::size_t epochs_per_round = 1;
  double learning_rate = 0.1;
  std::uint64_t shuffle_seed = 0;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

struct EpochMetrics {
  std::size_t epoch = 0;  // 0-based within the call
  double loss = 0.0;      // sample-weighted mean over the epoch's minibatches
  double accuracy = 0.0;

  bool operator==(const EpochMetrics&) const = default;
};

struct TrainResult {
  ParamVector params;
  std::vector<EpochMetrics> metrics;
};

// Plain minibatch SGD with a constant rate. Each epoch is one full pass in a
// permutation keyed on (shuffle_seed, epoch); the last batch may be partial.
TrainResult train_local(const ParamVector& params, const Dataset& dataset,
                        const TrainConfig& cfg);

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;
};

EvalResult evaluate(const ParamVector& params, const Dataset& dataset);

// "DSC1" checkpoint: magic, u32 version, u32 layer count, per layer
// (u32 name length, name, u32 rank, u64 dims...), u64 value count, then
// little-endian float64 values.
std::vector<std::uint8_t> encode_checkpoint(const ParamVector& params);
ParamVector decode_checkpoint(std::span<const std::uint8_t> bytes);
void save_checkpoint(const ParamVector& params, const std::filesystem::path& path);
ParamVector load_checkpoint(const std::filesystem::path& path);

}  // namespace disco
