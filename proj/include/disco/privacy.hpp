#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "disco/model.hpp"

namespace disco {

struct PrivacyConfig {
  double clip_radius = 0.0;  // 0 disables clipping
  double noise_scale = 0.0;  // 0 disables noise
  std::uint64_t noise_seed = 0;

  void validate() const;
  // noise_scale * clip_radius when clipping is on, else noise_scale.
  double noise_std() const noexcept {
    return clip_radius > 0.0 ? noise_scale * clip_radius : noise_scale;
  }
  bool operator==(const PrivacyConfig&) const = default;
};

// u * min(1, C / ||u||). C == 0 returns u unchanged.
ParamVector clip_update(const ParamVector& u, double clip_radius);

// u + N(0, std^2 I), deterministic under cfg.noise_seed.
ParamVector add_noise(const ParamVector& u, const PrivacyConfig& cfg);

// Clip then noise, the client-side transform applied before any upload or
// exchange.
ParamVector privatize(const ParamVector& u, const PrivacyConfig& cfg);

using RingVector = std::vector<std::uint64_t>;

// Reals as round(v * 2^scale_bits) in Z/2^64, two's complement.
struct FixedPointCodec {
  int scale_bits = 20;

  void validate() const;
  // Exclusive bound on |v| accepted by encode: 2^(62 - scale_bits).
  double max_magnitude() const noexcept;
  // Worst-case decode(encode(v)) - v.
  double resolution() const noexcept;
};

RingVector encode_fp(std::span<const double> values, const FixedPointCodec& codec);
RingVector encode_fp(const ParamVector& v, const FixedPointCodec& codec);
std::vector<double> decode_fp(std::span<const std::uint64_t> ring, const FixedPointCodec& codec);
ParamVector decode_fp(std::span<const std::uint64_t> ring, const FixedPointCodec& codec,
                      const std::vector<LayerShape>& manifest);

struct SecretShare {
  std::uint64_t owner_id = 0;
  std::uint64_t round = 0;
  std::uint32_t share_index = 0;
  RingVector values;

  bool operator==(const SecretShare&) const = default;
};

// n-out-of-n additive sharing: shares 0..n-2 uniform in the ring, share n-1
// makes the coordinatewise sum equal the secret mod 2^64.
std::vector<SecretShare> share_split(std::span<const std::uint64_t> secret, std::size_t n,
                                     std::uint64_t rng_seed, std::uint64_t owner_id = 0,
                                     std::uint64_t round = 0);

// Coordinatewise modular sum. Throws kEmptyInput / kDimensionMismatch.
RingVector share_combine(std::span<const RingVector> shares);
RingVector share_combine(std::span<const SecretShare> shares);

// Adds `src` into `acc` mod 2^64 (lengths must match).
void ring_accumulate(RingVector& acc, std::span<const std::uint64_t> src);

// u64 little-endian count, then the values as u64 little-endian.
std::vector<std::uint8_t> encode_ring(std::span<const std::uint64_t> values);
RingVector decode_ring(std::span<const std::uint8_t> bytes);

}  // namespace disco
