#include "disco/privacy.hpp"

#include <cmath>
#include <sstream>

#include "bytes.hpp"
#include "disco/rng.hpp"

namespace disco {

void PrivacyConfig::validate() const {
  if (!std::isfinite(clip_radius) || clip_radius < 0.0) {
    throw Error(ErrorCode::kInvalidSpec, "clipRadius must be finite and non-negative");
  }
  if (!std::isfinite(noise_scale) || noise_scale < 0.0) {
    throw Error(ErrorCode::kInvalidSpec, "noiseScale must be finite and non-negative");
  }
}

ParamVector clip_update(const ParamVector& u, double clip_radius) {
  if (clip_radius == 0.0) return u;
  const double norm = l2_norm(u.values);
  if (!std::isfinite(norm)) throw Error(ErrorCode::kNonFinite, "clip_update: non-finite norm");
  if (norm <= clip_radius) return u;
  ParamVector out = u;
  const double scale = clip_radius / norm;
  for (double& v : out.values) v *= scale;
  return out;
}

ParamVector add_noise(const ParamVector& u, const PrivacyConfig& cfg) {
  cfg.validate();
  const double sd = cfg.noise_std();
  if (sd == 0.0) return u;
  ParamVector out = u;
  CounterRng rng(cfg.noise_seed);
  for (double& v : out.values) v += sd * rng.next_normal();
  out.check_finite("add_noise");
  return out;
}

ParamVector privatize(const ParamVector& u, const PrivacyConfig& cfg) {
  return add_noise(clip_update(u, cfg.clip_radius), cfg);
}

void FixedPointCodec::validate() const {
  if (scale_bits < 8 || scale_bits > 40) {
    throw Error(ErrorCode::kInvalidArgument, "scaleBits must lie in [8, 40]");
  }
}

double FixedPointCodec::max_magnitude() const noexcept { return std::ldexp(1.0, 62 - scale_bits); }

double FixedPointCodec::resolution() const noexcept { return std::ldexp(1.0, -scale_bits); }

RingVector encode_fp(std::span<const double> values, const FixedPointCodec& codec) {
  codec.validate();
  const double limit = codec.max_magnitude();
  RingVector out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double v = values[i];
    if (!std::isfinite(v) || std::fabs(v) >= limit) {
      std::ostringstream os;
      os << "encode_fp: coordinate " << i << " (" << v << ") outside (-2^" << 62 - codec.scale_bits
         << ", 2^" << 62 - codec.scale_bits << ")";
      throw Error(ErrorCode::kOverflow, os.str());
    }
    out[i] = static_cast<std::uint64_t>(std::llround(std::ldexp(v, codec.scale_bits)));
  }
  return out;
}

RingVector encode_fp(const ParamVector& v, const FixedPointCodec& codec) {
  return encode_fp(std::span<const double>(v.values), codec);
}

std::vector<double> decode_fp(std::span<const std::uint64_t> ring, const FixedPointCodec& codec) {
  codec.validate();
  std::vector<double> out(ring.size());
  for (std::size_t i = 0; i < ring.size(); ++i) {
    out[i] = std::ldexp(static_cast<double>(static_cast<std::int64_t>(ring[i])), -codec.scale_bits);
  }
  return out;
}

ParamVector decode_fp(std::span<const std::uint64_t> ring, const FixedPointCodec& codec,
                      const std::vector<LayerShape>& manifest) {
  ParamVector p;
  p.values = decode_fp(ring, codec);
  p.manifest = manifest;
  p.check_consistent();
  return p;
}

std::vector<SecretShare> share_split(std::span<const std::uint64_t> secret, std::size_t n,
                                     std::uint64_t rng_seed, std::uint64_t owner_id,
                                     std::uint64_t round) {
  if (n == 0) throw Error(ErrorCode::kInvalidArgument, "share_split: n must be at least 1");
  std::vector<SecretShare> shares(n);
  RingVector last(secret.begin(), secret.end());
  for (std::size_t s = 0; s < n; ++s) {
    shares[s].owner_id = owner_id;
    shares[s].round = round;
    shares[s].share_index = static_cast<std::uint32_t>(s);
  }
  for (std::size_t s = 0; s + 1 < n; ++s) {
    CounterRng rng(derive_key(rng_seed, {s}));
    RingVector& vals = shares[s].values;
    vals.resize(secret.size());
    for (std::size_t i = 0; i < secret.size(); ++i) {
      vals[i] = rng.next_u64();
      last[i] -= vals[i];  // wraps mod 2^64
    }
  }
  shares[n - 1].values = std::move(last);
  return shares;
}

void ring_accumulate(RingVector& acc, std::span<const std::uint64_t> src) {
  if (acc.size() != src.size()) {
    throw Error(ErrorCode::kDimensionMismatch, "ring vectors differ in length (" +
                                                   std::to_string(acc.size()) + " vs " +
                                                   std::to_string(src.size()) + ")");
  }
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += src[i];
}

RingVector share_combine(std::span<const RingVector> shares) {
  if (shares.empty()) throw Error(ErrorCode::kEmptyInput, "share_combine: no shares");
  RingVector acc = shares.front();
  for (std::size_t s = 1; s < shares.size(); ++s) ring_accumulate(acc, shares[s]);
  return acc;
}

RingVector share_combine(std::span<const SecretShare> shares) {
  if (shares.empty()) throw Error(ErrorCode::kEmptyInput, "share_combine: no shares");
  RingVector acc = shares.front().values;
  for (std::size_t s = 1; s < shares.size(); ++s) ring_accumulate(acc, shares[s].values);
  return acc;
}

std::vector<std::uint8_t> encode_ring(std::span<const std::uint64_t> values) {
  detail::ByteWriter w;
  w.u64(values.size());
  w.u64_array(values);
  return w.take();
}

RingVector decode_ring(std::span<const std::uint8_t> bytes) {
  detail::ByteReader r(bytes, ErrorCode::kTruncated);
  const std::uint64_t n = r.u64();
  if (n != r.remaining() / sizeof(std::uint64_t) || r.remaining() % sizeof(std::uint64_t) != 0) {
    throw Error(ErrorCode::kTruncated, "share payload length prefix does not match body");
  }
  RingVector out(n);
  r.u64_array(out);
  return out;
}

}  // namespace disco
