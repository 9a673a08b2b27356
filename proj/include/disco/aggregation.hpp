#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

#include "disco/model.hpp"
#include "disco/privacy.hpp"

namespace disco {

using ClientId = std::uint64_t;

enum class AggregationScheme { kMean, kSecureSum };
enum class Weighting { kSampleCount, kUniform };

std::string_view scheme_name(AggregationScheme s) noexcept;
std::string_view weighting_name(Weighting w) noexcept;

struct Contribution {
  ClientId client_id = 0;
  std::uint64_t round = 0;
  ParamVector payload;
  std::optional<std::uint64_t> sample_count;  // absent => uniform fallback
};

struct AggregationResult {
  std::uint64_t round = 0;
  ParamVector global_update;
  std::vector<ClientId> participants;  // ascending
  AggregationScheme scheme = AggregationScheme::kMean;
  Weighting weighting = Weighting::kSampleCount;
};

// Weighted mean sum_i (n_i / sum n) * u_i, or the plain mean under
// kUniform (or when any contribution lacks a sample count). Contributions
// are reduced in client-id order, so the result does not depend on input
// order, and identical updates average to themselves exactly.
AggregationResult fedavg(std::span<const Contribution> contribs,
                         Weighting preferred = Weighting::kSampleCount);

// Shares keyed by (owner, recipient). Owners and recipients are the same
// participant set.
struct ShareMatrix {
  std::vector<ClientId> participants;
  std::map<std::pair<ClientId, ClientId>, RingVector> cells;

  void put(ClientId owner, ClientId recipient, RingVector share) {
    cells[{owner, recipient}] = std::move(share);
  }
};

struct SecureAggregateOptions {
  std::uint64_t round = 0;
  Weighting weighting = Weighting::kSampleCount;
  FixedPointCodec codec{};
  std::vector<LayerShape> manifest;
};

// Each recipient's column is ring-summed into a partial sum; partials are
// combined and decoded, then divided by sum n_i (weighted) or k (uniform).
// Owners must have encoded n_i * u_i themselves when weighted (see
// split_secure_update). A missing cell throws kIncompleteShares naming the
// (owner, recipient) pair.
AggregationResult secure_aggregate(const ShareMatrix& shares,
                                   const std::map<ClientId, std::uint64_t>& counts,
                                   const SecureAggregateOptions& opts);

// Owner side: encodes (n_i * u or u), splits it across `participants`
// (ascending), and returns recipient -> share.
std::map<ClientId, SecretShare> split_secure_update(const ParamVector& update,
                                                    std::uint64_t sample_count, Weighting weighting,
                                                    const FixedPointCodec& codec,
                                                    std::span<const ClientId> participants,
                                                    ClientId owner, std::uint64_t round,
                                                    std::uint64_t seed);

// Decodes a combined ring total and divides by the weight denominator.
ParamVector finish_secure_sum(std::span<const std::uint64_t> total, double denominator,
                              const FixedPointCodec& codec, const std::vector<LayerShape>& manifest);

}  // namespace disco
