#include "disco/aggregation.hpp"

#include <algorithm>
#include <sstream>

#include "disco/rng.hpp"

namespace disco {

std::string_view scheme_name(AggregationScheme s) noexcept {
  return s == AggregationScheme::kMean ? "mean" : "secure-sum";
}

std::string_view weighting_name(Weighting w) noexcept {
  return w == Weighting::kSampleCount ? "sample-count" : "uniform";
}

AggregationResult fedavg(std::span<const Contribution> contribs, Weighting preferred) {
  if (contribs.empty()) throw Error(ErrorCode::kEmptyInput, "fedavg: no contributions");
  std::vector<const Contribution*> sorted;
  sorted.reserve(contribs.size());
  for (const auto& c : contribs) sorted.push_back(&c);
  std::sort(sorted.begin(), sorted.end(),
            [](const Contribution* a, const Contribution* b) { return a->client_id < b->client_id; });

  for (std::size_t i = 1; i < sorted.size(); ++i) {
    if (sorted[i]->client_id == sorted[i - 1]->client_id) {
      throw Error(ErrorCode::kInvalidArgument,
                  "fedavg: duplicate contribution from client " + std::to_string(sorted[i]->client_id));
    }
  }

  const Contribution& ref = *sorted.front();
  Weighting weighting = preferred;
  for (const Contribution* c : sorted) {
    if (c->round != ref.round) {
      throw Error(ErrorCode::kMixedRounds, "fedavg: contributions from rounds " +
                                               std::to_string(ref.round) + " and " +
                                               std::to_string(c->round));
    }
    if (!c->payload.same_shape(ref.payload)) {
      throw Error(ErrorCode::kManifestMismatch,
                  "fedavg: client " + std::to_string(c->client_id) + " payload manifest differs");
    }
    if (!c->sample_count) weighting = Weighting::kUniform;
    else if (*c->sample_count == 0) {
      throw Error(ErrorCode::kInvalidArgument, "fedavg: sampleCount must be at least 1");
    }
    c->payload.check_finite("fedavg contribution");
  }

  std::vector<double> weights(sorted.size(), 1.0 / static_cast<double>(sorted.size()));
  if (weighting == Weighting::kSampleCount) {
    double total = 0.0;
    for (const Contribution* c : sorted) total += static_cast<double>(*c->sample_count);
    for (std::size_t i = 0; i < sorted.size(); ++i) {
      weights[i] = static_cast<double>(*sorted[i]->sample_count) / total;
    }
  }

  // mean = ref + sum_i w_i (u_i - ref); exact when all updates coincide.
  AggregationResult result;
  result.round = ref.round;
  result.scheme = AggregationScheme::kMean;
  result.weighting = weighting;
  result.global_update = ref.payload;
  auto& out = result.global_update.values;
  const auto& base = ref.payload.values;
  for (std::size_t i = 1; i < sorted.size(); ++i) {
    const auto& u = sorted[i]->payload.values;
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += weights[i] * (u[j] - base[j]);
  }
  for (const Contribution* c : sorted) result.participants.push_back(c->client_id);
  result.global_update.check_finite("fedavg result");
  return result;
}

AggregationResult secure_aggregate(const ShareMatrix& shares,
                                   const std::map<ClientId, std::uint64_t>& counts,
                                   const SecureAggregateOptions& opts) {
  std::vector<ClientId> parts = shares.participants;
  std::sort(parts.begin(), parts.end());
  if (parts.empty()) throw Error(ErrorCode::kEmptyInput, "secure_aggregate: no participants");
  if (std::adjacent_find(parts.begin(), parts.end()) != parts.end()) {
    throw Error(ErrorCode::kInvalidArgument, "secure_aggregate: duplicate participant");
  }

  std::optional<RingVector> total;
  for (ClientId recipient : parts) {
    std::optional<RingVector> partial;
    for (ClientId owner : parts) {
      const auto it = shares.cells.find({owner, recipient});
      if (it == shares.cells.end()) {
        std::ostringstream os;
        os << "secure_aggregate: missing share (owner " << owner << ", recipient " << recipient << ")";
        throw Error(ErrorCode::kIncompleteShares, os.str());
      }
      if (!partial) partial = it->second;
      else ring_accumulate(*partial, it->second);
    }
    if (!total) total = std::move(*partial);
    else ring_accumulate(*total, *partial);
  }

  Weighting weighting = opts.weighting;
  double denominator = static_cast<double>(parts.size());
  if (weighting == Weighting::kSampleCount) {
    double sum = 0.0;
    for (ClientId p : parts) {
      const auto it = counts.find(p);
      if (it == counts.end() || it->second == 0) {
        weighting = Weighting::kUniform;
        break;
      }
      sum += static_cast<double>(it->second);
    }
    if (weighting == Weighting::kSampleCount) denominator = sum;
  }

  AggregationResult result;
  result.round = opts.round;
  result.scheme = AggregationScheme::kSecureSum;
  result.weighting = weighting;
  result.participants = parts;
  result.global_update = finish_secure_sum(*total, denominator, opts.codec, opts.manifest);
  return result;
}

std::map<ClientId, SecretShare> split_secure_update(const ParamVector& update,
                                                    std::uint64_t sample_count, Weighting weighting,
                                                    const FixedPointCodec& codec,
                                                    std::span<const ClientId> participants,
                                                    ClientId owner, std::uint64_t round,
                                                    std::uint64_t seed) {
  if (participants.empty()) throw Error(ErrorCode::kEmptyInput, "split_secure_update: no participants");
  std::vector<double> scaled = update.values;
  if (weighting == Weighting::kSampleCount) {
    for (double& v : scaled) v *= static_cast<double>(sample_count);
  }
  const RingVector secret = encode_fp(scaled, codec);
  auto pieces = share_split(secret, participants.size(), derive_key(seed, {owner, round}), owner, round);
  std::map<ClientId, SecretShare> out;
  for (std::size_t i = 0; i < participants.size(); ++i) out.emplace(participants[i], std::move(pieces[i]));
  return out;
}

ParamVector finish_secure_sum(std::span<const std::uint64_t> total, double denominator,
                              const FixedPointCodec& codec, const std::vector<LayerShape>& manifest) {
  if (!(denominator > 0.0)) throw Error(ErrorCode::kInvalidArgument, "secure sum: zero denominator");
  ParamVector p = decode_fp(total, codec, manifest);
  for (double& v : p.values) v /= denominator;
  return p;
}

}  // namespace disco
