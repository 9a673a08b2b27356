#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include <nlohmann/json.hpp>

#include "disco/aggregation.hpp"
#include "disco/model.hpp"
#include "disco/privacy.hpp"

namespace disco {

enum class TrainingScheme { kFederated, kDecentralized };

std::string_view training_scheme_name(TrainingScheme s) noexcept;

// A collaborative training task: model, hyperparameters, scheme, privacy
// settings and participation thresholds. The JSON form (camelCase keys) is
// what the CLI reads and what POST /tasks accepts.
struct TaskSpec {
  std::string task_id;
  std::string title;
  std::string description;
  ModelSpec model;
  TrainConfig train;
  PrivacyConfig privacy;
  TrainingScheme scheme = TrainingScheme::kFederated;
  bool secure_aggregation = false;
  std::uint64_t min_participants = 1;
  std::uint64_t ready_threshold = 1;
  std::uint64_t total_rounds = 1;
  double round_deadline_seconds = 60.0;
  Weighting weighting = Weighting::kSampleCount;
  int scale_bits = 20;

  // Throws kInvalidSpec naming the first violated invariant.
  void validate() const;

  std::uint64_t total_epochs() const noexcept { return total_rounds * train.epochs_per_round; }
  FixedPointCodec codec() const noexcept { return FixedPointCodec{scale_bits}; }

  bool operator==(const TaskSpec&) const = default;
};

nlohmann::ordered_json to_json(const TaskSpec& spec);
// Missing optional keys take the defaults above; malformed values throw
// kInvalidSpec.
TaskSpec task_spec_from_json(const nlohmann::json& j);

}  // namespace disco
