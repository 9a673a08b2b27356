#include "disco/task.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "disco/error.hpp"

namespace disco {
namespace {

[[noreturn]] void invalid(const std::string& what) { throw Error(ErrorCode::kInvalidSpec, what); }

template <typename T>
T get_or(const nlohmann::json& j, const char* key, T fallback) {
  const auto it = j.find(key);
  if (it == j.end() || it->is_null()) return fallback;
  try {
    return it->get<T>();
  } catch (const nlohmann::json::exception&) {
    invalid(std::string("field '") + key + "' has the wrong type");
  }
}

template <typename T>
T get_required(const nlohmann::json& j, const char* key) {
  if (!j.contains(key)) invalid(std::string("missing required field '") + key + "'");
  return get_or<T>(j, key, T{});
}

std::uint64_t get_count(const nlohmann::json& j, const char* key, std::uint64_t fallback) {
  const auto it = j.find(key);
  if (it == j.end() || it->is_null()) return fallback;
  if (!it->is_number_integer() || (it->is_number_integer() && !it->is_number_unsigned() && it->get<std::int64_t>() < 0)) {
    invalid(std::string("field '") + key + "' must be a non-negative integer");
  }
  return it->get<std::uint64_t>();
}

}  // namespace

std::string_view training_scheme_name(TrainingScheme s) noexcept {
  return s == TrainingScheme::kFederated ? "federated" : "decentralized";
}

void TaskSpec::validate() const {
  if (task_id.empty()) invalid("taskId must be non-empty");
  if (!std::all_of(task_id.begin(), task_id.end(), [](unsigned char c) {
        return std::isalnum(c) || c == '-' || c == '_' || c == '.';
      })) {
    invalid("taskId may only contain letters, digits, '-', '_' and '.'");
  }
  model.validate();
  train.validate();
  if (!(train.learning_rate > 0.0)) invalid("learningRate must be positive");
  privacy.validate();
  if (min_participants < 1) invalid("minParticipants must be at least 1");
  if (ready_threshold < 1) invalid("readyThreshold must be at least 1");
  if (total_rounds < 1) invalid("totalRounds must be at least 1");
  if (!(round_deadline_seconds > 0.0) || !std::isfinite(round_deadline_seconds)) {
    invalid("roundDeadlineSeconds must be positive");
  }
  if (scale_bits < 8 || scale_bits > 40) invalid("scaleBits must lie in [8, 40]");
  if (secure_aggregation && ready_threshold < 2) {
    invalid("readyThreshold must be at least 2 when secureAggregation is enabled");
  }
  if (secure_aggregation && scheme != TrainingScheme::kDecentralized) {
    invalid("secureAggregation requires scheme 'decentralized'");
  }
}

nlohmann::ordered_json to_json(const TaskSpec& s) {
  nlohmann::ordered_json j;
  j["taskId"] = s.task_id;
  j["title"] = s.title;
  j["description"] = s.description;
  j["model"] = {{"inputDim", s.model.input_dim},
                {"hiddenDim", s.model.hidden_dim},
                {"outputDim", s.model.output_dim},
                {"seed", s.model.seed}};
  j["training"] = {{"batchSize", s.train.batch_size},
                   {"epochsPerRound", s.train.epochs_per_round},
                   {"learningRate", s.train.learning_rate},
                   {"shuffleSeed", s.train.shuffle_seed}};
  j["privacy"] = {{"clipRadius", s.privacy.clip_radius},
                  {"noiseScale", s.privacy.noise_scale},
                  {"noiseSeed", s.privacy.noise_seed}};
  j["scheme"] = training_scheme_name(s.scheme);
  j["secureAggregation"] = s.secure_aggregation;
  j["minParticipants"] = s.min_participants;
  j["readyThreshold"] = s.ready_threshold;
  j["totalRounds"] = s.total_rounds;
  j["roundDeadlineSeconds"] = s.round_deadline_seconds;
  j["weighting"] = s.weighting == Weighting::kSampleCount ? "sampleCount" : "uniform";
  j["scaleBits"] = s.scale_bits;
  return j;
}

TaskSpec task_spec_from_json(const nlohmann::json& j) {
  if (!j.is_object()) invalid("task spec must be a JSON object");
  TaskSpec s;
  s.task_id = get_required<std::string>(j, "taskId");
  s.title = get_or<std::string>(j, "title", "");
  s.description = get_or<std::string>(j, "description", "");

  if (!j.contains("model") || !j["model"].is_object()) invalid("missing required object 'model'");
  const auto& m = j["model"];
  s.model.input_dim = get_count(m, "inputDim", 0);
  s.model.hidden_dim = get_count(m, "hiddenDim", 0);
  s.model.output_dim = get_count(m, "outputDim", 0);
  s.model.seed = get_count(m, "seed", 0);

  const nlohmann::json empty = nlohmann::json::object();
  const auto& t = j.contains("training") ? j["training"] : empty;
  s.train.batch_size = get_count(t, "batchSize", s.train.batch_size);
  s.train.epochs_per_round = get_count(t, "epochsPerRound", s.train.epochs_per_round);
  s.train.learning_rate = get_or<double>(t, "learningRate", s.train.learning_rate);
  s.train.shuffle_seed = get_count(t, "shuffleSeed", 0);

  const auto& p = j.contains("privacy") ? j["privacy"] : empty;
  s.privacy.clip_radius = get_or<double>(p, "clipRadius", 0.0);
  s.privacy.noise_scale = get_or<double>(p, "noiseScale", 0.0);
  s.privacy.noise_seed = get_count(p, "noiseSeed", 0);

  const auto scheme = get_or<std::string>(j, "scheme", "federated");
  if (scheme == "federated") s.scheme = TrainingScheme::kFederated;
  else if (scheme == "decentralized") s.scheme = TrainingScheme::kDecentralized;
  else invalid("scheme must be 'federated' or 'decentralized'");

  s.secure_aggregation = get_or<bool>(j, "secureAggregation", false);
  s.min_participants = get_count(j, "minParticipants", 1);
  s.ready_threshold = get_count(j, "readyThreshold", s.min_participants);
  s.total_rounds = get_count(j, "totalRounds", 1);
  s.round_deadline_seconds = get_or<double>(j, "roundDeadlineSeconds", 60.0);
  const auto weighting = get_or<std::string>(j, "weighting", "sampleCount");
  if (weighting == "sampleCount") s.weighting = Weighting::kSampleCount;
  else if (weighting == "uniform") s.weighting = Weighting::kUniform;
  else invalid("weighting must be 'sampleCount' or 'uniform'");
  s.scale_bits = get_or<int>(j, "scaleBits", 20);
  return s;
}

}  // namespace disco
