#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "disco/aggregation.hpp"
#include "disco/data.hpp"
#include "disco/node.hpp"
#include "disco/task.hpp"
#include "disco/time.hpp"
#include "disco/wire.hpp"

namespace disco {

inline constexpr int kScenarioSchemaVersion = 1;
inline constexpr int kReportSchemaVersion = 1;

// Where a scenario's corpus and held-out set come from.
struct DatasetSource {
  enum class Kind { kSynthetic, kIdx, kCsv, kInline };
  Kind kind = Kind::kSynthetic;

  // kSynthetic: train and test are drawn from the same blobs.
  SyntheticSpec synthetic;
  std::size_t test_samples = 500;

  // kIdx. Limits of 0 keep everything.
  std::filesystem::path train_images, train_labels, test_images, test_labels;
  std::size_t train_limit = 0;
  std::size_t test_limit = 0;

  // kCsv: a seeded split of one file.
  std::filesystem::path csv_path;
  std::string label_column = "label";
  double test_fraction = 0.2;

  // kInline: programmatic scenarios only.
  Dataset inline_train;
  Dataset inline_test;
};

struct FaultEvent {
  enum class Kind { kDropOut, kRejoin, kDelay };
  Kind kind = Kind::kDropOut;
  // Exactly one trigger: the first RoundStart of `round`, or a logical time.
  std::optional<std::uint64_t> round;
  std::optional<TimeMs> at_ms;
  // Original client id of the slot (slot index + 1). A rejoined slot keeps
  // its original id here even though the coordinator assigns a new one.
  std::uint64_t client = 0;
  TimeMs delay_ms = 0;  // kDelay: extra latency on every frame of the slot
};

std::string_view fault_kind_name(FaultEvent::Kind k) noexcept;

struct Scenario {
  TaskSpec task;
  std::size_t num_clients = 2;
  DatasetSource dataset;
  PartitionPlan partition;  // num_clients is taken from the scenario
  TimeMs latency_ms = 5;
  TimeMs train_ms_per_epoch = 0;
  TimeMs heartbeat_interval_ms = 10'000;
  std::vector<FaultEvent> faults;
  std::uint64_t seed = 0;
  TimeMs max_logical_ms = 24LL * 3600 * 1000;

  // Throws kInvalidSpec naming the violated rule.
  void validate() const;
};

// Relative dataset paths resolve against base_dir.
Scenario scenario_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
Scenario load_scenario(const std::filesystem::path& path);

struct AggregationEvent {
  std::uint64_t round = 0;
  std::vector<ClientId> participants;
  std::uint64_t failed_exchanges = 0;
  TimeMs at_ms = 0;
  bool operator==(const AggregationEvent&) const = default;
};

// Held-out evaluation after each completed round. Federated sessions use the
// coordinator's global params (evaluated_client = 0); decentralized sessions
// use the lowest-id participant's params.
struct GlobalEval {
  std::uint64_t round = 0;
  std::uint64_t epoch = 0;  // last session epoch of the round
  ClientId evaluated_client = 0;
  double loss = 0.0;
  double accuracy = 0.0;
  bool operator==(const GlobalEval&) const = default;
};

struct ClientSeries {
  ClientId client_id = 0;
  std::uint64_t slot = 0;  // original client id of the slot
  std::vector<LocalMetric> metrics;
  bool operator==(const ClientSeries&) const = default;
};

struct TimelineEntry {
  TimeMs at_ms = 0;
  std::string kind;
  std::uint64_t round = 0;
  ClientId client = 0;
  std::string detail;
  bool operator==(const TimelineEntry&) const = default;
};

struct ExperimentReport {
  int schema_version = kReportSchemaVersion;
  std::string task_id;
  TrainingScheme scheme = TrainingScheme::kFederated;
  bool secure_aggregation = false;
  std::uint64_t num_clients = 0;
  std::uint64_t total_rounds = 0;
  std::uint64_t epochs_per_round = 0;
  std::uint64_t seed = 0;
  bool finished = false;
  std::string final_phase;
  std::uint64_t completed_rounds = 0;
  TimeMs end_ms = 0;
  std::vector<AggregationEvent> aggregations;
  std::vector<GlobalEval> global_evals;
  std::vector<ClientSeries> clients;
  std::map<std::string, std::uint64_t> message_counts;        // every frame, by type
  std::map<std::string, std::uint64_t> coordinator_inbound;   // frames the coordinator received
  std::map<std::string, std::uint64_t> coordinator_outbound;  // frames the coordinator sent
  std::uint64_t coordinator_model_payloads = 0;
  std::uint64_t peer_dials = 0;
  std::string final_params_digest;  // SHA-256 of the final params checkpoint
  std::vector<TimelineEntry> timeline;

  bool operator==(const ExperimentReport&) const = default;
};

nlohmann::ordered_json to_json(const ExperimentReport& r);
ExperimentReport report_from_json(const nlohmann::json& j);

// "kind,round,epoch,client,loss,accuracy": one "local" row per client epoch,
// one "global" row per completed round.
std::string report_csv(const ExperimentReport& r);

// Writes <dir>/report.json and <dir>/metrics.csv.
void export_report(const ExperimentReport& r, const std::filesystem::path& dir);

// One encoded frame crossing the simulated network.
struct FrameRecord {
  TimeMs at_ms = 0;
  std::string from;  // "coordinator" or "client-<id>"
  std::string to;
  std::span<const std::uint8_t> bytes;
  const wire::Message* msg = nullptr;
};

struct RunOptions {
  std::function<void(const FrameRecord&)> frame_observer;
};

struct RunOutput {
  ExperimentReport report;
  ParamVector final_params;
  std::map<ClientId, ParamVector> client_params;  // last params of every node
  // Per-node share bookkeeping after each successful secure exchange:
  // (client, round) -> (sent, received, peers).
  std::map<std::pair<ClientId, std::uint64_t>, std::array<std::size_t, 3>> share_counts;
};

// Runs the real coordinator and node machines over an in-memory transport on
// logical time. Invariant violations throw kInvariant with the logical time.
RunOutput run_scenario_full(const Scenario& s, const RunOptions& options = {});
ExperimentReport run_scenario(const Scenario& s);

// Resolves a scenario's corpus into (client datasets, held-out set).
std::pair<std::vector<Dataset>, Dataset> materialize_datasets(const Scenario& s);

std::string sha256_hex(std::span<const std::uint8_t> bytes);

}  // namespace disco
