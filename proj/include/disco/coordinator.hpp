#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "disco/aggregation.hpp"
#include "disco/store.hpp"
#include "disco/task.hpp"
#include "disco/time.hpp"
#include "disco/wire.hpp"

namespace disco {

enum class Phase { kWaitingForParticipants, kTraining, kAggregating, kPeerExchange, kFinished };

std::string_view phase_name(Phase p) noexcept;

struct CoordinatorConfig {
  TimeMs heartbeat_interval_ms = 10'000;
  int missed_heartbeats = 3;  // silent for interval * missed => departed
  std::optional<std::filesystem::path> data_dir;
};

// A message the driver must deliver on a connection.
struct Outbound {
  ConnId conn = 0;
  wire::Message msg;
};

struct MetricEntry {
  ClientId client_id = 0;
  std::uint64_t round = 0;
  std::uint64_t epoch = 0;
  double loss = 0.0;
  double accuracy = 0.0;

  bool operator==(const MetricEntry&) const = default;
};

// One completed aggregation (federated) or peer exchange (decentralized).
struct RoundRecord {
  std::uint64_t round = 0;
  std::vector<ClientId> participants;
  AggregationScheme scheme = AggregationScheme::kMean;
  Weighting weighting = Weighting::kSampleCount;
  std::uint64_t failed_exchanges = 0;
  TimeMs completed_at = 0;

  bool operator==(const RoundRecord&) const = default;
};

// What the dashboard sees. Never contains parameters or shares.
struct SessionSnapshot {
  std::string task_id;
  std::string title;
  TrainingScheme scheme = TrainingScheme::kFederated;
  bool secure_aggregation = false;
  Phase phase = Phase::kWaitingForParticipants;
  std::uint64_t current_round = 0;
  std::uint64_t total_rounds = 0;
  std::uint64_t epochs_per_round = 0;
  std::uint64_t participant_count = 0;
  std::uint64_t min_participants = 0;
  std::string pause_reason;
  std::map<ClientId, std::vector<MetricEntry>> series;  // each ordered by epoch
  std::vector<RoundRecord> rounds;

  nlohmann::ordered_json to_json() const;
};

// Server-side session logic as a sans-IO state machine: callers feed
// connection events and the current time, and deliver the returned
// messages. One owner mutates a Coordinator at a time.
class Coordinator {
 public:
  explicit Coordinator(CoordinatorConfig config = {});
  ~Coordinator();
  Coordinator(Coordinator&&) noexcept;
  Coordinator& operator=(Coordinator&&) noexcept;

  // Validates, persists and registers a task; initial global params come
  // from the model seed. Throws kDuplicateTask / kInvalidSpec.
  std::string create_task(const TaskSpec& spec);
  std::vector<SessionSnapshot> list_tasks() const;
  SessionSnapshot snapshot(const std::string& task_id) const;
  const TaskSpec& task(const std::string& task_id) const;
  const ParamVector& global_params(const std::string& task_id) const;
  Phase phase(const std::string& task_id) const;
  std::uint64_t connected_count(const std::string& task_id) const;

  std::vector<Outbound> on_message(ConnId conn, const wire::Message& msg, TimeMs now);
  std::vector<Outbound> on_disconnect(ConnId conn, TimeMs now);
  // Handles round deadlines and heartbeat expiry.
  std::vector<Outbound> on_tick(TimeMs now);
  std::optional<TimeMs> next_deadline() const;

  // Operator gate. resume() restarts the round only when enough clients are
  // connected; otherwise the session stays paused with the reason set.
  std::vector<Outbound> pause(const std::string& task_id, TimeMs now);
  std::vector<Outbound> resume(const std::string& task_id, TimeMs now);

  // Direct entry point for metric reports (also reached via MetricsReport).
  void record_metrics(const std::string& task_id, ClientId client, const wire::MetricsReport& report);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace disco
