#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "disco/aggregation.hpp"
#include "disco/data.hpp"
#include "disco/model.hpp"
#include "disco/task.hpp"
#include "disco/time.hpp"
#include "disco/wire.hpp"

namespace disco {

struct NodeOptions {
  std::string task_id;
  std::string listen_address;  // advertised to peers in decentralized tasks
  TimeMs heartbeat_interval_ms = 10'000;  // 0 disables heartbeats
};

struct SendToServer {
  wire::Message msg;
};

// The transport decides who dials: the lower client id dials, the higher one
// accepts, so each pair shares exactly one connection.
struct SendToPeer {
  ClientId peer = 0;
  std::string address;
  wire::Message msg;
};

using NodeAction = std::variant<SendToServer, SendToPeer>;

enum class NodeState {
  kJoining,
  kIdle,  // waiting for RoundStart
  kAwaitingGlobal,
  kAwaitingPeerList,
  kExchanging,
  kPaused,
  kFinished,
  kFailed,
};

std::string_view node_state_name(NodeState s) noexcept;

struct LocalMetric {
  std::uint64_t round = 0;
  std::uint64_t epoch = 0;  // session-wide: round * epochsPerRound + local epoch
  double loss = 0.0;
  double accuracy = 0.0;

  bool operator==(const LocalMetric&) const = default;
};

// Client-side protocol logic as a sans-IO state machine. Local training runs
// synchronously inside on_server_message; params are never touched while an
// exchange is in flight.
class NodeMachine {
 public:
  NodeMachine(Dataset data, NodeOptions options);

  std::vector<NodeAction> start(TimeMs now);
  std::vector<NodeAction> on_server_message(const wire::Message& msg, TimeMs now);
  std::vector<NodeAction> on_peer_message(ClientId from, const wire::Message& msg, TimeMs now);
  // The transport gave up reaching `peer` (after its retries).
  std::vector<NodeAction> on_peer_failure(ClientId peer, TimeMs now);
  // Heartbeats and the peer-exchange deadline.
  std::vector<NodeAction> on_tick(TimeMs now);
  std::optional<TimeMs> next_deadline() const;

  NodeState state() const noexcept { return state_; }
  bool finished() const noexcept { return state_ == NodeState::kFinished; }
  bool failed() const noexcept { return state_ == NodeState::kFailed; }
  const std::string& failure() const noexcept { return failure_; }
  ClientId client_id() const noexcept { return client_id_; }
  const std::optional<TaskSpec>& task() const noexcept { return task_; }
  const ParamVector& params() const noexcept { return params_; }
  std::uint64_t completed_rounds() const noexcept { return completed_rounds_; }
  std::vector<LocalMetric> metrics() const;
  const Dataset& data() const noexcept { return data_; }

  // Share bookkeeping for the last secure exchange.
  std::size_t shares_sent() const noexcept { return shares_sent_; }
  std::size_t shares_received() const noexcept { return shares_received_; }
  std::size_t last_exchange_size() const noexcept { return last_exchange_size_; }
  std::uint64_t failed_exchanges() const noexcept { return failed_exchanges_; }

 private:
  struct Exchange {
    std::uint64_t round = 0;
    std::vector<ClientId> peers;  // ascending, includes self
    std::map<ClientId, std::string> addresses;
    TimeMs deadline = 0;
    std::map<ClientId, Contribution> updates;           // plain
    std::map<ClientId, RingVector> shares;              // secure stage 1 (incl. own)
    std::map<ClientId, std::uint64_t> counts;           // secure sample counts
    std::map<ClientId, RingVector> partials;            // secure stage 2 (incl. own)
    bool partial_sent = false;
  };

  wire::Message make(wire::Body body) const;
  void fail(const std::string& why, std::vector<NodeAction>& out);
  void train_round(std::uint64_t round, const ParamVector& base, std::vector<NodeAction>& out);
  void begin_exchange(const wire::PeerList& list, TimeMs now, std::vector<NodeAction>& out);
  void absorb_peer(ClientId from, const wire::Message& msg, std::vector<NodeAction>& out);
  void try_complete(std::vector<NodeAction>& out);
  void finish_exchange(const ParamVector& mean, std::vector<NodeAction>& out);
  void abort_exchange(std::vector<NodeAction>& out);
  void broadcast_peers(const wire::Body& body, std::vector<NodeAction>& out);
  bool decentralized() const noexcept;

  Dataset data_;
  NodeOptions options_;
  NodeState state_ = NodeState::kJoining;
  std::string failure_;
  ClientId client_id_ = 0;
  std::optional<TaskSpec> task_;
  ParamVector params_;
  ParamVector base_;     // params at the start of the current round
  ParamVector pending_;  // privatized update of the current round
  std::uint64_t pending_round_ = 0;
  bool has_pending_ = false;
  std::uint64_t completed_rounds_ = 0;
  std::map<std::uint64_t, LocalMetric> metrics_;  // by session epoch
  std::optional<Exchange> exchange_;
  std::map<std::uint64_t, std::vector<std::pair<ClientId, wire::Message>>> early_;
  std::uint64_t last_closed_round_plus_one_ = 0;
  TimeMs last_heartbeat_ = 0;
  std::size_t shares_sent_ = 0;
  std::size_t shares_received_ = 0;
  std::size_t last_exchange_size_ = 0;
  std::uint64_t failed_exchanges_ = 0;
};

// Local-only training over totalRounds * epochsPerRound epochs from the
// task's initial params; identical to one train_local call.
TrainResult run_solo(const TaskSpec& spec, const Dataset& data);

// Per-round seeds a node uses; shared so tests can reproduce a node exactly.
std::uint64_t round_shuffle_seed(const TaskSpec& spec, ClientId client, std::uint64_t round) noexcept;
std::uint64_t round_noise_seed(const TaskSpec& spec, ClientId client, std::uint64_t round) noexcept;
std::uint64_t round_share_seed(const TaskSpec& spec, ClientId client, std::uint64_t round) noexcept;

}  // namespace disco
