#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "disco/data.hpp"
#include "disco/node.hpp"
#include "disco/task.hpp"
#include "disco/time.hpp"

namespace disco {

// "host:port". Throws kInvalidArgument.
struct HostPort {
  std::string host;
  std::uint16_t port = 0;
};
HostPort parse_host_port(const std::string& text);

// Config file keys (JSON): bindAddress, tcpPort, httpPort, dataDir,
// heartbeatIntervalSeconds, missedHeartbeats, operatorToken. Environment
// overrides: DISCO_BIND_ADDRESS, DISCO_TCP_PORT, DISCO_HTTP_PORT,
// DISCO_DATA_DIR, DISCO_OPERATOR_TOKEN.
struct ServerConfig {
  std::string bind_address = "127.0.0.1";
  std::uint16_t tcp_port = 7400;  // 0 picks an ephemeral port
  std::uint16_t http_port = 7401;
  std::optional<std::filesystem::path> data_dir;
  TimeMs heartbeat_interval_ms = 10'000;
  int missed_heartbeats = 3;
  std::string operator_token;  // empty disables pause/resume over HTTP
};

ServerConfig server_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
ServerConfig load_server_config(const std::filesystem::path& path);
void apply_env_overrides(ServerConfig& cfg);

// Coordinator behind a framed TCP listener and an HTTP/WebSocket API:
//   GET  /tasks                      task summaries
//   GET  /tasks/{id}/snapshot        full session snapshot
//   POST /tasks                      TaskSpec JSON -> 201
//   POST /tasks/{id}/pause|resume    needs X-Operator-Token
//   GET  /tasks/{id}/stream          WebSocket: snapshot, then deltas
// All coordinator state is touched from one I/O thread.
class CoordinatorServer {
 public:
  explicit CoordinatorServer(ServerConfig config);
  ~CoordinatorServer();
  CoordinatorServer(const CoordinatorServer&) = delete;
  CoordinatorServer& operator=(const CoordinatorServer&) = delete;

  // Binds both ports and starts the I/O thread.
  void start();
  void stop();
  // Blocks until stop() or a termination signal when handle_signals is set.
  void wait(bool handle_signals = false);

  std::uint16_t tcp_port() const;
  std::uint16_t http_port() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

struct NodeRunConfig {
  std::string server;  // host:port of the coordinator's TCP listener
  std::string task_id;
  Dataset data;
  std::string listen;  // host:port for peer connections (decentralized)
  int connect_attempts = 5;
  TimeMs backoff_ms = 200;  // doubles per attempt
  int peer_dial_attempts = 3;
  TimeMs heartbeat_interval_ms = 10'000;
  std::optional<std::filesystem::path> metrics_csv;  // round,epoch,loss,accuracy
  std::function<void(const std::string&)> log;
};

struct NodeRunResult {
  NodeState final_state = NodeState::kJoining;
  std::string failure;
  ClientId client_id = 0;
  std::optional<TaskSpec> task;
  ParamVector params;
  std::vector<LocalMetric> metrics;
  std::uint64_t completed_rounds = 0;
};

// Drives a NodeMachine over TCP until the session ends. Training runs on the
// calling thread; socket I/O and heartbeats run on a separate I/O thread.
NodeRunResult run_node(const NodeRunConfig& cfg);

void write_metrics_csv(const std::vector<LocalMetric>& metrics, const std::filesystem::path& path);

// Minimal blocking HTTP client used by the CLI and tests.
struct HttpResponse {
  int status = 0;
  std::string body;
  std::map<std::string, std::string> headers;
};
HttpResponse http_request(const std::string& host, std::uint16_t port, const std::string& method,
                          const std::string& target, const std::string& body = {},
                          const std::map<std::string, std::string>& headers = {});

// Blocking WebSocket reader for /tasks/{id}/stream.
class SnapshotStream {
 public:
  SnapshotStream(const std::string& host, std::uint16_t port, const std::string& task_id);
  ~SnapshotStream();
  // Next text message, or nullopt on timeout / close.
  std::optional<std::string> next(TimeMs timeout_ms);

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace disco
