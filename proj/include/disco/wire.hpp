#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "disco/aggregation.hpp"
#include "disco/model.hpp"
#include "disco/privacy.hpp"
#include "disco/task.hpp"

namespace disco::wire {

inline constexpr int kProtocolMajor = 1;
inline constexpr int kProtocolMinor = 0;
inline constexpr std::size_t kMaxFrameBytes = 64u << 20;

struct JoinTask {
  std::vector<std::string> capabilities;
  bool operator==(const JoinTask&) const = default;
};
struct Assigned {
  ClientId client_id = 0;
  std::optional<TaskSpec> task;  // the joined task's definition
  bool operator==(const Assigned&) const = default;
};
struct RoundStart {
  std::uint64_t round = 0;
  std::optional<ParamVector> global_params;  // absent in decentralized sessions
  bool operator==(const RoundStart&) const = default;
};
struct UpdateUpload {
  std::uint64_t round = 0;
  ParamVector payload;
  std::uint64_t sample_count = 0;  // 0 = not reported
  bool operator==(const UpdateUpload&) const = default;
};
struct ReadySignal {
  std::uint64_t round = 0;
  bool operator==(const ReadySignal&) const = default;
};
struct PeerInfo {
  ClientId client_id = 0;
  std::string address;
  bool operator==(const PeerInfo&) const = default;
};
struct PeerList {
  std::uint64_t round = 0;
  std::vector<PeerInfo> peers;
  bool operator==(const PeerList&) const = default;
};
enum class ShareStage { kShare, kPartialSum };
struct PeerShare {
  std::uint64_t round = 0;
  ShareStage stage = ShareStage::kShare;
  RingVector share;
  std::uint64_t sample_count = 0;
  bool operator==(const PeerShare&) const = default;
};
struct PeerUpdate {
  std::uint64_t round = 0;
  ParamVector params;
  std::uint64_t sample_count = 0;
  bool operator==(const PeerUpdate&) const = default;
};
struct GlobalUpdate {
  std::uint64_t round = 0;
  ParamVector params;
  std::uint64_t participant_count = 0;
  bool operator==(const GlobalUpdate&) const = default;
};
struct SessionPaused {
  std::string reason;
  bool operator==(const SessionPaused&) const = default;
};
struct Leave {
  bool operator==(const Leave&) const = default;
};
struct MetricsReport {
  std::uint64_t round = 0;
  std::uint64_t epoch = 0;  // session-wide epoch index
  double loss = 0.0;
  double accuracy = 0.0;
  bool operator==(const MetricsReport&) const = default;
};
struct ErrorMsg {
  std::string code;
  std::string detail;
  bool operator==(const ErrorMsg&) const = default;
};
struct Heartbeat {
  bool operator==(const Heartbeat&) const = default;
};
// A peer's end-of-exchange report to the coordinator (decentralized).
struct ExchangeDone {
  std::uint64_t round = 0;
  bool ok = true;
  bool operator==(const ExchangeDone&) const = default;
};

using Body = std::variant<JoinTask, Assigned, RoundStart, UpdateUpload, ReadySignal, PeerList,
                          PeerShare, PeerUpdate, GlobalUpdate, SessionPaused, Leave, MetricsReport,
                          ErrorMsg, Heartbeat, ExchangeDone>;

struct Message {
  std::string task_id;
  ClientId sender = 0;  // 0 = coordinator or not yet assigned
  Body body;

  bool operator==(const Message&) const = default;
};

std::string_view type_name(const Body& body);
std::string_view type_name(const Message& m);

// True for message kinds that carry a ParamVector or a SecretShare.
bool carries_model_payload(const Message& m);

// Canonical JSON body (no length prefix). Field order is fixed so encodings
// are byte-stable.
std::string encode_body(const Message& m);
Message decode_body(std::string_view json);

// 4-byte big-endian length, then the JSON body.
std::vector<std::uint8_t> encode_msg(const Message& m);
// Exactly one complete frame; throws kMalformedFrame / kOversizeFrame /
// kVersionMismatch.
Message decode_msg(std::span<const std::uint8_t> frame);

// Incremental frame splitter for stream transports.
class FrameDecoder {
 public:
  void feed(std::span<const std::uint8_t> bytes);
  // Next complete frame body, if any. Throws kOversizeFrame on a bad prefix.
  std::optional<Message> next();
  std::size_t buffered() const noexcept { return buf_.size(); }

 private:
  std::vector<std::uint8_t> buf_;
};

std::string base64_encode(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> base64_decode(std::string_view text);

}  // namespace disco::wire
