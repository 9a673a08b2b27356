#include "disco/wire.hpp"

#include <openssl/evp.h>

#include <charconv>
#include <cstring>

#include <nlohmann/json.hpp>

#include "disco/error.hpp"

namespace disco::wire {
namespace {

using ojson = nlohmann::ordered_json;
using json = nlohmann::json;

[[noreturn]] void malformed(const std::string& what) {
  throw Error(ErrorCode::kMalformedFrame, "malformed message: " + what);
}

std::string version_string() {
  return std::to_string(kProtocolMajor) + "." + std::to_string(kProtocolMinor);
}

std::string params_b64(const ParamVector& p) { return base64_encode(encode_checkpoint(p)); }

ParamVector params_from(const json& j, const char* key) {
  const auto it = j.find(key);
  if (it == j.end() || !it->is_string()) malformed(std::string("missing '") + key + "'");
  try {
    return decode_checkpoint(base64_decode(it->get<std::string>()));
  } catch (const Error& e) {
    malformed(std::string("bad tensor in '") + key + "': " + e.what());
  }
}

template <typename T>
T field(const json& j, const char* key) {
  const auto it = j.find(key);
  if (it == j.end()) malformed(std::string("missing '") + key + "'");
  try {
    return it->get<T>();
  } catch (const json::exception&) {
    malformed(std::string("bad type for '") + key + "'");
  }
}

std::uint64_t round_field(const json& j) {
  const auto it = j.find("round");
  if (it == j.end() || !it->is_number_integer()) malformed("missing 'round'");
  if (!it->is_number_unsigned() && it->get<std::int64_t>() < 0) malformed("negative round");
  return it->get<std::uint64_t>();
}

struct BodyEncoder {
  ojson& j;

  void operator()(const JoinTask& m) const { j["capabilities"] = m.capabilities; }
  void operator()(const Assigned& m) const {
    j["clientId"] = m.client_id;
    if (m.task) j["task"] = to_json(*m.task);
  }
  void operator()(const RoundStart& m) const {
    j["round"] = m.round;
    if (m.global_params) j["globalParams"] = params_b64(*m.global_params);
  }
  void operator()(const UpdateUpload& m) const {
    j["round"] = m.round;
    j["payload"] = params_b64(m.payload);
    j["sampleCount"] = m.sample_count;
  }
  void operator()(const ReadySignal& m) const { j["round"] = m.round; }
  void operator()(const PeerList& m) const {
    j["round"] = m.round;
    ojson peers = ojson::array();
    for (const auto& p : m.peers) {
      ojson e;
      e["clientId"] = p.client_id;
      e["address"] = p.address;
      peers.push_back(std::move(e));
    }
    j["peers"] = std::move(peers);
  }
  void operator()(const PeerShare& m) const {
    j["round"] = m.round;
    j["stage"] = m.stage == ShareStage::kShare ? "share" : "partial";
    j["share"] = base64_encode(encode_ring(m.share));
    j["sampleCount"] = m.sample_count;
  }
  void operator()(const PeerUpdate& m) const {
    j["round"] = m.round;
    j["params"] = params_b64(m.params);
    j["sampleCount"] = m.sample_count;
  }
  void operator()(const GlobalUpdate& m) const {
    j["round"] = m.round;
    j["params"] = params_b64(m.params);
    j["participantCount"] = m.participant_count;
  }
  void operator()(const SessionPaused& m) const { j["reason"] = m.reason; }
  void operator()(const Leave&) const {}
  void operator()(const MetricsReport& m) const {
    j["round"] = m.round;
    j["epoch"] = m.epoch;
    j["loss"] = m.loss;
    j["accuracy"] = m.accuracy;
  }
  void operator()(const ErrorMsg& m) const {
    j["code"] = m.code;
    j["detail"] = m.detail;
  }
  void operator()(const Heartbeat&) const {}
  void operator()(const ExchangeDone& m) const {
    j["round"] = m.round;
    j["ok"] = m.ok;
  }
};

Body decode_variant(const std::string& type, const json& j) {
  if (type == "JoinTask") {
    JoinTask m;
    if (j.contains("capabilities")) m.capabilities = field<std::vector<std::string>>(j, "capabilities");
    return m;
  }
  if (type == "Assigned") {
    Assigned m;
    m.client_id = field<std::uint64_t>(j, "clientId");
    if (j.contains("task")) {
      try {
        m.task = task_spec_from_json(j["task"]);
      } catch (const Error& e) {
        malformed(std::string("bad task: ") + e.what());
      }
    }
    return m;
  }
  if (type == "RoundStart") {
    RoundStart m;
    m.round = round_field(j);
    if (j.contains("globalParams")) m.global_params = params_from(j, "globalParams");
    return m;
  }
  if (type == "UpdateUpload") {
    return UpdateUpload{round_field(j), params_from(j, "payload"), field<std::uint64_t>(j, "sampleCount")};
  }
  if (type == "ReadySignal") return ReadySignal{round_field(j)};
  if (type == "PeerList") {
    PeerList m;
    m.round = round_field(j);
    const auto it = j.find("peers");
    if (it == j.end() || !it->is_array()) malformed("missing 'peers'");
    for (const auto& e : *it) {
      if (!e.is_object()) malformed("peer entry is not an object");
      m.peers.push_back({field<std::uint64_t>(e, "clientId"), field<std::string>(e, "address")});
    }
    return m;
  }
  if (type == "PeerShare") {
    PeerShare m;
    m.round = round_field(j);
    const auto stage = field<std::string>(j, "stage");
    if (stage == "share") m.stage = ShareStage::kShare;
    else if (stage == "partial") m.stage = ShareStage::kPartialSum;
    else malformed("unknown share stage '" + stage + "'");
    try {
      m.share = decode_ring(base64_decode(field<std::string>(j, "share")));
    } catch (const Error& e) {
      if (e.code() == ErrorCode::kMalformedFrame) throw;
      malformed(std::string("bad share: ") + e.what());
    }
    m.sample_count = field<std::uint64_t>(j, "sampleCount");
    return m;
  }
  if (type == "PeerUpdate") {
    return PeerUpdate{round_field(j), params_from(j, "params"), field<std::uint64_t>(j, "sampleCount")};
  }
  if (type == "GlobalUpdate") {
    return GlobalUpdate{round_field(j), params_from(j, "params"),
                        field<std::uint64_t>(j, "participantCount")};
  }
  if (type == "SessionPaused") return SessionPaused{field<std::string>(j, "reason")};
  if (type == "Leave") return Leave{};
  if (type == "MetricsReport") {
    return MetricsReport{round_field(j), field<std::uint64_t>(j, "epoch"), field<double>(j, "loss"),
                         field<double>(j, "accuracy")};
  }
  if (type == "Error") return ErrorMsg{field<std::string>(j, "code"), field<std::string>(j, "detail")};
  if (type == "Heartbeat") return Heartbeat{};
  if (type == "ExchangeDone") return ExchangeDone{round_field(j), field<bool>(j, "ok")};
  malformed("unknown message type '" + type + "'");
}

}  // namespace

std::string_view type_name(const Body& body) {
  static constexpr std::string_view kNames[] = {
      "JoinTask",     "Assigned",      "RoundStart",    "UpdateUpload", "ReadySignal",
      "PeerList",     "PeerShare",     "PeerUpdate",    "GlobalUpdate", "SessionPaused",
      "Leave",        "MetricsReport", "Error",         "Heartbeat",    "ExchangeDone"};
  static_assert(std::size(kNames) == std::variant_size_v<Body>);
  return kNames[body.index()];
}

std::string_view type_name(const Message& m) { return type_name(m.body); }

bool carries_model_payload(const Message& m) {
  if (const auto* rs = std::get_if<RoundStart>(&m.body)) return rs->global_params.has_value();
  return std::holds_alternative<UpdateUpload>(m.body) || std::holds_alternative<PeerShare>(m.body) ||
         std::holds_alternative<PeerUpdate>(m.body) || std::holds_alternative<GlobalUpdate>(m.body);
}

std::string encode_body(const Message& m) {
  ojson j;
  j["protocolVersion"] = version_string();
  j["type"] = type_name(m);
  j["taskId"] = m.task_id;
  if (m.sender != 0) j["sender"] = m.sender;
  std::visit(BodyEncoder{j}, m.body);
  return j.dump();
}

Message decode_body(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    malformed(std::string("invalid JSON: ") + e.what());
  }
  if (!j.is_object()) malformed("body is not an object");
  const auto version = field<std::string>(j, "protocolVersion");
  int major = 0;
  const auto dot = version.find('.');
  const auto [ptr, ec] = std::from_chars(version.data(), version.data() + (dot == std::string::npos ? version.size() : dot), major);
  if (ec != std::errc()) malformed("unparsable protocolVersion '" + version + "'");
  if (major != kProtocolMajor) {
    throw Error(ErrorCode::kVersionMismatch, "protocol major version " + std::to_string(major) +
                                                 " is not supported (expected " +
                                                 std::to_string(kProtocolMajor) + ")");
  }
  Message m;
  m.task_id = field<std::string>(j, "taskId");
  if (j.contains("sender")) m.sender = field<std::uint64_t>(j, "sender");
  m.body = decode_variant(field<std::string>(j, "type"), j);
  return m;
}

std::vector<std::uint8_t> encode_msg(const Message& m) {
  const std::string body = encode_body(m);
  if (body.size() > kMaxFrameBytes) {
    throw Error(ErrorCode::kOversizeFrame, "frame body of " + std::to_string(body.size()) + " bytes exceeds 64 MiB");
  }
  std::vector<std::uint8_t> out(4 + body.size());
  const auto n = static_cast<std::uint32_t>(body.size());
  out[0] = static_cast<std::uint8_t>(n >> 24);
  out[1] = static_cast<std::uint8_t>(n >> 16);
  out[2] = static_cast<std::uint8_t>(n >> 8);
  out[3] = static_cast<std::uint8_t>(n);
  std::memcpy(out.data() + 4, body.data(), body.size());
  return out;
}

namespace {
std::uint32_t read_prefix(std::span<const std::uint8_t> b) {
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) |
         std::uint32_t{b[3]};
}
}  // namespace

Message decode_msg(std::span<const std::uint8_t> frame) {
  if (frame.size() < 4) malformed("frame shorter than its length prefix");
  const std::uint32_t n = read_prefix(frame);
  if (n > kMaxFrameBytes) throw Error(ErrorCode::kOversizeFrame, "frame length " + std::to_string(n) + " exceeds 64 MiB");
  if (frame.size() - 4 != n) {
    malformed("frame declares " + std::to_string(n) + " body bytes, has " + std::to_string(frame.size() - 4));
  }
  return decode_body(std::string_view(reinterpret_cast<const char*>(frame.data() + 4), n));
}

void FrameDecoder::feed(std::span<const std::uint8_t> bytes) {
  buf_.insert(buf_.end(), bytes.begin(), bytes.end());
}

std::optional<Message> FrameDecoder::next() {
  if (buf_.size() < 4) return std::nullopt;
  const std::uint32_t n = read_prefix(buf_);
  if (n > kMaxFrameBytes) throw Error(ErrorCode::kOversizeFrame, "frame length " + std::to_string(n) + " exceeds 64 MiB");
  if (buf_.size() < 4 + std::size_t{n}) return std::nullopt;
  Message m = decode_body(std::string_view(reinterpret_cast<const char*>(buf_.data() + 4), n));
  buf_.erase(buf_.begin(), buf_.begin() + 4 + n);
  return m;
}

std::string base64_encode(std::span<const std::uint8_t> bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(),
                                static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::vector<std::uint8_t> base64_decode(std::string_view text) {
  if (text.size() % 4 != 0) malformed("base64 length is not a multiple of 4");
  std::vector<std::uint8_t> out(3 * (text.size() / 4));
  const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(text.data()),
                                static_cast<int>(text.size()));
  if (n < 0) malformed("invalid base64");
  std::size_t pad = 0;
  if (!text.empty() && text.back() == '=') ++pad;
  if (text.size() > 1 && text[text.size() - 2] == '=') ++pad;
  out.resize(static_cast<std::size_t>(n) - pad);
  return out;
}

}  // namespace disco::wire
