#include <gtest/gtest.h>

#include <fstream>
#include <iterator>

#include "disco/wire.hpp"

using namespace disco;
using namespace disco::wire;

namespace {

std::vector<std::uint8_t> read_golden(const std::string& name) {
  std::ifstream in(std::string(DISCO_GOLDEN_DIR) + "/" + name + ".frame", std::ios::binary);
  EXPECT_TRUE(in) << name;
  return {std::istreambuf_iterator<char>(in), {}};
}

ParamVector small_params() {
  ParamVector p;
  p.values = {0.5, -1.25};
  p.manifest = {{"out.bias", {2}}};
  return p;
}

std::vector<std::pair<std::string, Message>> golden_messages() {
  return {
      {"join_task", {"t", 0, JoinTask{{"listen=127.0.0.1:9000"}}}},
      {"update_upload", {"t", 3, UpdateUpload{2, small_params(), 10}}},
      {"peer_list", {"t", 0, PeerList{1, {{2, "127.0.0.1:9001"}}}}},
      {"peer_share", {"t", 2, PeerShare{1, ShareStage::kShare, {1, 0xFFFFFFFFFFFFFFFFULL}, 5}}},
      {"global_update", {"t", 0, GlobalUpdate{2, small_params(), 3}}},
      {"metrics_report", {"t", 1, MetricsReport{0, 1, 0.5, 0.75}}},
      {"error", {"t", 0, ErrorMsg{"unknown-task", "no"}}},
      {"leave", {"t", 0, Leave{}}},
  };
}

std::vector<Message> every_kind() {
  TaskSpec spec;
  spec.task_id = "t";
  spec.model = {3, 2, 2, 1};
  return {
      {"t", 0, JoinTask{{"listen=h:1", "x"}}},
      {"t", 0, Assigned{4, spec}},
      {"t", 0, Assigned{4, std::nullopt}},
      {"t", 0, RoundStart{3, small_params()}},
      {"t", 0, RoundStart{3, std::nullopt}},
      {"t", 2, UpdateUpload{1, small_params(), 0}},
      {"t", 2, ReadySignal{5}},
      {"t", 0, PeerList{5, {{1, "a:1"}, {2, "b:2"}}}},
      {"t", 2, PeerShare{5, ShareStage::kPartialSum, {0, 7}, 0}},
      {"t", 2, PeerUpdate{5, small_params(), 12}},
      {"t", 0, GlobalUpdate{5, small_params(), 2}},
      {"t", 0, SessionPaused{"insufficient participants"}},
      {"t", 0, Leave{}},
      {"t", 1, MetricsReport{2, 5, 0.125, 1.0}},
      {"t", 0, ErrorMsg{"bad", "detail"}},
      {"t", 3, Heartbeat{}},
      {"t", 3, ExchangeDone{5, false}},
  };
}

}  // namespace

TEST(Wire, EncoderMatchesGoldenFrames) {
  for (const auto& [name, msg] : golden_messages()) {
    const auto golden = read_golden(name);
    EXPECT_EQ(encode_msg(msg), golden) << name;
    EXPECT_EQ(decode_msg(golden), msg) << name;
  }
}

TEST(Wire, EveryKindRoundTrips) {
  for (const Message& m : every_kind()) {
    const auto frame = encode_msg(m);
    EXPECT_EQ(decode_msg(frame), m) << type_name(m);
    EXPECT_EQ(decode_body(encode_body(m)), m);
    EXPECT_EQ(encode_msg(decode_msg(frame)), frame);
  }
}

TEST(Wire, PayloadClassification) {
  for (const Message& m : every_kind()) {
    const std::string_view t = type_name(m);
    const bool expect = t == "UpdateUpload" || t == "PeerShare" || t == "PeerUpdate" || t == "GlobalUpdate" ||
                        (t == "RoundStart" && std::get<RoundStart>(m.body).global_params.has_value());
    EXPECT_EQ(carries_model_payload(m), expect) << t;
  }
}

TEST(Wire, DecoderHandlesArbitrarySplits) {
  std::vector<std::uint8_t> stream;
  const auto msgs = every_kind();
  for (const Message& m : msgs) {
    const auto f = encode_msg(m);
    stream.insert(stream.end(), f.begin(), f.end());
  }
  for (std::size_t chunk : {1u, 3u, 17u, 4096u}) {
    FrameDecoder dec;
    std::vector<Message> got;
    for (std::size_t off = 0; off < stream.size(); off += chunk) {
      const std::size_t n = std::min(chunk, stream.size() - off);
      dec.feed(std::span<const std::uint8_t>(stream.data() + off, n));
      while (auto m = dec.next()) got.push_back(*m);
    }
    EXPECT_EQ(got, msgs) << chunk;
    EXPECT_EQ(dec.buffered(), 0u);
  }
}

TEST(Wire, RejectsBadFrames) {
  auto code_of = [](auto&& fn) {
    try {
      fn();
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::kInvariant;
  };
  auto frame = [](const std::string& body) {
    std::vector<std::uint8_t> f{0, 0, 0, static_cast<std::uint8_t>(body.size())};
    f.insert(f.end(), body.begin(), body.end());
    return f;
  };
  EXPECT_EQ(code_of([&] { decode_msg(frame("not json")); }), ErrorCode::kMalformedFrame);
  EXPECT_EQ(code_of([&] { decode_msg(frame(R"({"protocolVersion":"1.0","type":"Nope","taskId":"t"})")); }),
            ErrorCode::kMalformedFrame);
  EXPECT_EQ(code_of([&] { decode_msg(frame(R"({"protocolVersion":"2.0","type":"Leave","taskId":"t"})")); }),
            ErrorCode::kVersionMismatch);
  EXPECT_EQ(code_of([&] { decode_msg(frame(R"({"protocolVersion":"1.0","type":"ReadySignal","taskId":"t"})")); }),
            ErrorCode::kMalformedFrame);
  EXPECT_EQ(code_of([&] {
              decode_msg(frame(R"({"protocolVersion":"1.0","type":"GlobalUpdate","taskId":"t","round":1,)"
                               R"("params":"!!!","participantCount":1})"));
            }),
            ErrorCode::kMalformedFrame);
  // A minor version bump is accepted.
  EXPECT_EQ(type_name(decode_msg(frame(R"({"protocolVersion":"1.7","type":"Leave","taskId":"t"})"))), "Leave");

  FrameDecoder dec;
  const std::vector<std::uint8_t> huge{0x7F, 0xFF, 0xFF, 0xFF};
  dec.feed(huge);
  EXPECT_EQ(code_of([&] { dec.next(); }), ErrorCode::kOversizeFrame);
  const auto good = encode_msg({"t", 0, Leave{}});
  EXPECT_EQ(code_of([&] { decode_msg(std::span<const std::uint8_t>(good.data(), good.size() - 1)); }),
            ErrorCode::kMalformedFrame);
}

TEST(Wire, Base64KnownVectors) {
  const std::string s = "foobar";
  const std::vector<std::uint8_t> bytes(s.begin(), s.end());
  EXPECT_EQ(base64_encode(bytes), "Zm9vYmFy");
  EXPECT_EQ(base64_encode(std::span<const std::uint8_t>(bytes.data(), 4)), "Zm9vYg==");
  EXPECT_EQ(base64_decode("Zm9vYg=="), std::vector<std::uint8_t>(bytes.begin(), bytes.begin() + 4));
  EXPECT_THROW(base64_decode("Zm9*"), Error);
}
