#include "disco/simharness.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <queue>
#include <set>
#include <sstream>

#include "disco/coordinator.hpp"
#include "disco/error.hpp"
#include "disco/rng.hpp"

namespace disco {
namespace {

[[noreturn]] void invalid(const std::string& what) { throw Error(ErrorCode::kInvalidSpec, "scenario: " + what); }

template <typename T>
T opt(const nlohmann::json& j, const char* key, T fallback) {
  const auto it = j.find(key);
  if (it == j.end() || it->is_null()) return fallback;
  try {
    return it->get<T>();
  } catch (const nlohmann::json::exception&) {
    invalid(std::string("field '") + key + "' has the wrong type");
  }
}

std::filesystem::path resolve(const std::filesystem::path& base, const std::string& p) {
  const std::filesystem::path path(p);
  return path.is_absolute() ? path : base / path;
}

Dataset take_first(const Dataset& d, std::size_t limit) {
  if (limit == 0 || limit >= d.size()) return d;
  std::vector<std::size_t> rows(limit);
  for (std::size_t i = 0; i < limit; ++i) rows[i] = i;
  return d.subset(rows);
}

std::string endpoint_name(ClientId id) { return id == 0 ? "coordinator" : "client-" + std::to_string(id); }

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

std::string_view fault_kind_name(FaultEvent::Kind k) noexcept {
  switch (k) {
    case FaultEvent::Kind::kDropOut: return "dropOut";
    case FaultEvent::Kind::kRejoin: return "rejoin";
    case FaultEvent::Kind::kDelay: return "delay";
  }
  return "unknown";
}

void Scenario::validate() const {
  task.validate();
  if (num_clients == 0) invalid("numClients must be at least 1");
  if (latency_ms < 0 || train_ms_per_epoch < 0) invalid("latencyMs and trainMsPerEpoch must be >= 0");
  if (heartbeat_interval_ms <= 0) invalid("heartbeatIntervalMs must be > 0");
  if (max_logical_ms <= 0) invalid("maxLogicalMs must be > 0");
  if (partition.mode == PartitionMode::kDirichlet && !(partition.alpha > 0.0)) {
    invalid("partition alpha must be > 0");
  }
  for (std::size_t i = 0; i < faults.size(); ++i) {
    const FaultEvent& f = faults[i];
    const std::string where = "fault " + std::to_string(i) + ": ";
    if (f.round.has_value() == f.at_ms.has_value()) invalid(where + "exactly one of 'round' or 'atMs' is required");
    if (f.client < 1 || f.client > num_clients) {
      invalid(where + "client " + std::to_string(f.client) + " is not in 1.." + std::to_string(num_clients));
    }
    if (f.round && *f.round >= task.total_rounds) invalid(where + "round is past the last round");
    if (f.at_ms && *f.at_ms < 0) invalid(where + "atMs must be >= 0");
    if (f.kind == FaultEvent::Kind::kDelay && f.delay_ms < 0) invalid(where + "delay ms must be >= 0");
  }
  if (dataset.kind == DatasetSource::Kind::kCsv && !(dataset.test_fraction > 0.0 && dataset.test_fraction < 1.0)) {
    invalid("testFraction must be in (0, 1)");
  }
}

Scenario scenario_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  if (!j.is_object()) invalid("must be a JSON object");
  const int version = opt<int>(j, "schemaVersion", kScenarioSchemaVersion);
  if (version != kScenarioSchemaVersion) invalid("unsupported schemaVersion " + std::to_string(version));
  if (!j.contains("task")) invalid("missing 'task'");

  Scenario s;
  s.task = task_spec_from_json(j["task"]);
  s.num_clients = opt<std::size_t>(j, "numClients", 2);
  s.seed = opt<std::uint64_t>(j, "seed", 0);
  s.latency_ms = opt<TimeMs>(j, "latencyMs", 5);
  s.train_ms_per_epoch = opt<TimeMs>(j, "trainMsPerEpoch", 0);
  s.heartbeat_interval_ms = opt<TimeMs>(j, "heartbeatIntervalMs", 10'000);
  s.max_logical_ms = opt<TimeMs>(j, "maxLogicalMs", s.max_logical_ms);

  const nlohmann::json empty = nlohmann::json::object();
  const auto& d = j.contains("dataset") ? j["dataset"] : empty;
  const auto kind = opt<std::string>(d, "kind", "synthetic");
  if (kind == "synthetic") {
    s.dataset.kind = DatasetSource::Kind::kSynthetic;
    s.dataset.synthetic.samples = opt<std::size_t>(d, "samples", 1000);
    s.dataset.synthetic.dim = opt<std::size_t>(d, "dim", s.task.model.input_dim);
    s.dataset.synthetic.classes = opt<std::size_t>(d, "classes", s.task.model.output_dim);
    s.dataset.synthetic.spread = opt<double>(d, "spread", 0.1);
    s.dataset.synthetic.seed = opt<std::uint64_t>(d, "seed", s.seed);
    s.dataset.test_samples = opt<std::size_t>(d, "testSamples", 500);
  } else if (kind == "idx") {
    s.dataset.kind = DatasetSource::Kind::kIdx;
    for (const char* key : {"trainImages", "trainLabels", "testImages", "testLabels"}) {
      if (!d.contains(key)) invalid(std::string("idx dataset needs '") + key + "'");
    }
    s.dataset.train_images = resolve(base_dir, d["trainImages"].get<std::string>());
    s.dataset.train_labels = resolve(base_dir, d["trainLabels"].get<std::string>());
    s.dataset.test_images = resolve(base_dir, d["testImages"].get<std::string>());
    s.dataset.test_labels = resolve(base_dir, d["testLabels"].get<std::string>());
    s.dataset.train_limit = opt<std::size_t>(d, "trainLimit", 0);
    s.dataset.test_limit = opt<std::size_t>(d, "testLimit", 0);
  } else if (kind == "csv") {
    s.dataset.kind = DatasetSource::Kind::kCsv;
    if (!d.contains("path")) invalid("csv dataset needs 'path'");
    s.dataset.csv_path = resolve(base_dir, d["path"].get<std::string>());
    s.dataset.label_column = opt<std::string>(d, "labelColumn", "label");
    s.dataset.test_fraction = opt<double>(d, "testFraction", 0.2);
  } else {
    invalid("dataset kind must be 'synthetic', 'idx' or 'csv'");
  }

  const auto& p = j.contains("partition") ? j["partition"] : empty;
  const auto mode = opt<std::string>(p, "mode", "iid");
  if (mode == "iid") s.partition.mode = PartitionMode::kIid;
  else if (mode == "dirichlet") s.partition.mode = PartitionMode::kDirichlet;
  else invalid("partition mode must be 'iid' or 'dirichlet'");
  s.partition.alpha = opt<double>(p, "alpha", 1.0);
  s.partition.seed = opt<std::uint64_t>(p, "seed", s.seed);
  s.partition.num_clients = s.num_clients;

  if (j.contains("faults")) {
    if (!j["faults"].is_array()) invalid("'faults' must be an array");
    for (const auto& f : j["faults"]) {
      FaultEvent e;
      const auto ev = opt<std::string>(f, "event", "");
      if (ev == "dropOut") e.kind = FaultEvent::Kind::kDropOut;
      else if (ev == "rejoin") e.kind = FaultEvent::Kind::kRejoin;
      else if (ev == "delay") e.kind = FaultEvent::Kind::kDelay;
      else invalid("fault event must be 'dropOut', 'rejoin' or 'delay'");
      if (f.contains("round")) e.round = f["round"].get<std::uint64_t>();
      if (f.contains("atMs")) e.at_ms = f["atMs"].get<TimeMs>();
      e.client = opt<std::uint64_t>(f, "client", 0);
      e.delay_ms = opt<TimeMs>(f, "ms", 0);
      s.faults.push_back(e);
    }
  }
  s.validate();
  return s;
}

Scenario load_scenario(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open scenario '" + path.string() + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::kParse, "scenario '" + path.string() + "': " + e.what());
  }
  return scenario_from_json(j, path.parent_path());
}

std::pair<std::vector<Dataset>, Dataset> materialize_datasets(const Scenario& s) {
  Dataset train;
  Dataset test;
  const DatasetSource& src = s.dataset;
  switch (src.kind) {
    case DatasetSource::Kind::kSynthetic: {
      SyntheticSpec spec = src.synthetic;
      spec.samples += src.test_samples;
      const Dataset all = synthetic_blobs(spec);
      std::vector<std::size_t> head(src.synthetic.samples);
      std::vector<std::size_t> tail(src.test_samples);
      for (std::size_t i = 0; i < head.size(); ++i) head[i] = i;
      for (std::size_t i = 0; i < tail.size(); ++i) tail[i] = head.size() + i;
      train = all.subset(head);
      test = all.subset(tail);
      break;
    }
    case DatasetSource::Kind::kIdx:
      train = take_first(load_idx(src.train_images, src.train_labels), src.train_limit);
      test = take_first(load_idx(src.test_images, src.test_labels), src.test_limit);
      break;
    case DatasetSource::Kind::kCsv: {
      const Dataset all = load_csv(src.csv_path, src.label_column);
      const auto perm = seeded_permutation(all.size(), derive_key(s.seed, {0x53504C4954ULL}));
      const auto n_test = static_cast<std::size_t>(std::llround(src.test_fraction * static_cast<double>(all.size())));
      std::vector<std::size_t> test_rows(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_test));
      std::vector<std::size_t> train_rows(perm.begin() + static_cast<std::ptrdiff_t>(n_test), perm.end());
      std::sort(test_rows.begin(), test_rows.end());
      std::sort(train_rows.begin(), train_rows.end());
      train = all.subset(train_rows);
      test = all.subset(test_rows);
      break;
    }
    case DatasetSource::Kind::kInline:
      train = src.inline_train;
      test = src.inline_test;
      break;
  }
  if (train.num_features != s.task.model.input_dim) {
    invalid("dataset has " + std::to_string(train.num_features) + " features, task expects " +
            std::to_string(s.task.model.input_dim));
  }
  if (test.empty()) invalid("held-out set is empty");
  PartitionPlan plan = s.partition;
  plan.num_clients = s.num_clients;
  return {partition(train, plan), std::move(test)};
}

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
    throw Error(ErrorCode::kInvariant, "sha256 failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xF]);
  }
  return out;
}

namespace {

enum class EvKind {
  kToCoordinator,
  kToNode,
  kToPeer,
  kNodeTick,
  kCoordTick,
  kFault,
  kCoordDisconnect,
  kPeerFailure,
};

struct Event {
  TimeMs at = 0;
  std::uint64_t seq = 0;
  EvKind kind = EvKind::kCoordTick;
  std::size_t inst = 0;  // target node, or source node for kToCoordinator
  ClientId peer = 0;     // kToPeer: sender; kPeerFailure: unreachable peer
  std::size_t fault = 0;
  std::shared_ptr<const std::vector<std::uint8_t>> frame;
};

struct Later {
  bool operator()(const Event& a, const Event& b) const {
    return a.at != b.at ? a.at > b.at : a.seq > b.seq;
  }
};

struct Instance {
  std::size_t slot = 0;
  std::unique_ptr<NodeMachine> node;
  bool alive = true;
  bool closed = false;  // connection to the coordinator closed
  TimeMs busy_until = 0;
  std::optional<TimeMs> tick_at;
  std::optional<std::uint64_t> last_global;
};

struct PeerLink {
  bool established = false;
  bool broken = false;
  // Frames from the higher id, waiting for the lower id to dial.
  std::vector<std::pair<TimeMs, std::shared_ptr<const std::vector<std::uint8_t>>>> held;
};

class Sim {
 public:
  Sim(const Scenario& s, const RunOptions& options) : sc_(s), options_(options), coord_(make_config(s)) {}

  RunOutput run() {
    sc_.validate();
    auto [clients, test] = materialize_datasets(sc_);
    client_data_ = std::move(clients);
    test_ = std::move(test);
    task_id_ = sc_.task.task_id;
    decentralized_ = sc_.task.scheme == TrainingScheme::kDecentralized;
    coord_.create_task(sc_.task);

    slot_instance_.assign(sc_.num_clients, 0);
    slot_delay_.assign(sc_.num_clients, 0);
    for (std::size_t f = 0; f < sc_.faults.size(); ++f) {
      if (sc_.faults[f].at_ms) push(Event{*sc_.faults[f].at_ms, 0, EvKind::kFault, 0, 0, f, nullptr});
    }
    for (std::size_t slot = 0; slot < sc_.num_clients; ++slot) spawn(slot);

    while (!queue_.empty()) {
      Event ev = queue_.top();
      queue_.pop();
      if (ev.at > sc_.max_logical_ms) break;
      now_ = ev.at;
      dispatch(ev);
      if (done()) break;
    }
    return finish();
  }

 private:
  static CoordinatorConfig make_config(const Scenario& s) {
    CoordinatorConfig c;
    c.heartbeat_interval_ms = s.heartbeat_interval_ms;
    return c;
  }

  [[noreturn]] void violation(const std::string& what) const {
    throw Error(ErrorCode::kInvariant, "invariant violated at t=" + std::to_string(now_) + "ms: " + what);
  }

  void push(Event e) {
    e.seq = seq_++;
    queue_.push(std::move(e));
  }

  static std::uint64_t coord_ep() { return 0; }
  static std::uint64_t node_ep(std::size_t inst) { return inst + 1; }
  static ConnId conn_of(std::size_t inst) { return inst + 1; }

  TimeMs arrival(std::uint64_t src, std::uint64_t dst, TimeMs send_at, TimeMs extra) {
    TimeMs t = send_at + sc_.latency_ms + extra;
    TimeMs& last = link_last_[{src, dst}];
    t = std::max(t, last);
    last = t;
    return t;
  }

  std::string node_name(std::size_t index) const {
    const ClientId id = inst_[index].node->client_id();
    return id == 0 ? "client-unassigned" : endpoint_name(id);
  }

  TimeMs delay_of(std::size_t inst) const { return slot_delay_[inst_[inst].slot]; }

  void log(std::string kind, std::uint64_t round, ClientId client, std::string detail) {
    report_.timeline.push_back(TimelineEntry{now_, std::move(kind), round, client, std::move(detail)});
  }

  void observe(const std::string& from, const std::string& to, const std::vector<std::uint8_t>& bytes,
               const wire::Message& msg) {
    ++report_.message_counts[std::string(wire::type_name(msg))];
    if (options_.frame_observer) options_.frame_observer(FrameRecord{now_, from, to, bytes, &msg});
  }

  void spawn(std::size_t slot) {
    NodeOptions opts;
    opts.task_id = task_id_;
    opts.heartbeat_interval_ms = sc_.heartbeat_interval_ms;
    const std::size_t index = inst_.size();
    opts.listen_address = "sim://slot-" + std::to_string(slot + 1) + "/" + std::to_string(index);
    Instance in;
    in.slot = slot;
    in.node = std::make_unique<NodeMachine>(client_data_[slot], opts);
    inst_.push_back(std::move(in));
    slot_instance_[slot] = index;
    node_actions(index, inst_[index].node->start(now_), now_);
    after_node(index);
  }

  // ---- coordinator side ----

  void coord_step(std::vector<Outbound> out) {
    std::set<std::pair<std::string, std::uint64_t>> logged;
    for (Outbound& o : out) {
      const std::size_t index = o.conn - 1;
      const auto frame = std::make_shared<const std::vector<std::uint8_t>>(wire::encode_msg(o.msg));
      const std::string type(wire::type_name(o.msg));
      ++report_.coordinator_outbound[type];
      const ClientId to = inst_[index].node->client_id();
      observe("coordinator", node_name(index), *frame, o.msg);
      if (wire::carries_model_payload(o.msg)) {
        if (decentralized_) {
          ++report_.coordinator_model_payloads;
          violation("coordinator sent " + type + " with a model payload in a decentralized session");
        }
      }
      if (const auto* g = std::get_if<wire::GlobalUpdate>(&o.msg.body)) {
        auto& last = inst_[index].last_global;
        if (last && g->round <= *last) {
          violation("client " + std::to_string(to) + " got GlobalUpdate for round " + std::to_string(g->round) +
                    " after round " + std::to_string(*last));
        }
        last = g->round;
      }
      note_coordinator_event(o.msg, logged);
      push(Event{arrival(coord_ep(), node_ep(index), now_, delay_of(index)), 0, EvKind::kToNode, index, 0, 0, frame});
    }
    check_gating();
    check_records();
    schedule_coord_tick();
  }

  void note_coordinator_event(const wire::Message& m, std::set<std::pair<std::string, std::uint64_t>>& logged) {
    const auto once = [&](const std::string& kind, std::uint64_t round, const std::string& detail) {
      if (logged.emplace(kind, round).second) log(kind, round, 0, detail);
    };
    if (const auto* rs = std::get_if<wire::RoundStart>(&m.body)) {
      const bool first = rounds_started_.insert(rs->round).second;
      if (first) once("round-start", rs->round, "");
      if (paused_) {
        paused_ = false;
        once("resumed", rs->round, "");
      }
      if (first) {
        for (std::size_t f = 0; f < sc_.faults.size(); ++f) {
          if (sc_.faults[f].round && *sc_.faults[f].round == rs->round) apply_fault(f);
        }
      }
    } else if (const auto* pl = std::get_if<wire::PeerList>(&m.body)) {
      once("peer-list", pl->round, std::to_string(pl->peers.size()) + " peers");
    } else if (const auto* sp = std::get_if<wire::SessionPaused>(&m.body)) {
      paused_ = true;
      once("paused", 0, sp->reason);
    } else if (std::holds_alternative<wire::Leave>(m.body)) {
      once("finished", 0, "");
    }
  }

  void check_gating() {
    if (coord_.phase(task_id_) == Phase::kTraining &&
        coord_.connected_count(task_id_) < sc_.task.min_participants) {
      violation("phase Training with " + std::to_string(coord_.connected_count(task_id_)) + " of " +
                std::to_string(sc_.task.min_participants) + " participants connected");
    }
  }

  void check_records() {
    const SessionSnapshot snap = coord_.snapshot(task_id_);
    while (seen_records_ < snap.rounds.size()) {
      const RoundRecord& rec = snap.rounds[seen_records_++];
      report_.aggregations.push_back(AggregationEvent{rec.round, rec.participants, rec.failed_exchanges, now_});
      log(decentralized_ ? "exchange-complete" : "aggregation", rec.round, 0,
          std::to_string(rec.participants.size()) + " participants");

      GlobalEval ge;
      ge.round = rec.round;
      ge.epoch = (rec.round + 1) * sc_.task.train.epochs_per_round - 1;
      const ParamVector* params = nullptr;
      if (!decentralized_) {
        params = &coord_.global_params(task_id_);
      } else {
        ClientId pick = 0;
        for (ClientId id : rec.participants) {
          const auto it = by_client_.find(id);
          if (it != by_client_.end() && inst_[it->second].alive) {
            pick = id;
            break;
          }
        }
        if (pick == 0 && !rec.participants.empty()) pick = rec.participants.front();
        const auto it = by_client_.find(pick);
        if (it != by_client_.end()) {
          params = &inst_[it->second].node->params();
          ge.evaluated_client = pick;
        }
      }
      if (params && !params->values.empty()) {
        const EvalResult r = evaluate(*params, test_);
        ge.loss = r.loss;
        ge.accuracy = r.accuracy;
      }
      report_.global_evals.push_back(ge);
    }
  }

  void schedule_coord_tick() {
    const auto d = coord_.next_deadline();
    if (!d) return;
    const TimeMs at = std::max(*d, now_);
    if (coord_tick_at_ && *coord_tick_at_ > now_ && *coord_tick_at_ <= at) return;
    coord_tick_at_ = at;
    push(Event{at, 0, EvKind::kCoordTick, 0, 0, 0, nullptr});
  }

  // ---- node side ----

  void node_actions(std::size_t index, std::vector<NodeAction> actions, TimeMs send_at) {
    for (NodeAction& a : actions) {
      if (auto* s = std::get_if<SendToServer>(&a)) {
        send_to_server(index, s->msg, send_at);
      } else {
        send_to_peer(index, std::get<SendToPeer>(a), send_at);
      }
    }
  }

  void send_to_server(std::size_t index, const wire::Message& msg, TimeMs send_at) {
    Instance& in = inst_[index];
    if (in.closed) return;
    const auto frame = std::make_shared<const std::vector<std::uint8_t>>(wire::encode_msg(msg));
    observe(node_name(index), "coordinator", *frame, msg);
    if (const auto* done = std::get_if<wire::ExchangeDone>(&msg.body); done && done->ok && sc_.task.secure_aggregation) {
      const std::size_t k = in.node->last_exchange_size();
      const std::size_t sent = in.node->shares_sent();
      const std::size_t received = in.node->shares_received();
      if (sent != k - 1 || received != k - 1) {
        violation("client " + std::to_string(in.node->client_id()) + " sent " + std::to_string(sent) +
                  " and received " + std::to_string(received) + " shares in a " + std::to_string(k) +
                  "-peer exchange");
      }
      out_.share_counts[{in.node->client_id(), done->round}] = {sent, received, k};
    }
    push(Event{arrival(node_ep(index), coord_ep(), send_at, delay_of(index)), 0, EvKind::kToCoordinator, index, 0, 0,
               frame});
  }

  void send_to_peer(std::size_t index, const SendToPeer& a, TimeMs send_at) {
    const ClientId from = inst_[index].node->client_id();
    const ClientId to = a.peer;
    const auto frame = std::make_shared<const std::vector<std::uint8_t>>(wire::encode_msg(a.msg));
    observe(endpoint_name(from), endpoint_name(to), *frame, a.msg);

    PeerLink& link = links_[{std::min(from, to), std::max(from, to)}];
    if (link.broken) {
      push(Event{send_at + sc_.latency_ms, 0, EvKind::kPeerFailure, index, to, 0, nullptr});
      return;
    }
    const auto target = by_client_.find(to);
    if (!link.established) {
      if (from > to) {
        link.held.emplace_back(send_at, frame);
        return;
      }
      ++report_.peer_dials;
      if (target == by_client_.end() || !inst_[target->second].alive) {
        // Three failed dial attempts, one latency apart.
        link.broken = true;
        push(Event{send_at + 3 * sc_.latency_ms, 0, EvKind::kPeerFailure, index, to, 0, nullptr});
        return;
      }
      link.established = true;
      const std::size_t dialer = index;
      for (auto& [held_at, held] : link.held) {
        const TimeMs t = std::max(held_at, send_at);
        push(Event{arrival(node_ep(target->second), node_ep(dialer), t, delay_of(target->second) + delay_of(dialer)),
                   0, EvKind::kToPeer, dialer, to, 0, held});
      }
      link.held.clear();
    }
    push(Event{arrival(node_ep(index), node_ep(target->second), send_at, delay_of(index) + delay_of(target->second)),
               0, EvKind::kToPeer, target->second, from, 0, frame});
  }

  void after_node(std::size_t index) {
    Instance& in = inst_[index];
    const ClientId id = in.node->client_id();
    if (id != 0 && !by_client_.count(id)) by_client_[id] = index;
    if (in.node->failed() && !failure_logged_.count(index)) {
      failure_logged_.insert(index);
      log("node-failed", 0, id, in.node->failure());
    }
    if ((in.node->finished() || in.node->failed()) && !in.closed) {
      in.closed = true;
      push(Event{arrival(node_ep(index), coord_ep(), std::max(now_, in.busy_until), delay_of(index)), 0,
                 EvKind::kCoordDisconnect, index, 0, 0, nullptr});
      return;
    }
    const auto d = in.node->next_deadline();
    if (!d) return;
    const TimeMs at = std::max(*d, std::max(now_, in.busy_until));
    if (in.tick_at && *in.tick_at > now_ && *in.tick_at <= at) return;
    in.tick_at = at;
    push(Event{at, 0, EvKind::kNodeTick, index, 0, 0, nullptr});
  }

  bool defer_if_busy(const Event& ev) {
    const Instance& in = inst_[ev.inst];
    if (now_ >= in.busy_until) return false;
    Event later = ev;
    later.at = in.busy_until;
    push(std::move(later));
    return true;
  }

  // ---- faults ----

  void apply_fault(std::size_t f) {
    const FaultEvent& fault = sc_.faults[f];
    const std::size_t slot = fault.client - 1;
    const std::size_t index = slot_instance_[slot];
    Instance& in = inst_[index];
    const std::string label = std::string(fault_kind_name(fault.kind)) + " slot " + std::to_string(fault.client);
    switch (fault.kind) {
      case FaultEvent::Kind::kDropOut: {
        if (!in.alive) {
          log("fault-skipped", 0, in.node->client_id(), label + " (already down)");
          return;
        }
        log("fault", 0, in.node->client_id(), label);
        in.alive = false;
        if (!in.closed) {
          in.closed = true;
          push(Event{arrival(node_ep(index), coord_ep(), now_, delay_of(index)), 0, EvKind::kCoordDisconnect, index,
                     0, 0, nullptr});
        }
        const ClientId id = in.node->client_id();
        for (auto& [key, link] : links_) {
          if (key.first != id && key.second != id) continue;
          const ClientId other = key.first == id ? key.second : key.first;
          if (link.established) {
            const auto it = by_client_.find(other);
            if (it != by_client_.end() && inst_[it->second].alive) {
              push(Event{now_ + sc_.latency_ms, 0, EvKind::kPeerFailure, it->second, id, 0, nullptr});
            }
            link.established = false;
            link.broken = true;
          }
          if (id > other) link.held.clear();
        }
        return;
      }
      case FaultEvent::Kind::kRejoin:
        if (in.alive) {
          log("fault-skipped", 0, in.node->client_id(), label + " (still connected)");
          return;
        }
        log("fault", 0, 0, label);
        spawn(slot);
        return;
      case FaultEvent::Kind::kDelay:
        log("fault", 0, in.node->client_id(), label + " " + std::to_string(fault.delay_ms) + "ms");
        slot_delay_[slot] = fault.delay_ms;
        return;
    }
  }

  // ---- dispatch ----

  void dispatch(const Event& ev) {
    switch (ev.kind) {
      case EvKind::kToCoordinator: {
        const wire::Message msg = wire::decode_msg(*ev.frame);
        ++report_.coordinator_inbound[std::string(wire::type_name(msg))];
        if (decentralized_ && wire::carries_model_payload(msg)) {
          ++report_.coordinator_model_payloads;
          violation("coordinator received " + std::string(wire::type_name(msg)) +
                    " with a model payload in a decentralized session");
        }
        coord_step(coord_.on_message(conn_of(ev.inst), msg, now_));
        return;
      }
      case EvKind::kCoordDisconnect:
        coord_step(coord_.on_disconnect(conn_of(ev.inst), now_));
        return;
      case EvKind::kCoordTick:
        coord_step(coord_.on_tick(now_));
        return;
      case EvKind::kFault:
        apply_fault(ev.fault);
        return;
      case EvKind::kToNode: {
        Instance& in = inst_[ev.inst];
        if (!in.alive) return;
        if (defer_if_busy(ev)) return;
        const wire::Message msg = wire::decode_msg(*ev.frame);
        TimeMs send_at = now_;
        if (std::holds_alternative<wire::RoundStart>(msg.body) && in.node->task()) {
          send_at = now_ + sc_.train_ms_per_epoch * static_cast<TimeMs>(in.node->task()->train.epochs_per_round);
        }
        auto actions = in.node->on_server_message(msg, now_);
        in.busy_until = std::max(in.busy_until, send_at);
        node_actions(ev.inst, std::move(actions), send_at);
        after_node(ev.inst);
        return;
      }
      case EvKind::kToPeer: {
        Instance& in = inst_[ev.inst];
        if (!in.alive) return;
        if (defer_if_busy(ev)) return;
        const wire::Message msg = wire::decode_msg(*ev.frame);
        node_actions(ev.inst, in.node->on_peer_message(ev.peer, msg, now_), now_);
        after_node(ev.inst);
        return;
      }
      case EvKind::kPeerFailure: {
        Instance& in = inst_[ev.inst];
        if (!in.alive) return;
        if (defer_if_busy(ev)) return;
        node_actions(ev.inst, in.node->on_peer_failure(ev.peer, now_), now_);
        after_node(ev.inst);
        return;
      }
      case EvKind::kNodeTick: {
        Instance& in = inst_[ev.inst];
        if (!in.alive) return;
        if (defer_if_busy(ev)) return;
        node_actions(ev.inst, in.node->on_tick(now_), now_);
        after_node(ev.inst);
        return;
      }
    }
  }

  bool done() const {
    if (coord_.phase(task_id_) != Phase::kFinished) return false;
    return std::all_of(inst_.begin(), inst_.end(), [](const Instance& in) {
      return !in.alive || in.node->finished() || in.node->failed();
    });
  }

  RunOutput finish() {
    check_records();
    report_.task_id = task_id_;
    report_.scheme = sc_.task.scheme;
    report_.secure_aggregation = sc_.task.secure_aggregation;
    report_.num_clients = sc_.num_clients;
    report_.total_rounds = sc_.task.total_rounds;
    report_.epochs_per_round = sc_.task.train.epochs_per_round;
    report_.seed = sc_.seed;
    const Phase phase = coord_.phase(task_id_);
    report_.finished = phase == Phase::kFinished;
    report_.final_phase = std::string(phase_name(phase));
    report_.completed_rounds = report_.aggregations.size();
    report_.end_ms = now_;
    if (report_.global_evals.size() != report_.aggregations.size()) {
      violation("held-out evaluations do not match completed rounds");
    }

    for (const Instance& in : inst_) {
      const ClientId id = in.node->client_id();
      if (id == 0) continue;
      report_.clients.push_back(ClientSeries{id, in.slot + 1, in.node->metrics()});
      out_.client_params[id] = in.node->params();
    }
    std::sort(report_.clients.begin(), report_.clients.end(),
              [](const ClientSeries& a, const ClientSeries& b) { return a.client_id < b.client_id; });

    if (!decentralized_) {
      out_.final_params = coord_.global_params(task_id_);
    } else {
      ClientId pick = 0;
      if (!report_.global_evals.empty()) pick = report_.global_evals.back().evaluated_client;
      const auto it = out_.client_params.find(pick);
      out_.final_params = it != out_.client_params.end() ? it->second : init_params(sc_.task.model);
    }
    report_.final_params_digest = sha256_hex(encode_checkpoint(out_.final_params));
    out_.report = std::move(report_);
    return std::move(out_);
  }

  const Scenario& sc_;
  const RunOptions& options_;
  Coordinator coord_;
  std::string task_id_;
  bool decentralized_ = false;
  std::vector<Dataset> client_data_;
  Dataset test_;
  std::vector<Instance> inst_;
  std::vector<std::size_t> slot_instance_;
  std::vector<TimeMs> slot_delay_;
  std::map<ClientId, std::size_t> by_client_;
  std::map<std::pair<std::uint64_t, std::uint64_t>, TimeMs> link_last_;
  std::map<std::pair<ClientId, ClientId>, PeerLink> links_;
  std::priority_queue<Event, std::vector<Event>, Later> queue_;
  std::uint64_t seq_ = 0;
  TimeMs now_ = 0;
  std::optional<TimeMs> coord_tick_at_;
  std::set<std::uint64_t> rounds_started_;
  bool paused_ = false;
  std::set<std::size_t> failure_logged_;
  std::size_t seen_records_ = 0;
  ExperimentReport report_;
  RunOutput out_;
};

}  // namespace

RunOutput run_scenario_full(const Scenario& s, const RunOptions& options) {
  Sim sim(s, options);
  return sim.run();
}

ExperimentReport run_scenario(const Scenario& s) { return run_scenario_full(s).report; }

// ---- report I/O ----

nlohmann::ordered_json to_json(const ExperimentReport& r) {
  using oj = nlohmann::ordered_json;
  oj j;
  j["schemaVersion"] = r.schema_version;
  j["taskId"] = r.task_id;
  j["scheme"] = training_scheme_name(r.scheme);
  j["secureAggregation"] = r.secure_aggregation;
  j["numClients"] = r.num_clients;
  j["totalRounds"] = r.total_rounds;
  j["epochsPerRound"] = r.epochs_per_round;
  j["seed"] = r.seed;
  j["finished"] = r.finished;
  j["finalPhase"] = r.final_phase;
  j["completedRounds"] = r.completed_rounds;
  j["endMs"] = r.end_ms;
  oj aggs = oj::array();
  for (const auto& a : r.aggregations) {
    aggs.push_back(oj{{"round", a.round},
                      {"participants", a.participants},
                      {"failedExchanges", a.failed_exchanges},
                      {"atMs", a.at_ms}});
  }
  j["aggregations"] = std::move(aggs);
  oj evals = oj::array();
  for (const auto& g : r.global_evals) {
    evals.push_back(oj{{"round", g.round},
                       {"epoch", g.epoch},
                       {"evaluatedClient", g.evaluated_client},
                       {"loss", g.loss},
                       {"accuracy", g.accuracy}});
  }
  j["globalEvals"] = std::move(evals);
  oj clients = oj::array();
  for (const auto& c : r.clients) {
    oj series = oj::array();
    for (const auto& m : c.metrics) {
      series.push_back(oj{{"round", m.round}, {"epoch", m.epoch}, {"loss", m.loss}, {"accuracy", m.accuracy}});
    }
    clients.push_back(oj{{"clientId", c.client_id}, {"slot", c.slot}, {"metrics", std::move(series)}});
  }
  j["clients"] = std::move(clients);
  j["messageCounts"] = r.message_counts;
  j["coordinatorInbound"] = r.coordinator_inbound;
  j["coordinatorOutbound"] = r.coordinator_outbound;
  j["coordinatorModelPayloads"] = r.coordinator_model_payloads;
  j["peerDials"] = r.peer_dials;
  j["finalParamsDigest"] = r.final_params_digest;
  oj timeline = oj::array();
  for (const auto& t : r.timeline) {
    timeline.push_back(oj{{"atMs", t.at_ms}, {"kind", t.kind}, {"round", t.round}, {"client", t.client}, {"detail", t.detail}});
  }
  j["timeline"] = std::move(timeline);
  return j;
}

ExperimentReport report_from_json(const nlohmann::json& j) {
  try {
    ExperimentReport r;
    r.schema_version = j.at("schemaVersion").get<int>();
    if (r.schema_version != kReportSchemaVersion) {
      throw Error(ErrorCode::kParse, "unsupported report schemaVersion " + std::to_string(r.schema_version));
    }
    r.task_id = j.at("taskId").get<std::string>();
    r.scheme = j.at("scheme").get<std::string>() == "decentralized" ? TrainingScheme::kDecentralized
                                                                    : TrainingScheme::kFederated;
    r.secure_aggregation = j.at("secureAggregation").get<bool>();
    r.num_clients = j.at("numClients").get<std::uint64_t>();
    r.total_rounds = j.at("totalRounds").get<std::uint64_t>();
    r.epochs_per_round = j.at("epochsPerRound").get<std::uint64_t>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.finished = j.at("finished").get<bool>();
    r.final_phase = j.at("finalPhase").get<std::string>();
    r.completed_rounds = j.at("completedRounds").get<std::uint64_t>();
    r.end_ms = j.at("endMs").get<TimeMs>();
    for (const auto& a : j.at("aggregations")) {
      r.aggregations.push_back(AggregationEvent{a.at("round").get<std::uint64_t>(),
                                                a.at("participants").get<std::vector<ClientId>>(),
                                                a.at("failedExchanges").get<std::uint64_t>(),
                                                a.at("atMs").get<TimeMs>()});
    }
    for (const auto& g : j.at("globalEvals")) {
      r.global_evals.push_back(GlobalEval{g.at("round").get<std::uint64_t>(), g.at("epoch").get<std::uint64_t>(),
                                          g.at("evaluatedClient").get<ClientId>(), g.at("loss").get<double>(),
                                          g.at("accuracy").get<double>()});
    }
    for (const auto& c : j.at("clients")) {
      ClientSeries cs;
      cs.client_id = c.at("clientId").get<ClientId>();
      cs.slot = c.at("slot").get<std::uint64_t>();
      for (const auto& m : c.at("metrics")) {
        cs.metrics.push_back(LocalMetric{m.at("round").get<std::uint64_t>(), m.at("epoch").get<std::uint64_t>(),
                                         m.at("loss").get<double>(), m.at("accuracy").get<double>()});
      }
      r.clients.push_back(std::move(cs));
    }
    r.message_counts = j.at("messageCounts").get<std::map<std::string, std::uint64_t>>();
    r.coordinator_inbound = j.at("coordinatorInbound").get<std::map<std::string, std::uint64_t>>();
    r.coordinator_outbound = j.at("coordinatorOutbound").get<std::map<std::string, std::uint64_t>>();
    r.coordinator_model_payloads = j.at("coordinatorModelPayloads").get<std::uint64_t>();
    r.peer_dials = j.at("peerDials").get<std::uint64_t>();
    r.final_params_digest = j.at("finalParamsDigest").get<std::string>();
    for (const auto& t : j.at("timeline")) {
      r.timeline.push_back(TimelineEntry{t.at("atMs").get<TimeMs>(), t.at("kind").get<std::string>(),
                                         t.at("round").get<std::uint64_t>(), t.at("client").get<ClientId>(),
                                         t.at("detail").get<std::string>()});
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kParse, std::string("report: ") + e.what());
  }
}

std::string report_csv(const ExperimentReport& r) {
  std::ostringstream os;
  os << "kind,round,epoch,client,loss,accuracy\n";
  for (const auto& c : r.clients) {
    for (const auto& m : c.metrics) {
      os << "local," << m.round << ',' << m.epoch << ',' << c.client_id << ',' << fmt_double(m.loss) << ','
         << fmt_double(m.accuracy) << '\n';
    }
  }
  for (const auto& g : r.global_evals) {
    os << "global," << g.round << ',' << g.epoch << ',' << g.evaluated_client << ',' << fmt_double(g.loss) << ','
       << fmt_double(g.accuracy) << '\n';
  }
  return os.str();
}

void export_report(const ExperimentReport& r, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::kIo, "cannot create '" + dir.string() + "': " + ec.message());
  const auto write = [](const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::kIo, "cannot write '" + p.string() + "'");
    out << text;
    if (!out) throw Error(ErrorCode::kIo, "write failed for '" + p.string() + "'");
  };
  write(dir / "report.json", to_json(r).dump(2) + "\n");
  write(dir / "metrics.csv", report_csv(r));
}

}  // namespace disco
