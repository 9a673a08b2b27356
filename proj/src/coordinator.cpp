#include "disco/coordinator.hpp"

#include <algorithm>
#include <cmath>

namespace disco {

std::string_view phase_name(Phase p) noexcept {
  switch (p) {
    case Phase::kWaitingForParticipants: return "WaitingForParticipants";
    case Phase::kTraining: return "Training";
    case Phase::kAggregating: return "Aggregating";
    case Phase::kPeerExchange: return "PeerExchange";
    case Phase::kFinished: return "Finished";
  }
  return "Unknown";
}

nlohmann::ordered_json SessionSnapshot::to_json() const {
  nlohmann::ordered_json j;
  j["taskId"] = task_id;
  j["title"] = title;
  j["scheme"] = training_scheme_name(scheme);
  j["secureAggregation"] = secure_aggregation;
  j["phase"] = phase_name(phase);
  j["currentRound"] = current_round;
  j["totalRounds"] = total_rounds;
  j["epochsPerRound"] = epochs_per_round;
  j["participantCount"] = participant_count;
  j["minParticipants"] = min_participants;
  j["pauseReason"] = pause_reason;
  nlohmann::ordered_json series_json = nlohmann::ordered_json::object();
  for (const auto& [client, entries] : series) {
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (const auto& e : entries) {
      arr.push_back({{"round", e.round}, {"epoch", e.epoch}, {"loss", e.loss}, {"accuracy", e.accuracy}});
    }
    series_json[std::to_string(client)] = std::move(arr);
  }
  j["series"] = std::move(series_json);
  nlohmann::ordered_json rounds_json = nlohmann::ordered_json::array();
  for (const auto& r : rounds) {
    rounds_json.push_back({{"round", r.round},
                           {"participants", r.participants},
                           {"scheme", scheme_name(r.scheme)},
                           {"weighting", weighting_name(r.weighting)},
                           {"failedExchanges", r.failed_exchanges}});
  }
  j["rounds"] = std::move(rounds_json);
  return j;
}

namespace {

struct ClientRecord {
  ConnId conn = 0;
  TimeMs last_seen = 0;
  std::string address;
  bool connected = true;
};

struct RoundState {
  std::uint64_t round = 0;
  bool active = false;
  TimeMs deadline = 0;
  std::set<ClientId> expected;
  std::map<ClientId, Contribution> uploads;  // federated
  std::set<ClientId> ready;                   // decentralized
  std::set<ClientId> exchange;                // dispatched peer list
  std::map<ClientId, bool> done;              // exchange reports
  bool exchange_open = false;
  TimeMs exchange_deadline = 0;
};

struct Session {
  TaskSpec spec;
  ParamVector global;
  Phase phase = Phase::kWaitingForParticipants;
  std::uint64_t current_round = 0;
  std::map<ClientId, ClientRecord> clients;
  ClientId next_id = 1;
  RoundState round;
  bool manual_pause = false;
  std::string pause_reason;
  std::set<ClientId> carried_ready;
  std::map<std::pair<ClientId, std::uint64_t>, MetricEntry> metrics;
  std::vector<RoundRecord> history;

  std::uint64_t connected() const {
    return static_cast<std::uint64_t>(std::count_if(
        clients.begin(), clients.end(), [](const auto& kv) { return kv.second.connected; }));
  }
  std::uint64_t required() const {
    return spec.scheme == TrainingScheme::kDecentralized
               ? std::max(spec.min_participants, spec.ready_threshold)
               : spec.min_participants;
  }
  TimeMs deadline_ms() const {
    return static_cast<TimeMs>(std::llround(spec.round_deadline_seconds * 1000.0));
  }
};

std::string peer_address_of(const wire::JoinTask& join) {
  constexpr std::string_view kPrefix = "listen=";
  for (const auto& cap : join.capabilities) {
    if (cap.rfind(kPrefix, 0) == 0) return cap.substr(kPrefix.size());
  }
  return {};
}

nlohmann::ordered_json round_line(const RoundRecord& r) {
  nlohmann::ordered_json j;
  j["kind"] = "round";
  j["round"] = r.round;
  j["participants"] = r.participants;
  j["scheme"] = scheme_name(r.scheme);
  j["weighting"] = weighting_name(r.weighting);
  j["failedExchanges"] = r.failed_exchanges;
  j["at"] = r.completed_at;
  return j;
}

}  // namespace

struct Coordinator::Impl {
  CoordinatorConfig config;
  std::optional<TaskStore> store;
  std::map<std::string, Session> sessions;
  std::map<ConnId, std::pair<std::string, ClientId>> conns;

  explicit Impl(CoordinatorConfig cfg) : config(std::move(cfg)) {
    if (config.data_dir) {
      store.emplace(*config.data_dir);
      restore();
    }
  }

  Session& session(const std::string& task_id) {
    const auto it = sessions.find(task_id);
    if (it == sessions.end()) throw Error(ErrorCode::kUnknownTask, "unknown task '" + task_id + "'");
    return it->second;
  }
  const Session& session(const std::string& task_id) const {
    return const_cast<Impl*>(this)->session(task_id);
  }

  void restore() {
    for (const TaskSpec& spec : store->load_specs()) {
      Session s;
      s.spec = spec;
      s.global = init_params(spec.model);
      std::string checkpoint;
      for (const auto& line : store->read_journal(spec.task_id)) {
        const auto kind = line.value("kind", "");
        if (kind == "round") {
          RoundRecord r;
          r.round = line.at("round").get<std::uint64_t>();
          r.participants = line.at("participants").get<std::vector<ClientId>>();
          r.scheme = line.value("scheme", "mean") == "mean" ? AggregationScheme::kMean
                                                            : AggregationScheme::kSecureSum;
          r.weighting = line.value("weighting", "sample-count") == "uniform" ? Weighting::kUniform
                                                                             : Weighting::kSampleCount;
          r.failed_exchanges = line.value("failedExchanges", std::uint64_t{0});
          r.completed_at = line.value("at", TimeMs{0});
          s.history.push_back(r);
          s.current_round = r.round + 1;
          checkpoint = line.value("checkpoint", "");
        } else if (kind == "metric") {
          MetricEntry m{line.at("client").get<ClientId>(), line.at("round").get<std::uint64_t>(),
                        line.at("epoch").get<std::uint64_t>(), line.at("loss").get<double>(),
                        line.at("accuracy").get<double>()};
          s.metrics[{m.client_id, m.epoch}] = m;
          s.next_id = std::max(s.next_id, m.client_id + 1);
        }
      }
      for (const auto& r : s.history) {
        for (ClientId c : r.participants) s.next_id = std::max(s.next_id, c + 1);
      }
      if (!checkpoint.empty()) {
        if (auto g = store->load_global(spec.task_id, checkpoint)) s.global = std::move(*g);
      }
      if (s.current_round >= spec.total_rounds) s.phase = Phase::kFinished;
      sessions.emplace(spec.task_id, std::move(s));
    }
  }

  static void send(std::vector<Outbound>& out, const Session& s, ConnId conn, wire::Body body) {
    out.push_back({conn, wire::Message{s.spec.task_id, 0, std::move(body)}});
  }
  static void broadcast(std::vector<Outbound>& out, const Session& s, const wire::Body& body) {
    for (const auto& [id, c] : s.clients) {
      if (c.connected) send(out, s, c.conn, body);
    }
  }

  void pause_session(Session& s, const std::string& reason, std::vector<Outbound>& out) {
    s.phase = Phase::kWaitingForParticipants;
    s.pause_reason = reason;
    s.round.active = false;
    s.round.uploads.clear();
    s.round.ready.clear();
    s.round.expected.clear();
    broadcast(out, s, wire::SessionPaused{reason});
  }

  void maybe_resume(Session& s, TimeMs now, std::vector<Outbound>& out) {
    if (s.phase != Phase::kWaitingForParticipants || s.manual_pause) return;
    if (s.connected() < s.required()) {
      s.pause_reason = "insufficient participants (" + std::to_string(s.connected()) + " of " +
                       std::to_string(s.required()) + ")";
      return;
    }
    start_round(s, now, out);
  }

  void start_round(Session& s, TimeMs now, std::vector<Outbound>& out) {
    s.phase = Phase::kTraining;
    s.pause_reason.clear();
    RoundState fresh;
    fresh.round = s.current_round;
    fresh.active = true;
    fresh.deadline = now + s.deadline_ms();
    if (s.round.exchange_open) {
      // A paused session can still be finishing an earlier exchange.
      fresh.exchange = s.round.exchange;
      fresh.done = s.round.done;
      fresh.exchange_open = true;
      fresh.exchange_deadline = s.round.exchange_deadline;
    }
    s.round = std::move(fresh);
    for (const auto& [id, c] : s.clients) {
      if (c.connected) s.round.expected.insert(id);
    }
    if (s.spec.scheme == TrainingScheme::kFederated) {
      broadcast(out, s, wire::RoundStart{s.current_round, s.global});
      return;
    }
    for (ClientId id : s.carried_ready) {
      if (s.clients.count(id) && s.clients.at(id).connected) s.round.ready.insert(id);
    }
    s.carried_ready.clear();
    for (const auto& [id, c] : s.clients) {
      if (c.connected && !s.round.ready.count(id)) send(out, s, c.conn, wire::RoundStart{s.current_round, std::nullopt});
    }
    try_dispatch(s, now, out);
  }

  void finish_federated(Session& s, TimeMs now, std::vector<Outbound>& out) {
    const std::uint64_t got = s.round.uploads.size();
    if (got < s.spec.min_participants) {
      pause_session(s,
                    "insufficient participants (" + std::to_string(got) + " of " +
                        std::to_string(s.spec.min_participants) + " uploads by the round deadline)",
                    out);
      return;
    }
    s.phase = Phase::kAggregating;
    std::vector<Contribution> contribs;
    contribs.reserve(got);
    for (auto& [id, c] : s.round.uploads) contribs.push_back(std::move(c));
    const AggregationResult result = fedavg(contribs, s.spec.weighting);
    s.global = add(s.global, result.global_update);

    RoundRecord rec{s.current_round, result.participants, result.scheme, result.weighting, 0, now};
    if (store) store->commit_round(s.spec.task_id, rec.round, round_line(rec), &s.global);
    s.history.push_back(rec);
    s.round.active = false;
    s.round.uploads.clear();
    broadcast(out, s, wire::GlobalUpdate{s.current_round, s.global, got});
    advance(s, now, out);
  }

  void advance(Session& s, TimeMs now, std::vector<Outbound>& out) {
    ++s.current_round;
    if (s.current_round >= s.spec.total_rounds) {
      s.phase = Phase::kFinished;
      s.round.active = false;
      broadcast(out, s, wire::Leave{});
      return;
    }
    if (s.phase == Phase::kWaitingForParticipants) return;
    start_round(s, now, out);
  }

  void check_federated_complete(Session& s, TimeMs now, std::vector<Outbound>& out) {
    if (s.phase != Phase::kTraining || s.spec.scheme != TrainingScheme::kFederated) return;
    const bool all_in = std::all_of(s.round.expected.begin(), s.round.expected.end(),
                                    [&](ClientId id) { return s.round.uploads.count(id) > 0; });
    if (all_in && !s.round.uploads.empty()) finish_federated(s, now, out);
  }

  void try_dispatch(Session& s, TimeMs now, std::vector<Outbound>& out) {
    if (s.phase != Phase::kTraining || s.round.exchange_open) return;
    if (s.round.ready.size() < s.spec.ready_threshold) return;
    wire::PeerList list{s.current_round, {}};
    for (ClientId id : s.round.ready) list.peers.push_back({id, s.clients.at(id).address});
    s.round.exchange = s.round.ready;
    s.round.done.clear();
    s.round.exchange_open = true;
    s.round.exchange_deadline = now + s.deadline_ms();
    s.phase = Phase::kPeerExchange;
    for (ClientId id : s.round.exchange) send(out, s, s.clients.at(id).conn, list);
  }

  void check_exchange_complete(Session& s, TimeMs now, std::vector<Outbound>& out, bool deadline) {
    if (!s.round.exchange_open) return;
    const bool all_reported = std::all_of(s.round.exchange.begin(), s.round.exchange.end(), [&](ClientId id) {
      return s.round.done.count(id) > 0 || !s.clients.at(id).connected;
    });
    if (!all_reported && !deadline) return;
    RoundRecord rec;
    rec.round = s.current_round;
    rec.participants.assign(s.round.exchange.begin(), s.round.exchange.end());
    rec.scheme = s.spec.secure_aggregation ? AggregationScheme::kSecureSum : AggregationScheme::kMean;
    rec.weighting = s.spec.weighting;
    for (ClientId id : s.round.exchange) {
      const auto it = s.round.done.find(id);
      if (it == s.round.done.end() || !it->second) ++rec.failed_exchanges;
    }
    rec.completed_at = now;
    if (store) store->commit_round(s.spec.task_id, rec.round, round_line(rec), nullptr);
    s.history.push_back(rec);
    s.round.exchange_open = false;
    s.round.exchange.clear();
    s.round.done.clear();
    s.round.active = false;
    advance(s, now, out);
  }

  void depart(Session& s, ClientId id, TimeMs now, std::vector<Outbound>& out) {
    ClientRecord& c = s.clients.at(id);
    if (!c.connected) return;
    c.connected = false;
    conns.erase(c.conn);
    if (s.phase == Phase::kFinished) return;
    if (!s.round.uploads.count(id)) s.round.expected.erase(id);
    s.round.ready.erase(id);
    s.carried_ready.erase(id);
    if (s.phase != Phase::kWaitingForParticipants && s.connected() < s.spec.min_participants) {
      pause_session(s,
                    "insufficient participants (" + std::to_string(s.connected()) + " of " +
                        std::to_string(s.spec.min_participants) + " connected)",
                    out);
    }
    check_federated_complete(s, now, out);
    check_exchange_complete(s, now, out, false);
  }

  void admit(ConnId conn, const wire::Message& msg, const wire::JoinTask& join, TimeMs now,
             std::vector<Outbound>& out) {
    const auto it = sessions.find(msg.task_id);
    if (it == sessions.end()) {
      out.push_back({conn, wire::Message{msg.task_id, 0, wire::ErrorMsg{"unknown-task", "unknown task '" + msg.task_id + "'"}}});
      return;
    }
    Session& s = it->second;
    if (s.phase == Phase::kFinished) {
      send(out, s, conn, wire::ErrorMsg{"session-finished", "session '" + msg.task_id + "' has finished"});
      return;
    }
    if (conns.count(conn)) {
      send(out, s, conn, wire::ErrorMsg{"already-joined", "connection already holds a client id"});
      return;
    }
    const ClientId id = s.next_id++;
    s.clients[id] = ClientRecord{conn, now, peer_address_of(join), true};
    conns[conn] = {s.spec.task_id, id};
    send(out, s, conn, wire::Assigned{id, s.spec});
    if (s.phase == Phase::kWaitingForParticipants) {
      maybe_resume(s, now, out);
    } else if (s.phase == Phase::kTraining) {
      // Late joiners enter the open round; the deadline still bounds it.
      s.round.expected.insert(id);
      if (s.spec.scheme == TrainingScheme::kDecentralized) {
        send(out, s, conn, wire::RoundStart{s.current_round, std::nullopt});
      } else {
        send(out, s, conn, wire::RoundStart{s.current_round, s.global});
      }
    }
    // Anyone else waits for the next RoundStart.
  }

  void handle(Session& s, ClientId id, ConnId conn, const wire::Message& msg, TimeMs now,
              std::vector<Outbound>& out) {
    s.clients.at(id).last_seen = now;
    const bool decentralized = s.spec.scheme == TrainingScheme::kDecentralized;
    std::visit(
        [&](const auto& body) {
          using T = std::decay_t<decltype(body)>;
          if constexpr (std::is_same_v<T, wire::Heartbeat>) {
          } else if constexpr (std::is_same_v<T, wire::Leave>) {
            depart(s, id, now, out);
          } else if constexpr (std::is_same_v<T, wire::MetricsReport>) {
            if (!std::isfinite(body.loss) || !std::isfinite(body.accuracy)) {
              send(out, s, conn, wire::ErrorMsg{"non-finite", "metrics must be finite"});
              return;
            }
            record(s, id, body);
          } else if constexpr (std::is_same_v<T, wire::UpdateUpload>) {
            if (decentralized) {
              send(out, s, conn, wire::ErrorMsg{"not-accepted", "decentralized sessions never upload parameters"});
              return;
            }
            on_upload(s, id, conn, body, now, out);
          } else if constexpr (std::is_same_v<T, wire::ReadySignal>) {
            if (!decentralized) {
              send(out, s, conn, wire::ErrorMsg{"not-accepted", "ReadySignal is for decentralized sessions"});
              return;
            }
            if (s.phase == Phase::kTraining && !s.round.exchange.count(id)) {
              s.round.ready.insert(id);
              try_dispatch(s, now, out);
            } else if (s.phase != Phase::kFinished) {
              s.carried_ready.insert(id);  // rolls to the next dispatch
            }
          } else if constexpr (std::is_same_v<T, wire::ExchangeDone>) {
            if (s.round.exchange_open && body.round == s.current_round && s.round.exchange.count(id)) {
              s.round.done[id] = body.ok;
              check_exchange_complete(s, now, out, false);
            }
          } else {
            send(out, s, conn,
                 wire::ErrorMsg{"unexpected", std::string(wire::type_name(msg)) + " is not accepted by the coordinator"});
          }
        },
        msg.body);
  }

  void on_upload(Session& s, ClientId id, ConnId conn, const wire::UpdateUpload& up, TimeMs now,
                 std::vector<Outbound>& out) {
    if (s.phase != Phase::kTraining || up.round != s.current_round) {
      const std::string why = up.round == s.current_round && s.phase == Phase::kWaitingForParticipants
                                  ? " was interrupted by a pause; it restarts on resume"
                                  : " is closed";
      send(out, s, conn, wire::ErrorMsg{"late-update", "round " + std::to_string(up.round) + why + "; update dropped"});
      return;
    }
    if (!s.round.expected.count(id)) {
      send(out, s, conn, wire::ErrorMsg{"not-in-round", "client joined after round start; update dropped"});
      return;
    }
    if (s.round.uploads.count(id)) return;
    if (!up.payload.same_shape(s.global)) {
      send(out, s, conn, wire::ErrorMsg{"manifest-mismatch", "update does not match the task model"});
      return;
    }
    for (double v : up.payload.values) {
      if (!std::isfinite(v)) {
        send(out, s, conn, wire::ErrorMsg{"non-finite", "update contains non-finite values"});
        return;
      }
    }
    Contribution c;
    c.client_id = id;
    c.round = up.round;
    c.payload = up.payload;
    if (up.sample_count > 0) c.sample_count = up.sample_count;
    s.round.uploads.emplace(id, std::move(c));
    check_federated_complete(s, now, out);
  }

  void record(Session& s, ClientId id, const wire::MetricsReport& r) {
    MetricEntry m{id, r.round, r.epoch, r.loss, r.accuracy};
    s.metrics[{id, r.epoch}] = m;
    if (store) {
      nlohmann::ordered_json line;
      line["kind"] = "metric";
      line["client"] = id;
      line["round"] = r.round;
      line["epoch"] = r.epoch;
      line["loss"] = r.loss;
      line["accuracy"] = r.accuracy;
      store->append(s.spec.task_id, line);
    }
  }

  SessionSnapshot make_snapshot(const Session& s) const {
    SessionSnapshot snap;
    snap.task_id = s.spec.task_id;
    snap.title = s.spec.title;
    snap.scheme = s.spec.scheme;
    snap.secure_aggregation = s.spec.secure_aggregation;
    snap.phase = s.phase;
    snap.current_round = s.current_round;
    snap.total_rounds = s.spec.total_rounds;
    snap.epochs_per_round = s.spec.train.epochs_per_round;
    snap.participant_count = s.connected();
    snap.min_participants = s.spec.min_participants;
    snap.pause_reason = s.pause_reason;
    for (const auto& [key, m] : s.metrics) snap.series[key.first].push_back(m);
    snap.rounds = s.history;
    return snap;
  }
};

Coordinator::Coordinator(CoordinatorConfig config) : impl_(std::make_unique<Impl>(std::move(config))) {}
Coordinator::~Coordinator() = default;
Coordinator::Coordinator(Coordinator&&) noexcept = default;
Coordinator& Coordinator::operator=(Coordinator&&) noexcept = default;

std::string Coordinator::create_task(const TaskSpec& spec) {
  spec.validate();
  if (impl_->sessions.count(spec.task_id)) {
    throw Error(ErrorCode::kDuplicateTask, "task '" + spec.task_id + "' already exists");
  }
  Session s;
  s.spec = spec;
  s.global = init_params(spec.model);
  if (impl_->store) impl_->store->save_spec(spec);
  impl_->sessions.emplace(spec.task_id, std::move(s));
  return spec.task_id;
}

std::vector<SessionSnapshot> Coordinator::list_tasks() const {
  std::vector<SessionSnapshot> out;
  for (const auto& [id, s] : impl_->sessions) {
    SessionSnapshot snap = impl_->make_snapshot(s);
    snap.series.clear();
    out.push_back(std::move(snap));
  }
  return out;
}

SessionSnapshot Coordinator::snapshot(const std::string& task_id) const {
  return impl_->make_snapshot(impl_->session(task_id));
}

const TaskSpec& Coordinator::task(const std::string& task_id) const { return impl_->session(task_id).spec; }

const ParamVector& Coordinator::global_params(const std::string& task_id) const {
  return impl_->session(task_id).global;
}

Phase Coordinator::phase(const std::string& task_id) const { return impl_->session(task_id).phase; }

std::uint64_t Coordinator::connected_count(const std::string& task_id) const {
  return impl_->session(task_id).connected();
}

std::vector<Outbound> Coordinator::on_message(ConnId conn, const wire::Message& msg, TimeMs now) {
  std::vector<Outbound> out;
  if (const auto* join = std::get_if<wire::JoinTask>(&msg.body)) {
    impl_->admit(conn, msg, *join, now, out);
    return out;
  }
  const auto it = impl_->conns.find(conn);
  if (it == impl_->conns.end()) {
    out.push_back({conn, wire::Message{msg.task_id, 0, wire::ErrorMsg{"not-joined", "send JoinTask first"}}});
    return out;
  }
  const auto [task_id, id] = it->second;
  Session& s = impl_->session(task_id);
  if (msg.task_id != task_id || (msg.sender != 0 && msg.sender != id)) {
    Impl::send(out, s, conn, wire::ErrorMsg{"identity-mismatch", "taskId or sender does not match this connection"});
    return out;
  }
  impl_->handle(s, id, conn, msg, now, out);
  return out;
}

std::vector<Outbound> Coordinator::on_disconnect(ConnId conn, TimeMs now) {
  std::vector<Outbound> out;
  const auto it = impl_->conns.find(conn);
  if (it == impl_->conns.end()) return out;
  const auto [task_id, id] = it->second;
  impl_->depart(impl_->session(task_id), id, now, out);
  return out;
}

std::vector<Outbound> Coordinator::on_tick(TimeMs now) {
  std::vector<Outbound> out;
  const TimeMs silence = impl_->config.heartbeat_interval_ms * impl_->config.missed_heartbeats;
  for (auto& [task_id, s] : impl_->sessions) {
    std::vector<ClientId> expired;
    for (const auto& [id, c] : s.clients) {
      if (c.connected && now - c.last_seen > silence) expired.push_back(id);
    }
    for (ClientId id : expired) impl_->depart(s, id, now, out);

    if (s.round.exchange_open && now >= s.round.exchange_deadline) {
      impl_->check_exchange_complete(s, now, out, true);
    }
    if (s.phase == Phase::kTraining && s.round.active && now >= s.round.deadline) {
      if (s.spec.scheme == TrainingScheme::kFederated) {
        impl_->finish_federated(s, now, out);
      } else if (!s.round.exchange_open) {
        impl_->pause_session(s,
                             "insufficient ready peers (" + std::to_string(s.round.ready.size()) + " of " +
                                 std::to_string(s.spec.ready_threshold) + " by the round deadline)",
                             out);
      }
    }
  }
  return out;
}

std::optional<TimeMs> Coordinator::next_deadline() const {
  std::optional<TimeMs> best;
  const auto consider = [&best](TimeMs t) {
    if (!best || t < *best) best = t;
  };
  const TimeMs silence = impl_->config.heartbeat_interval_ms * impl_->config.missed_heartbeats;
  for (const auto& [task_id, s] : impl_->sessions) {
    if (s.phase == Phase::kTraining && s.round.active) consider(s.round.deadline);
    if (s.round.exchange_open) consider(s.round.exchange_deadline);
    for (const auto& [id, c] : s.clients) {
      if (c.connected) consider(c.last_seen + silence + 1);
    }
  }
  return best;
}

std::vector<Outbound> Coordinator::pause(const std::string& task_id, TimeMs) {
  std::vector<Outbound> out;
  Session& s = impl_->session(task_id);
  if (s.phase == Phase::kFinished) {
    throw Error(ErrorCode::kInvalidArgument, "cannot pause a finished session");
  }
  if (s.manual_pause) throw Error(ErrorCode::kInvalidArgument, "session is already paused by the operator");
  s.manual_pause = true;
  if (s.phase != Phase::kWaitingForParticipants) impl_->pause_session(s, "paused by operator", out);
  else s.pause_reason = "paused by operator";
  return out;
}

std::vector<Outbound> Coordinator::resume(const std::string& task_id, TimeMs now) {
  std::vector<Outbound> out;
  Session& s = impl_->session(task_id);
  if (s.phase == Phase::kFinished) {
    throw Error(ErrorCode::kInvalidArgument, "cannot resume a finished session");
  }
  if (!s.manual_pause && s.phase != Phase::kWaitingForParticipants) {
    throw Error(ErrorCode::kInvalidArgument, "session is not paused");
  }
  s.manual_pause = false;
  impl_->maybe_resume(s, now, out);
  return out;
}

void Coordinator::record_metrics(const std::string& task_id, ClientId client,
                                 const wire::MetricsReport& report) {
  Session& s = impl_->session(task_id);
  if (!s.clients.count(client)) {
    throw Error(ErrorCode::kInvalidArgument, "unknown client " + std::to_string(client));
  }
  impl_->record(s, client, report);
}

}  // namespace disco
