#include "disco/node.hpp"

#include <algorithm>
#include <sstream>

#include "disco/error.hpp"
#include "disco/privacy.hpp"
#include "disco/rng.hpp"

namespace disco {

namespace {

constexpr std::uint64_t kShuffleTag = 0x5348554646ULL;  // "SHUFF"
constexpr std::uint64_t kNoiseTag = 0x4E4F495345ULL;    // "NOISE"
constexpr std::uint64_t kShareTag = 0x5348415245ULL;    // "SHARE"

}  // namespace

std::string_view node_state_name(NodeState s) noexcept {
  switch (s) {
    case NodeState::kJoining: return "joining";
    case NodeState::kIdle: return "idle";
    case NodeState::kAwaitingGlobal: return "awaiting-global";
    case NodeState::kAwaitingPeerList: return "awaiting-peer-list";
    case NodeState::kExchanging: return "exchanging";
    case NodeState::kPaused: return "paused";
    case NodeState::kFinished: return "finished";
    case NodeState::kFailed: return "failed";
  }
  return "unknown";
}

std::uint64_t round_shuffle_seed(const TaskSpec& spec, ClientId client, std::uint64_t round) noexcept {
  return derive_key(spec.train.shuffle_seed, {kShuffleTag, client, round});
}

std::uint64_t round_noise_seed(const TaskSpec& spec, ClientId client, std::uint64_t round) noexcept {
  return derive_key(spec.privacy.noise_seed, {kNoiseTag, client, round});
}

std::uint64_t round_share_seed(const TaskSpec& spec, ClientId client, std::uint64_t round) noexcept {
  return derive_key(spec.model.seed ^ spec.privacy.noise_seed, {kShareTag, client, round});
}

TrainResult run_solo(const TaskSpec& spec, const Dataset& data) {
  spec.validate();
  TrainConfig cfg = spec.train;
  cfg.epochs_per_round = static_cast<std::size_t>(spec.total_epochs());
  return train_local(init_params(spec.model), data, cfg);
}

NodeMachine::NodeMachine(Dataset data, NodeOptions options)
    : data_(std::move(data)), options_(std::move(options)) {
  data_.validate();
  if (data_.size() == 0) throw Error(ErrorCode::kEmptyInput, "node: dataset is empty");
}

wire::Message NodeMachine::make(wire::Body body) const {
  return wire::Message{options_.task_id, client_id_, std::move(body)};
}

bool NodeMachine::decentralized() const noexcept {
  return task_ && task_->scheme == TrainingScheme::kDecentralized;
}

std::vector<LocalMetric> NodeMachine::metrics() const {
  std::vector<LocalMetric> out;
  out.reserve(metrics_.size());
  for (const auto& [epoch, m] : metrics_) out.push_back(m);
  return out;
}

void NodeMachine::fail(const std::string& why, std::vector<NodeAction>& out) {
  if (state_ == NodeState::kFailed || state_ == NodeState::kFinished) return;
  failure_ = why;
  state_ = NodeState::kFailed;
  exchange_.reset();
  if (client_id_ != 0) out.push_back(SendToServer{make(wire::Leave{})});
}

std::vector<NodeAction> NodeMachine::start(TimeMs now) {
  std::vector<NodeAction> out;
  wire::JoinTask join;
  if (!options_.listen_address.empty()) join.capabilities.push_back("listen=" + options_.listen_address);
  out.push_back(SendToServer{make(std::move(join))});
  last_heartbeat_ = now;
  return out;
}

std::vector<NodeAction> NodeMachine::on_server_message(const wire::Message& msg, TimeMs now) {
  std::vector<NodeAction> out;
  if (state_ == NodeState::kFinished || state_ == NodeState::kFailed) return out;

  std::visit(
      [&](const auto& body) {
        using T = std::decay_t<decltype(body)>;
        if constexpr (std::is_same_v<T, wire::Assigned>) {
          if (state_ != NodeState::kJoining) return;
          if (!body.task) return fail("Assigned without a task definition", out);
          if (body.task->task_id != options_.task_id) return fail("Assigned to a different task", out);
          const TaskSpec& spec = *body.task;
          if (data_.num_features != spec.model.input_dim) {
            std::ostringstream os;
            os << "local data has " << data_.num_features << " features, task expects "
               << spec.model.input_dim;
            client_id_ = body.client_id;
            return fail(os.str(), out);
          }
          for (std::uint32_t y : data_.labels) {
            if (y >= spec.model.output_dim) {
              client_id_ = body.client_id;
              return fail("local label " + std::to_string(y) + " outside the task's " +
                              std::to_string(spec.model.output_dim) + " classes",
                          out);
            }
          }
          client_id_ = body.client_id;
          task_ = spec;
          params_ = init_params(spec.model);
          state_ = NodeState::kIdle;
        } else if constexpr (std::is_same_v<T, wire::RoundStart>) {
          if (!task_) return;
          if (exchange_) abort_exchange(out);
          if (decentralized()) {
            train_round(body.round, params_, out);
            if (state_ == NodeState::kFailed) return;
            out.push_back(SendToServer{make(wire::ReadySignal{body.round})});
            state_ = NodeState::kAwaitingPeerList;
          } else {
            if (!body.global_params) return fail("federated RoundStart without global params", out);
            params_ = *body.global_params;
            train_round(body.round, params_, out);
            if (state_ == NodeState::kFailed) return;
            out.push_back(SendToServer{make(wire::UpdateUpload{body.round, pending_, data_.size()})});
            state_ = NodeState::kAwaitingGlobal;
          }
        } else if constexpr (std::is_same_v<T, wire::GlobalUpdate>) {
          if (!task_ || decentralized()) return;
          params_ = body.params;
          completed_rounds_ = std::max(completed_rounds_, body.round + 1);
          has_pending_ = false;
          state_ = completed_rounds_ >= task_->total_rounds ? NodeState::kFinished : NodeState::kIdle;
        } else if constexpr (std::is_same_v<T, wire::PeerList>) {
          if (!task_ || !decentralized()) return;
          begin_exchange(body, now, out);
        } else if constexpr (std::is_same_v<T, wire::SessionPaused>) {
          if (state_ == NodeState::kAwaitingGlobal || state_ == NodeState::kIdle) {
            state_ = NodeState::kPaused;
          }
        } else if constexpr (std::is_same_v<T, wire::Leave>) {
          exchange_.reset();
          state_ = NodeState::kFinished;
        } else if constexpr (std::is_same_v<T, wire::ErrorMsg>) {
          if (state_ == NodeState::kJoining || body.code == "unknown-task" ||
              body.code == "session-finished") {
            fail(body.code + ": " + body.detail, out);
          }
        }
      },
      msg.body);
  return out;
}

void NodeMachine::train_round(std::uint64_t round, const ParamVector& base,
                              std::vector<NodeAction>& out) {
  const TaskSpec& spec = *task_;
  TrainConfig cfg = spec.train;
  cfg.shuffle_seed = round_shuffle_seed(spec, client_id_, round);
  TrainResult res;
  try {
    res = train_local(base, data_, cfg);
  } catch (const Error& e) {
    return fail(std::string("local training failed: ") + e.what(), out);
  }
  PrivacyConfig pc = spec.privacy;
  pc.noise_seed = round_noise_seed(spec, client_id_, round);
  base_ = base;
  pending_ = privatize(subtract(res.params, base), pc);
  pending_round_ = round;
  has_pending_ = true;

  const std::uint64_t per_round = spec.train.epochs_per_round;
  for (const EpochMetrics& m : res.metrics) {
    const std::uint64_t epoch = round * per_round + m.epoch;
    metrics_[epoch] = LocalMetric{round, epoch, m.loss, m.accuracy};
    out.push_back(SendToServer{make(wire::MetricsReport{round, epoch, m.loss, m.accuracy})});
  }
}

void NodeMachine::broadcast_peers(const wire::Body& body, std::vector<NodeAction>& out) {
  for (ClientId p : exchange_->peers) {
    if (p == client_id_) continue;
    out.push_back(SendToPeer{p, exchange_->addresses[p], make(body)});
  }
}

void NodeMachine::begin_exchange(const wire::PeerList& list, TimeMs now,
                                 std::vector<NodeAction>& out) {
  if (!has_pending_ || list.round < last_closed_round_plus_one_) return;
  if (exchange_) abort_exchange(out);

  Exchange ex;
  ex.round = list.round;
  for (const wire::PeerInfo& p : list.peers) {
    ex.peers.push_back(p.client_id);
    ex.addresses[p.client_id] = p.address;
  }
  std::sort(ex.peers.begin(), ex.peers.end());
  ex.peers.erase(std::unique(ex.peers.begin(), ex.peers.end()), ex.peers.end());
  if (!std::binary_search(ex.peers.begin(), ex.peers.end(), client_id_)) return;
  ex.deadline = now + static_cast<TimeMs>(task_->round_deadline_seconds * 1000.0);
  exchange_ = std::move(ex);
  state_ = NodeState::kExchanging;
  shares_sent_ = 0;
  shares_received_ = 0;
  last_exchange_size_ = exchange_->peers.size();

  const std::uint64_t n = data_.size();
  if (task_->secure_aggregation) {
    auto shares = split_secure_update(pending_, n, task_->weighting, task_->codec(), exchange_->peers,
                                      client_id_, exchange_->round,
                                      round_share_seed(*task_, client_id_, exchange_->round));
    for (auto& [recipient, share] : shares) {
      if (recipient == client_id_) {
        exchange_->shares[client_id_] = std::move(share.values);
        continue;
      }
      out.push_back(SendToPeer{recipient, exchange_->addresses[recipient],
                               make(wire::PeerShare{exchange_->round, wire::ShareStage::kShare,
                                                    std::move(share.values), n})});
      ++shares_sent_;
    }
    exchange_->counts[client_id_] = n;
  } else {
    exchange_->updates[client_id_] = Contribution{client_id_, exchange_->round, pending_, n};
    broadcast_peers(wire::PeerUpdate{exchange_->round, pending_, n}, out);
  }

  // Replay anything that arrived before our PeerList.
  for (auto it = early_.begin(); it != early_.end();) {
    if (it->first < exchange_->round) {
      it = early_.erase(it);
    } else if (it->first == exchange_->round) {
      for (const auto& [from, m] : it->second) absorb_peer(from, m, out);
      it = early_.erase(it);
    } else {
      ++it;
    }
  }
  try_complete(out);
}

std::vector<NodeAction> NodeMachine::on_peer_message(ClientId from, const wire::Message& msg,
                                                     TimeMs /*now*/) {
  std::vector<NodeAction> out;
  if (!task_ || !decentralized() || state_ == NodeState::kFinished || state_ == NodeState::kFailed) {
    return out;
  }
  std::uint64_t round = 0;
  if (const auto* u = std::get_if<wire::PeerUpdate>(&msg.body)) round = u->round;
  else if (const auto* s = std::get_if<wire::PeerShare>(&msg.body)) round = s->round;
  else return out;

  if (round < last_closed_round_plus_one_) return out;
  if (!exchange_ || round > exchange_->round) {
    early_[round].emplace_back(from, msg);
    return out;
  }
  if (round < exchange_->round) return out;
  absorb_peer(from, msg, out);
  try_complete(out);
  return out;
}

void NodeMachine::absorb_peer(ClientId from, const wire::Message& msg, std::vector<NodeAction>& out) {
  Exchange& ex = *exchange_;
  if (from == client_id_ || !std::binary_search(ex.peers.begin(), ex.peers.end(), from)) return;

  if (const auto* u = std::get_if<wire::PeerUpdate>(&msg.body)) {
    if (task_->secure_aggregation) return;
    if (!u->params.same_shape(pending_)) return;
    try {
      u->params.check_finite("peer update");
    } catch (const Error&) {
      return;
    }
    std::optional<std::uint64_t> n;
    if (u->sample_count > 0) n = u->sample_count;
    ex.updates[from] = Contribution{from, ex.round, u->params, n};
  } else if (const auto* s = std::get_if<wire::PeerShare>(&msg.body)) {
    if (!task_->secure_aggregation || s->share.size() != pending_.values.size()) return;
    if (s->stage == wire::ShareStage::kShare) {
      if (ex.shares.emplace(from, s->share).second) ++shares_received_;
      ex.counts[from] = s->sample_count;
    } else {
      ex.partials.emplace(from, s->share);
    }
  }
  (void)out;
}

void NodeMachine::try_complete(std::vector<NodeAction>& out) {
  if (!exchange_) return;
  Exchange& ex = *exchange_;
  const std::size_t k = ex.peers.size();

  if (!task_->secure_aggregation) {
    if (ex.updates.size() < k) return;
    std::vector<Contribution> contribs;
    contribs.reserve(k);
    for (auto& [id, c] : ex.updates) contribs.push_back(c);
    const AggregationResult agg = fedavg(contribs, task_->weighting);
    return finish_exchange(agg.global_update, out);
  }

  if (!ex.partial_sent && ex.shares.size() == k) {
    RingVector partial;
    for (auto& [owner, share] : ex.shares) {
      if (partial.empty()) partial = share;
      else ring_accumulate(partial, share);
    }
    ex.partials[client_id_] = partial;
    ex.partial_sent = true;
    broadcast_peers(wire::PeerShare{ex.round, wire::ShareStage::kPartialSum, partial, 0}, out);
  }
  if (!ex.partial_sent || ex.partials.size() < k) return;

  RingVector total;
  for (auto& [id, partial] : ex.partials) {
    if (total.empty()) total = partial;
    else ring_accumulate(total, partial);
  }
  double denominator = static_cast<double>(k);
  if (task_->weighting == Weighting::kSampleCount) {
    double sum = 0.0;
    for (auto& [id, n] : ex.counts) sum += static_cast<double>(n);
    denominator = sum;
  }
  finish_exchange(finish_secure_sum(total, denominator, task_->codec(), pending_.manifest), out);
}

void NodeMachine::finish_exchange(const ParamVector& mean, std::vector<NodeAction>& out) {
  const std::uint64_t round = exchange_->round;
  params_ = add(base_, mean);
  exchange_.reset();
  has_pending_ = false;
  last_closed_round_plus_one_ = round + 1;
  completed_rounds_ = std::max(completed_rounds_, round + 1);
  out.push_back(SendToServer{make(wire::ExchangeDone{round, true})});
  // The coordinator ends decentralized sessions with Leave.
  state_ = NodeState::kIdle;
}

void NodeMachine::abort_exchange(std::vector<NodeAction>& out) {
  if (!exchange_) return;
  const std::uint64_t round = exchange_->round;
  params_ = add(base_, pending_);
  exchange_.reset();
  has_pending_ = false;
  ++failed_exchanges_;
  last_closed_round_plus_one_ = round + 1;
  completed_rounds_ = std::max(completed_rounds_, round + 1);
  out.push_back(SendToServer{make(wire::ExchangeDone{round, false})});
  state_ = NodeState::kIdle;
}

std::vector<NodeAction> NodeMachine::on_peer_failure(ClientId peer, TimeMs /*now*/) {
  std::vector<NodeAction> out;
  if (!exchange_) return out;
  const Exchange& ex = *exchange_;
  if (!std::binary_search(ex.peers.begin(), ex.peers.end(), peer)) return out;
  const bool still_needed = task_->secure_aggregation ? !ex.partials.count(peer) : !ex.updates.count(peer);
  if (still_needed) abort_exchange(out);
  return out;
}

std::vector<NodeAction> NodeMachine::on_tick(TimeMs now) {
  std::vector<NodeAction> out;
  if (state_ == NodeState::kFinished || state_ == NodeState::kFailed) return out;
  if (exchange_ && now >= exchange_->deadline) abort_exchange(out);
  if (options_.heartbeat_interval_ms > 0 && client_id_ != 0 &&
      now - last_heartbeat_ >= options_.heartbeat_interval_ms && state_ != NodeState::kFinished) {
    out.push_back(SendToServer{make(wire::Heartbeat{})});
    last_heartbeat_ = now;
  }
  return out;
}

std::optional<TimeMs> NodeMachine::next_deadline() const {
  if (state_ == NodeState::kFinished || state_ == NodeState::kFailed) return std::nullopt;
  std::optional<TimeMs> t;
  if (options_.heartbeat_interval_ms > 0 && client_id_ != 0) {
    t = last_heartbeat_ + options_.heartbeat_interval_ms;
  }
  if (exchange_) t = t ? std::min(*t, exchange_->deadline) : exchange_->deadline;
  return t;
}

}  // namespace disco
