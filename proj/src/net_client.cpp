#include <array>
#include <atomic>
#include <chrono>
#include <condition_variable>
#include <deque>
#include <fstream>
#include <future>
#include <mutex>
#include <thread>
#include <variant>

#include <boost/asio.hpp>
#include <boost/beast.hpp>

#include "disco/error.hpp"
#include "disco/net.hpp"
#include "disco/wire.hpp"

namespace disco {

namespace asio = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = asio::ip::tcp;

void write_metrics_csv(const std::vector<LocalMetric>& metrics, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error(ErrorCode::kIo, "cannot write metrics '" + path.string() + "'");
  out << "round,epoch,loss,accuracy\n";
  char line[128];
  for (const LocalMetric& m : metrics) {
    std::snprintf(line, sizeof line, "%llu,%llu,%.17g,%.17g\n", static_cast<unsigned long long>(m.round),
                  static_cast<unsigned long long>(m.epoch), m.loss, m.accuracy);
    out << line;
  }
}

namespace {

struct ServerMsg {
  wire::Message msg;
};
struct PeerMsg {
  ClientId from = 0;
  wire::Message msg;
};
struct PeerDown {
  ClientId peer = 0;
};
struct ServerDown {
  std::string reason;
};
using NodeEvent = std::variant<ServerMsg, PeerMsg, PeerDown, ServerDown>;

class EventQueue {
 public:
  void push(NodeEvent e) {
    {
      std::lock_guard lock(mu_);
      q_.push_back(std::move(e));
    }
    cv_.notify_one();
  }

  std::optional<NodeEvent> pop_until(std::chrono::steady_clock::time_point deadline) {
    std::unique_lock lock(mu_);
    if (!cv_.wait_until(lock, deadline, [this] { return !q_.empty(); })) return std::nullopt;
    NodeEvent e = std::move(q_.front());
    q_.pop_front();
    return e;
  }

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<NodeEvent> q_;
};

// A framed connection owned by the I/O thread.
class Link : public std::enable_shared_from_this<Link> {
 public:
  using OnMessage = std::function<void(wire::Message)>;
  using OnClose = std::function<void(const std::string&)>;

  explicit Link(tcp::socket sock) : sock_(std::move(sock)) {}

  void start(OnMessage on_msg, OnClose on_close) {
    on_msg_ = std::move(on_msg);
    on_close_ = std::move(on_close);
    read();
  }

  void send(std::shared_ptr<const std::vector<std::uint8_t>> frame) {
    if (closed_) return;
    outq_.push_back(std::move(frame));
    if (outq_.size() == 1) write();
  }

  void close_after_flush() {
    drain_close_ = true;
    if (outq_.empty()) close("closed");
  }

  void close(const std::string& why) {
    if (closed_) return;
    closed_ = true;
    beast::error_code ec;
    sock_.shutdown(tcp::socket::shutdown_both, ec);
    sock_.close(ec);
    if (on_close_) on_close_(why);
  }

  bool closed() const { return closed_; }

 private:
  void read() {
    sock_.async_read_some(asio::buffer(buf_), [self = shared_from_this()](beast::error_code ec, std::size_t n) {
      if (ec) return self->close(ec.message());
      self->dec_.feed(std::span<const std::uint8_t>(self->buf_.data(), n));
      try {
        while (auto m = self->dec_.next()) {
          if (self->on_msg_) self->on_msg_(std::move(*m));
        }
      } catch (const Error& e) {
        return self->close(e.what());
      }
      if (!self->closed_) self->read();
    });
  }

  void write() {
    asio::async_write(sock_, asio::buffer(*outq_.front()), [self = shared_from_this()](beast::error_code ec, std::size_t) {
      if (ec) return self->close(ec.message());
      self->outq_.pop_front();
      if (!self->outq_.empty()) self->write();
      else if (self->drain_close_) self->close("closed");
    });
  }

  tcp::socket sock_;
  std::array<std::uint8_t, 64 * 1024> buf_{};
  wire::FrameDecoder dec_;
  std::deque<std::shared_ptr<const std::vector<std::uint8_t>>> outq_;
  OnMessage on_msg_;
  OnClose on_close_;
  bool closed_ = false;
  bool drain_close_ = false;
};

using Frame = std::shared_ptr<const std::vector<std::uint8_t>>;

Frame frame_of(const wire::Message& m) { return std::make_shared<const std::vector<std::uint8_t>>(wire::encode_msg(m)); }

class NodeIo {
 public:
  NodeIo(const NodeRunConfig& cfg, EventQueue& events) : cfg_(cfg), events_(events) {}

  asio::io_context io;

  void log(const std::string& s) const {
    if (cfg_.log) cfg_.log(s);
  }

  // Blocking connect with bounded exponential backoff. Runs before the I/O
  // thread starts.
  void connect_server() {
    const HostPort hp = parse_host_port(cfg_.server);
    std::string last;
    TimeMs backoff = cfg_.backoff_ms;
    for (int attempt = 1; attempt <= cfg_.connect_attempts; ++attempt) {
      try {
        tcp::resolver resolver(io);
        tcp::socket sock(io);
        asio::connect(sock, resolver.resolve(hp.host, std::to_string(hp.port)));
        sock.set_option(tcp::no_delay(true));
        server_ = std::make_shared<Link>(std::move(sock));
        return;
      } catch (const boost::system::system_error& e) {
        last = e.what();
        log("connect attempt " + std::to_string(attempt) + " failed: " + last);
      }
      if (attempt < cfg_.connect_attempts) {
        std::this_thread::sleep_for(std::chrono::milliseconds(backoff));
        backoff *= 2;
      }
    }
    throw Error(ErrorCode::kUnreachable, "cannot reach coordinator at " + cfg_.server + " after " +
                                             std::to_string(cfg_.connect_attempts) + " attempts: " + last);
  }

  void start_listener() {
    if (cfg_.listen.empty()) return;
    const HostPort hp = parse_host_port(cfg_.listen);
    const tcp::endpoint ep(asio::ip::make_address(hp.host), hp.port);
    acceptor_.emplace(io);
    acceptor_->open(ep.protocol());
    acceptor_->set_option(asio::socket_base::reuse_address(true));
    acceptor_->bind(ep);
    acceptor_->listen();
    accept();
  }

  void start() {
    server_->start([this](wire::Message m) { events_.push(ServerMsg{std::move(m)}); },
                   [this](const std::string& why) { events_.push(ServerDown{why}); });
    heartbeat();
  }

  // ---- called from the training thread ----

  void set_identity(ClientId id, const std::string& task_id) {
    client_id_.store(id);
    std::lock_guard lock(id_mu_);
    task_id_ = task_id;
  }

  void to_server(const wire::Message& m) {
    auto f = frame_of(m);
    asio::post(io, [this, f] { server_->send(f); });
  }

  void to_peer(const SendToPeer& a) {
    auto f = frame_of(a.msg);
    asio::post(io, [this, peer = a.peer, addr = a.address, f] { peer_send(peer, addr, f); });
  }

  void shutdown() {
    std::promise<void> done;
    auto fut = done.get_future();
    asio::post(io, [this] {
      stopping_ = true;
      heartbeat_timer_.cancel();
      if (acceptor_) {
        beast::error_code ec;
        acceptor_->close(ec);
      }
      auto peers = peers_;  // closing erases from peers_
      for (auto& [id, l] : peers) l->close_after_flush();
      auto accepts = std::move(pending_accepts_);
      for (auto& l : accepts) l->close("closed");
      server_->close_after_flush();
    });
    // Give queued frames a moment to flush.
    if (runner_.joinable()) {
      auto joined = std::async(std::launch::async, [this] { runner_.join(); });
      if (joined.wait_for(std::chrono::seconds(3)) != std::future_status::ready) {
        io.stop();
        joined.wait();
      }
    }
  }

  void run_thread() {
    runner_ = std::thread([this] { io.run(); });
  }

 private:
  void heartbeat() {
    if (cfg_.heartbeat_interval_ms <= 0) return;
    heartbeat_timer_.expires_after(std::chrono::milliseconds(cfg_.heartbeat_interval_ms));
    heartbeat_timer_.async_wait([this](beast::error_code ec) {
      if (ec || stopping_) return;
      const ClientId id = client_id_.load();
      if (id != 0) {
        std::string task;
        {
          std::lock_guard lock(id_mu_);
          task = task_id_;
        }
        server_->send(frame_of(wire::Message{task, id, wire::Heartbeat{}}));
      }
      heartbeat();
    });
  }

  void accept() {
    acceptor_->async_accept([this](beast::error_code ec, tcp::socket sock) {
      if (ec) return;
      sock.set_option(tcp::no_delay(true));
      auto link = std::make_shared<Link>(std::move(sock));
      pending_accepts_.push_back(link);
      auto known = std::make_shared<ClientId>(0);
      link->start(
          [this, link, known](wire::Message m) {
            if (*known == 0) {
              if (m.sender == 0 || m.sender >= client_id_.load()) {
                link->close("peer did not identify as a lower client id");
                return;
              }
              *known = m.sender;
              register_peer(m.sender, link);
            }
            events_.push(PeerMsg{*known, std::move(m)});
          },
          [this, known](const std::string&) {
            if (*known != 0) peer_closed(*known);
          });
      accept();
    });
  }

  void register_peer(ClientId peer, std::shared_ptr<Link> link) {
    std::erase(pending_accepts_, link);
    peers_[peer] = link;
    auto held = held_.find(peer);
    if (held != held_.end()) {
      for (auto& f : held->second) link->send(f);
      held_.erase(held);
    }
  }

  void peer_closed(ClientId peer) {
    peers_.erase(peer);
    if (!stopping_) events_.push(PeerDown{peer});
  }

  void peer_send(ClientId peer, const std::string& address, Frame f) {
    if (auto it = peers_.find(peer); it != peers_.end() && !it->second->closed()) {
      it->second->send(std::move(f));
      return;
    }
    if (client_id_.load() > peer) {
      held_[peer].push_back(std::move(f));  // the lower id dials us
      return;
    }
    auto& pending = dialing_[peer];
    pending.push_back(std::move(f));
    if (pending.size() == 1) dial(peer, address, 1);
  }

  void dial(ClientId peer, const std::string& address, int attempt) {
    HostPort hp;
    try {
      hp = parse_host_port(address);
    } catch (const Error&) {
      dialing_.erase(peer);
      events_.push(PeerDown{peer});
      return;
    }
    auto sock = std::make_shared<tcp::socket>(io);
    const tcp::endpoint ep(asio::ip::make_address(hp.host), hp.port);
    sock->async_connect(ep, [this, sock, peer, address, attempt](beast::error_code ec) {
      if (stopping_) return;
      if (ec) {
        if (attempt >= cfg_.peer_dial_attempts) {
          log("peer " + std::to_string(peer) + " unreachable at " + address + ": " + ec.message());
          dialing_.erase(peer);
          events_.push(PeerDown{peer});
          return;
        }
        auto timer = std::make_shared<asio::steady_timer>(io, std::chrono::milliseconds(cfg_.backoff_ms * attempt));
        timer->async_wait([this, timer, peer, address, attempt](beast::error_code) { dial(peer, address, attempt + 1); });
        return;
      }
      sock->set_option(tcp::no_delay(true));
      auto link = std::make_shared<Link>(std::move(*sock));
      link->start([this, peer](wire::Message m) { events_.push(PeerMsg{peer, std::move(m)}); },
                  [this, peer](const std::string&) { peer_closed(peer); });
      peers_[peer] = link;
      for (auto& f : dialing_[peer]) link->send(f);
      dialing_.erase(peer);
    });
  }

  const NodeRunConfig& cfg_;
  EventQueue& events_;
  std::shared_ptr<Link> server_;
  std::optional<tcp::acceptor> acceptor_;
  asio::steady_timer heartbeat_timer_{io};
  std::map<ClientId, std::shared_ptr<Link>> peers_;
  std::vector<std::shared_ptr<Link>> pending_accepts_;
  std::map<ClientId, std::vector<Frame>> held_;
  std::map<ClientId, std::vector<Frame>> dialing_;
  std::atomic<ClientId> client_id_{0};
  std::mutex id_mu_;
  std::string task_id_;
  bool stopping_ = false;
  std::thread runner_;
};

}  // namespace

NodeRunResult run_node(const NodeRunConfig& cfg) {
  NodeOptions opts;
  opts.task_id = cfg.task_id;
  opts.listen_address = cfg.listen;
  opts.heartbeat_interval_ms = 0;  // the I/O thread sends heartbeats
  NodeMachine node(cfg.data, opts);

  EventQueue events;
  NodeIo io(cfg, events);
  io.connect_server();
  io.start_listener();
  io.start();
  io.run_thread();

  const auto epoch = std::chrono::steady_clock::now();
  const auto now = [&] {
    return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - epoch).count();
  };
  std::size_t written_metrics = 0;
  std::string server_lost;
  const auto emit = [&](std::vector<NodeAction> actions) {
    for (auto& a : actions) {
      if (auto* s = std::get_if<SendToServer>(&a)) io.to_server(s->msg);
      else io.to_peer(std::get<SendToPeer>(a));
    }
    if (node.client_id() != 0) io.set_identity(node.client_id(), cfg.task_id);
    if (cfg.metrics_csv) {
      const auto m = node.metrics();
      if (m.size() != written_metrics) {
        write_metrics_csv(m, *cfg.metrics_csv);
        written_metrics = m.size();
      }
    }
  };

  emit(node.start(now()));
  while (!node.finished() && !node.failed() && server_lost.empty()) {
    const auto deadline = node.next_deadline();
    const auto until = deadline ? epoch + std::chrono::milliseconds(*deadline)
                                : std::chrono::steady_clock::now() + std::chrono::seconds(1);
    auto ev = events.pop_until(until);
    if (!ev) {
      emit(node.on_tick(now()));
      continue;
    }
    std::visit(
        [&](auto& e) {
          using T = std::decay_t<decltype(e)>;
          if constexpr (std::is_same_v<T, ServerMsg>) {
            if (const auto* err = std::get_if<wire::ErrorMsg>(&e.msg.body)) {
              io.log("coordinator: " + err->code + ": " + err->detail);
            }
            emit(node.on_server_message(e.msg, now()));
          } else if constexpr (std::is_same_v<T, PeerMsg>) {
            emit(node.on_peer_message(e.from, e.msg, now()));
          } else if constexpr (std::is_same_v<T, PeerDown>) {
            emit(node.on_peer_failure(e.peer, now()));
          } else {
            server_lost = e.reason;
          }
        },
        *ev);
  }
  io.shutdown();

  NodeRunResult r;
  r.final_state = node.state();
  r.failure = node.failure();
  if (!server_lost.empty() && !node.finished() && !node.failed()) {
    r.final_state = NodeState::kFailed;
    r.failure = "connection to coordinator lost: " + server_lost;
  }
  r.client_id = node.client_id();
  r.task = node.task();
  r.params = node.params();
  r.metrics = node.metrics();
  r.completed_rounds = node.completed_rounds();
  return r;
}

HttpResponse http_request(const std::string& host, std::uint16_t port, const std::string& method,
                          const std::string& target, const std::string& body,
                          const std::map<std::string, std::string>& headers) {
  try {
    asio::io_context io;
    tcp::resolver resolver(io);
    beast::tcp_stream stream(io);
    stream.expires_after(std::chrono::seconds(10));
    stream.connect(resolver.resolve(host, std::to_string(port)));
    http::request<http::string_body> req{http::string_to_verb(method), target, 11};
    req.set(http::field::host, host);
    req.set(http::field::content_type, "application/json");
    for (const auto& [k, v] : headers) req.set(k, v);
    req.body() = body;
    req.prepare_payload();
    http::write(stream, req);
    beast::flat_buffer buf;
    http::response<http::string_body> res;
    http::read(stream, buf, res);
    beast::error_code ec;
    stream.socket().shutdown(tcp::socket::shutdown_both, ec);
    HttpResponse out;
    out.status = static_cast<int>(res.result_int());
    out.body = res.body();
    for (const auto& f : res) out.headers[std::string(f.name_string())] = std::string(f.value());
    return out;
  } catch (const boost::system::system_error& e) {
    throw Error(ErrorCode::kUnreachable, "http " + host + ":" + std::to_string(port) + ": " + e.what());
  }
}

struct SnapshotStream::Impl {
  asio::io_context io;
  websocket::stream<tcp::socket> ws{io};
  beast::flat_buffer buf;
  bool pending = false;
  bool done = false;
  bool failed = false;
};

SnapshotStream::SnapshotStream(const std::string& host, std::uint16_t port, const std::string& task_id)
    : impl_(std::make_unique<Impl>()) {
  try {
    tcp::resolver resolver(impl_->io);
    asio::connect(impl_->ws.next_layer(), resolver.resolve(host, std::to_string(port)));
    impl_->ws.handshake(host, "/tasks/" + task_id + "/stream");
  } catch (const boost::system::system_error& e) {
    throw Error(ErrorCode::kUnreachable, std::string("stream: ") + e.what());
  }
}

SnapshotStream::~SnapshotStream() {
  beast::error_code ec;
  impl_->ws.next_layer().close(ec);
}

std::optional<std::string> SnapshotStream::next(TimeMs timeout_ms) {
  Impl& s = *impl_;
  if (s.failed) return std::nullopt;
  if (!s.pending) {
    s.pending = true;
    s.done = false;
    s.ws.async_read(s.buf, [&s](beast::error_code ec, std::size_t) {
      s.done = true;
      if (ec) s.failed = true;
    });
  }
  s.io.restart();
  s.io.run_for(std::chrono::milliseconds(timeout_ms));
  if (!s.done || s.failed) return std::nullopt;
  s.pending = false;
  std::string text = beast::buffers_to_string(s.buf.data());
  s.buf.consume(s.buf.size());
  return text;
}

}  // namespace disco
