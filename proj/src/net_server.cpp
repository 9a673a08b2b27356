#include <array>
#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <deque>
#include <fstream>
#include <mutex>
#include <thread>

#include <boost/asio.hpp>
#include <boost/beast.hpp>
#include <spdlog/spdlog.h>

#include "disco/coordinator.hpp"
#include "disco/error.hpp"
#include "disco/net.hpp"
#include "disco/wire.hpp"

namespace disco {

namespace asio = boost::asio;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = asio::ip::tcp;

namespace {

[[noreturn]] void bad_config(const std::string& what) { throw Error(ErrorCode::kInvalidSpec, "server config: " + what); }

std::uint16_t to_port(std::int64_t v, const char* what) {
  if (v < 0 || v > 65535) bad_config(std::string(what) + " must be in 0..65535");
  return static_cast<std::uint16_t>(v);
}

}  // namespace

HostPort parse_host_port(const std::string& text) {
  const auto colon = text.rfind(':');
  if (colon == std::string::npos || colon == 0 || colon + 1 == text.size()) {
    throw Error(ErrorCode::kInvalidArgument, "expected host:port, got '" + text + "'");
  }
  HostPort hp;
  hp.host = text.substr(0, colon);
  if (hp.host.size() > 2 && hp.host.front() == '[' && hp.host.back() == ']') hp.host = hp.host.substr(1, hp.host.size() - 2);
  const std::string port = text.substr(colon + 1);
  char* end = nullptr;
  const long v = std::strtol(port.c_str(), &end, 10);
  if (*end != '\0' || v < 0 || v > 65535) throw Error(ErrorCode::kInvalidArgument, "bad port in '" + text + "'");
  hp.port = static_cast<std::uint16_t>(v);
  return hp;
}

ServerConfig server_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir) {
  if (!j.is_object()) bad_config("must be a JSON object");
  ServerConfig c;
  try {
    if (j.contains("bindAddress")) c.bind_address = j["bindAddress"].get<std::string>();
    if (j.contains("tcpPort")) c.tcp_port = to_port(j["tcpPort"].get<std::int64_t>(), "tcpPort");
    if (j.contains("httpPort")) c.http_port = to_port(j["httpPort"].get<std::int64_t>(), "httpPort");
    if (j.contains("dataDir") && !j["dataDir"].is_null()) {
      const std::filesystem::path p = j["dataDir"].get<std::string>();
      c.data_dir = p.is_absolute() ? p : base_dir / p;
    }
    if (j.contains("heartbeatIntervalSeconds")) {
      const double s = j["heartbeatIntervalSeconds"].get<double>();
      if (!(s > 0.0)) bad_config("heartbeatIntervalSeconds must be > 0");
      c.heartbeat_interval_ms = static_cast<TimeMs>(s * 1000.0);
    }
    if (j.contains("missedHeartbeats")) {
      c.missed_heartbeats = j["missedHeartbeats"].get<int>();
      if (c.missed_heartbeats < 1) bad_config("missedHeartbeats must be >= 1");
    }
    if (j.contains("operatorToken")) c.operator_token = j["operatorToken"].get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    bad_config(e.what());
  }
  return c;
}

ServerConfig load_server_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open config '" + path.string() + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::kParse, "config '" + path.string() + "': " + e.what());
  }
  ServerConfig c = server_config_from_json(j, path.parent_path());
  apply_env_overrides(c);
  return c;
}

void apply_env_overrides(ServerConfig& c) {
  const auto env = [](const char* name) -> std::optional<std::string> {
    const char* v = std::getenv(name);
    if (v == nullptr || *v == '\0') return std::nullopt;
    return std::string(v);
  };
  const auto port = [](const std::string& v, const char* name) {
    char* end = nullptr;
    const long p = std::strtol(v.c_str(), &end, 10);
    if (*end != '\0') bad_config(std::string(name) + " is not a number");
    return to_port(p, name);
  };
  if (auto v = env("DISCO_BIND_ADDRESS")) c.bind_address = *v;
  if (auto v = env("DISCO_TCP_PORT")) c.tcp_port = port(*v, "DISCO_TCP_PORT");
  if (auto v = env("DISCO_HTTP_PORT")) c.http_port = port(*v, "DISCO_HTTP_PORT");
  if (auto v = env("DISCO_DATA_DIR")) c.data_dir = *v;
  if (auto v = env("DISCO_OPERATOR_TOKEN")) c.operator_token = *v;
}

namespace {

nlohmann::ordered_json summary_json(const SessionSnapshot& s) {
  nlohmann::ordered_json j = s.to_json();
  j.erase("series");
  j.erase("rounds");
  return j;
}

// Top-level keys whose values changed; "series" is narrowed to changed clients.
nlohmann::ordered_json snapshot_delta(const nlohmann::ordered_json& before, const nlohmann::ordered_json& after) {
  nlohmann::ordered_json changes = nlohmann::ordered_json::object();
  for (auto it = after.begin(); it != after.end(); ++it) {
    const auto prev = before.find(it.key());
    if (prev != before.end() && *prev == it.value()) continue;
    if (it.key() == "series" && prev != before.end() && prev->is_object() && it.value().is_object()) {
      nlohmann::ordered_json series = nlohmann::ordered_json::object();
      for (auto c = it.value().begin(); c != it.value().end(); ++c) {
        const auto old = prev->find(c.key());
        if (old == prev->end() || *old != c.value()) series[c.key()] = c.value();
      }
      changes["series"] = std::move(series);
    } else {
      changes[it.key()] = it.value();
    }
  }
  return changes;
}

}  // namespace

struct CoordinatorServer::Impl {
  class FrameConn;
  class HttpSession;
  class StreamSession;

  ServerConfig cfg;
  asio::io_context io;
  Coordinator coord;
  tcp::acceptor tcp_acceptor{io};
  tcp::acceptor http_acceptor{io};
  asio::steady_timer tick_timer{io};
  asio::signal_set signals{io};
  std::chrono::steady_clock::time_point epoch = std::chrono::steady_clock::now();
  std::thread thread;
  ConnId next_conn = 1;
  std::map<ConnId, std::shared_ptr<FrameConn>> conns;
  std::vector<std::weak_ptr<StreamSession>> streams;
  std::mutex mu;
  std::condition_variable cv;
  bool running = false;
  bool stopped = false;
  std::uint16_t bound_tcp = 0;
  std::uint16_t bound_http = 0;

  static CoordinatorConfig coord_config(const ServerConfig& c) {
    CoordinatorConfig cc;
    cc.heartbeat_interval_ms = c.heartbeat_interval_ms;
    cc.missed_heartbeats = c.missed_heartbeats;
    cc.data_dir = c.data_dir;
    return cc;
  }

  explicit Impl(ServerConfig c) : cfg(std::move(c)), coord(coord_config(cfg)) {}

  TimeMs now() const {
    return std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - epoch).count();
  }

  // ---- framed TCP ----

  class FrameConn : public std::enable_shared_from_this<FrameConn> {
   public:
    FrameConn(Impl& srv, tcp::socket sock, ConnId id) : srv_(srv), sock_(std::move(sock)), id_(id) {}

    void start() { read(); }

    void send(const wire::Message& msg) {
      if (closed_) return;
      auto frame = std::make_shared<std::vector<std::uint8_t>>(wire::encode_msg(msg));
      outq_.push_back(std::move(frame));
      if (outq_.size() == 1) write();
    }

    // Sends what is queued, then closes.
    void close_after_flush() {
      close_when_drained_ = true;
      if (outq_.empty()) close();
    }

    void close() {
      if (closed_) return;
      closed_ = true;
      beast::error_code ec;
      sock_.shutdown(tcp::socket::shutdown_both, ec);
      sock_.close(ec);
    }

   private:
    void read() {
      sock_.async_read_some(asio::buffer(buf_), [self = shared_from_this()](beast::error_code ec, std::size_t n) {
        if (ec) return self->gone();
        self->dec_.feed(std::span<const std::uint8_t>(self->buf_.data(), n));
        if (!self->drain()) return;
        self->read();
      });
    }

    bool drain() {
      while (!closed_) {
        std::optional<wire::Message> m;
        try {
          m = dec_.next();
        } catch (const Error& e) {
          spdlog::warn("conn {}: {}", id_, e.what());
          send(wire::Message{"", 0, wire::ErrorMsg{std::string(error_code_name(e.code())), e.what()}});
          close_after_flush();
          srv_.disconnected(id_);
          return false;
        }
        if (!m) break;
        srv_.dispatch(srv_.coord.on_message(id_, *m, srv_.now()));
      }
      return !closed_;
    }

    void write() {
      asio::async_write(sock_, asio::buffer(*outq_.front()),
                        [self = shared_from_this()](beast::error_code ec, std::size_t) {
                          if (ec) return self->gone();
                          self->outq_.pop_front();
                          if (!self->outq_.empty()) self->write();
                          else if (self->close_when_drained_) self->close();
                        });
    }

    void gone() {
      close();
      srv_.disconnected(id_);
    }

    Impl& srv_;
    tcp::socket sock_;
    ConnId id_;
    std::array<std::uint8_t, 64 * 1024> buf_{};
    wire::FrameDecoder dec_;
    std::deque<std::shared_ptr<std::vector<std::uint8_t>>> outq_;
    bool closed_ = false;
    bool close_when_drained_ = false;
  };

  void disconnected(ConnId id) {
    if (conns.erase(id) == 0) return;
    dispatch(coord.on_disconnect(id, now()));
  }

  void accept_tcp() {
    tcp_acceptor.async_accept([this](beast::error_code ec, tcp::socket sock) {
      if (ec) {
        if (ec != asio::error::operation_aborted) spdlog::warn("tcp accept: {}", ec.message());
        if (!tcp_acceptor.is_open()) return;
      } else {
        sock.set_option(tcp::no_delay(true));
        const ConnId id = next_conn++;
        auto conn = std::make_shared<FrameConn>(*this, std::move(sock), id);
        conns[id] = conn;
        conn->start();
      }
      accept_tcp();
    });
  }

  void dispatch(std::vector<Outbound> out) {
    for (const Outbound& o : out) {
      const auto it = conns.find(o.conn);
      if (it != conns.end()) it->second->send(o.msg);
    }
    publish();
    reschedule();
  }

  void reschedule() {
    const auto d = coord.next_deadline();
    if (!d) {
      tick_timer.cancel();
      return;
    }
    tick_timer.expires_at(epoch + std::chrono::milliseconds(*d));
    tick_timer.async_wait([this](beast::error_code ec) {
      if (ec) return;
      dispatch(coord.on_tick(now()));
    });
  }

  // ---- HTTP + WebSocket ----

  class StreamSession : public std::enable_shared_from_this<StreamSession> {
   public:
    StreamSession(Impl& srv, tcp::socket sock, std::string task_id)
        : srv_(srv), ws_(std::move(sock)), task_id_(std::move(task_id)) {}

    void start(http::request<http::string_body> req) {
      ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
      ws_.async_accept(req, [self = shared_from_this()](beast::error_code ec) {
        if (ec) return;
        self->open_ = true;
        self->refresh();
        self->read();
      });
    }

    void refresh() {
      if (!open_) return;
      nlohmann::ordered_json snap;
      try {
        snap = srv_.coord.snapshot(task_id_).to_json();
      } catch (const Error&) {
        return;
      }
      nlohmann::ordered_json msg;
      if (!sent_any_) {
        msg["type"] = "snapshot";
        msg["seq"] = seq_++;
        msg["snapshot"] = snap;
        sent_any_ = true;
      } else {
        auto changes = snapshot_delta(last_, snap);
        if (changes.empty()) return;
        msg["type"] = "delta";
        msg["seq"] = seq_++;
        msg["changes"] = std::move(changes);
      }
      last_ = std::move(snap);
      outq_.push_back(std::make_shared<std::string>(msg.dump()));
      if (outq_.size() == 1) write();
    }

    bool alive() const { return !closed_; }

   private:
    void read() {
      ws_.async_read(in_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
        if (ec) {
          self->closed_ = true;
          return;
        }
        self->in_.consume(self->in_.size());  // client messages are ignored
        self->read();
      });
    }

    void write() {
      ws_.text(true);
      ws_.async_write(asio::buffer(*outq_.front()), [self = shared_from_this()](beast::error_code ec, std::size_t) {
        if (ec) {
          self->closed_ = true;
          return;
        }
        self->outq_.pop_front();
        if (!self->outq_.empty()) self->write();
      });
    }

    Impl& srv_;
    websocket::stream<tcp::socket> ws_;
    std::string task_id_;
    beast::flat_buffer in_;
    std::deque<std::shared_ptr<std::string>> outq_;
    nlohmann::ordered_json last_;
    std::uint64_t seq_ = 0;
    bool sent_any_ = false;
    bool open_ = false;
    bool closed_ = false;
  };

  void publish() {
    std::vector<std::weak_ptr<StreamSession>> live;
    for (auto& w : streams) {
      if (auto s = w.lock(); s && s->alive()) {
        s->refresh();
        live.push_back(w);
      }
    }
    streams.swap(live);
  }

  class HttpSession : public std::enable_shared_from_this<HttpSession> {
   public:
    HttpSession(Impl& srv, tcp::socket sock) : srv_(srv), stream_(std::move(sock)) {}

    void start() { read(); }

   private:
    void read() {
      req_ = {};
      stream_.expires_after(std::chrono::seconds(30));
      http::async_read(stream_, buf_, req_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
        if (ec) {
          beast::error_code ignored;
          self->stream_.socket().shutdown(tcp::socket::shutdown_both, ignored);
          return;
        }
        self->on_request();
      });
    }

    void on_request() {
      if (websocket::is_upgrade(req_)) {
        const std::string target(req_.target());
        const std::string prefix = "/tasks/";
        const std::string suffix = "/stream";
        if (target.rfind(prefix, 0) == 0 && target.size() > prefix.size() + suffix.size() &&
            target.compare(target.size() - suffix.size(), suffix.size(), suffix) == 0) {
          const std::string id = target.substr(prefix.size(), target.size() - prefix.size() - suffix.size());
          bool known = true;
          try {
            srv_.coord.task(id);
          } catch (const Error&) {
            known = false;
          }
          if (known) {
            stream_.expires_never();
            auto session = std::make_shared<StreamSession>(srv_, stream_.release_socket(), id);
            srv_.streams.push_back(session);
            session->start(std::move(req_));
            return;
          }
        }
      }
      auto res = std::make_shared<http::response<http::string_body>>(srv_.route(req_));
      res->keep_alive(req_.keep_alive());
      res->prepare_payload();
      http::async_write(stream_, *res, [self = shared_from_this(), res](beast::error_code ec, std::size_t) {
        if (ec) return;
        if (!res->keep_alive()) {
          beast::error_code ignored;
          self->stream_.socket().shutdown(tcp::socket::shutdown_send, ignored);
          return;
        }
        self->read();
      });
    }

    Impl& srv_;
    beast::tcp_stream stream_;
    beast::flat_buffer buf_;
    http::request<http::string_body> req_;
  };

  static http::response<http::string_body> json_response(http::status status, const nlohmann::ordered_json& body,
                                                         unsigned version) {
    http::response<http::string_body> res{status, version};
    res.set(http::field::content_type, "application/json");
    res.set(http::field::access_control_allow_origin, "*");
    res.body() = body.dump();
    return res;
  }

  static http::response<http::string_body> error_response(http::status status, const std::string& code,
                                                          const std::string& detail, unsigned version) {
    return json_response(status, nlohmann::ordered_json{{"error", code}, {"detail", detail}}, version);
  }

  http::response<http::string_body> route(const http::request<http::string_body>& req) {
    const unsigned v = req.version();
    std::string target(req.target());
    if (const auto q = target.find('?'); q != std::string::npos) target.resize(q);
    std::vector<std::string> parts;
    for (std::size_t pos = 1; pos <= target.size();) {
      const auto next = target.find('/', pos);
      const auto end = next == std::string::npos ? target.size() : next;
      if (end > pos) parts.push_back(target.substr(pos, end - pos));
      pos = end + 1;
    }
    const auto method = req.method();

    try {
      if (parts.size() == 1 && parts[0] == "healthz" && method == http::verb::get) {
        return json_response(http::status::ok, {{"status", "ok"}}, v);
      }
      if (parts.empty() || parts[0] != "tasks") return error_response(http::status::not_found, "not-found", target, v);

      if (parts.size() == 1 && method == http::verb::get) {
        nlohmann::ordered_json arr = nlohmann::ordered_json::array();
        for (const auto& s : coord.list_tasks()) arr.push_back(summary_json(s));
        return json_response(http::status::ok, arr, v);
      }
      if (parts.size() == 1 && method == http::verb::post) {
        nlohmann::json body;
        try {
          body = nlohmann::json::parse(req.body());
        } catch (const nlohmann::json::parse_error& e) {
          return error_response(http::status::bad_request, "parse", e.what(), v);
        }
        const TaskSpec spec = task_spec_from_json(body);
        const std::string id = coord.create_task(spec);
        publish();
        return json_response(http::status::created, {{"taskId", id}}, v);
      }
      if (parts.size() == 3 && parts[2] == "snapshot" && method == http::verb::get) {
        return json_response(http::status::ok, coord.snapshot(parts[1]).to_json(), v);
      }
      if (parts.size() == 3 && (parts[2] == "pause" || parts[2] == "resume") && method == http::verb::post) {
        if (cfg.operator_token.empty()) {
          return error_response(http::status::forbidden, "operator-disabled", "no operator token is configured", v);
        }
        const auto tok = req.find("X-Operator-Token");
        if (tok == req.end() || std::string(tok->value()) != cfg.operator_token) {
          return error_response(http::status::forbidden, "forbidden", "missing or wrong X-Operator-Token", v);
        }
        const std::string& id = parts[1];
        coord.task(id);
        auto out = parts[2] == "pause" ? coord.pause(id, now()) : coord.resume(id, now());
        dispatch(std::move(out));
        return json_response(http::status::ok, coord.snapshot(id).to_json(), v);
      }
      return error_response(http::status::not_found, "not-found", target, v);
    } catch (const Error& e) {
      http::status status = http::status::bad_request;
      if (e.code() == ErrorCode::kUnknownTask) status = http::status::not_found;
      else if (e.code() == ErrorCode::kDuplicateTask) status = http::status::conflict;
      else if (e.code() == ErrorCode::kInvalidArgument) status = http::status::conflict;
      return error_response(status, std::string(error_code_name(e.code())), e.what(), v);
    }
  }

  void accept_http() {
    http_acceptor.async_accept([this](beast::error_code ec, tcp::socket sock) {
      if (ec) {
        if (!http_acceptor.is_open()) return;
      } else {
        std::make_shared<HttpSession>(*this, std::move(sock))->start();
      }
      accept_http();
    });
  }

  static void listen(tcp::acceptor& acc, const std::string& host, std::uint16_t port) {
    const tcp::endpoint ep(asio::ip::make_address(host), port);
    acc.open(ep.protocol());
    acc.set_option(asio::socket_base::reuse_address(true));
    acc.bind(ep);
    acc.listen();
  }

  void shutdown() {
    beast::error_code ec;
    tcp_acceptor.close(ec);
    http_acceptor.close(ec);
    tick_timer.cancel();
    signals.cancel(ec);
    for (auto& [id, c] : conns) c->close();
    conns.clear();
    io.stop();
  }
};

CoordinatorServer::CoordinatorServer(ServerConfig config) : impl_(std::make_unique<Impl>(std::move(config))) {}

CoordinatorServer::~CoordinatorServer() { stop(); }

void CoordinatorServer::start() {
  Impl& s = *impl_;
  try {
    Impl::listen(s.tcp_acceptor, s.cfg.bind_address, s.cfg.tcp_port);
    Impl::listen(s.http_acceptor, s.cfg.bind_address, s.cfg.http_port);
    s.bound_tcp = s.tcp_acceptor.local_endpoint().port();
    s.bound_http = s.http_acceptor.local_endpoint().port();
  } catch (const boost::system::system_error& e) {
    throw Error(ErrorCode::kIo, std::string("cannot bind: ") + e.what());
  }
  s.accept_tcp();
  s.accept_http();
  s.reschedule();
  {
    std::lock_guard lock(s.mu);
    s.running = true;
  }
  s.thread = std::thread([&s] {
    s.io.run();
    std::lock_guard lock(s.mu);
    s.stopped = true;
    s.cv.notify_all();
  });
  spdlog::info("coordinator listening: tcp {}:{} http {}:{}", s.cfg.bind_address, tcp_port(), s.cfg.bind_address,
               http_port());
}

void CoordinatorServer::stop() {
  Impl& s = *impl_;
  {
    std::lock_guard lock(s.mu);
    if (!s.running) return;
    s.running = false;
  }
  asio::post(s.io, [&s] { s.shutdown(); });
  if (s.thread.joinable()) s.thread.join();
}

void CoordinatorServer::wait(bool handle_signals) {
  Impl& s = *impl_;
  if (handle_signals) {
    asio::post(s.io, [&s] {
      s.signals.add(SIGINT);
      s.signals.add(SIGTERM);
      s.signals.async_wait([&s](beast::error_code ec, int sig) {
        if (ec) return;
        spdlog::info("signal {}; shutting down", sig);
        s.shutdown();
      });
    });
  }
  std::unique_lock lock(s.mu);
  s.cv.wait(lock, [&s] { return s.stopped; });
}

std::uint16_t CoordinatorServer::tcp_port() const { return impl_->bound_tcp; }
std::uint16_t CoordinatorServer::http_port() const { return impl_->bound_http; }

}  // namespace disco
