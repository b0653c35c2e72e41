#pragma once

// Minimal blob protocol over TCP.
//
//   request  = opcode u8 | id[32] | (PUT: len u64 LE | payload)
//   response = status u8 | (GET OK: len u64 LE | payload)
//
// One connection carries any number of requests. PUT ids must equal
// SHA-256(payload); the server checks and answers ERROR otherwise.

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <charconv>
#include <cstring>
#include <list>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <type_traits>

#include "sefrag/bytes.hpp"
#include "sefrag/dispersion.hpp"
#include "sefrag/error.hpp"

namespace sefrag::wire {

enum class Opcode : std::uint8_t { put = 0x01, get = 0x02, remove = 0x03, stat = 0x04 };
enum class Status : std::uint8_t { ok = 0x00, not_found = 0x01, error = 0x02 };

inline constexpr std::uint64_t kMaxPayload = 1ull << 30;
inline constexpr std::size_t kIdSize = 32;

struct Endpoint {
  std::string host;
  std::uint16_t port = 0;

  /// Parses "host:port"; the host may be empty, meaning all interfaces / loopback.
  static Endpoint parse(std::string_view text) {
    const auto colon = text.rfind(':');
    if (colon == std::string_view::npos) throw std::invalid_argument("address must be host:port");
    Endpoint ep;
    ep.host = std::string(text.substr(0, colon));
    auto digits = text.substr(colon + 1);
    unsigned port = 0;
    auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), port);
    if (ec != std::errc{} || ptr != digits.data() + digits.size() || port > 65535) {
      throw std::invalid_argument("invalid port in address");
    }
    ep.port = static_cast<std::uint16_t>(port);
    return ep;
  }

  [[nodiscard]] std::string str() const { return host + ":" + std::to_string(port); }
};

/// Owning file descriptor.
class Socket {
 public:
  Socket() noexcept = default;
  explicit Socket(int fd) noexcept : fd_(fd) {}
  Socket(Socket&& other) noexcept : fd_(std::exchange(other.fd_, -1)) {}
  Socket& operator=(Socket&& other) noexcept {
    if (this != &other) {
      reset();
      fd_ = std::exchange(other.fd_, -1);
    }
    return *this;
  }
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;
  ~Socket() { reset(); }

  [[nodiscard]] int fd() const noexcept { return fd_; }
  [[nodiscard]] bool valid() const noexcept { return fd_ >= 0; }
  void reset() noexcept {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

  /// Returns false on error or orderly shutdown.
  bool send_all(ByteView data) const noexcept {
    std::size_t sent = 0;
    while (sent < data.size()) {
      const ssize_t n = ::send(fd_, data.data() + sent, data.size() - sent, MSG_NOSIGNAL);
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) return false;
      sent += static_cast<std::size_t>(n);
    }
    return true;
  }

  bool recv_all(std::span<std::uint8_t> out) const noexcept {
    std::size_t got = 0;
    while (got < out.size()) {
      const ssize_t n = ::recv(fd_, out.data() + got, out.size() - got, 0);
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) return false;
      got += static_cast<std::size_t>(n);
    }
    return true;
  }

 private:
  int fd_ = -1;
};

inline Socket connect_to(const Endpoint& ep) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  const std::string host = ep.host.empty() ? "127.0.0.1" : ep.host;
  const std::string port = std::to_string(ep.port);
  if (::getaddrinfo(host.c_str(), port.c_str(), &hints, &res) != 0) {
    throw Error(Errc::backend_unavailable, "cannot resolve " + ep.str());
  }
  Socket sock;
  for (addrinfo* ai = res; ai != nullptr; ai = ai->ai_next) {
    Socket candidate(::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol));
    if (!candidate.valid()) continue;
    if (::connect(candidate.fd(), ai->ai_addr, ai->ai_addrlen) == 0) {
      sock = std::move(candidate);
      break;
    }
  }
  ::freeaddrinfo(res);
  if (!sock.valid()) throw Error(Errc::backend_unavailable, "cannot connect to " + ep.str());
  int one = 1;
  ::setsockopt(sock.fd(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  return sock;
}

struct Response {
  Status status = Status::error;
  Bytes payload;
};

/// One synchronous protocol connection.
class BlobClient {
 public:
  explicit BlobClient(const Endpoint& ep) : sock_(connect_to(ep)) {}

  /// Sends an arbitrary request frame; exposed so tests can probe malformed opcodes.
  Response request(std::uint8_t opcode, std::span<const std::uint8_t, kIdSize> id,
                   std::optional<ByteView> payload = std::nullopt) {
    ByteWriter w;
    w.u8(opcode).raw(id);
    if (payload) w.u64(payload->size()).raw(*payload);
    const Bytes frame = std::move(w).take();
    if (!sock_.send_all(frame)) throw Error(Errc::backend_unavailable, "send failed");

    Response r;
    std::uint8_t status = 0;
    if (!sock_.recv_all({&status, 1})) throw Error(Errc::backend_unavailable, "connection closed");
    r.status = static_cast<Status>(status);
    if (opcode == static_cast<std::uint8_t>(Opcode::get) && r.status == Status::ok) {
      std::uint8_t len_bytes[8];
      if (!sock_.recv_all(len_bytes)) throw Error(Errc::backend_unavailable, "connection closed");
      const std::uint64_t len = load_le64(len_bytes);
      if (len > kMaxPayload) throw Error(Errc::protocol_error, "oversized GET response");
      r.payload.resize(len);
      if (!sock_.recv_all(r.payload)) throw Error(Errc::backend_unavailable, "connection closed");
    }
    return r;
  }

  BlobRef put(ByteView payload) {
    const BlobRef ref = BlobRef::of(payload);
    const Response r = request(static_cast<std::uint8_t>(Opcode::put), ref.id, payload);
    if (r.status != Status::ok) throw Error(Errc::io_error, "server rejected PUT " + ref.hex());
    return ref;
  }

  /// Payload exactly as the server sent it.
  Bytes get_raw(const BlobRef& ref) {
    Response r = request(static_cast<std::uint8_t>(Opcode::get), ref.id);
    if (r.status == Status::not_found) throw Error(Errc::not_found, ref.hex());
    if (r.status != Status::ok) throw Error(Errc::io_error, "server failed GET " + ref.hex());
    return std::move(r.payload);
  }

  Bytes get(const BlobRef& ref) {
    Bytes payload = get_raw(ref);
    if (!ref.matches(payload)) throw Error(Errc::corrupt_blob, ref.hex());
    return payload;
  }

  bool remove(const BlobRef& ref) { return simple(Opcode::remove, ref); }
  bool stat(const BlobRef& ref) { return simple(Opcode::stat, ref); }

 private:
  bool simple(Opcode op, const BlobRef& ref) {
    const Response r = request(static_cast<std::uint8_t>(op), ref.id);
    if (r.status == Status::error) throw Error(Errc::io_error, "server error for " + ref.hex());
    return r.status == Status::ok;
  }

  Socket sock_;
};

/// Backend adapter over a BlobClient; connects lazily and retries once on a dropped connection.
class RemoteBackend final : public Backend {
 public:
  explicit RemoteBackend(Endpoint ep) : ep_(std::move(ep)) {}

  [[nodiscard]] std::string name() const override { return "tcp:" + ep_.str(); }

  BlobRef put(ByteView payload) override {
    return call([&](BlobClient& c) { return c.put(payload); });
  }
  Bytes load(const BlobRef& ref) override {
    return call([&](BlobClient& c) { return c.get_raw(ref); });
  }
  bool remove(const BlobRef& ref) override {
    return call([&](BlobClient& c) { return c.remove(ref); });
  }
  bool contains(const BlobRef& ref) override {
    return call([&](BlobClient& c) { return c.stat(ref); });
  }

 private:
  template <typename Fn>
  std::invoke_result_t<Fn&, BlobClient&> call(Fn&& fn) {
    std::lock_guard lock(mutex_);
    for (int attempt = 0;; ++attempt) {
      try {
        if (!client_) client_.emplace(ep_);
        return fn(*client_);
      } catch (const Error& e) {
        if (e.code() != Errc::backend_unavailable) throw;
        client_.reset();
        if (attempt > 0) throw;
      }
    }
  }

  Endpoint ep_;
  std::mutex mutex_;
  std::optional<BlobClient> client_;
};

/// Serves a Backend over the wire protocol, one thread per connection.
/// GET returns stored bytes as they are; clients verify the content hash.
class BlobServer {
 public:
  BlobServer(Endpoint bind, Backend& store) : bind_(std::move(bind)), store_(store) {}
  BlobServer(const BlobServer&) = delete;
  BlobServer& operator=(const BlobServer&) = delete;
  ~BlobServer() { stop(); }

  /// Binds and starts accepting in the background. Returns the bound port (useful with port 0).
  std::uint16_t start() {
    addrinfo hints{};
    hints.ai_family = AF_INET;
    hints.ai_socktype = SOCK_STREAM;
    hints.ai_flags = AI_PASSIVE;
    addrinfo* res = nullptr;
    const std::string port = std::to_string(bind_.port);
    if (::getaddrinfo(bind_.host.empty() ? nullptr : bind_.host.c_str(), port.c_str(), &hints, &res) != 0) {
      throw Error(Errc::bind_error, "cannot resolve " + bind_.str());
    }
    Socket sock(::socket(res->ai_family, res->ai_socktype, res->ai_protocol));
    int one = 1;
    if (sock.valid()) ::setsockopt(sock.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    const bool ok = sock.valid() && ::bind(sock.fd(), res->ai_addr, res->ai_addrlen) == 0 &&
                    ::listen(sock.fd(), SOMAXCONN) == 0;
    ::freeaddrinfo(res);
    if (!ok) throw Error(Errc::bind_error, "cannot bind " + bind_.str() + ": " + std::strerror(errno));

    sockaddr_in addr{};
    socklen_t len = sizeof addr;
    ::getsockname(sock.fd(), reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = ntohs(addr.sin_port);
    listener_ = std::move(sock);
    running_ = true;
    acceptor_ = std::thread([this] { accept_loop(); });
    return port_;
  }

  void stop() {
    if (!running_.exchange(false)) return;
    if (acceptor_.joinable()) acceptor_.join();
    listener_.reset();
    {
      std::lock_guard lock(mutex_);
      for (int fd : open_fds_) ::shutdown(fd, SHUT_RDWR);
    }
    for (auto& t : workers_) {
      if (t.joinable()) t.join();
    }
    workers_.clear();
  }

  [[nodiscard]] std::uint16_t port() const noexcept { return port_; }
  [[nodiscard]] bool running() const noexcept { return running_; }

 private:
  void accept_loop() {
    while (running_) {
      pollfd pfd{listener_.fd(), POLLIN, 0};
      const int ready = ::poll(&pfd, 1, 100);
      if (ready <= 0) continue;
      Socket conn(::accept(listener_.fd(), nullptr, nullptr));
      if (!conn.valid()) continue;
      int one = 1;
      ::setsockopt(conn.fd(), IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
      std::lock_guard lock(mutex_);
      open_fds_.insert(conn.fd());
      workers_.emplace_back([this, c = std::move(conn)]() mutable { serve_connection(std::move(c)); });
    }
  }

  static bool reply(const Socket& conn, Status s) {
    const auto b = static_cast<std::uint8_t>(s);
    return conn.send_all({&b, 1});
  }

  void serve_connection(Socket conn) {
    std::array<std::uint8_t, 1 + kIdSize> head{};
    while (running_ && conn.recv_all(head)) {
      BlobRef ref;
      std::copy(head.begin() + 1, head.end(), ref.id.begin());
      bool alive = true;
      switch (head[0]) {
        case static_cast<std::uint8_t>(Opcode::put): {
          std::uint8_t len_bytes[8];
          if (!conn.recv_all(len_bytes)) {
            alive = false;
            break;
          }
          const std::uint64_t len = load_le64(len_bytes);
          if (len > kMaxPayload) {
            // The payload cannot be skipped safely, so the connection is dropped after replying.
            reply(conn, Status::error);
            alive = false;
            break;
          }
          Bytes payload(len);
          if (!conn.recv_all(payload)) {
            alive = false;
            break;
          }
          Status s = Status::error;
          if (ref.matches(payload)) {
            try {
              store_.put(payload);
              s = Status::ok;
            } catch (const std::exception&) {
            }
          }
          alive = reply(conn, s);
          break;
        }
        case static_cast<std::uint8_t>(Opcode::get): {
          try {
            // Sent unverified: integrity is checked by the reader.
            const Bytes payload = store_.load(ref);
            ByteWriter w;
            w.u8(static_cast<std::uint8_t>(Status::ok)).u64(payload.size()).raw(payload);
            alive = conn.send_all(std::move(w).take());
          } catch (const Error& e) {
            alive = reply(conn, e.code() == Errc::not_found ? Status::not_found : Status::error);
          } catch (const std::exception&) {
            alive = reply(conn, Status::error);
          }
          break;
        }
        case static_cast<std::uint8_t>(Opcode::remove):
        case static_cast<std::uint8_t>(Opcode::stat): {
          Status s = Status::error;
          try {
            const bool hit = head[0] == static_cast<std::uint8_t>(Opcode::remove) ? store_.remove(ref)
                                                                                  : store_.contains(ref);
            s = hit ? Status::ok : Status::not_found;
          } catch (const std::exception&) {
          }
          alive = reply(conn, s);
          break;
        }
        default:
          alive = reply(conn, Status::error);
          break;
      }
      if (!alive) break;
    }
    std::lock_guard lock(mutex_);
    open_fds_.erase(conn.fd());
  }

  Endpoint bind_;
  Backend& store_;
  Socket listener_;
  std::uint16_t port_ = 0;
  std::atomic<bool> running_{false};
  std::thread acceptor_;
  std::mutex mutex_;
  std::set<int> open_fds_;
  std::list<std::thread> workers_;
};

}  // namespace sefrag::wire
