#include "fedseg/transport_tcp.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <chrono>
#include <cstring>
#include <iostream>

#include "fedseg/errors.hpp"

namespace fedseg {

namespace {

// Reads exactly n bytes; respects an absolute deadline via poll.
// Returns false on clean EOF at a frame boundary (offset 0 only).
bool read_full(int fd, std::uint8_t* dst, std::size_t n,
               std::chrono::steady_clock::time_point deadline,
               bool allow_eof_at_start) {
  std::size_t got = 0;
  while (got < n) {
    auto remain = std::chrono::duration_cast<std::chrono::milliseconds>(
        deadline - std::chrono::steady_clock::now());
    if (remain.count() <= 0) throw Timeout("socket read timed out");
    pollfd pfd{fd, POLLIN, 0};
    int pr = poll(&pfd, 1, static_cast<int>(std::min<long long>(
                               remain.count(), 60000)));
    if (pr < 0) throw PeerDisconnected("poll failed: " +
                                       std::string(strerror(errno)));
    if (pr == 0) continue;
    ssize_t r = ::read(fd, dst + got, n - got);
    if (r == 0) {
      if (got == 0 && allow_eof_at_start) return false;
      throw PeerDisconnected("peer closed connection mid-frame");
    }
    if (r < 0) {
      if (errno == EINTR) continue;
      throw PeerDisconnected("read failed: " + std::string(strerror(errno)));
    }
    got += static_cast<std::size_t>(r);
  }
  return true;
}

void write_full(int fd, const std::uint8_t* src, std::size_t n) {
  std::size_t sent = 0;
  while (sent < n) {
    ssize_t w = ::write(fd, src + sent, n - sent);
    if (w < 0) {
      if (errno == EINTR) continue;
      throw PeerDisconnected("write failed: " + std::string(strerror(errno)));
    }
    sent += static_cast<std::size_t>(w);
  }
}

// Reads one complete frame (or returns empty on clean EOF).
std::vector<std::uint8_t> read_frame(
    int fd, std::chrono::steady_clock::time_point deadline) {
  std::vector<std::uint8_t> bytes(8);
  if (!read_full(fd, bytes.data(), 8, deadline, /*allow_eof_at_start=*/true))
    return {};
  std::uint32_t body_len = static_cast<std::uint32_t>(bytes[4]) |
                           (static_cast<std::uint32_t>(bytes[5]) << 8) |
                           (static_cast<std::uint32_t>(bytes[6]) << 16) |
                           (static_cast<std::uint32_t>(bytes[7]) << 24);
  if (body_len > (64u << 20))
    throw MalformedFrame("frame length exceeds 64 MiB cap", 4);
  bytes.resize(8 + body_len);
  read_full(fd, bytes.data() + 8, body_len, deadline, false);
  return bytes;
}

std::chrono::steady_clock::time_point deadline_in(double seconds) {
  return std::chrono::steady_clock::now() +
         std::chrono::duration_cast<std::chrono::steady_clock::duration>(
             std::chrono::duration<double>(seconds));
}

}  // namespace

TcpHub::TcpHub(std::string node_id) : node_id_(std::move(node_id)) {}

TcpHub::~TcpHub() { shutdown(); }

std::uint16_t TcpHub::listen(std::uint16_t port) {
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd_ < 0) throw PeerDisconnected("socket() failed");
  int one = 1;
  setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = htons(port);
  if (bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) < 0)
    throw PeerDisconnected("bind failed: " + std::string(strerror(errno)));
  if (::listen(listen_fd_, 64) < 0)
    throw PeerDisconnected("listen failed: " + std::string(strerror(errno)));
  socklen_t len = sizeof(addr);
  getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  accept_thread_ = std::thread([this] { accept_loop(); });
  return ntohs(addr.sin_port);
}

void TcpHub::shutdown() {
  if (stopping_.exchange(true)) return;
  if (listen_fd_ >= 0) {
    ::shutdown(listen_fd_, SHUT_RDWR);
    ::close(listen_fd_);
    listen_fd_ = -1;
  }
  if (accept_thread_.joinable()) accept_thread_.join();
  std::vector<std::shared_ptr<Conn>> conns;
  {
    std::lock_guard<std::mutex> lock(mu_);
    for (auto& [id, c] : clients_) conns.push_back(c);
    for (auto& c : anonymous_) conns.push_back(c);
    clients_.clear();
    anonymous_.clear();
  }
  for (auto& c : conns) {
    if (c->fd >= 0) {
      ::shutdown(c->fd, SHUT_RDWR);
      ::close(c->fd);
      c->fd = -1;
    }
  }
  for (auto& c : conns)
    if (c->reader.joinable()) c->reader.join();
  cv_.notify_all();
}

void TcpHub::accept_loop() {
  while (!stopping_) {
    int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0) {
      if (stopping_) break;
      continue;
    }
    int one = 1;
    setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    auto conn = std::make_shared<Conn>();
    conn->fd = fd;
    {
      std::lock_guard<std::mutex> lock(mu_);
      anonymous_.push_back(conn);
    }
    conn->reader = std::thread([this, conn] { reader_loop(conn); });
  }
}

void TcpHub::reader_loop(std::shared_ptr<Conn> conn) {
  std::string bound_id;
  try {
    while (!stopping_) {
      auto bytes = read_frame(conn->fd, deadline_in(3600.0));
      if (bytes.empty()) break;  // clean close
      Envelope env = unframe(bytes);
      if (bound_id.empty() && env.msg_type == MsgType::kRegister) {
        bound_id = env.sender;
        std::lock_guard<std::mutex> lock(mu_);
        clients_[bound_id] = conn;
      }
      account(env, bytes.size());
      route(bytes, env);
    }
  } catch (const Error& e) {
    if (!stopping_)
      std::cerr << "hub: dropping connection"
                << (bound_id.empty() ? "" : " of " + bound_id) << ": "
                << e.what() << "\n";
  }
}

void TcpHub::account(const Envelope& env, std::size_t framed_bytes) {
  std::lock_guard<std::mutex> lock(mu_);
  auto& s = stats_[{env.sender, env.recipient}];
  s.messages += 1;
  s.bytes += framed_bytes;
}

void TcpHub::route(const std::vector<std::uint8_t>& bytes,
                   const Envelope& env) {
  if (env.recipient == node_id_) {
    std::lock_guard<std::mutex> lock(mu_);
    inbox_.push_back(env);
    cv_.notify_all();
    return;
  }
  std::shared_ptr<Conn> target;
  {
    std::lock_guard<std::mutex> lock(mu_);
    auto it = clients_.find(env.recipient);
    if (it != clients_.end()) target = it->second;
  }
  if (!target)
    throw PeerDisconnected("no connected client named " + env.recipient);
  std::lock_guard<std::mutex> wl(target->write_mu);
  write_full(target->fd, bytes.data(), bytes.size());
}

void TcpHub::register_node(const std::string&) {
  // clients announce themselves with Register frames; nothing to do here
}

void TcpHub::send(const Envelope& env) {
  auto bytes = frame(env);
  account(env, bytes.size());
  route(bytes, env);
}

Envelope TcpHub::recv(const std::string& node, double timeout_seconds) {
  if (node != node_id_)
    throw PeerDisconnected("hub recv is only valid for node " + node_id_);
  std::unique_lock<std::mutex> lock(mu_);
  auto deadline = deadline_in(timeout_seconds);
  while (inbox_.empty()) {
    if (cv_.wait_until(lock, deadline) == std::cv_status::timeout &&
        inbox_.empty())
      throw Timeout("hub recv timed out after " +
                    std::to_string(timeout_seconds) + " s");
  }
  Envelope env = std::move(inbox_.front());
  inbox_.pop_front();
  lock.unlock();
  if (!env.crc_ok())
    throw CrcMismatch("poisoned message from " + env.sender);
  return env;
}

StatsMap TcpHub::stats() const {
  std::lock_guard<std::mutex> lock(mu_);
  return stats_;
}

TcpClient::TcpClient(const std::string& host, std::uint16_t port,
                     std::string node_id)
    : node_id_(std::move(node_id)) {
  fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd_ < 0) throw PeerDisconnected("socket() failed");
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(port);
  if (inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1)
    throw PeerDisconnected("bad coordinator address: " + host);
  if (connect(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) < 0)
    throw PeerDisconnected("connect to " + host + ":" + std::to_string(port) +
                           " failed: " + strerror(errno));
  int one = 1;
  setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
}

TcpClient::~TcpClient() {
  if (fd_ >= 0) ::close(fd_);
}

void TcpClient::register_node(const std::string&) {}

void TcpClient::send(const Envelope& env) {
  auto bytes = frame(env);
  {
    std::lock_guard<std::mutex> lock(stats_mu_);
    auto& s = stats_[{env.sender, env.recipient}];
    s.messages += 1;
    s.bytes += bytes.size();
  }
  std::lock_guard<std::mutex> lock(write_mu_);
  write_full(fd_, bytes.data(), bytes.size());
}

Envelope TcpClient::recv(const std::string& node, double timeout_seconds) {
  if (node != node_id_)
    throw PeerDisconnected("client recv is only valid for node " + node_id_);
  auto bytes = read_frame(fd_, deadline_in(timeout_seconds));
  if (bytes.empty()) throw PeerDisconnected("coordinator closed connection");
  Envelope env = unframe(bytes);
  if (!env.crc_ok())
    throw CrcMismatch("poisoned message from " + env.sender);
  return env;
}

StatsMap TcpClient::stats() const {
  std::lock_guard<std::mutex> lock(stats_mu_);
  return stats_;
}

}  // namespace fedseg
