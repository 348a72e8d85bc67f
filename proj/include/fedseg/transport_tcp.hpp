#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "fedseg/transport.hpp"

namespace fedseg {

// Coordinator-side socket backend. Clients connect to the hub and announce
// themselves with a Register frame; every message — including logically
// peer-to-peer ones — is star-routed through the hub, which keeps the
// authoritative per-(sender, recipient) ChannelStats. Routing through the hub
// preserves per-pair ordering and makes byte accounting match SimBus exactly.
class TcpHub : public Transport {
 public:
  explicit TcpHub(std::string node_id);
  ~TcpHub() override;

  // Binds and starts accepting; returns the bound port (useful with port 0).
  std::uint16_t listen(std::uint16_t port);
  void shutdown();

  void register_node(const std::string& id) override;
  void send(const Envelope& env) override;
  Envelope recv(const std::string& node, double timeout_seconds) override;
  StatsMap stats() const override;

 private:
  struct Conn {
    int fd = -1;
    std::mutex write_mu;
    std::thread reader;
  };

  void accept_loop();
  void reader_loop(std::shared_ptr<Conn> conn);
  void route(const std::vector<std::uint8_t>& bytes, const Envelope& env);
  void account(const Envelope& env, std::size_t framed_bytes);

  std::string node_id_;
  int listen_fd_ = -1;
  std::thread accept_thread_;
  std::atomic<bool> stopping_{false};

  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::deque<Envelope> inbox_;
  std::map<std::string, std::shared_ptr<Conn>> clients_;
  std::vector<std::shared_ptr<Conn>> anonymous_;
  StatsMap stats_;
};

// Client-side socket backend: one connection to the hub; send() frames onto
// the socket, recv() parses the next frame addressed to this node.
class TcpClient : public Transport {
 public:
  TcpClient(const std::string& host, std::uint16_t port, std::string node_id);
  ~TcpClient() override;

  const std::string& node_id() const { return node_id_; }

  void register_node(const std::string& id) override;
  void send(const Envelope& env) override;
  Envelope recv(const std::string& node, double timeout_seconds) override;
  StatsMap stats() const override;

 private:
  std::string node_id_;
  int fd_ = -1;
  std::mutex write_mu_;
  StatsMap stats_;
  mutable std::mutex stats_mu_;
};

}  // namespace fedseg
