#pragma once

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <map>
#include <mutex>
#include <span>
#include <string>
#include <vector>

namespace fedseg {

enum class MsgType : std::uint8_t {
  kRegister = 0,
  kTaskAssign = 1,
  kModelPayload = 2,
  kResultSubmit = 3,
  kVariatePayload = 4,
  kRoundBarrier = 5,
  kHeartbeat = 6,
  kAbort = 7,
};

const char* msg_type_name(MsgType t);

struct Envelope {
  MsgType msg_type = MsgType::kHeartbeat;
  std::string sender;
  std::string recipient;
  std::uint32_t round = 0;
  std::vector<std::uint8_t> payload;
  std::uint32_t payload_crc = 0;  // filled by seal(); checked on delivery

  void seal();  // recomputes payload_crc
  bool crc_ok() const;

  bool operator==(const Envelope&) const = default;
};

// Wire framing, bit-exact:
//   'F''F''E''V', u32 LE body length (everything after this field, CRC
//   included); body: msg_type u8, sender len u16 LE + bytes, recipient len
//   u16 LE + bytes, round u32 LE, payload len u32 LE + bytes, payload_crc
//   u32 LE; then CRC32 (zlib) over all preceding bytes, u32 LE.
std::vector<std::uint8_t> frame(const Envelope& env);
Envelope unframe(std::span<const std::uint8_t> bytes);

// Per-(sender, recipient) directed link counters; latency is modeled from the
// link parameters, not measured.
struct ChannelStats {
  std::uint64_t messages = 0;
  std::uint64_t bytes = 0;      // framed bytes, header included
  double latency_seconds = 0.0;

  bool operator==(const ChannelStats&) const = default;
};

struct LinkModel {
  double latency_seconds = 0.0;
  double bytes_per_second = 0.0;  // 0 = infinite bandwidth
};

using StatsMap = std::map<std::pair<std::string, std::string>, ChannelStats>;

class Transport {
 public:
  virtual ~Transport() = default;

  virtual void register_node(const std::string& id) = 0;
  // Exactly-once, per-(sender, recipient) in-order delivery.
  virtual void send(const Envelope& env) = 0;
  // Blocks up to timeout_seconds; throws Timeout when nothing arrives and
  // CrcMismatch when the head-of-queue message arrived poisoned.
  virtual Envelope recv(const std::string& node, double timeout_seconds) = 0;
  virtual StatsMap stats() const = 0;
};

// In-process bus: one queue per node, modeled link costs, thread-safe.
class SimBus : public Transport {
 public:
  SimBus() = default;

  void set_default_link(LinkModel link);
  void set_link(const std::string& sender, const std::string& recipient,
                LinkModel link);

  void register_node(const std::string& id) override;
  void send(const Envelope& env) override;
  Envelope recv(const std::string& node, double timeout_seconds) override;
  StatsMap stats() const override;

 private:
  struct Queue {
    std::deque<Envelope> pending;
  };

  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::map<std::string, Queue> queues_;
  StatsMap stats_;
  LinkModel default_link_;
  std::map<std::pair<std::string, std::string>, LinkModel> links_;
};

}  // namespace fedseg
