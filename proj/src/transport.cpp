#include "fedseg/transport.hpp"

#include <chrono>
#include <cstring>

#include "fedseg/errors.hpp"
#include "fedseg/params.hpp"

namespace fedseg {

const char* msg_type_name(MsgType t) {
  switch (t) {
    case MsgType::kRegister: return "Register";
    case MsgType::kTaskAssign: return "TaskAssign";
    case MsgType::kModelPayload: return "ModelPayload";
    case MsgType::kResultSubmit: return "ResultSubmit";
    case MsgType::kVariatePayload: return "VariatePayload";
    case MsgType::kRoundBarrier: return "RoundBarrier";
    case MsgType::kHeartbeat: return "Heartbeat";
    case MsgType::kAbort: return "Abort";
  }
  return "?";
}

void Envelope::seal() {
  payload_crc = crc32_of({payload.data(), payload.size()});
}

bool Envelope::crc_ok() const {
  return payload_crc == crc32_of({payload.data(), payload.size()});
}

namespace {

constexpr std::uint8_t kMagic[4] = {'F', 'F', 'E', 'V'};

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 24));
}

// Bounds-checked cursor; every failure carries the absolute byte offset.
class FrameReader {
 public:
  explicit FrameReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::size_t offset() const { return off_; }

  std::uint8_t u8() {
    need(1, "u8 field");
    return bytes_[off_++];
  }
  std::uint16_t u16() {
    need(2, "u16 field");
    std::uint16_t v = static_cast<std::uint16_t>(
        bytes_[off_] | (bytes_[off_ + 1] << 8));
    off_ += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4, "u32 field");
    std::uint32_t v = static_cast<std::uint32_t>(bytes_[off_]) |
                      (static_cast<std::uint32_t>(bytes_[off_ + 1]) << 8) |
                      (static_cast<std::uint32_t>(bytes_[off_ + 2]) << 16) |
                      (static_cast<std::uint32_t>(bytes_[off_ + 3]) << 24);
    off_ += 4;
    return v;
  }
  std::span<const std::uint8_t> raw(std::size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.subspan(off_, n);
    off_ += n;
    return s;
  }
  void need(std::size_t n, const char* what) const {
    if (off_ + n > bytes_.size())
      throw MalformedFrame(std::string("truncated frame reading ") + what,
                           off_);
  }
  bool exhausted() const { return off_ == bytes_.size(); }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t off_ = 0;
};

}  // namespace

std::vector<std::uint8_t> frame(const Envelope& env) {
  if (env.sender.size() > 0xffff || env.recipient.size() > 0xffff)
    throw MalformedFrame("node id longer than 65535 bytes", 0);
  std::vector<std::uint8_t> body;
  body.push_back(static_cast<std::uint8_t>(env.msg_type));
  put_u16(body, static_cast<std::uint16_t>(env.sender.size()));
  body.insert(body.end(), env.sender.begin(), env.sender.end());
  put_u16(body, static_cast<std::uint16_t>(env.recipient.size()));
  body.insert(body.end(), env.recipient.begin(), env.recipient.end());
  put_u32(body, env.round);
  put_u32(body, static_cast<std::uint32_t>(env.payload.size()));
  body.insert(body.end(), env.payload.begin(), env.payload.end());
  put_u32(body, env.payload_crc);

  std::vector<std::uint8_t> out;
  out.reserve(body.size() + 12);
  out.insert(out.end(), kMagic, kMagic + 4);
  put_u32(out, static_cast<std::uint32_t>(body.size() + 4));  // body + crc
  out.insert(out.end(), body.begin(), body.end());
  put_u32(out, crc32_of({out.data(), out.size()}));
  return out;
}

Envelope unframe(std::span<const std::uint8_t> bytes) {
  FrameReader r(bytes);
  auto magic = r.raw(4, "magic");
  if (std::memcmp(magic.data(), kMagic, 4) != 0)
    throw MalformedFrame("bad frame magic", 0);
  std::uint32_t body_len = r.u32();
  if (bytes.size() != 8u + body_len)
    throw MalformedFrame("frame length field disagrees with buffer size", 4);
  if (body_len < 4) throw MalformedFrame("frame too short for its CRC", 4);

  Envelope env;
  std::uint8_t mt = r.u8();
  if (mt > static_cast<std::uint8_t>(MsgType::kAbort))
    throw MalformedFrame("unknown message type " + std::to_string(mt),
                         r.offset() - 1);
  env.msg_type = static_cast<MsgType>(mt);
  std::uint16_t slen = r.u16();
  auto sb = r.raw(slen, "sender id");
  env.sender.assign(sb.begin(), sb.end());
  std::uint16_t rlen = r.u16();
  auto rb = r.raw(rlen, "recipient id");
  env.recipient.assign(rb.begin(), rb.end());
  env.round = r.u32();
  std::uint32_t plen = r.u32();
  auto pb = r.raw(plen, "payload");
  env.payload.assign(pb.begin(), pb.end());
  env.payload_crc = r.u32();

  std::size_t crc_off = r.offset();
  std::uint32_t expect = crc32_of({bytes.data(), crc_off});
  std::uint32_t stored = r.u32();
  if (stored != expect) throw MalformedFrame("frame CRC mismatch", crc_off);
  if (!r.exhausted())
    throw MalformedFrame("trailing bytes after frame", r.offset());
  return env;
}

void SimBus::set_default_link(LinkModel link) {
  std::lock_guard<std::mutex> lock(mu_);
  default_link_ = link;
}

void SimBus::set_link(const std::string& sender, const std::string& recipient,
                      LinkModel link) {
  std::lock_guard<std::mutex> lock(mu_);
  links_[{sender, recipient}] = link;
}

void SimBus::register_node(const std::string& id) {
  std::lock_guard<std::mutex> lock(mu_);
  queues_[id];  // idempotent
}

void SimBus::send(const Envelope& env) {
  // framed size is the accounted quantity so both backends agree byte-for-byte
  std::size_t framed = frame(env).size();
  std::lock_guard<std::mutex> lock(mu_);
  auto it = queues_.find(env.recipient);
  if (it == queues_.end())
    throw PeerDisconnected("unknown recipient node: " + env.recipient);
  LinkModel link = default_link_;
  if (auto li = links_.find({env.sender, env.recipient}); li != links_.end())
    link = li->second;
  auto& s = stats_[{env.sender, env.recipient}];
  s.messages += 1;
  s.bytes += framed;
  s.latency_seconds += link.latency_seconds;
  if (link.bytes_per_second > 0.0)
    s.latency_seconds += static_cast<double>(framed) / link.bytes_per_second;
  it->second.pending.push_back(env);
  cv_.notify_all();
}

Envelope SimBus::recv(const std::string& node, double timeout_seconds) {
  std::unique_lock<std::mutex> lock(mu_);
  auto it = queues_.find(node);
  if (it == queues_.end())
    throw PeerDisconnected("recv on unregistered node: " + node);
  auto deadline = std::chrono::steady_clock::now() +
                  std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                      std::chrono::duration<double>(timeout_seconds));
  while (it->second.pending.empty()) {
    if (cv_.wait_until(lock, deadline) == std::cv_status::timeout &&
        it->second.pending.empty())
      throw Timeout("recv timeout on node " + node + " after " +
                    std::to_string(timeout_seconds) + " s");
  }
  Envelope env = std::move(it->second.pending.front());
  it->second.pending.pop_front();
  lock.unlock();
  if (!env.crc_ok())
    throw CrcMismatch("poisoned message from " + env.sender + " to " + node);
  return env;
}

StatsMap SimBus::stats() const {
  std::lock_guard<std::mutex> lock(mu_);
  return stats_;
}

}  // namespace fedseg
