#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <charconv>
#include <cstring>

#include "mtmsim/harness.hpp"

namespace mtmsim {

namespace {

class InProcessTransport final : public Transport {
 public:
  void push(ByteView frame) override { queue_.emplace_back(frame.begin(), frame.end()); }
  std::optional<Bytes> pop() override {
    if (queue_.empty()) return std::nullopt;
    Bytes f = std::move(queue_.front());
    queue_.pop_front();
    return f;
  }
  std::size_t pending() const override { return queue_.size(); }

 private:
  std::deque<Bytes> queue_;
};

// Loopback stream socket; frames are length-prefixed on the wire.
class SocketTransport final : public Transport {
 public:
  SocketTransport() {
    if (::socketpair(AF_UNIX, SOCK_STREAM, 0, fds_) != 0)
      throw Error(Errc::io_error, std::string("socketpair: ") + std::strerror(errno));
    int size = 4 << 20;
    ::setsockopt(fds_[0], SOL_SOCKET, SO_SNDBUF, &size, sizeof size);
    ::setsockopt(fds_[1], SOL_SOCKET, SO_RCVBUF, &size, sizeof size);
  }
  ~SocketTransport() override {
    ::close(fds_[0]);
    ::close(fds_[1]);
  }
  SocketTransport(const SocketTransport&) = delete;
  SocketTransport& operator=(const SocketTransport&) = delete;

  void push(ByteView frame) override {
    Writer w;
    w.bytes(frame);
    write_all(w.data());
    ++pending_;
  }

  std::optional<Bytes> pop() override {
    if (pending_ == 0) return std::nullopt;
    Bytes len(4);
    read_all(len);
    Reader r(len);
    Bytes frame(r.u32());
    read_all(frame);
    --pending_;
    return frame;
  }

  std::size_t pending() const override { return pending_; }

 private:
  void write_all(ByteView data) {
    std::size_t off = 0;
    while (off < data.size()) {
      auto n = ::write(fds_[0], data.data() + off, data.size() - off);
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) throw Error(Errc::io_error, std::string("socket write: ") + std::strerror(errno));
      off += static_cast<std::size_t>(n);
    }
  }
  void read_all(Bytes& out) {
    std::size_t off = 0;
    while (off < out.size()) {
      auto n = ::read(fds_[1], out.data() + off, out.size() - off);
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) throw Error(Errc::io_error, std::string("socket read: ") + std::strerror(errno));
      off += static_cast<std::size_t>(n);
    }
  }

  int fds_[2] = {-1, -1};
  std::size_t pending_ = 0;
};

constexpr std::pair<MessageType, std::string_view> kShortNames[] = {
    {MessageType::takeown_request, "request"}, {MessageType::takeown_grant, "grant"},
    {MessageType::migration_hello, "hello"},   {MessageType::migration_offer, "offer"},
    {MessageType::migration_package, "package"}, {MessageType::migration_notice, "notice"},
    {MessageType::migration_ack, "ack"},       {MessageType::migration_error, "error"},
};

constexpr std::pair<FaultKind, std::string_view> kFaultNames[] = {
    {FaultKind::drop, "drop"},       {FaultKind::duplicate, "duplicate"}, {FaultKind::reorder, "reorder"},
    {FaultKind::bitflip, "bitflip"}, {FaultKind::tamper, "tamper"},
};

std::uint32_t parse_u32(std::string_view s, std::string_view what) {
  std::uint32_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) throw Error(Errc::scenario_syntax, "bad " + std::string(what));
  return v;
}

void flip_bit(Bytes& data, std::uint32_t bit) {
  if (data.empty()) return;
  auto b = bit % (data.size() * 8);
  data[b / 8] ^= static_cast<std::uint8_t>(1u << (b % 8));
}

}  // namespace

std::unique_ptr<Transport> make_transport(TransportKind kind) {
  if (kind == TransportKind::socket) return std::make_unique<SocketTransport>();
  return std::make_unique<InProcessTransport>();
}

std::string_view to_string(FaultKind k) {
  for (auto [kind, name] : kFaultNames)
    if (kind == k) return name;
  return "unknown";
}

std::string_view short_name(MessageType t) {
  for (auto [type, name] : kShortNames)
    if (type == t) return name;
  return "unknown";
}

std::optional<MessageType> message_type_from_name(std::string_view name) {
  for (auto [type, n] : kShortNames)
    if (n == name) return type;
  return std::nullopt;
}

FaultPlan FaultPlan::parse(std::string_view text) {
  FaultPlan plan;
  while (!text.empty()) {
    auto end = text.find(',');
    auto entry = text.substr(0, end);
    text = end == std::string_view::npos ? std::string_view{} : text.substr(end + 1);
    if (entry.empty()) continue;

    Fault f;
    if (auto at = entry.find('@'); at != std::string_view::npos) {
      f.bit = parse_u32(entry.substr(at + 1), "fault bit");
      entry = entry.substr(0, at);
    }
    if (auto hash_pos = entry.find('#'); hash_pos != std::string_view::npos) {
      f.occurrence = parse_u32(entry.substr(hash_pos + 1), "fault occurrence");
      if (f.occurrence == 0) throw Error(Errc::scenario_syntax, "fault occurrence starts at 1");
      entry = entry.substr(0, hash_pos);
    }
    auto kind = entry.substr(0, entry.find(':'));
    bool known = false;
    for (auto [k, name] : kFaultNames)
      if (name == kind) {
        f.kind = k;
        known = true;
      }
    if (!known) throw Error(Errc::scenario_syntax, "unknown fault kind '" + std::string(kind) + "'");
    if (auto colon = entry.find(':'); colon != std::string_view::npos) {
      auto type = entry.substr(colon + 1);
      if (type != "*") {
        f.type = message_type_from_name(type);
        if (!f.type) throw Error(Errc::scenario_syntax, "unknown message type '" + std::string(type) + "'");
      }
    }
    plan.faults.push_back(f);
  }
  return plan;
}

std::string FaultPlan::to_string() const {
  std::string out;
  for (const auto& f : faults) {
    if (!out.empty()) out += ',';
    out += mtmsim::to_string(f.kind);
    out += ':';
    out += f.type ? std::string(short_name(*f.type)) : "*";
    out += '#' + std::to_string(f.occurrence);
    if (f.kind == FaultKind::bitflip || f.kind == FaultKind::tamper) out += '@' + std::to_string(f.bit);
  }
  return out;
}

// --- channel --------------------------------------------------------------------------

Channel::Channel(const CryptoSuite& suite, std::string a, std::string b, FaultPlan plan, TransportKind kind)
    : suite_(&suite), a_(std::move(a)), b_(std::move(b)), plan_(std::move(plan)) {
  key_ = suite.hash(concat({to_bytes("mtmsim-channel-key"), to_bytes(a_), to_bytes("|"), to_bytes(b_)}));
  to_a_.transport = make_transport(kind);
  to_b_.transport = make_transport(kind);
}

Channel::Direction& Channel::towards(const std::string& to) {
  if (to == a_) return to_a_;
  if (to == b_) return to_b_;
  throw Error(Errc::channel_failed, "unknown endpoint " + to);
}

Bytes Channel::frame(ByteView wire) const {
  auto tag = suite_->mac(key_.view(), wire);
  return concat({tag.view(), wire});
}

void Channel::note(const std::string& endpoint, const std::string& action, ByteView wire) const {
  if (observer_) observer_(endpoint, action, wire);
}

void Channel::send(const std::string& from, const ProtocolMessage& message) { send_wire(from, message.encode()); }

void Channel::send_wire(const std::string& from, Bytes wire) {
  if (from != a_ && from != b_) throw Error(Errc::channel_failed, "unknown endpoint " + from);
  auto& dir = towards(from == a_ ? b_ : a_);
  std::optional<MessageType> type;
  if (wire.size() > 1 && wire[1] >= 1 && wire[1] <= kMessageTypeCount) type = static_cast<MessageType>(wire[1]);
  auto n_any = ++counts_[std::nullopt];
  auto n_type = type ? ++counts_[type] : 0;
  ++sent_;

  bool drop = false, duplicate = false, reorder = false;
  std::vector<std::uint32_t> flips;
  for (const auto& f : plan_.faults) {
    bool hit = f.type ? (f.type == type && f.occurrence == n_type) : f.occurrence == n_any;
    if (!hit) continue;
    switch (f.kind) {
      case FaultKind::drop: drop = true; break;
      case FaultKind::duplicate: duplicate = true; break;
      case FaultKind::reorder: reorder = true; break;
      case FaultKind::bitflip: flips.push_back(f.bit); break;
      case FaultKind::tamper: flip_bit(wire, f.bit); break;
    }
  }
  note(from, "send", wire);
  if (drop) {
    note(from, "fault-drop", wire);
    return;
  }
  Bytes framed = frame(wire);
  for (auto bit : flips) {
    // The MAC prefix is excluded so the flip always lands on message bytes.
    Bytes body(framed.begin() + kDigestSize, framed.end());
    flip_bit(body, bit);
    std::copy(body.begin(), body.end(), framed.begin() + kDigestSize);
  }
  if (reorder && !dir.held) {
    dir.held = framed;
    return;
  }
  dir.transport->push(framed);
  if (duplicate) dir.transport->push(framed);
  if (dir.held) {
    dir.transport->push(*dir.held);
    dir.held.reset();
  }
}

std::optional<Bytes> Channel::receive(const std::string& to) {
  auto& dir = towards(to);
  while (true) {
    auto framed = dir.transport->pop();
    if (!framed && dir.held) {
      framed = std::move(dir.held);
      dir.held.reset();
    }
    if (!framed) return std::nullopt;
    if (framed->size() < kDigestSize) {
      ++rejected_;
      continue;
    }
    Bytes wire(framed->begin() + kDigestSize, framed->end());
    Digest tag;
    std::copy(framed->begin(), framed->begin() + kDigestSize, tag.bytes.begin());
    if (suite_->mac(key_.view(), wire) != tag) {
      ++rejected_;
      note(to, "reject-mac", wire);
      continue;
    }
    note(to, "receive", wire);
    return wire;
  }
}

bool Channel::idle() const {
  return to_a_.transport->pending() == 0 && to_b_.transport->pending() == 0 && !to_a_.held && !to_b_.held;
}

}  // namespace mtmsim
