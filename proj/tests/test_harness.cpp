#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "support.hpp"

using namespace mtmsim;
using namespace mtmsim::test;

TEST(EventLog, ChainAndTamperDetection) {
  EventLog log;
  log.append("A", "create", to_bytes("x"));
  log.append("A", "boot");
  log.append("B", "send", to_bytes("y"));
  EXPECT_TRUE(log.verify());
  EXPECT_EQ(log.entries()[1].predecessor, log.entries()[0].digest());
  EXPECT_EQ(log.head(), log.entries().back().digest());
  EXPECT_EQ(log.entries()[2].sequence, 2u);

  Writer w;
  log.encode(w);
  Reader r(w.data());
  auto back = EventLog::decode(r);
  EXPECT_EQ(back.entries(), log.entries());

  auto bytes = w.data();
  bytes[bytes.size() - 5] ^= 1;
  Reader tampered(bytes);
  bool detected = false;
  try {
    detected = !EventLog::decode(tampered).verify();
  } catch (const Error&) {
    detected = true;
  }
  EXPECT_TRUE(detected);
}

TEST(EventLog, EmptyHeadIsZero) {
  EventLog log;
  EXPECT_TRUE(log.head().is_zero());
  EXPECT_TRUE(log.verify());
}

class StateFileTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    world_ = std::make_unique<World>(World::make(21));
    file_ = encode_state_file(world_->source, "pw");
  }
  static void TearDownTestSuite() { world_.reset(); }
  static std::unique_ptr<World> world_;
  static Bytes file_;
};
std::unique_ptr<World> StateFileTest::world_;
Bytes StateFileTest::file_;

TEST_F(StateFileTest, LayoutAndRoundTrip) {
  EXPECT_EQ(Bytes(file_.begin(), file_.begin() + 8), to_bytes("MTMSIM01"));
  EXPECT_EQ(file_[8], kStateVersion);
  auto back = decode_state_file(default_suite(), file_, "pw");
  EXPECT_EQ(encode_state_file(back, "pw"), file_);
  EXPECT_EQ(back.log.head(), world_->source.log.head());
  EXPECT_TRUE(signs_with(back, "RO", world_->key));
}

TEST_F(StateFileTest, SecretsNotInFile) {
  EXPECT_FALSE(contains(file_, to_bytes("mtmsim:DM:kernel")));
  EXPECT_FALSE(contains(file_, to_bytes("mtmsim-device-v1")));
}

TEST_F(StateFileTest, Failures) {
  auto code = [](ByteView f, std::string_view pw) {
    try {
      decode_state_file(default_suite(), f, pw);
    } catch (const Error& e) {
      return e.code();
    }
    return Errc::ok;
  };
  EXPECT_EQ(code(file_, "wrong"), Errc::decrypt_failed);
  EXPECT_EQ(code(ByteView(file_).first(4), "pw"), Errc::bad_magic);
  auto truncated = code(ByteView(file_).first(file_.size() - 10), "pw");
  EXPECT_TRUE(truncated == Errc::bad_magic || truncated == Errc::decrypt_failed) << to_string(truncated);
  auto bad_magic = file_;
  bad_magic[0] = 'X';
  EXPECT_EQ(code(bad_magic, "pw"), Errc::bad_magic);
  auto bad_version = file_;
  bad_version[8] = 2;
  EXPECT_EQ(code(bad_version, "pw"), Errc::version_mismatch);
  auto flipped = file_;
  flipped[file_.size() / 2] ^= 0x10;
  EXPECT_EQ(code(flipped, "pw"), Errc::decrypt_failed);
}

TEST_F(StateFileTest, PersistAndLoadFromDisk) {
  auto dir = std::filesystem::temp_directory_path() / "mtmsim-state-test";
  std::filesystem::create_directories(dir);
  auto path = dir / "a.mtmsim";
  persist_state(world_->source, path, "pw");
  auto back = load_state(default_suite(), path, "pw");
  EXPECT_EQ(back.log.head(), world_->source.log.head());
  EXPECT_THROW(load_state(default_suite(), dir / "missing.mtmsim", "pw"), Error);
  std::filesystem::remove_all(dir);
}

TEST(FaultPlan, ParseAndPrint) {
  auto plan = FaultPlan::parse("drop:package,bitflip:offer@77,duplicate:notice#2,reorder,tamper:*#3@5");
  ASSERT_EQ(plan.faults.size(), 5u);
  EXPECT_EQ(plan.faults[0], (Fault{FaultKind::drop, MessageType::migration_package, 1, 0}));
  EXPECT_EQ(plan.faults[1], (Fault{FaultKind::bitflip, MessageType::migration_offer, 1, 77}));
  EXPECT_EQ(plan.faults[2], (Fault{FaultKind::duplicate, MessageType::migration_notice, 2, 0}));
  EXPECT_EQ(plan.faults[3], (Fault{FaultKind::reorder, std::nullopt, 1, 0}));
  EXPECT_EQ(plan.faults[4], (Fault{FaultKind::tamper, std::nullopt, 3, 5}));
  EXPECT_EQ(FaultPlan::parse(plan.to_string()).faults, plan.faults);
  EXPECT_TRUE(FaultPlan::parse("").empty());
  for (auto bad : {"explode", "drop:parcel", "drop#0", "drop#x", "bitflip@"}) EXPECT_THROW(FaultPlan::parse(bad), Error) << bad;
}

TEST(FaultPlan, MessageNames) {
  for (std::uint8_t t = 1; t <= kMessageTypeCount; ++t) {
    auto type = static_cast<MessageType>(t);
    EXPECT_EQ(message_type_from_name(short_name(type)), type);
  }
  EXPECT_FALSE(message_type_from_name("*").has_value());
}

namespace {

ProtocolMessage msg(MessageType t, std::uint8_t marker) {
  return ProtocolMessage{t, Digest{}, {Bytes{marker}}};
}

std::vector<std::uint8_t> drain(Channel& ch, const std::string& to) {
  std::vector<std::uint8_t> markers;
  while (auto wire = ch.receive(to)) markers.push_back(ProtocolMessage::decode(*wire).fields[0][0]);
  return markers;
}

}  // namespace

class ChannelTest : public ::testing::TestWithParam<TransportKind> {};

TEST_P(ChannelTest, DeliversInOrder) {
  Channel ch(default_suite(), "a", "b", {}, GetParam());
  for (std::uint8_t i = 0; i < 5; ++i) ch.send("a", msg(MessageType::migration_hello, i));
  ch.send("b", msg(MessageType::migration_offer, 9));
  EXPECT_EQ(drain(ch, "b"), (std::vector<std::uint8_t>{0, 1, 2, 3, 4}));
  EXPECT_EQ(drain(ch, "a"), (std::vector<std::uint8_t>{9}));
  EXPECT_TRUE(ch.idle());
  EXPECT_EQ(ch.sent_frames(), 6u);
}

TEST_P(ChannelTest, Faults) {
  Channel ch(default_suite(), "a", "b", FaultPlan::parse("drop:hello#2,duplicate:hello#3,reorder:hello#4,bitflip:hello#6@3"),
             GetParam());
  for (std::uint8_t i = 1; i <= 6; ++i) ch.send("a", msg(MessageType::migration_hello, i));
  EXPECT_EQ(drain(ch, "b"), (std::vector<std::uint8_t>{1, 3, 3, 5, 4}));
  EXPECT_EQ(ch.rejected_frames(), 1u);
}

TEST_P(ChannelTest, HeldFrameReleasedWhenQueueEmpty) {
  Channel ch(default_suite(), "a", "b", FaultPlan::parse("reorder"), GetParam());
  ch.send("a", msg(MessageType::migration_ack, 1));
  EXPECT_FALSE(ch.idle());
  EXPECT_EQ(drain(ch, "b"), (std::vector<std::uint8_t>{1}));
  EXPECT_TRUE(ch.idle());
}

TEST_P(ChannelTest, TamperPassesMacAndObserverSeesTraffic) {
  Channel ch(default_suite(), "a", "b", FaultPlan::parse("tamper:ack@344"), GetParam());
  std::vector<std::string> events;
  ch.set_observer([&](const std::string& who, const std::string& action, ByteView) { events.push_back(who + ":" + action); });
  ch.send("a", msg(MessageType::migration_ack, 1));
  auto wire = ch.receive("b");
  ASSERT_TRUE(wire.has_value());
  EXPECT_EQ(ProtocolMessage::decode(*wire).fields[0][0], 0);  // bit 344 is the low bit of the one payload byte
  EXPECT_EQ(events, (std::vector<std::string>{"a:send", "b:receive"}));
  EXPECT_THROW(ch.send("c", msg(MessageType::migration_ack, 1)), Error);
}

INSTANTIATE_TEST_SUITE_P(Transports, ChannelTest, ::testing::Values(TransportKind::in_process, TransportKind::socket));

TEST(Transport, SocketCarriesLargeFrames) {
  auto t = make_transport(TransportKind::socket);
  Bytes big(200000, 0x5a);
  t->push(big);
  t->push(to_bytes("small"));
  EXPECT_EQ(t->pending(), 2u);
  EXPECT_EQ(t->pop(), big);
  EXPECT_EQ(t->pop(), to_bytes("small"));
  EXPECT_FALSE(t->pop().has_value());
}

TEST(Takeown, SocketMatchesInProcess) {
  for (auto plan : {"", "drop:grant", "tamper:request@99", "bitflip:request@4"}) {
    SimDevice a = device_create(default_suite(), "X", 3, DmIdentity::standard());
    SimDevice b = device_create(default_suite(), "X", 3, DmIdentity::standard());
    a.boot();
    b.boot();
    RemoteOwnerAgent ra(default_suite(), AgentConfig{}), rb(default_suite(), AgentConfig{});
    TakeOwnershipRun run;
    run.faults = FaultPlan::parse(plan);
    auto oa = run_takeown(a, ra, run);
    run.transport = TransportKind::socket;
    auto ob = run_takeown(b, rb, run);
    EXPECT_EQ(oa.status, ob.status) << plan;
    EXPECT_EQ(a.log.head(), b.log.head()) << plan;
  }
}

TEST(Devices, IdentityAndDeterminism) {
  auto a = device_create(default_suite(), "N", 5, DmIdentity::standard());
  auto b = device_create(default_suite(), "N", 5, DmIdentity::standard());
  auto c = device_create(default_suite(), "N", 6, DmIdentity::standard());
  EXPECT_EQ(a.platform.device_id(), b.platform.device_id());
  EXPECT_NE(a.platform.device_id(), c.platform.device_id());
  a.boot();
  b.boot();
  EXPECT_EQ(a.log.head(), b.log.head());
  EXPECT_TRUE(a.log.verify());
}

TEST(Attestation, RequiresOwnedSubsystem) {
  auto d = device_create(default_suite(), "N", 5, DmIdentity::standard());
  d.boot();
  EXPECT_THROW(attest(d, "RO", Nonce{}), Error);
}
