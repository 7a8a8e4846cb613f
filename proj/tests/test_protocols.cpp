#include <gtest/gtest.h>

#include "golden_messages.hpp"
#include "support.hpp"

using namespace mtmsim;
using namespace mtmsim::test;

TEST(Envelope, Layout) {
  Digest sid;
  sid.bytes.fill(0xaa);
  ProtocolMessage m{MessageType::migration_ack, sid, {to_bytes("x"), {}}};
  auto wire = m.encode();
  ASSERT_EQ(wire.size(), 1u + 1 + 32 + 4 + (5 + 1) + 5);
  EXPECT_EQ(wire[0], kProtocolVersion);
  EXPECT_EQ(wire[1], 7);
  EXPECT_EQ(to_hex(ByteView(wire).subspan(34, 4)), "0000000b");
  EXPECT_EQ(to_hex(ByteView(wire).subspan(38)), "010000000178" "0200000000");
  EXPECT_EQ(m.header(), Bytes(wire.begin(), wire.begin() + 34));
  EXPECT_EQ(ProtocolMessage::decode(wire), m);
}

TEST(Envelope, StrictDecode) {
  ProtocolMessage m{MessageType::migration_notice, Digest{}, {to_bytes("a")}};
  auto wire = m.encode();

  auto bad_version = wire;
  bad_version[0] = 2;
  try {
    ProtocolMessage::decode(bad_version);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::version_mismatch);
  }

  auto bad_type = wire;
  bad_type[1] = 0;
  EXPECT_THROW(ProtocolMessage::decode(bad_type), Error);
  bad_type[1] = 9;
  EXPECT_THROW(ProtocolMessage::decode(bad_type), Error);

  auto trailing = wire;
  trailing.push_back(0);
  EXPECT_THROW(ProtocolMessage::decode(trailing), Error);

  auto bad_tag = wire;
  bad_tag[38] = 2;
  EXPECT_THROW(ProtocolMessage::decode(bad_tag), Error);

  for (std::size_t n = 0; n < wire.size(); ++n)
    EXPECT_THROW(ProtocolMessage::decode(ByteView(wire).first(n)), Error) << n;
}

TEST(TypedMessages, RoundTripEveryType) {
  for (const auto& [name, m] : golden_messages()) {
    auto wire = m.encode();
    auto back = ProtocolMessage::decode(wire);
    EXPECT_EQ(back, m) << name;
    switch (m.type) {
      case MessageType::takeown_request: EXPECT_EQ(TakeOwnershipRequest::from_message(back).to_message(m.session_id), m); break;
      case MessageType::takeown_grant: EXPECT_EQ(TakeOwnershipGrant::from_message(back).to_message(m.session_id), m); break;
      case MessageType::migration_hello: EXPECT_EQ(MigrationHello::from_message(back).to_message(m.session_id), m); break;
      case MessageType::migration_offer: EXPECT_EQ(MigrationOffer::from_message(back).to_message(m.session_id), m); break;
      case MessageType::migration_package: EXPECT_EQ(MigrationPackage::from_message(back).to_message(m.session_id), m); break;
      case MessageType::migration_notice: EXPECT_EQ(MigrationNotice::from_message(back).to_message(m.session_id), m); break;
      case MessageType::migration_ack: EXPECT_EQ(MigrationAck::from_message(back).to_message(m.session_id), m); break;
      case MessageType::migration_error: EXPECT_EQ(MigrationError::from_message(back).to_message(m.session_id), m); break;
    }
  }
}

TEST(TypedMessages, WrongTypeRejected) {
  auto ack = MigrationAck{true}.to_message(Digest{});
  EXPECT_THROW(MigrationNotice::from_message(ack), Error);
  auto fewer = ack;
  fewer.fields.clear();
  EXPECT_THROW(MigrationAck::from_message(fewer), Error);
}

TEST(SessionIds, BindAllInputs) {
  const auto& suite = default_suite();
  Digest dev = hash(std::string_view("dev"));
  Nonce n{};
  auto base = takeown_session_id(suite, dev, "RO", n);
  EXPECT_NE(base, takeown_session_id(suite, dev, "RO2", n));
  EXPECT_NE(base, takeown_session_id(suite, hash(std::string_view("dev2")), "RO", n));
  n.bytes[3] = 1;
  EXPECT_NE(base, takeown_session_id(suite, dev, "RO", n));

  Digest s = hash(std::string_view("s")), d = hash(std::string_view("d"));
  EXPECT_NE(migration_session_id(suite, s, d, n), migration_session_id(suite, d, s, n));
  EXPECT_EQ(migration_session_id(suite, s, d, n), migration_session_id(suite, s, d, n));
}

TEST(Agent, DeterministicIdentity) {
  const auto& suite = default_suite();
  AgentConfig cfg;
  cfg.seed = 5;
  RemoteOwnerAgent a(suite, cfg), b(suite, cfg);
  EXPECT_EQ(a.identity().root_key, b.identity().root_key);
  EXPECT_EQ(a.transport_public(), b.transport_public());
  cfg.seed = 6;
  RemoteOwnerAgent c(suite, cfg);
  EXPECT_NE(a.identity().root_key, c.identity().root_key);
  EXPECT_TRUE(verify_policy(suite, a.policy_template(), a.identity().root_key));
  EXPECT_EQ(a.expected_pristine_pcr(), oracle_extend(Digest::zero(), oracle_sha256(pristine_engine_image())));
}

TEST(Agent, GarbageRequestIsDecryptFailed) {
  RemoteOwnerAgent agent(default_suite(), AgentConfig{});
  try {
    agent.process_request(to_bytes("not a message"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::decrypt_failed);
  }
}
