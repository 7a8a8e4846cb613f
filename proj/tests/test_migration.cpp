#include <gtest/gtest.h>

#include "support.hpp"

using namespace mtmsim;
using namespace mtmsim::test;

namespace {

void expect_source_authoritative(World& w) {
  auto info = instance_for(w.source, "RO");
  ASSERT_TRUE(info.has_value());
  EXPECT_EQ(info->lifecycle, Lifecycle::owned);
  EXPECT_TRUE(signs_with(w.source, "RO", w.key));
  auto srk = *w.source.platform.mtm.inspect(w.source_tss().vmtm).srk_id;
  EXPECT_EQ(owned_holders({&w.source, &w.dest}, "RO", srk), 1u);
}

}  // namespace

TEST(Migration, HappyPath) {
  auto w = World::make(1);
  auto srk = *w.source.platform.mtm.inspect(w.source_tss().vmtm).srk_id;
  auto out = run_migration(w.source, w.dest, "RO", {});
  ASSERT_TRUE(out.success) << out.detail;
  EXPECT_EQ(out.source_state, SourceState::finalized);
  EXPECT_EQ(out.dest_state, DestState::activated);
  EXPECT_TRUE(out.uniqueness_held);
  EXPECT_EQ(out.max_owned, 1u);
  EXPECT_EQ(w.source.platform.subsystem("RO"), nullptr);
  EXPECT_FALSE(instance_for(w.source, "RO").has_value());
  EXPECT_TRUE(signs_with(w.dest, "RO", w.key));
  EXPECT_EQ(owned_holders({&w.source, &w.dest}, "RO", srk), 1u);
  EXPECT_EQ(w.dest.platform.mtm.inspect(w.dest.platform.subsystem("RO")->vmtm).srk_id, srk);

  auto again = run_migration(w.source, w.dest, "RO", {});
  EXPECT_FALSE(again.success);
  EXPECT_EQ(again.status, Errc::no_subsystem);
}

TEST(Migration, DeleteBeforeSend) {
  auto w = World::make(2);
  MigrationRun run;
  run.protocol.delete_before_send = true;
  auto out = run_migration(w.source, w.dest, "RO", run);
  ASSERT_TRUE(out.success) << out.detail;
  EXPECT_TRUE(signs_with(w.dest, "RO", w.key));
}

TEST(Migration, ActivatedDestinationAttestsWithMigratedCertificate) {
  auto w = World::make(3);
  auto cert = *w.source_tss().certificate;
  ASSERT_TRUE(run_migration(w.source, w.dest, "RO", {}).success);
  auto* tss = w.dest.platform.subsystem("RO");
  ASSERT_NE(tss, nullptr);
  EXPECT_EQ(tss->certificate->id(), cert.id());
  auto nonce = DeterministicRng::from_u64(3, "verifier").nonce();
  auto report = attest(w.dest, "RO", nonce);
  EXPECT_EQ(verify_attestation(default_suite(), w.agent.identity(), w.agent.policy_template(), report, nonce), Errc::ok);
}

TEST(Migration, RevokedSourceCertificate) {
  auto w = World::make(4);
  w.dest.platform.revoke_tss_certificate(w.source_tss().certificate->id(), 0);
  auto out = run_migration(w.source, w.dest, "RO", {});
  EXPECT_EQ(out.status, Errc::source_revoked);
  EXPECT_TRUE(out.terminated);
  expect_source_authoritative(w);
}

TEST(Migration, UntrustedTarget) {
  auto w = World::make(5);
  auto& t = *w.dest.platform.subsystem("RO");
  w.dest.platform.mtm.pcr_extend(t.vmtm, kPcrEngineImages, hash(std::string_view("rogue")));
  auto out = run_migration(w.source, w.dest, "RO", {});
  EXPECT_EQ(out.status, Errc::target_untrusted);
  expect_source_authoritative(w);
}

TEST(Migration, ChangedAfterLockAndReplayedOffer) {
  auto w = World::make(6);
  MigrationRun run;
  run.extend_after_lock = true;
  auto first = run_migration(w.source, w.dest, "RO", run);
  EXPECT_EQ(first.status, Errc::state_changed_since_lock);
  ASSERT_TRUE(first.offer.has_value());
  expect_source_authoritative(w);

  MigrationRun replay;
  replay.replace_offer = *first.offer;
  auto second = run_migration(w.source, w.dest, "RO", replay);
  EXPECT_EQ(second.status, Errc::stale_offer);
  expect_source_authoritative(w);
}

TEST(Migration, TamperedPackage) {
  for (std::uint32_t bit : {20u, 2000u, 5456u, 9000u}) {
    auto w = World::make(7);
    MigrationRun run;
    run.faults.faults.push_back({FaultKind::tamper, MessageType::migration_package, 1, bit});
    auto out = run_migration(w.source, w.dest, "RO", run);
    EXPECT_FALSE(out.success) << bit;
    EXPECT_TRUE(out.terminated);
    EXPECT_TRUE(out.uniqueness_held);
    expect_source_authoritative(w);
  }
}

TEST(Migration, UndecodablePackageIsRetransmitted) {
  auto w = World::make(7);
  MigrationRun run;
  run.faults.faults.push_back({FaultKind::tamper, MessageType::migration_package, 1, 300});
  auto out = run_migration(w.source, w.dest, "RO", run);
  ASSERT_TRUE(out.success) << out.detail;
  EXPECT_GT(out.ticks, 3u);
  EXPECT_TRUE(signs_with(w.dest, "RO", w.key));
}

TEST(Migration, Declines) {
  {
    auto w = World::make(8);
    MigrationRun run;
    run.source_approves = false;
    EXPECT_EQ(run_migration(w.source, w.dest, "RO", run).status, Errc::owner_declined);
    expect_source_authoritative(w);
  }
  {
    auto w = World::make(8);
    MigrationRun run;
    run.dest_confirms = false;
    EXPECT_EQ(run_migration(w.source, w.dest, "RO", run).status, Errc::owner_declined);
    expect_source_authoritative(w);
  }
  {
    auto w = World::make(8);
    MigrationRun run;
    run.channel_open = false;
    EXPECT_EQ(run_migration(w.source, w.dest, "RO", run).status, Errc::channel_failed);
    expect_source_authoritative(w);
  }
}

TEST(Migration, DestinationWithoutSubsystem) {
  auto w = World::make(9);
  auto fresh = device_create(default_suite(), "C", 99, DmIdentity::standard());
  fresh.boot();
  auto out = run_migration(w.source, fresh, "RO", {});
  EXPECT_EQ(out.status, Errc::stakeholder_mismatch);
  expect_source_authoritative(w);
}

TEST(Migration, FaultKindsTerminate) {
  for (auto plan : {"drop:hello", "drop:offer", "drop:package", "drop:notice", "drop:ack", "duplicate:*#1",
                    "duplicate:package", "duplicate:notice", "reorder:*#1", "reorder:package", "bitflip:hello@30",
                    "bitflip:offer@5", "bitflip:package@77", "bitflip:notice@3", "bitflip:ack@1",
                    "drop:ack#1,drop:ack#2,drop:ack#3"}) {
    auto w = World::make(10);
    MigrationRun run;
    run.faults = FaultPlan::parse(plan);
    auto out = run_migration(w.source, w.dest, "RO", run);
    EXPECT_TRUE(out.terminated) << plan;
    EXPECT_TRUE(out.uniqueness_held) << plan;
    EXPECT_TRUE(out.success) << plan << ": " << to_string(out.status) << " " << out.detail;
    EXPECT_TRUE(signs_with(w.dest, "RO", w.key)) << plan;
  }
}

TEST(Migration, PersistentNoticeLossTimesOutCleanly) {
  auto w = World::make(11);
  MigrationRun run;
  std::string plan;
  for (int i = 1; i <= 12; ++i) plan += (plan.empty() ? "" : ",") + std::string("drop:notice#") + std::to_string(i);
  run.faults = FaultPlan::parse(plan);
  auto out = run_migration(w.source, w.dest, "RO", run);
  EXPECT_EQ(out.status, Errc::migration_timeout);
  EXPECT_TRUE(out.terminated);
  EXPECT_LT(out.ticks, run.max_ticks);
  expect_source_authoritative(w);
  EXPECT_EQ(out.dest_state, DestState::discarded);
}

namespace {

// Private key material recorded in a decrypted instance image: EK, AIKs,
// SRK, plus the owner authorisation digest.
std::vector<Bytes> image_secrets(const Bytes& plain) {
  std::vector<Bytes> out;
  Reader r(plain);
  r.str();
  r.str();
  r.u8();
  for (std::size_t i = 0; i < kPcrCount; ++i) decode_digest(r);
  r.u8();
  r.u64();
  if (r.boolean()) {
    decode_public_key(r);
    out.push_back(r.bytes());
    r.bytes();
  }
  for (auto n = r.u32(); n > 0; --n) {
    decode_public_key(r);
    out.push_back(r.bytes());
  }
  if (r.boolean()) {
    auto auth = decode_digest(r);
    out.emplace_back(auth.bytes.begin(), auth.bytes.end());
  }
  if (r.boolean()) {
    decode_public_key(r);
    out.push_back(r.bytes());
  }
  return out;
}

}  // namespace

TEST(Migration, TrafficNeverCarriesSecretsInClear) {
  // A twin world built from the same seeds holds identical keys; exporting
  // its image under a known key reveals what must never appear on the wire.
  auto twin = World::make(12);
  auto& tt = twin.source_tss();
  twin.source.platform.mtm.lock_for_migration(tt.vmtm, Nonce{});
  SymmetricKey known{Secret(Bytes(32, 5)), "probe"};
  auto plain = decrypt_instance_image(default_suite(), twin.source.platform.mtm.serialize_instance(tt.vmtm, known), known);
  auto secrets = image_secrets(plain);
  ASSERT_GE(secrets.size(), 3u);

  auto w = World::make(12);
  auto out = run_migration(w.source, w.dest, "RO", {});
  ASSERT_TRUE(out.success);
  ASSERT_FALSE(out.traffic.empty());
  for (const auto& frame : out.traffic) {
    EXPECT_FALSE(contains(frame, to_bytes("mtmsim-instance-v1")));
    for (const auto& s : secrets) EXPECT_FALSE(contains(frame, s));
  }
}

TEST(Migration, SocketTransportMatchesInProcess) {
  for (auto plan : {"", "drop:package", "reorder:*#2", "bitflip:offer@9", "tamper:package@500"}) {
    auto a = World::make(13);
    auto b = World::make(13, TransportKind::socket);
    MigrationRun ra, rb;
    ra.faults = rb.faults = FaultPlan::parse(plan);
    rb.transport = TransportKind::socket;
    auto oa = run_migration(a.source, a.dest, "RO", ra);
    auto ob = run_migration(b.source, b.dest, "RO", rb);
    EXPECT_EQ(oa.status, ob.status) << plan;
    EXPECT_EQ(oa.ticks, ob.ticks) << plan;
    EXPECT_EQ(oa.traffic, ob.traffic) << plan;
    EXPECT_EQ(a.source.log.head(), b.source.log.head()) << plan;
    EXPECT_EQ(a.dest.log.head(), b.dest.log.head()) << plan;
  }
}
