#include <gtest/gtest.h>

#include "support.hpp"

using namespace mtmsim;
using namespace mtmsim::test;

namespace {

template <typename F>
Errc code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return Errc::ok;
}

Stakeholder ro_stakeholder(const char* id = "RO") { return {id, Role::remote_owner, {}}; }

}  // namespace

TEST(DmBoot, Pcr0MatchesOracleReplay) {
  auto dm = DmIdentity::standard(5);
  auto dev = device_create(default_suite(), "D", 4, dm);
  EXPECT_FALSE(dev.platform.booted());
  EXPECT_EQ(dev.boot(), EngineState::running);
  EXPECT_TRUE(dev.platform.booted());
  std::vector<Digest> measurements;
  for (const auto& [id, image] : dm.components) measurements.push_back(oracle_sha256(image));
  auto& tss = dev.platform.dm_subsystem();
  EXPECT_EQ(dev.platform.mtm.pcr_read(tss.vmtm, kPcrBootChain), oracle_replay(measurements));
  EXPECT_EQ(tss.engine.measurement_log.size(), 5u);
  for (const auto& rec : tss.engine.measurement_log) EXPECT_EQ(rec.verdict, MeasurementVerdict::verified);
}

TEST(DmBoot, TamperedComponentFailsStop) {
  auto dev = device_create(default_suite(), "D", 4, DmIdentity::standard(4));
  auto& tss = dev.platform.dm_subsystem();
  (*tss.component_image("kernel"))[0] ^= 1;
  EXPECT_EQ(dev.boot(), EngineState::failed);
  EXPECT_EQ(tss.engine.state, EngineState::failed);
  ASSERT_EQ(tss.engine.measurement_log.size(), 2u);
  EXPECT_EQ(tss.engine.measurement_log.back().verdict, MeasurementVerdict::mismatched);
  EXPECT_EQ(code_of([&] { rte_boot(dev.platform, tss); }), Errc::failed_engine);
  EXPECT_EQ(code_of([&] { invoke_service(tss, "bootloader"); }), Errc::failed_engine);
  EXPECT_EQ(code_of([&] { install_blank_engine(dev.platform, ro_stakeholder()); }), Errc::device_not_booted);
}

TEST(DmBoot, MissingRimFailsEngine) {
  auto dev = device_create(default_suite(), "D", 4, DmIdentity::standard(2));
  auto& tss = dev.platform.dm_subsystem();
  tss.rim_certs.erase(tss.rim_certs.begin());
  EXPECT_EQ(code_of([&] { rte_boot(dev.platform, tss); }), Errc::missing_rim);
  EXPECT_EQ(tss.engine.state, EngineState::failed);
}

TEST(DmBoot, RevokedRimFailsBoot) {
  auto dev = device_create(default_suite(), "D", 4, DmIdentity::standard(2));
  auto& tss = dev.platform.dm_subsystem();
  dev.platform.mtm.revoke_rim(tss.rim_certs[1].cert_id, 0);
  EXPECT_EQ(dev.boot(), EngineState::failed);
  EXPECT_EQ(tss.engine.measurement_log.back().verdict, MeasurementVerdict::unverified);
}

TEST(Engines, BlankEngineInstallAndRemove) {
  auto dev = device_create(default_suite(), "D", 4, DmIdentity::standard());
  dev.boot();
  auto ro = ro_stakeholder();
  auto& tss = install_blank_engine(dev.platform, ro);
  EXPECT_EQ(tss.engine.state, EngineState::pristine);
  EXPECT_EQ(tss.engine.image, pristine_engine_image());
  EXPECT_EQ(dev.platform.mtm.inspect(tss.vmtm).lifecycle, Lifecycle::clean);
  EXPECT_EQ(code_of([&] { install_blank_engine(dev.platform, ro); }), Errc::duplicate_subsystem);

  auto handle = tss.vmtm;
  EXPECT_EQ(code_of([&] { remove_engine(dev.platform, ro_stakeholder("OTHER"), "RO"); }), Errc::forbidden);
  Stakeholder owner{"DO", Role::device_owner, {}};
  EXPECT_EQ(code_of([&] { remove_engine(dev.platform, owner, "RO"); }), Errc::forbidden);
  remove_engine(dev.platform, ro, "RO");
  EXPECT_EQ(dev.platform.subsystem("RO"), nullptr);
  EXPECT_FALSE(dev.platform.mtm.is_live(handle));
  EXPECT_EQ(code_of([&] { remove_engine(dev.platform, ro, "RO"); }), Errc::no_subsystem);
}

TEST(Engines, DeviceOwnerMayRemoveDiscretionary) {
  auto dev = device_create(default_suite(), "D", 4, DmIdentity::standard());
  dev.boot();
  auto& tss = install_blank_engine(dev.platform, ro_stakeholder("U"));
  tss.engine.domain = Domain::discretionary;
  remove_engine(dev.platform, Stakeholder{"DO", Role::device_owner, {}}, "U");
  EXPECT_EQ(dev.platform.subsystem("U"), nullptr);
}

TEST(Services, AikReferencesOnlyOnTrustedServices) {
  TrustedSubsystem tss;
  auto aik = hash(std::string_view("aik"));
  EXPECT_EQ(code_of([&] { add_service(tss, {"n", ServiceKind::normal, {}, {}, {aik}}); }), Errc::forbidden);
  EXPECT_EQ(code_of([&] { add_service(tss, {"m", ServiceKind::measured, {}, {}, {aik}}); }), Errc::forbidden);
  EXPECT_NO_THROW(add_service(tss, {"t", ServiceKind::trusted, to_bytes("img"), {}, {aik}}));
  EXPECT_EQ(invoke_service(tss, "t"), oracle_sha256(to_bytes("img")));
  EXPECT_EQ(code_of([&] { invoke_service(tss, "missing"); }), Errc::not_exported);
}

TEST(Services, ExternalBindingRequiresRunningExporter) {
  TrustedSubsystem provider, consumer;
  provider.engine.stakeholder = "DM";
  provider.services_own = generic_trusted_services();
  EXPECT_EQ(code_of([&] { bind_external_service(consumer, provider, "attestation"); }), Errc::provider_not_running);
  provider.engine.state = EngineState::running;
  EXPECT_EQ(code_of([&] { bind_external_service(consumer, provider, "nonexistent"); }), Errc::not_exported);
  auto ref = bind_external_service(consumer, provider, "attestation");
  bind_external_service(consumer, provider, "attestation");
  EXPECT_EQ(ref.provider, "DM");
  EXPECT_EQ(consumer.services_external.size(), 1u);
}

TEST(Policies, SignAndVerify) {
  const auto& suite = default_suite();
  auto rng = DeterministicRng::from_u64(1, "policy");
  auto root = suite.generate_keypair(rng, KeyUsage::signing);
  SecurityPolicy p;
  p.owner = "RO";
  p.allowed_purposes = {"telephony"};
  EXPECT_FALSE(verify_policy(suite, p, root.public_part));
  sign_policy(suite, p, root);
  EXPECT_TRUE(verify_policy(suite, p, root.public_part));
  p.min_policy_version = 9;
  EXPECT_FALSE(verify_policy(suite, p, root.public_part));
}

TEST(Encodings, SubsystemRoundTrip) {
  auto dev = device_create(default_suite(), "D", 4, DmIdentity::standard());
  dev.boot();
  const auto& tss = dev.platform.dm_subsystem();
  Writer w;
  encode(w, tss);
  Reader r(w.data());
  auto back = decode_trusted_subsystem(r);
  r.finish();
  Writer again;
  encode(again, back);
  EXPECT_EQ(again.data(), w.data());
}

TEST(Encodings, PlatformStateRoundTrip) {
  auto w = World::make(3);
  Writer out;
  w.source.platform.encode_state(out);
  Reader r(out.data());
  auto back = Platform::decode_state(default_suite(), r);
  r.finish();
  Writer again;
  back.encode_state(again);
  EXPECT_EQ(again.data(), out.data());
}

TEST(Replay, ChainHelperMatchesOracle) {
  std::vector<Digest> ds{hash(std::string_view("a")), hash(std::string_view("b")), hash(std::string_view("c"))};
  EXPECT_EQ(replay_chain(default_suite(), ds), oracle_replay(ds));
  EXPECT_EQ(replay_chain(default_suite(), {}), Digest::zero());
}
