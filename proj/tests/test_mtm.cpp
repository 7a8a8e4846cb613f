#include <gtest/gtest.h>

#include "support.hpp"

using namespace mtmsim;
using namespace mtmsim::test;

namespace {

MtmDevice make_device(std::uint64_t seed = 1, MtmOptions options = {}) {
  const auto& suite = default_suite();
  return MtmDevice(suite, suite.hash(to_bytes("device" + std::to_string(seed))), DeterministicRng::from_u64(seed, "mtm"),
                   options);
}

InstanceHandle owned(MtmDevice& d, const StakeholderId& id, Profile p = Profile::mrtm) {
  auto h = d.create_instance(id, p);
  d.create_endorsement_key(h);
  d.take_ownership(h, to_bytes("auth:" + id));
  return h;
}

Digest srk(const MtmDevice& d, InstanceHandle h) { return *d.inspect(h).srk_id; }

template <typename F>
Errc code_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return Errc::ok;
}

}  // namespace

TEST(Instances, CreateIsCleanAndZeroed) {
  auto d = make_device();
  auto h = d.create_instance("RO", Profile::mrtm);
  auto info = d.inspect(h);
  EXPECT_EQ(info.lifecycle, Lifecycle::clean);
  for (const auto& pcr : info.pcrs) EXPECT_TRUE(pcr.is_zero());
  EXPECT_FALSE(info.srk_id.has_value());
}

TEST(Instances, DuplicateStakeholderAndLimit) {
  MtmOptions opt;
  opt.max_instances = 2;
  auto d = make_device(1, opt);
  d.create_instance("A", Profile::mrtm);
  EXPECT_EQ(code_of([&] { d.create_instance("A", Profile::mltm); }), Errc::duplicate_stakeholder);
  d.create_instance("B", Profile::mltm);
  EXPECT_EQ(code_of([&] { d.create_instance("C", Profile::mltm); }), Errc::resource_limit);
}

TEST(Instances, MultiplePerStakeholderWhenAllowed) {
  MtmOptions opt;
  opt.allow_multiple_per_stakeholder = true;
  auto d = make_device(1, opt);
  d.create_instance("A", Profile::mrtm);
  EXPECT_NO_THROW(d.create_instance("A", Profile::mrtm));
}

TEST(Instances, DestroyInvalidatesHandle) {
  auto d = make_device();
  auto h = owned(d, "RO");
  d.destroy_instance(h);
  EXPECT_FALSE(d.is_live(h));
  EXPECT_EQ(d.route_command(h, cmd::PcrRead{0}).status, Errc::unknown_handle);
  EXPECT_EQ(code_of([&] { d.serialize_instance(h, SymmetricKey{Secret(Bytes(32, 1)), "m"}); }), Errc::unknown_handle);
  EXPECT_EQ(code_of([&] { d.destroy_instance(h); }), Errc::unknown_handle);
  auto h2 = d.create_instance("RO", Profile::mrtm);
  EXPECT_NE(h2, h);
}

TEST(Pcr, ExtendReadAndRange) {
  auto d = make_device();
  auto h = d.create_instance("RO", Profile::mrtm);
  auto m = hash(std::string_view("m"));
  auto r = d.route_command(h, cmd::PcrExtend{5, m});
  ASSERT_TRUE(r.ok());
  EXPECT_EQ(std::get<resp::PcrValue>(r.body).value, oracle_extend(Digest::zero(), m));
  EXPECT_EQ(d.pcr_read(h, 5), oracle_extend(Digest::zero(), m));
  EXPECT_EQ(d.route_command(h, cmd::PcrExtend{16, m}).status, Errc::index_out_of_range);
  EXPECT_EQ(d.route_command(h, cmd::PcrRead{200}).status, Errc::index_out_of_range);
}

TEST(Quote, SignedAndNonceBound) {
  auto d = make_device();
  auto h = owned(d, "RO");
  auto aik = d.create_aik(h);
  d.pcr_extend(h, 1, hash(std::string_view("x")));
  Nonce n{};
  n.bytes[0] = 9;
  std::vector<std::uint8_t> sel{2, 1, 1};
  auto q = d.quote(h, aik.key_id, n, sel);
  ASSERT_EQ(q.pcrs.size(), 2u);
  EXPECT_EQ(q.pcrs[0].index, 1);
  EXPECT_EQ(q.pcrs[1].index, 2);
  EXPECT_TRUE(verify_quote(default_suite(), aik.public_part, q));
  auto forged = q;
  forged.nonce.bytes[0] = 10;
  EXPECT_FALSE(verify_quote(default_suite(), aik.public_part, forged));
  EXPECT_EQ(d.route_command(h, cmd::Quote{hash(std::string_view("no")), n, {1}}).status, Errc::unknown_aik);
}

TEST(Ownership, RequiresEkAndHappensOnce) {
  auto d = make_device();
  auto h = d.create_instance("RO", Profile::mrtm);
  EXPECT_EQ(d.route_command(h, cmd::TakeOwnership{to_bytes("a")}).status, Errc::missing_ek);
  d.create_endorsement_key(h);
  EXPECT_EQ(d.route_command(h, cmd::CreateEndorsementKey{}).status, Errc::already_owned);
  EXPECT_TRUE(d.route_command(h, cmd::TakeOwnership{to_bytes("a")}).ok());
  EXPECT_EQ(d.inspect(h).lifecycle, Lifecycle::owned);
  EXPECT_TRUE(d.inspect(h).srk_id.has_value());
  EXPECT_EQ(d.route_command(h, cmd::TakeOwnership{to_bytes("a")}).status, Errc::already_owned);
}

TEST(Keys, HierarchyUsageAndBinding) {
  auto d = make_device();
  auto h = owned(d, "RO");
  auto root = srk(d, h);
  auto storage = d.create_wrap_key(h, root, KeyUsage::binding);
  auto signer = d.create_wrap_key(h, storage, KeyUsage::signing);
  auto sig = d.sign(h, signer, to_bytes("data"));
  EXPECT_TRUE(default_suite().verify(d.public_key(h, signer), to_bytes("data"), sig));
  EXPECT_EQ(d.route_command(h, cmd::Sign{storage, to_bytes("x")}).status, Errc::key_usage);
  EXPECT_EQ(d.route_command(h, cmd::Sign{hash(std::string_view("?")), to_bytes("x")}).status, Errc::unknown_key);
  EXPECT_EQ(d.route_command(h, cmd::CreateWrapKey{hash(std::string_view("?")), KeyUsage::signing, {}}).status,
            Errc::unknown_parent);

  auto bound = d.create_wrap_key(h, root, KeyUsage::signing, {{3, d.pcr_read(h, 3)}});
  EXPECT_TRUE(d.route_command(h, cmd::Sign{bound, to_bytes("x")}).ok());
  d.pcr_extend(h, 3, hash(std::string_view("change")));
  EXPECT_EQ(d.route_command(h, cmd::Sign{bound, to_bytes("x")}).status, Errc::config_mismatch);
}

TEST(Keys, DepthLimit) {
  MtmOptions opt;
  opt.max_hierarchy_depth = 2;
  auto d = make_device(1, opt);
  auto h = owned(d, "RO");
  auto k1 = d.create_wrap_key(h, srk(d, h), KeyUsage::binding);
  auto k2 = d.create_wrap_key(h, k1, KeyUsage::binding);
  EXPECT_EQ(code_of([&] { d.create_wrap_key(h, k2, KeyUsage::signing); }), Errc::hierarchy_depth_limit);
}

TEST(Keys, CleanInstanceCannotCreateKeys) {
  auto d = make_device();
  auto h = d.create_instance("RO", Profile::mrtm);
  EXPECT_EQ(d.route_command(h, cmd::CreateWrapKey{Digest::zero(), KeyUsage::signing, {}}).status,
            Errc::lifecycle_violation);
}

TEST(Unseal, ThroughInstanceKey) {
  auto d = make_device();
  auto h = owned(d, "RO");
  auto k = d.create_wrap_key(h, srk(d, h), KeyUsage::binding);
  auto rng = DeterministicRng::from_u64(3, "blob");
  auto blob = seal(default_suite(), d.public_key(h, k), to_bytes("payload"), {{0, Digest::zero()}}, rng);
  auto r = d.route_command(h, cmd::Unseal{k, blob});
  ASSERT_TRUE(r.ok());
  EXPECT_EQ(std::get<resp::Data>(r.body).data, to_bytes("payload"));
  d.pcr_extend(h, 0, hash(std::string_view("boot")));
  EXPECT_EQ(d.route_command(h, cmd::Unseal{k, blob}).status, Errc::config_mismatch);
}

TEST(LocalVerification, VerifyAndExtend) {
  const auto& suite = default_suite();
  auto d = make_device();
  auto h = owned(d, "DM");
  auto rng = DeterministicRng::from_u64(4, "dm");
  auto dm = suite.generate_keypair(rng, KeyUsage::signing);
  d.register_root_key("DM", dm.public_part);
  auto m = hash(std::string_view("kernel"));
  auto cert = issue_rim_cert(suite, "DM", dm, "kernel", m, 0, 0);
  EXPECT_EQ(d.verify_rim_cert(h, cert), CertVerdict::valid);
  EXPECT_EQ(d.route_command(h, cmd::VerifyRimCertAndExtend{cert, hash(std::string_view("evil"))}).status,
            Errc::measurement_mismatch);
  EXPECT_TRUE(d.route_command(h, cmd::VerifyRimCertAndExtend{cert, m}).ok());
  EXPECT_EQ(d.pcr_read(h, 0), oracle_extend(Digest::zero(), m));

  d.revoke_rim(cert.cert_id, 1);
  EXPECT_EQ(d.verify_rim_cert(h, cert), CertVerdict::valid);
  EXPECT_TRUE(d.route_command(h, cmd::IncrementCounter{}).ok());
  EXPECT_EQ(d.verify_rim_cert(h, cert), CertVerdict::revoked);
  EXPECT_EQ(d.route_command(h, cmd::VerifyRimCertAndExtend{cert, m}).status, Errc::revoked);
}

TEST(LocalVerification, LoadVerificationKey) {
  const auto& suite = default_suite();
  auto d = make_device();
  auto h = owned(d, "RO");
  auto rng = DeterministicRng::from_u64(5, "ro");
  auto ro = suite.generate_keypair(rng, KeyUsage::signing);
  auto enc = suite.generate_keypair(rng, KeyUsage::decryption);
  EXPECT_EQ(d.route_command(h, cmd::LoadVerificationKey{enc.public_part}).status, Errc::key_usage);
  EXPECT_TRUE(d.route_command(h, cmd::LoadVerificationKey{ro.public_part}).ok());
  auto cert = issue_rim_cert(suite, "RO", ro, "engine", hash(std::string_view("e")), 1, 0);
  EXPECT_EQ(d.verify_rim_cert(h, cert), CertVerdict::valid);
}

TEST(Profiles, MltmRejectsLocalVerification) {
  auto d = make_device();
  auto h = owned(d, "U", Profile::mltm);
  EXPECT_EQ(d.route_command(h, cmd::IncrementCounter{}).status, Errc::profile_violation);
  EXPECT_TRUE(d.route_command(h, cmd::ReadCounter{}).ok());
  EXPECT_TRUE(d.route_command(h, cmd::PcrExtend{1, Digest::zero()}).ok());
}

TEST(Migration, LockAbortAndLifecycleGuards) {
  auto d = make_device();
  auto h = owned(d, "RO");
  SymmetricKey key{Secret(Bytes(32, 7)), "migration"};
  EXPECT_EQ(code_of([&] { d.serialize_instance(h, key); }), Errc::lifecycle_violation);
  EXPECT_EQ(d.route_command(h, cmd::AbortMigration{}).status, Errc::lifecycle_violation);
  EXPECT_TRUE(d.route_command(h, cmd::LockForMigration{Nonce{}}).ok());
  EXPECT_EQ(d.inspect(h).lifecycle, Lifecycle::migration_locked);
  EXPECT_EQ(d.route_command(h, cmd::CreateWrapKey{srk(d, h), KeyUsage::signing, {}}).status,
            Errc::lifecycle_violation);
  EXPECT_TRUE(d.route_command(h, cmd::AbortMigration{}).ok());
  EXPECT_EQ(d.inspect(h).lifecycle, Lifecycle::owned);
}

TEST(Migration, SerializeImportPreservesKeys) {
  auto src = make_device(1);
  auto dst = make_device(2);
  auto h = owned(src, "RO");
  auto k = src.create_wrap_key(h, srk(src, h), KeyUsage::signing);
  src.pcr_extend(h, 4, hash(std::string_view("p")));
  src.lock_for_migration(h, Nonce{});
  SymmetricKey key{Secret(Bytes(32, 7)), "migration"};
  auto image = src.serialize_instance(h, key);
  auto before = src.inspect(h);

  auto imported = dst.import_instance(image, key);
  auto after = dst.inspect(imported);
  EXPECT_EQ(after.lifecycle, Lifecycle::owned);
  EXPECT_EQ(after.key_ids, before.key_ids);
  EXPECT_EQ(after.pcrs, before.pcrs);
  EXPECT_EQ(after.srk_id, before.srk_id);
  auto sig = dst.sign(imported, k, to_bytes("m"));
  EXPECT_TRUE(default_suite().verify(src.public_key(h, k), to_bytes("m"), sig));

  EXPECT_EQ(code_of([&] { dst.import_instance(image, key); }), Errc::duplicate_stakeholder);
  SymmetricKey wrong{Secret(Bytes(32, 8)), "migration"};
  auto other = make_device(3);
  EXPECT_EQ(code_of([&] { other.import_instance(image, wrong); }), Errc::integrity_failure);
  Bytes truncated(image.begin(), image.begin() + static_cast<std::ptrdiff_t>(image.size() / 2));
  EXPECT_EQ(code_of([&] { other.import_instance(truncated, key); }), Errc::integrity_failure);
}

TEST(Migration, PendingImportActivateAndDiscard) {
  auto src = make_device(1);
  auto dst = make_device(2);
  auto h = owned(src, "RO");
  auto old = owned(dst, "RO");
  src.lock_for_migration(h, Nonce{});
  SymmetricKey key{Secret(Bytes(32, 7)), "migration"};
  auto image = src.serialize_instance(h, key);

  auto pending = dst.import_pending(image, key, old);
  EXPECT_EQ(dst.inspect(pending).lifecycle, Lifecycle::migration_locked);
  EXPECT_TRUE(dst.inspect(pending).pending_import);
  EXPECT_EQ(dst.find_instance("RO"), old);
  EXPECT_EQ(dst.route_command(pending, cmd::Sign{srk(src, h), to_bytes("x")}).status, Errc::lifecycle_violation);
  dst.discard_import(pending);
  EXPECT_FALSE(dst.is_live(pending));
  EXPECT_TRUE(dst.is_live(old));

  pending = dst.import_pending(image, key, old);
  dst.activate_import(pending);
  EXPECT_FALSE(dst.is_live(old));
  EXPECT_EQ(dst.inspect(pending).lifecycle, Lifecycle::owned);
  EXPECT_EQ(dst.inspect(pending).srk_id, src.inspect(h).srk_id);
  EXPECT_EQ(code_of([&] { dst.activate_import(pending); }), Errc::lifecycle_violation);
}

TEST(Wire, CommandAndResponseRoundTrip) {
  auto rng = DeterministicRng::from_u64(1, "wire");
  std::vector<MtmCommandBody> bodies{
      cmd::PcrExtend{3, hash(std::string_view("m"))},
      cmd::PcrRead{2},
      cmd::Quote{hash(std::string_view("a")), rng.nonce(), {1, 2}},
      cmd::CreateAik{},
      cmd::CreateWrapKey{hash(std::string_view("p")), KeyUsage::binding, {{1, Digest::zero()}}},
      cmd::Sign{hash(std::string_view("k")), to_bytes("data")},
      cmd::GetPublicKey{hash(std::string_view("k"))},
      cmd::CreateEndorsementKey{},
      cmd::TakeOwnership{to_bytes("auth")},
      cmd::ReadCounter{},
      cmd::LockForMigration{rng.nonce()},
      cmd::AbortMigration{},
      cmd::IncrementCounter{},
  };
  for (const auto& body : bodies) {
    MtmCommand c{InstanceHandle{7}, body};
    auto bytes = encode_command(c);
    EXPECT_EQ(bytes[0], kCommandFormatVersion);
    EXPECT_EQ(bytes[1], static_cast<std::uint8_t>(c.opcode()));
    auto back = decode_command(bytes);
    EXPECT_EQ(back.target, c.target);
    EXPECT_EQ(back.opcode(), c.opcode());
    EXPECT_EQ(encode_command(back), bytes);
  }
  Bytes bad{kCommandFormatVersion, 99, 0, 0, 0, 1};
  EXPECT_THROW(decode_command(bad), Error);
  Bytes wrong_version{9, 1, 0, 0, 0, 1};
  EXPECT_THROW(decode_command(wrong_version), Error);

  std::vector<MtmResponse> responses{
      {Errc::ok, resp::Empty{}},
      {Errc::ok, resp::PcrValue{hash(std::string_view("v"))}},
      {Errc::ok, resp::Counter{42}},
      {Errc::ok, resp::Verdict{CertVerdict::revoked}},
      {Errc::ok, resp::Data{to_bytes("d")}},
      {Errc::unknown_handle, resp::Empty{}},
  };
  for (const auto& r : responses) EXPECT_EQ(decode_response(encode_response(r)), r);
}

TEST(Persistence, DeviceStateRoundTrip) {
  auto d = make_device();
  auto h = owned(d, "RO");
  auto k = d.create_wrap_key(h, srk(d, h), KeyUsage::signing);
  d.pcr_extend(h, 2, hash(std::string_view("x")));
  Writer w;
  d.encode_state(w);
  Reader r(w.data());
  auto back = MtmDevice::decode_state(default_suite(), r);
  r.finish();
  EXPECT_EQ(back.inspect(h).pcrs, d.inspect(h).pcrs);
  EXPECT_EQ(back.sign(h, k, to_bytes("z")).bytes, d.sign(h, k, to_bytes("z")).bytes);
  Writer again;
  back.encode_state(again);
  EXPECT_EQ(again.data(), w.data());
}
