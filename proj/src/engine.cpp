#include "mtmsim/engine.hpp"

#include <algorithm>

namespace mtmsim {

namespace {

template <typename T, typename F>
void encode_list(Writer& w, const std::vector<T>& items, F each) {
  w.u32(static_cast<std::uint32_t>(items.size()));
  for (const auto& item : items) each(item);
}

template <typename F>
auto decode_list(Reader& r, F each) {
  auto n = r.u32();
  if (n > kMaxElementLength) throw Error(Errc::decode_error, "list too long");
  std::vector<decltype(each())> out;
  out.reserve(std::min<std::uint32_t>(n, 1024));
  for (std::uint32_t i = 0; i < n; ++i) out.push_back(each());
  return out;
}

void encode_strings(Writer& w, const std::vector<std::string>& v) {
  encode_list(w, v, [&](const std::string& s) { w.str(s); });
}

std::vector<std::string> decode_strings(Reader& r) {
  return decode_list(r, [&] { return r.str(); });
}

template <typename E>
E enum_in(std::uint8_t v, std::uint8_t lo, std::uint8_t hi) {
  if (v < lo || v > hi) throw Error(Errc::decode_error, "enum out of range");
  return static_cast<E>(v);
}

void encode_optional_signature(Writer& w, const std::optional<Signature>& s) {
  w.boolean(s.has_value());
  if (s) encode(w, *s);
}

std::optional<Signature> decode_optional_signature(Reader& r) {
  if (!r.boolean()) return std::nullopt;
  return decode_signature(r);
}

}  // namespace

std::string_view to_string(Role r) {
  switch (r) {
    case Role::device_manufacturer: return "DM";
    case Role::device_owner: return "DO";
    case Role::user: return "U";
    case Role::remote_owner: return "RO";
  }
  return "?";
}

std::string_view to_string(Domain d) { return d == Domain::mandatory ? "mandatory" : "discretionary"; }

std::string_view to_string(EngineState s) {
  switch (s) {
    case EngineState::pristine: return "pristine";
    case EngineState::certified: return "certified";
    case EngineState::running: return "running";
    case EngineState::failed: return "failed";
  }
  return "?";
}

std::string_view to_string(MeasurementVerdict v) {
  switch (v) {
    case MeasurementVerdict::verified: return "verified";
    case MeasurementVerdict::mismatched: return "mismatched";
    case MeasurementVerdict::unverified: return "unverified";
  }
  return "?";
}

// --- certificates and policies ------------------------------------------------

Bytes TssCertificate::body() const {
  Writer w;
  w.str("mtmsim-tss-cert-v1");
  w.str(subject);
  encode(w, device_id);
  encode(w, ek_public);
  encode(w, aik_public);
  w.str(purpose);
  return std::move(w).take();
}

Digest TssCertificate::id() const { return hash(body()); }

bool verify_tss_certificate(const CryptoSuite& suite, const TssCertificate& cert, const PublicKey& root) {
  return cert.issuer_signature && suite.verify(root, cert.body(), *cert.issuer_signature);
}

Bytes SecurityPolicy::body() const {
  Writer w;
  w.str("mtmsim-policy-v1");
  w.str(owner);
  encode_list(w, rim_references, [&](const Digest& d) { encode(w, d); });
  encode_strings(w, quality_assertions);
  encode_strings(w, allowed_purposes);
  encode_list(w, acceptable_target_states, [&](const PcrConfig& c) { encode(w, c); });
  w.u32(min_policy_version);
  return std::move(w).take();
}

bool verify_policy(const CryptoSuite& suite, const SecurityPolicy& policy, const PublicKey& root) {
  return policy.signature && suite.verify(root, policy.body(), *policy.signature);
}

void sign_policy(const CryptoSuite& suite, SecurityPolicy& policy, const KeyPair& owner_root) {
  policy.signature = suite.sign(owner_root, policy.body());
}

// --- subsystem ------------------------------------------------------------------

const Bytes* TrustedSubsystem::component_image(const std::string& component_id) const {
  if (component_id == kEngineComponent || component_id == kPristineComponent) return &engine.image;
  for (const auto& s : services_own)
    if (s.id == component_id) return &s.image;
  return nullptr;
}

Bytes* TrustedSubsystem::component_image(const std::string& component_id) {
  return const_cast<Bytes*>(std::as_const(*this).component_image(component_id));
}

const RimCertificate* TrustedSubsystem::rim_for(const LoadEntry& entry) const {
  const RimCertificate* best = nullptr;
  for (const auto& cert : rim_certs) {
    if (!policy.rim_references.empty() &&
        std::find(policy.rim_references.begin(), policy.rim_references.end(), cert.cert_id) ==
            policy.rim_references.end())
      continue;
    if (cert.component_id != entry.component_id || cert.target_pcr != entry.pcr ||
        cert.expected_digest != entry.expected)
      continue;
    if (!best || cert.valid_from_counter >= best->valid_from_counter) best = &cert;
  }
  return best;
}

const Bytes& pristine_engine_image() {
  static const Bytes image = to_bytes("mtmsim:TE*:pristine-trusted-engine:generic-runtime:v1");
  return image;
}

std::vector<TrustedService> generic_trusted_services() {
  return {
      {"ts-attest", ServiceKind::trusted, to_bytes("mtmsim:TS*:attestation-service:v1"), {"attestation"}, {}},
      {"ts-storage", ServiceKind::trusted, to_bytes("mtmsim:TS*:protected-storage:v1"), {"protected-storage"}, {}},
      {"ts-comm", ServiceKind::normal, to_bytes("mtmsim:TS*:communication:v1"), {"channel"}, {}},
  };
}

// --- platform ---------------------------------------------------------------------

Platform::Platform(const CryptoSuite& suite, Digest device_id, DeterministicRng rng_in, MtmOptions options)
    : mtm(suite, device_id, rng_in.fork("mtm"), options), rng(std::move(rng_in)), suite_(&suite) {}

TrustedSubsystem* Platform::subsystem(const StakeholderId& id) {
  auto it = subsystems.find(id);
  return it == subsystems.end() ? nullptr : &it->second;
}

const TrustedSubsystem* Platform::subsystem(const StakeholderId& id) const {
  auto it = subsystems.find(id);
  return it == subsystems.end() ? nullptr : &it->second;
}

TrustedSubsystem& Platform::dm_subsystem() {
  auto* dm = subsystem(dm_id);
  if (!dm) throw Error(Errc::device_not_booted, "no DM subsystem");
  return *dm;
}

bool Platform::booted() const {
  const auto* dm = subsystem(dm_id);
  return dm && dm->engine.state == EngineState::running;
}

void Platform::provision_owner(const OwnerIdentity& owner) {
  owners[owner.id] = owner;
  mtm.register_root_key(owner.id, owner.rim_key);
  rim_store.add_trust_root(owner.id, owner.rim_key);
}

const OwnerIdentity* Platform::owner(const StakeholderId& id) const {
  auto it = owners.find(id);
  return it == owners.end() ? nullptr : &it->second;
}

void Platform::revoke_tss_certificate(const Digest& cert_id, std::uint64_t at_counter) {
  auto [it, inserted] = revoked_tss.emplace(cert_id, at_counter);
  if (!inserted) it->second = std::min(it->second, at_counter);
}

bool Platform::tss_certificate_revoked(const Digest& cert_id) const {
  auto it = revoked_tss.find(cert_id);
  return it != revoked_tss.end() && mtm.monotonic_counter() >= it->second;
}

// --- operations ---------------------------------------------------------------------

Digest measure(const CryptoSuite& suite, ByteView image) { return suite.hash(image); }

Digest replay_chain(const CryptoSuite& suite, const std::vector<Digest>& digests, const Digest& start) {
  Digest acc = start;
  for (const auto& d : digests) acc = extend_digest(suite, acc, d);
  return acc;
}

MeasurementRecord measure_verify_extend(Platform& platform, TrustedSubsystem& subsystem,
                                        const std::string& component_id, ByteView image,
                                        const RimCertificate& rim_cert) {
  auto& engine = subsystem.engine;
  if (engine.state == EngineState::failed) throw Error(Errc::failed_engine, engine.stakeholder);

  MeasurementRecord rec;
  rec.component_id = component_id;
  rec.digest = measure(platform.suite(), image);
  rec.pcr_index = rim_cert.target_pcr;
  rec.counter_at_measure = platform.mtm.monotonic_counter();

  auto response = platform.mtm.route_command(subsystem.vmtm, cmd::VerifyRimCertAndExtend{rim_cert, rec.digest});
  if (response.ok()) {
    rec.verdict = MeasurementVerdict::verified;
    engine.measurement_log.push_back(rec);
    return rec;
  }
  engine.state = EngineState::failed;
  if (response.status == Errc::measurement_mismatch) {
    rec.verdict = MeasurementVerdict::mismatched;
    engine.measurement_log.push_back(rec);
    return rec;
  }
  rec.verdict = MeasurementVerdict::unverified;
  engine.measurement_log.push_back(rec);
  throw Error(response.status, component_id);
}

EngineState rte_boot(Platform& platform, TrustedSubsystem& subsystem) {
  auto& engine = subsystem.engine;
  if (engine.state == EngineState::failed) throw Error(Errc::failed_engine, engine.stakeholder);
  if (engine.state == EngineState::running) throw Error(Errc::lifecycle_violation, "engine already running");

  std::vector<const RimCertificate*> certs;
  for (const auto& entry : subsystem.config.load_order) {
    const auto* cert = subsystem.rim_for(entry);
    if (!cert) {
      engine.state = EngineState::failed;
      throw Error(Errc::missing_rim, entry.component_id);
    }
    certs.push_back(cert);
  }

  static const Bytes kMissing;
  for (std::size_t i = 0; i < certs.size(); ++i) {
    const auto& entry = subsystem.config.load_order[i];
    const auto* image = subsystem.component_image(entry.component_id);
    // copy: the certificate lives inside the subsystem being updated
    const RimCertificate cert = *certs[i];
    try {
      auto rec = measure_verify_extend(platform, subsystem, entry.component_id, image ? *image : kMissing, cert);
      if (rec.verdict != MeasurementVerdict::verified) return EngineState::failed;
    } catch (const Error&) {
      return EngineState::failed;
    }
  }
  engine.state = EngineState::running;
  return engine.state;
}

TrustedSubsystem& create_dm_subsystem(Platform& platform, const Stakeholder& dm, const KeyPair& dm_key,
                                      const std::vector<std::pair<std::string, Bytes>>& components) {
  const auto& suite = platform.suite();
  if (platform.subsystem(dm.id)) throw Error(Errc::duplicate_subsystem, dm.id);
  platform.dm_id = dm.id;
  platform.mtm.register_root_key(dm.id, dm_key.public_part);
  platform.rim_store.add_trust_root(dm.id, dm_key.public_part);

  auto handle = platform.mtm.create_instance(dm.id, Profile::mrtm);
  platform.mtm.create_endorsement_key(handle);
  platform.mtm.take_ownership(handle, concat({to_bytes("dm-owner"), platform.device_id().view()}));

  TrustedSubsystem tss;
  tss.vmtm = handle;
  tss.engine = TrustedEngine{dm.id, Domain::mandatory, EngineState::certified,
                             to_bytes("mtmsim:TE_DM:device-manufacturer-engine:v1"), {}, "device-manufacturer"};
  tss.policy.owner = dm.id;
  tss.config.owner = dm.id;
  for (const auto& [id, image] : components) {
    auto digest = measure(suite, image);
    auto cert = issue_rim_cert(suite, dm.id, dm_key, id, digest, kPcrBootChain, 0);
    tss.services_own.push_back(TrustedService{id, ServiceKind::measured, image, {}, {}});
    tss.config.load_order.push_back(LoadEntry{id, digest, kPcrBootChain});
    tss.policy.rim_references.push_back(cert.cert_id);
    platform.rim_store.add(cert);
    tss.rim_certs.push_back(std::move(cert));
  }
  auto pristine = issue_rim_cert(suite, dm.id, dm_key, std::string(kPristineComponent),
                                 measure(suite, pristine_engine_image()), kPcrPristineEngine, 0);
  tss.policy.rim_references.push_back(pristine.cert_id);
  platform.rim_store.add(pristine);
  tss.rim_certs.push_back(std::move(pristine));
  sign_policy(suite, tss.policy, dm_key);

  return platform.subsystems.emplace(dm.id, std::move(tss)).first->second;
}

TrustedSubsystem& install_blank_engine(Platform& platform, const Stakeholder& ro) {
  if (!platform.booted()) throw Error(Errc::device_not_booted);
  if (platform.subsystem(ro.id)) throw Error(Errc::duplicate_subsystem, ro.id);
  auto handle = platform.mtm.create_instance(ro.id, Profile::mrtm);

  TrustedSubsystem tss;
  tss.vmtm = handle;
  tss.engine = TrustedEngine{ro.id, Domain::mandatory, EngineState::pristine, pristine_engine_image(), {}, {}};
  tss.services_own = generic_trusted_services();
  tss.policy.owner = ro.id;
  tss.config.owner = ro.id;
  return platform.subsystems.emplace(ro.id, std::move(tss)).first->second;
}

void remove_engine(Platform& platform, const Stakeholder& requestor, const StakeholderId& owner) {
  auto* tss = platform.subsystem(owner);
  if (!tss) throw Error(Errc::no_subsystem, owner);
  bool own = requestor.id == tss->engine.stakeholder;
  bool allowed = tss->engine.domain == Domain::mandatory
                     ? own
                     : own || requestor.role == Role::device_owner;
  if (!allowed) throw Error(Errc::forbidden, requestor.id + " may not remove " + owner);
  if (platform.mtm.is_live(tss->vmtm)) platform.mtm.destroy_instance(tss->vmtm);
  platform.subsystems.erase(owner);
}

ExternalServiceRef bind_external_service(TrustedSubsystem& consumer, const TrustedSubsystem& provider,
                                         const std::string& interface_id) {
  if (provider.engine.state != EngineState::running)
    throw Error(Errc::provider_not_running, provider.engine.stakeholder);
  bool exported = std::any_of(provider.services_own.begin(), provider.services_own.end(), [&](const auto& s) {
    return std::find(s.exports.begin(), s.exports.end(), interface_id) != s.exports.end();
  });
  if (!exported) throw Error(Errc::not_exported, interface_id);
  ExternalServiceRef ref{provider.engine.stakeholder, interface_id};
  if (std::find(consumer.services_external.begin(), consumer.services_external.end(), ref) ==
      consumer.services_external.end())
    consumer.services_external.push_back(ref);
  return ref;
}

void add_service(TrustedSubsystem& subsystem, TrustedService service) {
  if (service.kind != ServiceKind::trusted && !service.aik_refs.empty())
    throw Error(Errc::forbidden, "only trusted services may hold AIK references");
  subsystem.services_own.push_back(std::move(service));
}

Digest invoke_service(const TrustedSubsystem& subsystem, const std::string& service_id) {
  if (subsystem.engine.state == EngineState::failed)
    throw Error(Errc::failed_engine, subsystem.engine.stakeholder);
  for (const auto& s : subsystem.services_own)
    if (s.id == service_id) return hash(s.image);
  throw Error(Errc::not_exported, service_id);
}

// --- encodings ------------------------------------------------------------------------

void encode(Writer& w, const TssCertificate& c) {
  w.str(c.subject);
  encode(w, c.device_id);
  encode(w, c.ek_public);
  encode(w, c.aik_public);
  w.str(c.purpose);
  encode_optional_signature(w, c.issuer_signature);
}

TssCertificate decode_tss_certificate(Reader& r) {
  TssCertificate c;
  c.subject = r.str();
  c.device_id = decode_digest(r);
  c.ek_public = decode_public_key(r);
  c.aik_public = decode_public_key(r);
  c.purpose = r.str();
  c.issuer_signature = decode_optional_signature(r);
  return c;
}

void encode(Writer& w, const SecurityPolicy& p) {
  w.raw(p.body());
  encode_optional_signature(w, p.signature);
}

SecurityPolicy decode_security_policy(Reader& r) {
  SecurityPolicy p;
  if (r.str() != "mtmsim-policy-v1") throw Error(Errc::decode_error, "policy tag");
  p.owner = r.str();
  p.rim_references = decode_list(r, [&] { return decode_digest(r); });
  p.quality_assertions = decode_strings(r);
  p.allowed_purposes = decode_strings(r);
  p.acceptable_target_states = decode_list(r, [&] { return decode_pcr_config(r); });
  p.min_policy_version = r.u32();
  p.signature = decode_optional_signature(r);
  return p;
}

void encode(Writer& w, const SubsystemConfiguration& c) {
  w.str(c.owner);
  encode_list(w, c.load_order, [&](const LoadEntry& e) {
    w.str(e.component_id);
    encode(w, e.expected);
    w.u8(e.pcr);
  });
  w.u32(static_cast<std::uint32_t>(c.individualization.size()));
  for (const auto& [k, v] : c.individualization) w.str(k).str(v);
}

SubsystemConfiguration decode_subsystem_configuration(Reader& r) {
  SubsystemConfiguration c;
  c.owner = r.str();
  c.load_order = decode_list(r, [&] {
    LoadEntry e;
    e.component_id = r.str();
    e.expected = decode_digest(r);
    e.pcr = r.u8();
    return e;
  });
  auto n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    auto k = r.str();
    c.individualization[k] = r.str();
  }
  return c;
}

void encode(Writer& w, const MeasurementRecord& m) {
  w.str(m.component_id);
  encode(w, m.digest);
  w.u8(static_cast<std::uint8_t>(m.verdict));
  w.u8(m.pcr_index);
  w.u64(m.counter_at_measure);
}

MeasurementRecord decode_measurement_record(Reader& r) {
  MeasurementRecord m;
  m.component_id = r.str();
  m.digest = decode_digest(r);
  m.verdict = enum_in<MeasurementVerdict>(r.u8(), 0, 2);
  m.pcr_index = r.u8();
  m.counter_at_measure = r.u64();
  return m;
}

void encode(Writer& w, const TrustedSubsystem& s) {
  const auto& e = s.engine;
  w.str(e.stakeholder);
  w.u8(static_cast<std::uint8_t>(e.domain));
  w.u8(static_cast<std::uint8_t>(e.state));
  w.bytes(e.image);
  encode_list(w, e.measurement_log, [&](const MeasurementRecord& m) { encode(w, m); });
  w.str(e.purpose);
  w.u32(s.vmtm.value);
  encode_list(w, s.services_own, [&](const TrustedService& t) {
    w.str(t.id);
    w.u8(static_cast<std::uint8_t>(t.kind));
    w.bytes(t.image);
    encode_strings(w, t.exports);
    encode_list(w, t.aik_refs, [&](const Digest& d) { encode(w, d); });
  });
  encode_list(w, s.services_external, [&](const ExternalServiceRef& x) { w.str(x.provider).str(x.interface_id); });
  encode_strings(w, s.resources);
  encode(w, s.policy);
  encode(w, s.config);
  encode_list(w, s.rim_certs, [&](const RimCertificate& c) { encode(w, c); });
  w.boolean(s.certificate.has_value());
  if (s.certificate) encode(w, *s.certificate);
}

TrustedSubsystem decode_trusted_subsystem(Reader& r) {
  TrustedSubsystem s;
  auto& e = s.engine;
  e.stakeholder = r.str();
  e.domain = enum_in<Domain>(r.u8(), 1, 2);
  e.state = enum_in<EngineState>(r.u8(), 0, 3);
  e.image = r.bytes();
  e.measurement_log = decode_list(r, [&] { return decode_measurement_record(r); });
  e.purpose = r.str();
  s.vmtm = InstanceHandle{r.u32()};
  s.services_own = decode_list(r, [&] {
    TrustedService t;
    t.id = r.str();
    t.kind = enum_in<ServiceKind>(r.u8(), 1, 3);
    t.image = r.bytes();
    t.exports = decode_strings(r);
    t.aik_refs = decode_list(r, [&] { return decode_digest(r); });
    return t;
  });
  s.services_external = decode_list(r, [&] {
    ExternalServiceRef x;
    x.provider = r.str();
    x.interface_id = r.str();
    return x;
  });
  s.resources = decode_strings(r);
  s.policy = decode_security_policy(r);
  s.config = decode_subsystem_configuration(r);
  s.rim_certs = decode_list(r, [&] { return decode_rim_certificate(r); });
  if (r.boolean()) s.certificate = decode_tss_certificate(r);
  return s;
}

void Platform::encode_state(Writer& w) const {
  mtm.encode_state(w);
  encode(w, rng.seed());
  w.u64(rng.position());
  w.str(dm_id);
  w.u32(static_cast<std::uint32_t>(subsystems.size()));
  for (const auto& [id, s] : subsystems) encode(w, s);
  encode(w, rim_store);
  w.u32(static_cast<std::uint32_t>(owners.size()));
  for (const auto& [id, o] : owners) {
    w.str(o.id);
    encode(w, o.root_key);
    encode(w, o.transport_key);
    encode(w, o.rim_key);
  }
  w.u32(static_cast<std::uint32_t>(revoked_tss.size()));
  for (const auto& [id, at] : revoked_tss) {
    encode(w, id);
    w.u64(at);
  }
  w.u32(static_cast<std::uint32_t>(seen_offer_nonces.size()));
  for (const auto& n : seen_offer_nonces) encode(w, n);
}

Platform Platform::decode_state(const CryptoSuite& suite, Reader& r) {
  auto mtm = MtmDevice::decode_state(suite, r);
  auto seed = decode_digest(r);
  auto position = r.u64();
  Platform p(suite, mtm.device_id(), DeterministicRng(seed, position), mtm.options());
  p.mtm = std::move(mtm);
  p.rng = DeterministicRng(seed, position);
  p.dm_id = r.str();
  auto n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    auto s = decode_trusted_subsystem(r);
    auto id = s.engine.stakeholder;
    p.subsystems.emplace(id, std::move(s));
  }
  p.rim_store = decode_rim_store(r);
  auto owners = r.u32();
  for (std::uint32_t i = 0; i < owners; ++i) {
    OwnerIdentity o;
    o.id = r.str();
    o.root_key = decode_public_key(r);
    o.transport_key = decode_public_key(r);
    o.rim_key = decode_public_key(r);
    p.owners.emplace(o.id, o);
  }
  auto revoked = r.u32();
  for (std::uint32_t i = 0; i < revoked; ++i) {
    auto id = decode_digest(r);
    p.revoked_tss[id] = r.u64();
  }
  auto nonces = r.u32();
  for (std::uint32_t i = 0; i < nonces; ++i) p.seen_offer_nonces.insert(decode_nonce(r));
  return p;
}

}  // namespace mtmsim
