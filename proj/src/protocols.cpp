#include "mtmsim/protocols.hpp"

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
  for (std::uint32_t i = 0; i < n; ++i) out.push_back(each());
  return out;
}

template <typename F>
auto parse(const Bytes& field, F f) {
  Reader r(field);
  auto value = f(r);
  r.finish();
  return value;
}

void expect(const ProtocolMessage& m, MessageType type, std::size_t fields) {
  if (m.type != type) throw Error(Errc::decode_error, "unexpected message type");
  if (m.fields.size() != fields) throw Error(Errc::decode_error, "wrong field count");
}

Bytes encode_flag(bool v) { return Bytes{static_cast<std::uint8_t>(v ? 1 : 0)}; }

bool decode_flag(const Bytes& b) {
  if (b.size() != 1 || b[0] > 1) throw Error(Errc::decode_error, "bad flag");
  return b[0] == 1;
}

Bytes encode_errc(Errc code) { return to_bytes(to_string(code)); }

Errc decode_errc(const Bytes& b) {
  std::string name(b.begin(), b.end());
  auto code = errc_from_string(name);
  if (code == Errc::ok && name != to_string(Errc::ok)) throw Error(Errc::decode_error, "unknown code");
  return code;
}

Bytes encode_payload(const TakeOwnershipPayload& p) {
  Writer w;
  w.str("mtmsim-takeown-payload-v1");
  encode(w, p.ek_public);
  encode(w, p.certificate);
  encode(w, p.quote);
  encode_list(w, p.measurement_log, [&](const MeasurementRecord& m) { encode(w, m); });
  w.str(p.purpose);
  encode(w, p.nonce);
  return std::move(w).take();
}

TakeOwnershipPayload decode_payload(ByteView data) {
  Reader r(data);
  if (r.str() != "mtmsim-takeown-payload-v1") throw Error(Errc::decode_error, "payload label");
  TakeOwnershipPayload p;
  p.ek_public = decode_public_key(r);
  p.certificate = decode_tss_certificate(r);
  p.quote = decode_attestation_quote(r);
  p.measurement_log = decode_list(r, [&] { return decode_measurement_record(r); });
  p.purpose = r.str();
  p.nonce = decode_nonce(r);
  r.finish();
  return p;
}

Bytes encode_grant_body(const GrantBody& g) {
  Writer w;
  w.str("mtmsim-grant-v1");
  encode(w, g.certificate);
  encode_list(w, g.rim_certs, [&](const RimCertificate& c) { encode(w, c); });
  encode(w, g.policy);
  encode(w, g.config);
  encode(w, g.nonce_echo);
  w.bytes(g.owner_auth);
  return std::move(w).take();
}

GrantBody decode_grant_body(ByteView data) {
  Reader r(data);
  if (r.str() != "mtmsim-grant-v1") throw Error(Errc::decode_error, "grant label");
  GrantBody g;
  g.certificate = decode_tss_certificate(r);
  g.rim_certs = decode_list(r, [&] { return decode_rim_certificate(r); });
  g.policy = decode_security_policy(r);
  g.config = decode_subsystem_configuration(r);
  g.nonce_echo = decode_nonce(r);
  g.owner_auth = r.bytes();
  r.finish();
  return g;
}

Digest key_id_of(const CryptoSuite& suite, const PublicKey& key) { return suite.hash(key.bytes); }

template <typename T>
T response_as(const MtmResponse& response, Errc on_error) {
  if (!response.ok()) throw Error(on_error, std::string(to_string(response.status)));
  const auto* body = std::get_if<T>(&response.body);
  if (!body) throw Error(on_error, "unexpected response");
  return *body;
}

std::vector<std::uint8_t> policy_selection(const SecurityPolicy& policy) {
  std::set<std::uint8_t> idx;
  for (const auto& config : policy.acceptable_target_states)
    for (const auto& b : config) idx.insert(b.index);
  if (idx.empty()) idx.insert(kPcrEngineImages);
  return {idx.begin(), idx.end()};
}

bool quote_covers(const AttestationQuote& quote, const PcrConfig& config) {
  return std::all_of(config.begin(), config.end(), [&](const PcrBinding& b) {
    return std::find(quote.pcrs.begin(), quote.pcrs.end(), b) != quote.pcrs.end();
  });
}

ProtocolMessage decode_or(ByteView wire, Errc code) {
  try {
    return ProtocolMessage::decode(wire);
  } catch (const Error& e) {
    throw Error(code, e.what());
  }
}

}  // namespace

std::string_view to_string(MessageType t) {
  switch (t) {
    case MessageType::takeown_request: return "takeown-request";
    case MessageType::takeown_grant: return "takeown-grant";
    case MessageType::migration_hello: return "migration-hello";
    case MessageType::migration_offer: return "migration-offer";
    case MessageType::migration_package: return "migration-package";
    case MessageType::migration_notice: return "migration-notice";
    case MessageType::migration_ack: return "migration-ack";
    case MessageType::migration_error: return "migration-error";
  }
  return "unknown";
}

std::string_view to_string(SourceState s) {
  switch (s) {
    case SourceState::hello_sent: return "hello-sent";
    case SourceState::locked: return "locked";
    case SourceState::package_sent: return "package-sent";
    case SourceState::finalized: return "finalized";
    case SourceState::aborted: return "aborted";
  }
  return "unknown";
}

std::string_view to_string(DestState s) {
  switch (s) {
    case DestState::opened: return "opened";
    case DestState::offer_sent: return "offer-sent";
    case DestState::imported_pending: return "imported-pending";
    case DestState::activated: return "activated";
    case DestState::discarded: return "discarded";
    case DestState::halted: return "halted";
  }
  return "unknown";
}

// --- envelope -----------------------------------------------------------------------

Bytes ProtocolMessage::header() const {
  Writer w;
  w.u8(kProtocolVersion).u8(static_cast<std::uint8_t>(type)).fixed(session_id.bytes);
  return std::move(w).take();
}

Bytes ProtocolMessage::encode() const {
  Writer payload;
  for (std::size_t i = 0; i < fields.size(); ++i) payload.field(static_cast<std::uint8_t>(i + 1), fields[i]);
  Writer w;
  w.raw(header()).bytes(payload.data());
  return std::move(w).take();
}

ProtocolMessage ProtocolMessage::decode(ByteView wire) {
  Reader r(wire);
  auto version = r.u8();
  if (version != kProtocolVersion) throw Error(Errc::version_mismatch, "protocol version");
  auto type = r.u8();
  if (type < 1 || type > kMessageTypeCount) throw Error(Errc::decode_error, "message type");
  ProtocolMessage m;
  m.type = static_cast<MessageType>(type);
  m.session_id.bytes = r.fixed<kDigestSize>();
  auto payload = r.bytes();
  r.finish();
  Reader p(payload);
  for (std::uint8_t tag = 1; p.remaining() > 0; ++tag) {
    if (tag == 0) throw Error(Errc::decode_error, "too many fields");
    m.fields.push_back(p.field(tag));
  }
  return m;
}

Digest takeown_session_id(const CryptoSuite& suite, const Digest& device_id, const StakeholderId& ro,
                          const Nonce& nonce) {
  return suite.hash(concat({device_id.view(), suite.hash(to_bytes(ro)).view(), nonce.view()}));
}

Digest migration_session_id(const CryptoSuite& suite, const Digest& source_device, const Digest& dest_device,
                            const Nonce& nonce) {
  return suite.hash(concat({source_device.view(), dest_device.view(), nonce.view()}));
}

// --- typed messages -------------------------------------------------------------------

ProtocolMessage TakeOwnershipRequest::to_message(const Digest& sid) const {
  return {MessageType::takeown_request, sid, {wrapped_temp_key, payload}};
}

TakeOwnershipRequest TakeOwnershipRequest::from_message(const ProtocolMessage& m) {
  expect(m, MessageType::takeown_request, 2);
  return {m.fields[0], m.fields[1]};
}

ProtocolMessage TakeOwnershipGrant::to_message(const Digest& sid) const {
  return {MessageType::takeown_grant, sid, {encode_to_bytes(body)}};
}

TakeOwnershipGrant TakeOwnershipGrant::from_message(const ProtocolMessage& m) {
  expect(m, MessageType::takeown_grant, 1);
  return {parse(m.fields[0], decode_sealed_blob)};
}

ProtocolMessage MigrationHello::to_message(const Digest& sid) const {
  return {MessageType::migration_hello, sid,
          {encode_to_bytes(source_cert), to_bytes(ro), encode_to_bytes(hello_nonce), encode_to_bytes(source_device_id)}};
}

MigrationHello MigrationHello::from_message(const ProtocolMessage& m) {
  expect(m, MessageType::migration_hello, 4);
  MigrationHello h;
  h.source_cert = parse(m.fields[0], decode_tss_certificate);
  h.ro.assign(m.fields[1].begin(), m.fields[1].end());
  h.hello_nonce = parse(m.fields[2], decode_nonce);
  h.source_device_id = parse(m.fields[3], decode_digest);
  return h;
}

ProtocolMessage MigrationOffer::to_message(const Digest& sid) const {
  return {MessageType::migration_offer, sid,
          {encode_to_bytes(target_state), encode_to_bytes(target_cert), encode_to_bytes(target_policy),
           encode_to_bytes(nonce)}};
}

MigrationOffer MigrationOffer::from_message(const ProtocolMessage& m) {
  expect(m, MessageType::migration_offer, 4);
  MigrationOffer o;
  o.target_state = parse(m.fields[0], decode_attestation_quote);
  o.target_cert = parse(m.fields[1], decode_tss_certificate);
  o.target_policy = parse(m.fields[2], decode_security_policy);
  o.nonce = parse(m.fields[3], decode_nonce);
  return o;
}

ProtocolMessage MigrationPackage::to_message(const Digest& sid) const {
  return {MessageType::migration_package, sid,
          {encode_to_bytes(key_blob), instance_image, encode_to_bytes(source_state_proof),
           encode_to_bytes(source_policy), encode_to_bytes(source_config)}};
}

MigrationPackage MigrationPackage::from_message(const ProtocolMessage& m) {
  expect(m, MessageType::migration_package, 5);
  MigrationPackage p;
  p.key_blob = parse(m.fields[0], decode_sealed_blob);
  p.instance_image = m.fields[1];
  p.source_state_proof = parse(m.fields[2], decode_attestation_quote);
  p.source_policy = parse(m.fields[3], decode_security_policy);
  p.source_config = parse(m.fields[4], decode_subsystem_configuration);
  return p;
}

ProtocolMessage MigrationNotice::to_message(const Digest& sid) const {
  return {MessageType::migration_notice, sid, {encode_flag(success), encode_errc(reason)}};
}

MigrationNotice MigrationNotice::from_message(const ProtocolMessage& m) {
  expect(m, MessageType::migration_notice, 2);
  return {decode_flag(m.fields[0]), decode_errc(m.fields[1])};
}

ProtocolMessage MigrationAck::to_message(const Digest& sid) const {
  return {MessageType::migration_ack, sid, {encode_flag(finalized)}};
}

MigrationAck MigrationAck::from_message(const ProtocolMessage& m) {
  expect(m, MessageType::migration_ack, 1);
  return {decode_flag(m.fields[0])};
}

ProtocolMessage MigrationError::to_message(const Digest& sid) const {
  return {MessageType::migration_error, sid, {encode_errc(code), to_bytes(detail)}};
}

MigrationError MigrationError::from_message(const ProtocolMessage& m) {
  expect(m, MessageType::migration_error, 2);
  return {decode_errc(m.fields[0]), std::string(m.fields[1].begin(), m.fields[1].end())};
}

// --- remote owner agent ---------------------------------------------------------------

RemoteOwnerAgent::RemoteOwnerAgent(const CryptoSuite& suite, AgentConfig config)
    : suite_(&suite), config_(std::move(config)), rng_(DeterministicRng::from_u64(config_.seed, "agent:" + config_.id)) {
  root_key_ = suite.generate_keypair(rng_, KeyUsage::signing);
  transport_key_ = suite.generate_keypair(rng_, KeyUsage::decryption);
  rim_key_ = suite.generate_keypair(rng_, KeyUsage::signing);
  auth_key_ = Secret(rng_.bytes(kSymmetricKeySize));
  stakeholder_ = Stakeholder{config_.id, Role::remote_owner, root_key_.public_part};

  config_template_.owner = config_.id;
  config_template_.individualization = config_.individualization;
  std::vector<Digest> chain;
  auto add = [&](const std::string& id, const Bytes& image) {
    auto d = measure(suite, image);
    config_template_.load_order.push_back(LoadEntry{id, d, kPcrEngineImages});
    chain.push_back(d);
  };
  add(std::string(kEngineComponent), pristine_engine_image());
  for (const auto& s : generic_trusted_services()) add(s.id, s.image);

  policy_template_.owner = config_.id;
  policy_template_.quality_assertions = config_.quality_assertions;
  policy_template_.allowed_purposes = config_.allowed_purposes;
  policy_template_.acceptable_target_states = {{PcrBinding{kPcrEngineImages, replay_chain(suite, chain)}}};
  policy_template_.min_policy_version = config_.policy_version;
  for (const auto& entry : config_template_.load_order)
    policy_template_.rim_references.push_back(issue_rim(entry.component_id, entry.expected, entry.pcr).cert_id);
  sign(policy_template_);
}

OwnerIdentity RemoteOwnerAgent::identity() const {
  return {config_.id, root_key_.public_part, transport_key_.public_part, rim_key_.public_part};
}

Digest RemoteOwnerAgent::expected_pristine_pcr() const {
  return extend_digest(*suite_, Digest::zero(), measure(*suite_, pristine_engine_image()));
}

void RemoteOwnerAgent::sign(SecurityPolicy& policy) const { sign_policy(*suite_, policy, root_key_); }

void RemoteOwnerAgent::sign(TssCertificate& cert) const { cert.issuer_signature = suite_->sign(root_key_, cert.body()); }

RimCertificate RemoteOwnerAgent::issue_rim(const std::string& component, const Digest& digest, std::uint8_t pcr,
                                           std::uint64_t valid_from) const {
  return issue_rim_cert(*suite_, config_.id, rim_key_, component, digest, pcr, valid_from);
}

RemoteOwnerAgent::OpenedRequest RemoteOwnerAgent::open_request(ByteView request) const {
  try {
    auto message = ProtocolMessage::decode(request);
    auto req = TakeOwnershipRequest::from_message(message);
    auto key_bytes = suite_->decrypt_with(transport_key_, req.wrapped_temp_key);
    if (!key_bytes || key_bytes->size() != kSymmetricKeySize) throw Error(Errc::decrypt_failed, "temp key");
    SymmetricKey key{Secret(std::move(*key_bytes)), "K_RO,temp"};
    auto plain = suite_->aead_decrypt(key, req.payload, message.header());
    if (!plain) throw Error(Errc::decrypt_failed, "payload");
    Secret wipe_plain(*plain);
    auto payload = decode_payload(*plain);
    return {std::move(message), std::move(key), std::move(payload)};
  } catch (const Error& e) {
    if (e.code() == Errc::decrypt_failed) throw;
    throw Error(Errc::decrypt_failed, e.what());
  }
}

ProtocolMessage RemoteOwnerAgent::process_request(ByteView request) {
  auto opened = open_request(request);
  const auto& p = opened.payload;
  const auto& sid = opened.message.session_id;
  if (used_sessions_.contains(sid)) throw Error(Errc::replayed_request, sid.hex());

  const auto& cert = p.certificate;
  if (sid != takeown_session_id(*suite_, cert.device_id, config_.id, p.nonce))
    throw Error(Errc::attestation_rejected, "session id");
  if (cert.subject != config_.id || cert.ek_public != p.ek_public || cert.purpose != p.purpose)
    throw Error(Errc::attestation_rejected, "certificate contents");
  if (p.ek_public.usage != KeyUsage::binding) throw Error(Errc::attestation_rejected, "EK usage");
  if (p.quote.nonce != p.nonce || !verify_quote(*suite_, cert.aik_public, p.quote))
    throw Error(Errc::attestation_rejected, "quote");

  auto expected = expected_pristine_pcr();
  if (std::find(p.quote.pcrs.begin(), p.quote.pcrs.end(), PcrBinding{kPcrPristineEngine, expected}) ==
      p.quote.pcrs.end())
    throw Error(Errc::attestation_rejected, "engine is not pristine");
  std::vector<Digest> logged;
  for (const auto& rec : p.measurement_log) {
    if (rec.verdict != MeasurementVerdict::verified) throw Error(Errc::attestation_rejected, "measurement log");
    if (rec.pcr_index == kPcrPristineEngine) logged.push_back(rec.digest);
  }
  if (replay_chain(*suite_, logged) != expected) throw Error(Errc::attestation_rejected, "measurement log replay");

  if (std::find(config_.allowed_purposes.begin(), config_.allowed_purposes.end(), p.purpose) ==
      config_.allowed_purposes.end())
    throw Error(Errc::purpose_rejected, p.purpose);

  used_sessions_.insert(sid);

  GrantBody body;
  body.certificate = cert;
  sign(body.certificate);
  for (const auto& entry : config_template_.load_order)
    body.rim_certs.push_back(issue_rim(entry.component_id, entry.expected, entry.pcr));
  body.policy = policy_template_;
  body.config = config_template_;
  body.nonce_echo = p.nonce;
  auto auth = suite_->mac(auth_key_.view(), sid.view());
  body.owner_auth.assign(auth.bytes.begin(), auth.bytes.end());

  Secret plain(encode_grant_body(body));
  auto blob = seal(*suite_, p.ek_public, plain.view(), {}, rng_);
  return TakeOwnershipGrant{std::move(blob)}.to_message(sid);
}

// --- take-ownership, device side ------------------------------------------------------

TakeOwnershipSession to_prepare(Platform& platform, const Stakeholder& ro, std::string purpose) {
  auto& tss = install_blank_engine(platform, ro);
  auto& mtm = platform.mtm;
  auto ek = response_as<resp::KeyInfo>(mtm.route_command(tss.vmtm, cmd::CreateEndorsementKey{}), Errc::lifecycle_violation);
  auto aik = response_as<resp::KeyInfo>(mtm.route_command(tss.vmtm, cmd::CreateAik{}), Errc::lifecycle_violation);

  TakeOwnershipSession s;
  s.ro = ro.id;
  s.purpose = std::move(purpose);
  s.nonce = platform.rng.nonce();
  s.session_id = takeown_session_id(platform.suite(), platform.device_id(), ro.id, s.nonce);
  s.ek_id = ek.key_id;
  s.aik_id = aik.key_id;

  TssCertificate cert{ro.id, platform.device_id(), ek.public_part, aik.public_part, s.purpose, std::nullopt};
  mtm.set_ek_certificate(tss.vmtm, encode_to_bytes(cert));
  tss.certificate = std::move(cert);
  tss.engine.purpose = s.purpose;
  return s;
}

ProtocolMessage to_build_request(Platform& platform, TakeOwnershipSession& session, const PublicKey& ro_transport) {
  if (session.state != TakeOwnershipState::prepared) throw Error(Errc::lifecycle_violation, "session not prepared");
  auto* tss = platform.subsystem(session.ro);
  if (!tss || !tss->certificate) throw Error(Errc::no_subsystem, session.ro);

  const RimCertificate* pristine = nullptr;
  for (const auto& c : platform.dm_subsystem().rim_certs)
    if (c.component_id == kPristineComponent) pristine = &c;
  if (!pristine) {
    session.state = TakeOwnershipState::failed;
    throw Error(Errc::attestation_failed, "no pristine-engine reference");
  }
  const RimCertificate pristine_cert = *pristine;
  try {
    auto rec = measure_verify_extend(platform, *tss, std::string(kPristineComponent), tss->engine.image, pristine_cert);
    if (rec.verdict != MeasurementVerdict::verified) throw Error(Errc::measurement_mismatch);
  } catch (const Error& e) {
    session.state = TakeOwnershipState::failed;
    tss->engine.state = EngineState::failed;
    throw Error(Errc::attestation_failed, e.what());
  }

  auto quote = response_as<resp::QuoteResult>(
                   platform.mtm.route_command(tss->vmtm, cmd::Quote{session.aik_id, session.nonce, {kPcrPristineEngine}}),
                   Errc::attestation_failed)
                   .quote;

  TakeOwnershipPayload payload{tss->certificate->ek_public, *tss->certificate, std::move(quote),
                               tss->engine.measurement_log, session.purpose, session.nonce};
  ProtocolMessage message{MessageType::takeown_request, session.session_id, {}};
  auto temp_key = platform.rng.symmetric_key("K_RO,temp");
  Secret plain(encode_payload(payload));
  TakeOwnershipRequest req;
  req.payload = platform.suite().aead_encrypt(temp_key, plain.view(), message.header(), platform.rng);
  req.wrapped_temp_key = platform.suite().encrypt_to(ro_transport, temp_key.bytes.view(), platform.rng);
  session.state = TakeOwnershipState::requested;
  return req.to_message(session.session_id);
}

TrustedSubsystem& to_complete(Platform& platform, TakeOwnershipSession& session, ByteView grant) {
  if (session.state != TakeOwnershipState::requested) throw Error(Errc::lifecycle_violation, "no outstanding request");
  auto* tss = platform.subsystem(session.ro);
  if (!tss) throw Error(Errc::no_subsystem, session.ro);
  const auto& suite = platform.suite();
  auto fail = [&](Errc code, const std::string& detail) {
    session.state = TakeOwnershipState::failed;
    return Error(code, detail);
  };

  GrantBody body;
  try {
    auto message = ProtocolMessage::decode(grant);
    if (message.session_id != session.session_id) throw Error(Errc::decode_error, "session id");
    auto g = TakeOwnershipGrant::from_message(message);
    auto plain = response_as<resp::Data>(platform.mtm.route_command(tss->vmtm, cmd::Unseal{session.ek_id, g.body}),
                                         Errc::decrypt_failed);
    Secret wipe(plain.data);
    body = decode_grant_body(plain.data);
  } catch (const Error& e) {
    throw fail(Errc::decrypt_failed, e.what());
  }

  const auto* owner = platform.owner(session.ro);
  if (!owner) throw fail(Errc::grant_rejected, "owner not provisioned");
  const auto& cert = body.certificate;
  if (!verify_tss_certificate(suite, cert, owner->root_key) || cert.subject != session.ro ||
      cert.device_id != platform.device_id() || !tss->certificate || cert.body() != tss->certificate->body())
    throw fail(Errc::grant_rejected, "certificate");
  if (body.nonce_echo != session.nonce) throw fail(Errc::grant_rejected, "nonce echo");
  if (!verify_policy(suite, body.policy, owner->root_key) || body.policy.owner != session.ro ||
      body.config.owner != session.ro)
    throw fail(Errc::grant_rejected, "policy");
  for (const auto& rc : body.rim_certs)
    if (rc.issuer != session.ro ||
        check_cert(suite, rc, platform.rim_store.trust_roots(), platform.mtm.monotonic_counter()) != CertVerdict::valid)
      throw fail(Errc::grant_rejected, "rim certificate " + rc.component_id);

  tss->certificate = body.certificate;
  tss->policy = body.policy;
  tss->config = body.config;
  tss->rim_certs = body.rim_certs;
  for (const auto& rc : body.rim_certs) platform.rim_store.add(rc);
  platform.mtm.set_ek_certificate(tss->vmtm, encode_to_bytes(body.certificate));
  tss->engine.state = EngineState::certified;

  EngineState booted = EngineState::failed;
  try {
    booted = rte_boot(platform, *tss);
  } catch (const Error& e) {
    throw fail(Errc::boot_failed, e.what());
  }
  if (booted != EngineState::running) throw fail(Errc::boot_failed, session.ro);

  auto owned = platform.mtm.route_command(tss->vmtm, cmd::TakeOwnership{body.owner_auth});
  if (!owned.ok()) throw fail(owned.status, "take ownership");
  session.state = TakeOwnershipState::completed;
  return *tss;
}

// --- migration ---------------------------------------------------------------------------

MigrationStart mig_init(Platform& source, bool owner_approves, const StakeholderId& ro, const Digest& dest_device_id,
                        bool channel_open, MigrationOptions options) {
  if (!channel_open) throw Error(Errc::channel_failed, "no channel to destination");
  if (!owner_approves) throw Error(Errc::owner_declined, "source owner");
  const auto* tss = source.subsystem(ro);
  if (!tss || tss->engine.state != EngineState::running || !tss->certificate || !tss->certificate->issuer_signature ||
      !source.mtm.is_live(tss->vmtm) || source.mtm.inspect(tss->vmtm).lifecycle != Lifecycle::owned)
    throw Error(Errc::no_subsystem, ro);

  MigrationStart start;
  auto& s = start.session;
  s.ro = ro;
  s.source_device_id = source.device_id();
  s.dest_device_id = dest_device_id;
  s.hello_nonce = source.rng.nonce();
  s.hello_session_id = migration_session_id(source.suite(), s.source_device_id, dest_device_id, s.hello_nonce);
  s.options = options;
  start.hello = MigrationHello{*tss->certificate, ro, s.hello_nonce, s.source_device_id}.to_message(s.hello_session_id);
  return start;
}

MigrationDestSession dest_open(Platform& dest, ByteView hello) {
  auto message = ProtocolMessage::decode(hello);
  auto h = MigrationHello::from_message(message);
  if (message.session_id != migration_session_id(dest.suite(), h.source_device_id, dest.device_id(), h.hello_nonce))
    throw Error(Errc::nonce_mismatch, "hello session id");
  MigrationDestSession s;
  s.ro = h.ro;
  s.source_device_id = h.source_device_id;
  s.dest_device_id = dest.device_id();
  s.hello_session_id = message.session_id;
  s.source_cert = std::move(h.source_cert);
  return s;
}

ProtocolMessage dest_screen_source(Platform& dest, MigrationDestSession& session, bool owner_confirms) {
  if (session.state != DestState::opened) throw Error(Errc::lifecycle_violation, "session already screened");
  const auto& suite = dest.suite();
  const auto* tss = dest.subsystem(session.ro);
  if (!tss || tss->engine.state != EngineState::running || !tss->certificate || !dest.mtm.is_live(tss->vmtm) ||
      dest.mtm.inspect(tss->vmtm).lifecycle != Lifecycle::owned)
    throw Error(Errc::stakeholder_mismatch, "destination has no owned subsystem for " + session.ro);
  const auto& cert = session.source_cert;
  if (cert.subject != session.ro) throw Error(Errc::stakeholder_mismatch, cert.subject);
  const auto* owner = dest.owner(session.ro);
  if (!owner) throw Error(Errc::stakeholder_mismatch, "owner not provisioned");
  if (cert.device_id != session.source_device_id || !verify_tss_certificate(suite, cert, owner->root_key))
    throw Error(Errc::bad_signature, "source certificate");
  if (dest.tss_certificate_revoked(cert.id())) throw Error(Errc::source_revoked, cert.id().hex());
  if (!owner_confirms) throw Error(Errc::owner_declined, "destination owner");

  session.nonce = dest.rng.nonce();
  session.session_id = migration_session_id(suite, session.source_device_id, session.dest_device_id, session.nonce);
  auto aik_id = key_id_of(suite, tss->certificate->aik_public);
  auto quote = response_as<resp::QuoteResult>(
                   dest.mtm.route_command(tss->vmtm, cmd::Quote{aik_id, session.nonce, policy_selection(tss->policy)}),
                   Errc::attestation_failed)
                   .quote;
  session.state = DestState::offer_sent;
  return MigrationOffer{std::move(quote), *tss->certificate, tss->policy, session.nonce}.to_message(session.session_id);
}

void src_evaluate_offer(Platform& source, MigrationSourceSession& session, ByteView offer) {
  const auto& suite = source.suite();
  auto message = decode_or(offer, Errc::integrity_failure);
  auto wire_digest = suite.hash(offer);
  if (session.state == SourceState::locked && wire_digest == session.offer_digest) return;
  if (session.state != SourceState::hello_sent) throw Error(Errc::stale_offer, "session already has an offer");
  MigrationOffer o;
  try {
    o = MigrationOffer::from_message(message);
  } catch (const Error& e) {
    throw Error(Errc::integrity_failure, e.what());
  }
  if (source.seen_offer_nonces.contains(o.nonce)) throw Error(Errc::stale_offer, "offer nonce already seen");
  source.seen_offer_nonces.insert(o.nonce);
  if (message.session_id != migration_session_id(suite, session.source_device_id, session.dest_device_id, o.nonce))
    throw Error(Errc::target_untrusted, "session id");

  auto* tss = source.subsystem(session.ro);
  if (!tss) throw Error(Errc::no_subsystem, session.ro);
  const auto* owner = source.owner(session.ro);
  if (!owner) throw Error(Errc::target_untrusted, "owner not provisioned");
  const auto& cert = o.target_cert;
  if (cert.subject != session.ro || cert.device_id != session.dest_device_id ||
      !verify_tss_certificate(suite, cert, owner->root_key) || source.tss_certificate_revoked(cert.id()))
    throw Error(Errc::target_untrusted, "target certificate");
  if (o.target_state.nonce != o.nonce || !verify_quote(suite, cert.aik_public, o.target_state))
    throw Error(Errc::target_untrusted, "target quote");
  const PcrConfig* matched = nullptr;
  for (const auto& config : tss->policy.acceptable_target_states)
    if (quote_covers(o.target_state, config)) {
      matched = &config;
      break;
    }
  if (!matched) throw Error(Errc::target_untrusted, "target state not acceptable");
  const auto& tp = o.target_policy;
  if (!verify_policy(suite, tp, owner->root_key) || tp.owner != session.ro ||
      tp.min_policy_version < tss->policy.min_policy_version)
    throw Error(Errc::policy_unacceptable, "target policy");

  auto locked = source.mtm.route_command(tss->vmtm, cmd::LockForMigration{o.nonce});
  if (!locked.ok()) throw Error(locked.status, "lock");
  session.target_nonce = o.nonce;
  session.session_id = message.session_id;
  session.offer_digest = wire_digest;
  session.dest_cert = cert;
  session.matched_config = *matched;
  session.locked_pcrs = source.mtm.inspect(tss->vmtm).pcrs;
  session.state = SourceState::locked;
}

ProtocolMessage src_package(Platform& source, MigrationSourceSession& session) {
  if (session.state != SourceState::locked) throw Error(Errc::lifecycle_violation, "source not locked");
  auto* tss = source.subsystem(session.ro);
  if (!tss) throw Error(Errc::no_subsystem, session.ro);
  const auto& suite = source.suite();
  if (source.mtm.inspect(tss->vmtm).pcrs != session.locked_pcrs) {
    src_abort(source, session, Errc::state_changed_since_lock);
    throw Error(Errc::state_changed_since_lock, session.ro);
  }

  auto k_m = source.rng.symmetric_key("K_M");
  MigrationPackage pkg;
  pkg.key_blob = seal(suite, session.dest_cert->ek_public, k_m.bytes.view(), session.matched_config, source.rng);
  pkg.instance_image = source.mtm.serialize_instance(tss->vmtm, k_m);
  auto aik_id = key_id_of(suite, tss->certificate->aik_public);
  pkg.source_state_proof = source.mtm.quote(tss->vmtm, aik_id, *session.target_nonce,
                                            std::vector<std::uint8_t>{kPcrEngineImages});
  pkg.source_policy = tss->policy;
  pkg.source_config = tss->config;
  auto message = pkg.to_message(session.session_id);

  if (session.options.delete_before_send) {
    source.mtm.destroy_instance(tss->vmtm);
    source.subsystems.erase(session.ro);
  }
  session.state = SourceState::package_sent;
  return message;
}

ProtocolMessage dest_import(Platform& dest, MigrationDestSession& session, ByteView package) {
  const auto& suite = dest.suite();
  auto message = decode_or(package, Errc::integrity_failure);
  auto wire_digest = suite.hash(package);
  if (session.state == DestState::imported_pending && wire_digest == session.package_digest)
    return MigrationNotice{true, Errc::ok}.to_message(session.session_id);
  if (session.state != DestState::offer_sent) throw Error(Errc::lifecycle_violation, "no outstanding offer");
  if (message.session_id != session.session_id) throw Error(Errc::nonce_mismatch, "session id");
  MigrationPackage pkg;
  try {
    pkg = MigrationPackage::from_message(message);
  } catch (const Error& e) {
    throw Error(Errc::integrity_failure, e.what());
  }
  if (pkg.source_state_proof.nonce != session.nonce) throw Error(Errc::nonce_mismatch, "source state proof");
  if (!verify_quote(suite, session.source_cert.aik_public, pkg.source_state_proof))
    throw Error(Errc::integrity_failure, "source state proof signature");

  auto* tss = dest.subsystem(session.ro);
  if (!tss || !tss->certificate) throw Error(Errc::stakeholder_mismatch, session.ro);
  auto ek_id = key_id_of(suite, tss->certificate->ek_public);
  auto unsealed = dest.mtm.route_command(tss->vmtm, cmd::Unseal{ek_id, pkg.key_blob});
  if (!unsealed.ok())
    throw Error(unsealed.status == Errc::config_mismatch ? Errc::config_mismatch : Errc::integrity_failure,
                "migration key");
  SymmetricKey k_m{Secret(std::get<resp::Data>(unsealed.body).data), "K_M"};

  auto pending = dest.mtm.import_pending(pkg.instance_image, k_m, tss->vmtm);

  const auto* owner = dest.owner(session.ro);
  bool policy_ok = owner && verify_policy(suite, pkg.source_policy, owner->root_key) &&
                   pkg.source_policy.owner == session.ro && pkg.source_config.owner == session.ro;
  if (policy_ok) {
    for (const auto& entry : pkg.source_config.load_order) {
      bool found = false;
      for (const auto& ref : pkg.source_policy.rim_references) {
        const auto* cert = dest.rim_store.find(ref);
        if (cert && cert->component_id == entry.component_id && cert->expected_digest == entry.expected &&
            cert->target_pcr == entry.pcr &&
            dest.rim_store.check(suite, ref, dest.mtm.monotonic_counter()) == CertVerdict::valid)
          found = true;
      }
      if (!found) policy_ok = false;
    }
  }
  if (!policy_ok) {
    dest.mtm.discard_import(pending);
    throw Error(Errc::policy_verify_failed, "source policy");
  }

  session.pending = pending;
  session.package_digest = wire_digest;
  session.source_policy = std::move(pkg.source_policy);
  session.source_config = std::move(pkg.source_config);
  session.state = DestState::imported_pending;
  return MigrationNotice{true, Errc::ok}.to_message(session.session_id);
}

ProtocolMessage src_finalize(Platform& source, MigrationSourceSession& session, ByteView notice) {
  auto message = decode_or(notice, Errc::integrity_failure);
  if (message.session_id != session.session_id) throw Error(Errc::nonce_mismatch, "notice session id");
  MigrationNotice n;
  try {
    n = MigrationNotice::from_message(message);
  } catch (const Error& e) {
    throw Error(Errc::integrity_failure, e.what());
  }

  switch (session.state) {
    case SourceState::package_sent:
      if (n.success) {
        if (auto* tss = source.subsystem(session.ro)) {
          if (source.mtm.is_live(tss->vmtm)) source.mtm.destroy_instance(tss->vmtm);
          source.subsystems.erase(session.ro);
        }
        session.state = SourceState::finalized;
      } else {
        src_abort(source, session, n.reason);
      }
      break;
    case SourceState::finalized:
    case SourceState::aborted:
      break;
    default:
      throw Error(Errc::lifecycle_violation, "notice before package");
  }
  return MigrationAck{session.state == SourceState::finalized}.to_message(session.session_id);
}

TrustedSubsystem* dest_on_ack(Platform& dest, MigrationDestSession& session, ByteView ack) {
  auto message = decode_or(ack, Errc::integrity_failure);
  if (message.session_id != session.session_id) throw Error(Errc::nonce_mismatch, "ack session id");
  MigrationAck a;
  try {
    a = MigrationAck::from_message(message);
  } catch (const Error& e) {
    throw Error(Errc::integrity_failure, e.what());
  }
  if (session.state != DestState::imported_pending) return nullptr;
  if (!a.finalized) {
    dest_abort(dest, session, Errc::migration_timeout);
    return nullptr;
  }
  auto* tss = dest.subsystem(session.ro);
  dest.mtm.activate_import(*session.pending);
  tss->vmtm = *session.pending;
  tss->policy = *session.source_policy;
  tss->config = *session.source_config;
  tss->certificate = session.source_cert;
  session.pending.reset();
  session.state = DestState::activated;
  return tss;
}

void src_abort(Platform& source, MigrationSourceSession& session, Errc reason) {
  if (session.state == SourceState::finalized || session.state == SourceState::aborted) return;
  if (auto* tss = source.subsystem(session.ro);
      tss && source.mtm.is_live(tss->vmtm) && source.mtm.inspect(tss->vmtm).lifecycle == Lifecycle::migration_locked)
    source.mtm.abort_migration(tss->vmtm);
  session.abort_reason = reason;
  session.state = SourceState::aborted;
}

void dest_abort(Platform& dest, MigrationDestSession& session, Errc reason) {
  if (session.state == DestState::activated) return;
  if (session.pending) {
    if (dest.mtm.is_live(*session.pending)) dest.mtm.discard_import(*session.pending);
    session.pending.reset();
    session.state = DestState::discarded;
  } else if (session.state != DestState::discarded) {
    session.state = DestState::halted;
  }
  session.failure = reason;
}

}  // namespace mtmsim
