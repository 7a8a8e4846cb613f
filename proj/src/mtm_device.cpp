#include <algorithm>

#include "mtmsim/mtm.hpp"

namespace mtmsim {

namespace {

constexpr std::string_view kImageAad = "mtmsim-instance-image-v1";
constexpr std::string_view kImageMagic = "mtmsim-instance-v1";

ByteView label(std::string_view s) {
  return ByteView(reinterpret_cast<const std::uint8_t*>(s.data()), s.size());
}

Profile decode_profile(std::uint8_t v) {
  if (v != 1 && v != 2) throw Error(Errc::decode_error, "bad profile");
  return static_cast<Profile>(v);
}

Lifecycle decode_lifecycle(std::uint8_t v) {
  if (v > 3) throw Error(Errc::decode_error, "bad lifecycle");
  return static_cast<Lifecycle>(v);
}

void encode_node(Writer& w, const KeyNode& n) {
  encode(w, n.key_id);
  encode(w, n.public_part);
  w.bytes(n.wrapped_private);
  encode(w, n.parent);
  encode(w, n.pcr_binding);
  w.u32(n.depth);
}

KeyNode decode_node(Reader& r) {
  KeyNode n;
  n.key_id = decode_digest(r);
  n.public_part = decode_public_key(r);
  n.wrapped_private = r.bytes();
  n.parent = decode_digest(r);
  n.pcr_binding = decode_pcr_config(r);
  n.depth = r.u32();
  return n;
}

void encode_stored(Writer& w, const StoredKey& k) {
  encode(w, k.key_id);
  encode(w, k.public_part);
  w.bytes(k.wrapped_private);
}

StoredKey decode_stored(Reader& r) {
  StoredKey k;
  k.key_id = decode_digest(r);
  k.public_part = decode_public_key(r);
  k.wrapped_private = r.bytes();
  return k;
}

void encode_plain_key(Writer& w, const KeyPair& kp) {
  encode(w, kp.public_part);
  w.bytes(kp.private_part.view());
}

KeyPair decode_plain_key(const CryptoSuite& suite, Reader& r) {
  KeyPair kp;
  kp.public_part = decode_public_key(r);
  kp.private_part = Secret(r.bytes());
  kp.key_id = suite.hash(kp.public_part.bytes);
  return kp;
}

}  // namespace

std::string_view to_string(Profile p) { return p == Profile::mrtm ? "MRTM" : "MLTM"; }

std::string_view to_string(Lifecycle l) {
  switch (l) {
    case Lifecycle::clean:
      return "clean";
    case Lifecycle::owned:
      return "owned";
    case Lifecycle::migration_locked:
      return "migration-locked";
    case Lifecycle::destroyed:
      return "destroyed";
  }
  return "unknown";
}

Bytes AttestationQuote::signed_body() const {
  Writer w;
  w.str("mtmsim-quote-v1");
  encode(w, aik_id);
  encode(w, nonce);
  encode(w, pcrs);
  return std::move(w).take();
}

bool verify_quote(const CryptoSuite& suite, const PublicKey& aik_public, const AttestationQuote& quote) {
  if (suite.hash(aik_public.bytes) != quote.aik_id) return false;
  return suite.verify(aik_public, quote.signed_body(), quote.signature);
}

MtmDevice::MtmDevice(const CryptoSuite& suite, Digest device_id, DeterministicRng rng, MtmOptions options)
    : suite_(&suite), device_id_(device_id), rng_(std::move(rng)), options_(options) {
  storage_key_ = rng_.symmetric_key("device-storage-root");
}

// --- instance table ---------------------------------------------------------

VmtmInstance& MtmDevice::live(InstanceHandle handle) {
  auto it = instances_.find(handle);
  if (it == instances_.end()) throw Error(Errc::unknown_handle, std::to_string(handle.value));
  return it->second;
}

const VmtmInstance& MtmDevice::live(InstanceHandle handle) const {
  auto it = instances_.find(handle);
  if (it == instances_.end()) throw Error(Errc::unknown_handle, std::to_string(handle.value));
  return it->second;
}

void MtmDevice::require_lifecycle(const VmtmInstance& inst, std::initializer_list<Lifecycle> allowed) const {
  if (std::find(allowed.begin(), allowed.end(), inst.lifecycle) == allowed.end())
    throw Error(Errc::lifecycle_violation, std::string(to_string(inst.lifecycle)));
}

void MtmDevice::require_mrtm(const VmtmInstance& inst) const {
  if (inst.profile != Profile::mrtm) throw Error(Errc::profile_violation, "local verification requires MRTM");
}

void MtmDevice::check_new_stakeholder(const StakeholderId& stakeholder,
                                      std::optional<InstanceHandle> ignoring) const {
  if (instances_.size() >= options_.max_instances) throw Error(Errc::resource_limit);
  if (options_.allow_multiple_per_stakeholder) return;
  for (const auto& [h, inst] : instances_) {
    if (inst.stakeholder == stakeholder && (!ignoring || h != *ignoring))
      throw Error(Errc::duplicate_stakeholder, stakeholder);
  }
}

InstanceHandle MtmDevice::allocate(VmtmInstance inst) {
  InstanceHandle h{next_handle_++};
  instances_.emplace(h, std::move(inst));
  return h;
}

InstanceHandle MtmDevice::create_instance(const StakeholderId& stakeholder, Profile profile) {
  check_new_stakeholder(stakeholder);
  VmtmInstance inst;
  inst.stakeholder = stakeholder;
  inst.profile = profile;
  inst.verified_counter = counter_;
  return allocate(std::move(inst));
}

void MtmDevice::destroy_instance(InstanceHandle handle) {
  auto& inst = live(handle);
  inst.lifecycle = Lifecycle::destroyed;
  instances_.erase(handle);
}

// --- key storage ------------------------------------------------------------

StoredKey MtmDevice::store_key(const KeyPair& kp) {
  return StoredKey{kp.key_id, kp.public_part,
                   suite_->aead_encrypt(storage_key_, kp.private_part.view(), kp.key_id.view(), rng_)};
}

KeyPair MtmDevice::load_stored(const StoredKey& key) const {
  auto priv = suite_->aead_decrypt(storage_key_, key.wrapped_private, key.key_id.view());
  if (!priv) throw Error(Errc::integrity_failure, "stored key does not unwrap");
  return KeyPair{key.public_part, Secret(std::move(*priv)), key.key_id};
}

KeyPair MtmDevice::load_node(const VmtmInstance& inst, const Digest& key_id) const {
  auto it = inst.hierarchy.nodes.find(key_id);
  if (it == inst.hierarchy.nodes.end()) throw Error(Errc::unknown_key, key_id.hex());
  const auto& node = it->second;
  if (inst.hierarchy.root && node.key_id == *inst.hierarchy.root)
    return load_stored(StoredKey{node.key_id, node.public_part, node.wrapped_private});
  auto parent = load_node(inst, node.parent);
  auto priv = suite_->decrypt_with(parent, node.wrapped_private);
  if (!priv) throw Error(Errc::integrity_failure, "key does not unwrap under its parent");
  return KeyPair{node.public_part, Secret(std::move(*priv)), node.key_id};
}

// Hierarchy keys honour their PCR binding; the EK is also usable (unseal).
KeyPair MtmDevice::load_usable_key(const VmtmInstance& inst, const Digest& key_id) const {
  if (inst.ek && inst.ek->key_id == key_id) return load_stored(*inst.ek);
  auto it = inst.hierarchy.nodes.find(key_id);
  if (it == inst.hierarchy.nodes.end()) throw Error(Errc::unknown_key, key_id.hex());
  if (!pcr_config_matches(it->second.pcr_binding, inst.pcrs))
    throw Error(Errc::config_mismatch, "key is bound to a different PCR configuration");
  return load_node(inst, key_id);
}

// --- PCRs, quotes, keys -----------------------------------------------------

Digest MtmDevice::pcr_extend(InstanceHandle handle, std::uint8_t index, const Digest& measurement) {
  auto& inst = live(handle);
  if (index >= kPcrCount) throw Error(Errc::index_out_of_range, std::to_string(index));
  inst.pcrs[index] = extend_digest(*suite_, inst.pcrs[index], measurement);
  return inst.pcrs[index];
}

Digest MtmDevice::pcr_read(InstanceHandle handle, std::uint8_t index) const {
  const auto& inst = live(handle);
  if (index >= kPcrCount) throw Error(Errc::index_out_of_range, std::to_string(index));
  return inst.pcrs[index];
}

AttestationQuote MtmDevice::quote(InstanceHandle handle, const Digest& aik_id, const Nonce& nonce,
                                  std::span<const std::uint8_t> selection) {
  const auto& inst = live(handle);
  auto aik = std::find_if(inst.aiks.begin(), inst.aiks.end(),
                          [&](const StoredKey& k) { return k.key_id == aik_id; });
  if (aik == inst.aiks.end()) throw Error(Errc::unknown_aik, aik_id.hex());
  std::set<std::uint8_t> indices(selection.begin(), selection.end());
  AttestationQuote q;
  q.aik_id = aik_id;
  q.nonce = nonce;
  for (auto i : indices) {
    if (i >= kPcrCount) throw Error(Errc::index_out_of_range, std::to_string(i));
    q.pcrs.push_back({i, inst.pcrs[i]});
  }
  q.signature = suite_->sign(load_stored(*aik), q.signed_body());
  return q;
}

resp::KeyInfo MtmDevice::create_aik(InstanceHandle handle) {
  auto& inst = live(handle);
  require_lifecycle(inst, {Lifecycle::clean, Lifecycle::owned});
  auto kp = suite_->generate_keypair(rng_, KeyUsage::signing);
  inst.aiks.push_back(store_key(kp));
  return {kp.key_id, kp.public_part};
}

Digest MtmDevice::create_wrap_key(InstanceHandle handle, const Digest& parent_id, KeyUsage usage,
                                  PcrConfig pcr_binding) {
  auto& inst = live(handle);
  require_lifecycle(inst, {Lifecycle::owned});
  auto parent = inst.hierarchy.nodes.find(parent_id);
  if (parent == inst.hierarchy.nodes.end() || parent->second.public_part.usage != KeyUsage::binding)
    throw Error(Errc::unknown_parent, parent_id.hex());
  if (parent->second.depth + 1 > options_.max_hierarchy_depth) throw Error(Errc::hierarchy_depth_limit);
  for (const auto& b : pcr_binding)
    if (b.index >= kPcrCount) throw Error(Errc::index_out_of_range, std::to_string(b.index));

  auto kp = suite_->generate_keypair(rng_, usage);
  KeyNode node;
  node.key_id = kp.key_id;
  node.public_part = kp.public_part;
  node.wrapped_private = suite_->encrypt_to(parent->second.public_part, kp.private_part.view(), rng_);
  node.parent = parent_id;
  node.pcr_binding = std::move(pcr_binding);
  node.depth = parent->second.depth + 1;
  inst.hierarchy.nodes.emplace(node.key_id, std::move(node));
  return kp.key_id;
}

Signature MtmDevice::sign(InstanceHandle handle, const Digest& key_id, ByteView data) {
  const auto& inst = live(handle);
  if (!inst.hierarchy.nodes.contains(key_id)) throw Error(Errc::unknown_key, key_id.hex());
  auto kp = load_usable_key(inst, key_id);
  if (kp.usage() != KeyUsage::signing) throw Error(Errc::key_usage, "not a signing key");
  return suite_->sign(kp, data);
}

Bytes MtmDevice::unseal(InstanceHandle handle, const Digest& key_id, const SealedBlob& blob) {
  const auto& inst = live(handle);
  auto kp = load_usable_key(inst, key_id);
  return mtmsim::unseal(*suite_, kp, blob, inst.pcrs);
}

PublicKey MtmDevice::public_key(InstanceHandle handle, const Digest& key_id) const {
  const auto& inst = live(handle);
  if (inst.ek && inst.ek->key_id == key_id) return inst.ek->public_part;
  for (const auto& aik : inst.aiks)
    if (aik.key_id == key_id) return aik.public_part;
  auto it = inst.hierarchy.nodes.find(key_id);
  if (it == inst.hierarchy.nodes.end()) throw Error(Errc::unknown_key, key_id.hex());
  return it->second.public_part;
}

// --- ownership ----------------------------------------------------------------

resp::KeyInfo MtmDevice::create_endorsement_key(InstanceHandle handle) {
  auto& inst = live(handle);
  if (inst.lifecycle != Lifecycle::clean || inst.ek) throw Error(Errc::already_owned);
  auto kp = suite_->generate_keypair(rng_, KeyUsage::binding);
  inst.ek = store_key(kp);
  return {kp.key_id, kp.public_part};
}

void MtmDevice::install_ek(InstanceHandle handle, const KeyPair& ek, Bytes certificate) {
  auto& inst = live(handle);
  if (inst.lifecycle != Lifecycle::clean || inst.ek) throw Error(Errc::already_owned);
  if (ek.usage() != KeyUsage::binding) throw Error(Errc::key_usage, "EK must be a binding key");
  inst.ek = store_key(ek);
  inst.ek_certificate = std::move(certificate);
}

void MtmDevice::set_ek_certificate(InstanceHandle handle, Bytes certificate) {
  auto& inst = live(handle);
  if (!inst.ek) throw Error(Errc::missing_ek);
  inst.ek_certificate = std::move(certificate);
}

void MtmDevice::take_ownership(InstanceHandle handle, ByteView owner_auth) {
  auto& inst = live(handle);
  if (inst.lifecycle != Lifecycle::clean) throw Error(Errc::already_owned);
  if (!inst.ek) throw Error(Errc::missing_ek);
  auto srk = suite_->generate_keypair(rng_, KeyUsage::binding);
  auto stored = store_key(srk);
  KeyNode root{srk.key_id, srk.public_part, stored.wrapped_private, Digest::zero(), {}, 0};
  inst.hierarchy.root = srk.key_id;
  inst.hierarchy.nodes.emplace(srk.key_id, std::move(root));
  inst.owner_auth = suite_->hash(owner_auth);
  inst.lifecycle = Lifecycle::owned;
}

// --- local verification -------------------------------------------------------

CertVerdict MtmDevice::check_rim(const RimCertificate& cert) const {
  RimCertificate effective = cert;
  if (auto it = rim_revocations_.find(cert.cert_id); it != rim_revocations_.end()) {
    if (!effective.revoked_at_counter || it->second < *effective.revoked_at_counter)
      effective.revoked_at_counter = it->second;
  }
  return check_cert(*suite_, effective, root_keys_, counter_);
}

CertVerdict MtmDevice::verify_rim_cert(InstanceHandle handle, const RimCertificate& cert) const {
  require_mrtm(live(handle));
  return check_rim(cert);
}

Digest MtmDevice::verify_rim_cert_and_extend(InstanceHandle handle, const RimCertificate& cert,
                                             const Digest& measurement) {
  auto& inst = live(handle);
  require_mrtm(inst);
  if (auto verdict = check_rim(cert); verdict != CertVerdict::valid)
    throw Error(to_errc(verdict), cert.component_id);
  if (measurement != cert.expected_digest) throw Error(Errc::measurement_mismatch, cert.component_id);
  if (cert.target_pcr >= kPcrCount) throw Error(Errc::index_out_of_range, std::to_string(cert.target_pcr));
  inst.pcrs[cert.target_pcr] = extend_digest(*suite_, inst.pcrs[cert.target_pcr], measurement);
  inst.verified_counter = counter_;
  return inst.pcrs[cert.target_pcr];
}

void MtmDevice::load_verification_key(InstanceHandle handle, const PublicKey& key) {
  auto& inst = live(handle);
  require_mrtm(inst);
  require_lifecycle(inst, {Lifecycle::owned});
  if (key.usage != KeyUsage::signing) throw Error(Errc::key_usage, "verification keys must be signing keys");
  root_keys_[inst.stakeholder] = key;
}

std::uint64_t MtmDevice::increment_counter(InstanceHandle handle) {
  require_mrtm(live(handle));
  return ++counter_;
}

void MtmDevice::revoke_rim(const Digest& cert_id, std::uint64_t at_counter) {
  auto [it, inserted] = rim_revocations_.emplace(cert_id, at_counter);
  if (!inserted) it->second = std::min(it->second, at_counter);
}

// --- migration ----------------------------------------------------------------

void MtmDevice::lock_for_migration(InstanceHandle handle, const Nonce& nonce) {
  auto& inst = live(handle);
  require_lifecycle(inst, {Lifecycle::owned});
  inst.lifecycle = Lifecycle::migration_locked;
  inst.lock_nonce = nonce;
}

void MtmDevice::abort_migration(InstanceHandle handle) {
  auto& inst = live(handle);
  require_lifecycle(inst, {Lifecycle::migration_locked});
  if (inst.replacing) throw Error(Errc::lifecycle_violation, "pending import");
  inst.lifecycle = Lifecycle::owned;
  inst.lock_nonce.reset();
}

Bytes MtmDevice::serialize_instance(InstanceHandle handle, const SymmetricKey& migration_key) {
  const auto& inst = live(handle);
  require_lifecycle(inst, {Lifecycle::migration_locked});
  if (inst.replacing) throw Error(Errc::lifecycle_violation, "pending import");

  Writer w;
  w.str(kImageMagic);
  w.str(inst.stakeholder);
  w.u8(static_cast<std::uint8_t>(inst.profile));
  for (const auto& pcr : inst.pcrs) encode(w, pcr);
  w.u8(static_cast<std::uint8_t>(inst.lifecycle));
  w.u64(inst.verified_counter);
  w.boolean(inst.ek.has_value());
  if (inst.ek) {
    encode_plain_key(w, load_stored(*inst.ek));
    w.bytes(inst.ek_certificate);
  }
  w.u32(static_cast<std::uint32_t>(inst.aiks.size()));
  for (const auto& aik : inst.aiks) encode_plain_key(w, load_stored(aik));
  w.boolean(inst.owner_auth.has_value());
  if (inst.owner_auth) encode(w, *inst.owner_auth);
  w.boolean(inst.hierarchy.root.has_value());
  if (inst.hierarchy.root) {
    const auto& root = inst.hierarchy.nodes.at(*inst.hierarchy.root);
    encode_plain_key(w, load_stored(StoredKey{root.key_id, root.public_part, root.wrapped_private}));
    w.u32(static_cast<std::uint32_t>(inst.hierarchy.nodes.size() - 1));
    for (const auto& [id, node] : inst.hierarchy.nodes)
      if (id != *inst.hierarchy.root) encode_node(w, node);
  }
  Bytes plain = std::move(w).take();
  auto image = suite_->aead_encrypt(migration_key, plain, label(kImageAad), rng_);
  std::fill(plain.begin(), plain.end(), 0);
  return image;
}

VmtmInstance MtmDevice::parse_image(ByteView image, const SymmetricKey& migration_key) {
  auto plain = decrypt_instance_image(*suite_, image, migration_key);
  VmtmInstance inst;
  try {
    Reader r(plain);
    if (r.str() != kImageMagic) throw Error(Errc::decode_error, "image magic");
    inst.stakeholder = r.str();
    inst.profile = decode_profile(r.u8());
    for (auto& pcr : inst.pcrs) pcr = decode_digest(r);
    decode_lifecycle(r.u8());
    r.u64();  // source verified_counter, superseded by ours
    if (r.boolean()) {
      inst.ek = store_key(decode_plain_key(*suite_, r));
      inst.ek_certificate = r.bytes();
    }
    auto aiks = r.u32();
    for (std::uint32_t i = 0; i < aiks; ++i) inst.aiks.push_back(store_key(decode_plain_key(*suite_, r)));
    if (r.boolean()) inst.owner_auth = decode_digest(r);
    if (r.boolean()) {
      auto root = decode_plain_key(*suite_, r);
      auto stored = store_key(root);
      inst.hierarchy.root = root.key_id;
      inst.hierarchy.nodes.emplace(root.key_id,
                                   KeyNode{root.key_id, root.public_part, stored.wrapped_private,
                                           Digest::zero(), {}, 0});
      auto n = r.u32();
      for (std::uint32_t i = 0; i < n; ++i) {
        auto node = decode_node(r);
        inst.hierarchy.nodes.emplace(node.key_id, std::move(node));
      }
    }
    r.finish();
  } catch (const Error& e) {
    std::fill(plain.begin(), plain.end(), 0);
    throw Error(Errc::integrity_failure, e.what());
  }
  std::fill(plain.begin(), plain.end(), 0);
  inst.verified_counter = counter_;
  return inst;
}

InstanceHandle MtmDevice::import_instance(ByteView image, const SymmetricKey& migration_key) {
  auto inst = parse_image(image, migration_key);
  check_new_stakeholder(inst.stakeholder);
  inst.lifecycle = Lifecycle::owned;
  return allocate(std::move(inst));
}

InstanceHandle MtmDevice::import_pending(ByteView image, const SymmetricKey& migration_key,
                                         InstanceHandle replacing) {
  const auto& old = live(replacing);
  auto inst = parse_image(image, migration_key);
  if (inst.stakeholder != old.stakeholder) throw Error(Errc::stakeholder_mismatch, inst.stakeholder);
  if (instances_.size() >= options_.max_instances) throw Error(Errc::resource_limit);
  inst.lifecycle = Lifecycle::migration_locked;
  inst.replacing = replacing;
  return allocate(std::move(inst));
}

void MtmDevice::activate_import(InstanceHandle pending) {
  auto& inst = live(pending);
  if (!inst.replacing) throw Error(Errc::lifecycle_violation, "not a pending import");
  auto old = *inst.replacing;
  inst.replacing.reset();
  inst.lifecycle = Lifecycle::owned;
  inst.verified_counter = counter_;
  if (is_live(old)) destroy_instance(old);
}

void MtmDevice::discard_import(InstanceHandle pending) {
  const auto& inst = live(pending);
  if (!inst.replacing) throw Error(Errc::lifecycle_violation, "not a pending import");
  destroy_instance(pending);
}

Bytes decrypt_instance_image(const CryptoSuite& suite, ByteView image, const SymmetricKey& key) {
  auto plain = suite.aead_decrypt(key, image, label(kImageAad));
  if (!plain) throw Error(Errc::integrity_failure, "instance image failed authentication");
  return std::move(*plain);
}

// --- inspection -----------------------------------------------------------------

InstanceInfo MtmDevice::inspect(InstanceHandle handle) const {
  const auto& inst = live(handle);
  InstanceInfo info;
  info.handle = handle;
  info.stakeholder = inst.stakeholder;
  info.profile = inst.profile;
  info.lifecycle = inst.lifecycle;
  info.pcrs = inst.pcrs;
  if (inst.ek) info.ek_id = inst.ek->key_id;
  info.srk_id = inst.hierarchy.root;
  for (const auto& aik : inst.aiks) info.aik_ids.push_back(aik.key_id);
  for (const auto& [id, node] : inst.hierarchy.nodes) info.key_ids.push_back(id);
  info.verified_counter = inst.verified_counter;
  info.pending_import = inst.replacing.has_value();
  return info;
}

std::vector<InstanceInfo> MtmDevice::instances() const {
  std::vector<InstanceInfo> out;
  for (const auto& [h, inst] : instances_) out.push_back(inspect(h));
  return out;
}

std::optional<InstanceHandle> MtmDevice::find_instance(const StakeholderId& stakeholder) const {
  for (const auto& [h, inst] : instances_)
    if (inst.stakeholder == stakeholder && !inst.replacing) return h;
  return std::nullopt;
}

// --- persistence ------------------------------------------------------------------

void MtmDevice::encode_state(Writer& w) const {
  encode(w, device_id_);
  encode(w, rng_.seed());
  w.u64(rng_.position());
  w.u64(options_.max_instances);
  w.u32(options_.max_hierarchy_depth);
  w.boolean(options_.allow_multiple_per_stakeholder);
  w.bytes(storage_key_.bytes.view());
  w.u32(next_handle_);
  w.u64(counter_);
  w.u32(static_cast<std::uint32_t>(root_keys_.size()));
  for (const auto& [id, key] : root_keys_) {
    w.str(id);
    encode(w, key);
  }
  w.u32(static_cast<std::uint32_t>(rim_revocations_.size()));
  for (const auto& [id, at] : rim_revocations_) {
    encode(w, id);
    w.u64(at);
  }
  w.u32(static_cast<std::uint32_t>(instances_.size()));
  for (const auto& [h, inst] : instances_) {
    w.u32(h.value);
    w.str(inst.stakeholder);
    w.u8(static_cast<std::uint8_t>(inst.profile));
    for (const auto& pcr : inst.pcrs) encode(w, pcr);
    w.boolean(inst.ek.has_value());
    if (inst.ek) encode_stored(w, *inst.ek);
    w.bytes(inst.ek_certificate);
    w.boolean(inst.hierarchy.root.has_value());
    if (inst.hierarchy.root) encode(w, *inst.hierarchy.root);
    w.u32(static_cast<std::uint32_t>(inst.hierarchy.nodes.size()));
    for (const auto& [id, node] : inst.hierarchy.nodes) encode_node(w, node);
    w.u32(static_cast<std::uint32_t>(inst.aiks.size()));
    for (const auto& aik : inst.aiks) encode_stored(w, aik);
    w.boolean(inst.owner_auth.has_value());
    if (inst.owner_auth) encode(w, *inst.owner_auth);
    w.u8(static_cast<std::uint8_t>(inst.lifecycle));
    w.u64(inst.verified_counter);
    w.boolean(inst.lock_nonce.has_value());
    if (inst.lock_nonce) encode(w, *inst.lock_nonce);
    w.boolean(inst.replacing.has_value());
    if (inst.replacing) w.u32(inst.replacing->value);
  }
}

MtmDevice MtmDevice::decode_state(const CryptoSuite& suite, Reader& r) {
  auto device_id = decode_digest(r);
  auto seed = decode_digest(r);
  auto position = r.u64();
  MtmOptions options;
  options.max_instances = r.u64();
  options.max_hierarchy_depth = r.u32();
  options.allow_multiple_per_stakeholder = r.boolean();
  MtmDevice dev(suite, device_id, DeterministicRng(seed, position), options);
  dev.rng_ = DeterministicRng(seed, position);
  dev.storage_key_ = SymmetricKey{Secret(r.bytes()), "device-storage-root"};
  dev.next_handle_ = r.u32();
  dev.counter_ = r.u64();
  auto roots = r.u32();
  for (std::uint32_t i = 0; i < roots; ++i) {
    auto id = r.str();
    dev.root_keys_[id] = decode_public_key(r);
  }
  auto revocations = r.u32();
  for (std::uint32_t i = 0; i < revocations; ++i) {
    auto id = decode_digest(r);
    dev.rim_revocations_[id] = r.u64();
  }
  auto n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    InstanceHandle h{r.u32()};
    VmtmInstance inst;
    inst.stakeholder = r.str();
    inst.profile = decode_profile(r.u8());
    for (auto& pcr : inst.pcrs) pcr = decode_digest(r);
    if (r.boolean()) inst.ek = decode_stored(r);
    inst.ek_certificate = r.bytes();
    if (r.boolean()) inst.hierarchy.root = decode_digest(r);
    auto nodes = r.u32();
    for (std::uint32_t j = 0; j < nodes; ++j) {
      auto node = decode_node(r);
      inst.hierarchy.nodes.emplace(node.key_id, std::move(node));
    }
    auto aiks = r.u32();
    for (std::uint32_t j = 0; j < aiks; ++j) inst.aiks.push_back(decode_stored(r));
    if (r.boolean()) inst.owner_auth = decode_digest(r);
    inst.lifecycle = decode_lifecycle(r.u8());
    inst.verified_counter = r.u64();
    if (r.boolean()) inst.lock_nonce = decode_nonce(r);
    if (r.boolean()) inst.replacing = InstanceHandle{r.u32()};
    dev.instances_.emplace(h, std::move(inst));
  }
  return dev;
}

}  // namespace mtmsim
