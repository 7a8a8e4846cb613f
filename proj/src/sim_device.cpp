#include <fstream>
#include <iterator>

#include <sodium.h>

#include "mtmsim/harness.hpp"

namespace mtmsim {

// --- event log ----------------------------------------------------------------------

Digest LogEntry::digest() const {
  Writer w;
  w.str("mtmsim-log-v1").u64(sequence).str(actor).str(action);
  mtmsim::encode(w, payload_digest);
  mtmsim::encode(w, predecessor);
  return hash(w.data());
}

const LogEntry& EventLog::append(std::string actor, std::string action, ByteView payload) {
  LogEntry e{entries_.size(), std::move(actor), std::move(action), hash(payload), head()};
  entries_.push_back(std::move(e));
  return entries_.back();
}

Digest EventLog::head() const { return entries_.empty() ? Digest::zero() : entries_.back().digest(); }

bool EventLog::verify() const {
  Digest prev = Digest::zero();
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    if (entries_[i].sequence != i || entries_[i].predecessor != prev) return false;
    prev = entries_[i].digest();
  }
  return true;
}

void EventLog::encode(Writer& w) const {
  w.u32(static_cast<std::uint32_t>(entries_.size()));
  for (const auto& e : entries_) {
    w.u64(e.sequence).str(e.actor).str(e.action);
    mtmsim::encode(w, e.payload_digest);
    mtmsim::encode(w, e.predecessor);
  }
}

EventLog EventLog::decode(Reader& r) {
  EventLog log;
  auto n = r.u32();
  if (n > kMaxElementLength) throw Error(Errc::decode_error, "log too long");
  for (std::uint32_t i = 0; i < n; ++i) {
    LogEntry e;
    e.sequence = r.u64();
    e.actor = r.str();
    e.action = r.str();
    e.payload_digest = decode_digest(r);
    e.predecessor = decode_digest(r);
    log.entries_.push_back(std::move(e));
  }
  if (!log.verify()) throw Error(Errc::integrity_failure, "event log chain");
  return log;
}

// --- devices ------------------------------------------------------------------------

DmIdentity DmIdentity::standard(std::size_t count) {
  static const char* names[] = {"bootloader", "kernel", "tcb-services", "driver-modem",
                                "driver-display", "crypto-lib", "update-agent", "os-loader"};
  DmIdentity dm;
  for (std::size_t i = 0; i < count; ++i) {
    std::string id = i < std::size(names) ? names[i] : "component-" + std::to_string(i);
    dm.components.emplace_back(id, to_bytes("mtmsim:DM:" + id + ":v1"));
  }
  return dm;
}

KeyPair DmIdentity::key(const CryptoSuite& suite) const {
  auto rng = DeterministicRng::from_u64(key_seed, "dm:" + id);
  return suite.generate_keypair(rng, KeyUsage::signing);
}

SimDevice::SimDevice(std::string name, std::uint64_t seed, Platform platform_in)
    : platform(std::move(platform_in)), name_(std::move(name)), seed_(seed) {}

EngineState SimDevice::boot() {
  auto& dm = platform.dm_subsystem();
  if (dm.engine.state == EngineState::running) return dm.engine.state;
  auto state = rte_boot(platform, dm);
  record(state == EngineState::running ? "boot" : "boot-failed", platform.mtm.pcr_read(dm.vmtm, kPcrBootChain).view());
  return state;
}

void SimDevice::encode(Writer& w) const {
  w.str("mtmsim-device-v1").str(name_).u64(seed_);
  platform.encode_state(w);
  log.encode(w);
}

SimDevice SimDevice::decode(const CryptoSuite& suite, Reader& r) {
  if (r.str() != "mtmsim-device-v1") throw Error(Errc::decode_error, "device label");
  auto name = r.str();
  auto seed = r.u64();
  auto platform = Platform::decode_state(suite, r);
  SimDevice d(std::move(name), seed, std::move(platform));
  d.log = EventLog::decode(r);
  return d;
}

SimDevice device_create(const CryptoSuite& suite, std::string name, std::uint64_t seed, const DmIdentity& dm) {
  Writer id;
  id.str("mtmsim-device").str(name).u64(seed);
  auto device_id = suite.hash(id.data());
  auto rng = DeterministicRng::from_u64(seed, "device:" + name);
  SimDevice device(name, seed, Platform(suite, device_id, std::move(rng)));
  auto key = dm.key(suite);
  create_dm_subsystem(device.platform, Stakeholder{dm.id, Role::device_manufacturer, key.public_part}, key,
                      dm.components);
  device.record("create", device_id.view());
  return device;
}

// --- state files ------------------------------------------------------------------------

namespace {

SymmetricKey file_key(std::string_view passphrase, ByteView salt) {
  Bytes key(kSymmetricKeySize);
  if (crypto_pwhash(key.data(), key.size(), passphrase.data(), passphrase.size(), salt.data(),
                    crypto_pwhash_OPSLIMIT_INTERACTIVE, crypto_pwhash_MEMLIMIT_INTERACTIVE,
                    crypto_pwhash_ALG_ARGON2ID13) != 0)
    throw Error(Errc::io_error, "key derivation out of memory");
  return SymmetricKey{Secret(std::move(key)), "state-file"};
}

Bytes file_prefix() {
  Bytes p = to_bytes(kStateMagic);
  p.push_back(kStateVersion);
  return p;
}

}  // namespace

Bytes encode_state_file(const SimDevice& device, std::string_view passphrase) {
  const auto& suite = device.platform.suite();
  Writer body_w;
  device.encode(body_w);
  Secret plain(std::move(body_w).take());

  auto salt_digest = suite.hash(concat({to_bytes("mtmsim-state-salt"), plain.view()}));
  Bytes salt(salt_digest.bytes.begin(), salt_digest.bytes.begin() + crypto_pwhash_SALTBYTES);
  DeterministicRng nonce_rng(suite.hash(concat({to_bytes("mtmsim-state-nonce"), plain.view()})));
  auto key = file_key(passphrase, salt);
  auto sealed = suite.aead_encrypt(key, plain.view(), file_prefix(), nonce_rng);

  Writer w;
  w.raw(file_prefix()).bytes(salt).bytes(sealed);
  auto digest = suite.hash(w.data());
  w.fixed(digest.bytes);
  return std::move(w).take();
}

SimDevice decode_state_file(const CryptoSuite& suite, ByteView file, std::string_view passphrase) {
  auto prefix = file_prefix();
  if (file.size() < prefix.size() + kDigestSize || !std::equal(kStateMagic.begin(), kStateMagic.end(), file.begin()))
    throw Error(Errc::bad_magic, "not a device state file");
  if (file[kStateMagic.size()] != kStateVersion) throw Error(Errc::version_mismatch, "state file version");
  auto content = file.first(file.size() - kDigestSize);
  Digest stored;
  std::copy(file.end() - kDigestSize, file.end(), stored.bytes.begin());
  if (suite.hash(content) != stored) throw Error(Errc::decrypt_failed, "state file digest");

  Bytes salt, sealed;
  try {
    Reader r(content.subspan(prefix.size()));
    salt = r.bytes();
    sealed = r.bytes();
    r.finish();
  } catch (const Error& e) {
    throw Error(Errc::decrypt_failed, e.what());
  }
  if (salt.size() != crypto_pwhash_SALTBYTES) throw Error(Errc::decrypt_failed, "salt");
  auto plain = suite.aead_decrypt(file_key(passphrase, salt), sealed, prefix);
  if (!plain) throw Error(Errc::decrypt_failed, "wrong passphrase or corrupted state");
  Secret wipe(*plain);
  Reader r(*plain);
  auto device = SimDevice::decode(suite, r);
  r.finish();
  return device;
}

void persist_state(const SimDevice& device, const std::filesystem::path& path, std::string_view passphrase) {
  auto bytes = encode_state_file(device, passphrase);
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Errc::io_error, "cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(Errc::io_error, "write failed " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

SimDevice load_state(const CryptoSuite& suite, const std::filesystem::path& path, std::string_view passphrase) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io_error, "cannot read " + path.string());
  Bytes bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_state_file(suite, bytes, passphrase);
}

}  // namespace mtmsim
