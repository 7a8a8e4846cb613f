#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <variant>
#include <vector>

#include "mtmsim/crypto.hpp"
#include "mtmsim/rim.hpp"

namespace mtmsim {

inline constexpr std::size_t kPcrCount = 16;
// PCR layout: 0 device-manufacturer boot chain, 1 engine images,
// 2 pristine-engine attestation, 3-15 free.
inline constexpr std::uint8_t kPcrBootChain = 0;
inline constexpr std::uint8_t kPcrEngineImages = 1;
inline constexpr std::uint8_t kPcrPristineEngine = 2;

inline constexpr std::uint8_t kCommandFormatVersion = 1;

using PcrBank = std::array<Digest, kPcrCount>;

enum class Profile : std::uint8_t { mrtm = 1, mltm = 2 };
enum class Lifecycle : std::uint8_t { clean = 0, owned = 1, migration_locked = 2, destroyed = 3 };

std::string_view to_string(Profile p);
std::string_view to_string(Lifecycle l);

struct InstanceHandle {
  std::uint32_t value = 0;
  friend auto operator<=>(const InstanceHandle&, const InstanceHandle&) = default;
};

// A private key held by an instance, encrypted under the device storage key.
struct StoredKey {
  Digest key_id;
  PublicKey public_part;
  Bytes wrapped_private;
};

struct KeyNode {
  Digest key_id;
  PublicKey public_part;
  // Root: sealed under the device storage key. Others: encrypted to the
  // parent's public part.
  Bytes wrapped_private;
  Digest parent;  // zero for the root
  PcrConfig pcr_binding;
  std::uint32_t depth = 0;
};

struct KeyHierarchy {
  std::optional<Digest> root;
  std::map<Digest, KeyNode> nodes;

  bool empty() const { return !root.has_value(); }
};

struct AttestationQuote {
  Digest aik_id;
  Nonce nonce;
  PcrConfig pcrs;  // selected (index, value) pairs in ascending index order
  Signature signature;

  Bytes signed_body() const;
  friend bool operator==(const AttestationQuote&, const AttestationQuote&) = default;
};

bool verify_quote(const CryptoSuite& suite, const PublicKey& aik_public, const AttestationQuote& quote);

struct VmtmInstance {
  StakeholderId stakeholder;
  Profile profile = Profile::mrtm;
  PcrBank pcrs{};
  std::optional<StoredKey> ek;
  Bytes ek_certificate;
  KeyHierarchy hierarchy;
  std::vector<StoredKey> aiks;
  std::optional<Digest> owner_auth;  // digest of the owner authorisation secret
  Lifecycle lifecycle = Lifecycle::clean;
  std::uint64_t verified_counter = 0;
  // Migration bookkeeping.
  std::optional<Nonce> lock_nonce;
  std::optional<InstanceHandle> replacing;  // pending import that will supersede this handle
};

// --- commands ---------------------------------------------------------------

namespace cmd {
struct PcrExtend {
  std::uint8_t index = 0;
  Digest measurement;
};
struct PcrRead {
  std::uint8_t index = 0;
};
struct Quote {
  Digest aik_id;
  Nonce nonce;
  std::vector<std::uint8_t> selection;
};
struct CreateAik {};
struct CreateWrapKey {
  Digest parent_id;
  KeyUsage usage = KeyUsage::signing;
  PcrConfig pcr_binding;
};
struct Sign {
  Digest key_id;
  Bytes data;
};
struct Unseal {
  Digest key_id;
  SealedBlob blob;
};
struct GetPublicKey {
  Digest key_id;
};
struct CreateEndorsementKey {};
struct TakeOwnership {
  Bytes owner_auth;
};
struct ReadCounter {};
struct LockForMigration {
  Nonce nonce;
};
struct AbortMigration {};
// Local-verification set, MRTM only.
struct VerifyRimCert {
  RimCertificate cert;
};
struct VerifyRimCertAndExtend {
  RimCertificate cert;
  Digest measurement;
};
struct LoadVerificationKey {
  PublicKey key;
};
struct IncrementCounter {};
}  // namespace cmd

using MtmCommandBody =
    std::variant<cmd::PcrExtend, cmd::PcrRead, cmd::Quote, cmd::CreateAik, cmd::CreateWrapKey,
                 cmd::Sign, cmd::Unseal, cmd::GetPublicKey, cmd::CreateEndorsementKey,
                 cmd::TakeOwnership, cmd::ReadCounter, cmd::LockForMigration,
                 cmd::AbortMigration, cmd::VerifyRimCert, cmd::VerifyRimCertAndExtend,
                 cmd::LoadVerificationKey, cmd::IncrementCounter>;

// Opcode = variant index + 1.
enum class Opcode : std::uint8_t {
  pcr_extend = 1,
  pcr_read,
  quote,
  create_aik,
  create_wrap_key,
  sign,
  unseal,
  get_public_key,
  create_endorsement_key,
  take_ownership,
  read_counter,
  lock_for_migration,
  abort_migration,
  verify_rim_cert,
  verify_rim_cert_and_extend,
  load_verification_key,
  increment_counter,
};
inline constexpr std::uint8_t kOpcodeCount = std::variant_size_v<MtmCommandBody>;

std::string_view to_string(Opcode op);
bool is_mrtm_only(Opcode op);

struct MtmCommand {
  InstanceHandle target;
  MtmCommandBody body;

  Opcode opcode() const { return static_cast<Opcode>(body.index() + 1); }
};

namespace resp {
struct Empty {
  friend bool operator==(const Empty&, const Empty&) = default;
};
struct PcrValue {
  Digest value;
  friend bool operator==(const PcrValue&, const PcrValue&) = default;
};
struct KeyInfo {
  Digest key_id;
  PublicKey public_part;
  friend bool operator==(const KeyInfo&, const KeyInfo&) = default;
};
struct QuoteResult {
  AttestationQuote quote;
  friend bool operator==(const QuoteResult&, const QuoteResult&) = default;
};
struct SignatureResult {
  Signature signature;
  friend bool operator==(const SignatureResult&, const SignatureResult&) = default;
};
struct Data {
  Bytes data;
  friend bool operator==(const Data&, const Data&) = default;
};
struct Counter {
  std::uint64_t value = 0;
  friend bool operator==(const Counter&, const Counter&) = default;
};
struct Verdict {
  CertVerdict verdict = CertVerdict::valid;
  friend bool operator==(const Verdict&, const Verdict&) = default;
};
}  // namespace resp

using MtmResponseBody = std::variant<resp::Empty, resp::PcrValue, resp::KeyInfo, resp::QuoteResult,
                                     resp::SignatureResult, resp::Data, resp::Counter, resp::Verdict>;

struct MtmResponse {
  Errc status = Errc::ok;
  MtmResponseBody body;

  bool ok() const { return status == Errc::ok; }
  friend bool operator==(const MtmResponse&, const MtmResponse&) = default;
};

// Wire format: version, opcode, 4-byte handle, payload as tagged fields.
Bytes encode_command(const MtmCommand& command);
MtmCommand decode_command(ByteView data);
// Wire format: version, status, body kind, payload as tagged fields.
Bytes encode_response(const MtmResponse& response);
MtmResponse decode_response(ByteView data);

// --- device -----------------------------------------------------------------

struct MtmOptions {
  std::size_t max_instances = 8;
  std::uint32_t max_hierarchy_depth = 8;
  bool allow_multiple_per_stakeholder = false;
};

// Public view of one instance; carries no secret material.
struct InstanceInfo {
  InstanceHandle handle;
  StakeholderId stakeholder;
  Profile profile = Profile::mrtm;
  Lifecycle lifecycle = Lifecycle::clean;
  PcrBank pcrs{};
  std::optional<Digest> ek_id;
  std::optional<Digest> srk_id;
  std::vector<Digest> aik_ids;
  std::vector<Digest> key_ids;  // hierarchy nodes including the SRK
  std::uint64_t verified_counter = 0;
  bool pending_import = false;
};

/// Generic MTM with the vMTM instance manager. Instances are reachable only
/// through handles; commands go through route_command, which enforces
/// handle validity, profile gating and lifecycle rules before dispatching.
/// The direct member functions apply the same checks and throw Error.
class MtmDevice {
 public:
  MtmDevice(const CryptoSuite& suite, Digest device_id, DeterministicRng rng, MtmOptions options = {});

  const Digest& device_id() const { return device_id_; }
  const CryptoSuite& suite() const { return *suite_; }
  const MtmOptions& options() const { return options_; }

  InstanceHandle create_instance(const StakeholderId& stakeholder, Profile profile);
  void destroy_instance(InstanceHandle handle);

  // Errors are reported in the response status, never thrown.
  MtmResponse route_command(const MtmCommand& command);
  MtmResponse route_command(InstanceHandle handle, MtmCommandBody body) {
    return route_command(MtmCommand{handle, std::move(body)});
  }

  Digest pcr_extend(InstanceHandle handle, std::uint8_t index, const Digest& measurement);
  Digest pcr_read(InstanceHandle handle, std::uint8_t index) const;
  AttestationQuote quote(InstanceHandle handle, const Digest& aik_id, const Nonce& nonce,
                         std::span<const std::uint8_t> selection);
  resp::KeyInfo create_aik(InstanceHandle handle);
  Digest create_wrap_key(InstanceHandle handle, const Digest& parent_id, KeyUsage usage,
                         PcrConfig pcr_binding = {});
  Signature sign(InstanceHandle handle, const Digest& key_id, ByteView data);
  Bytes unseal(InstanceHandle handle, const Digest& key_id, const SealedBlob& blob);
  PublicKey public_key(InstanceHandle handle, const Digest& key_id) const;

  resp::KeyInfo create_endorsement_key(InstanceHandle handle);
  void install_ek(InstanceHandle handle, const KeyPair& ek, Bytes certificate);
  void set_ek_certificate(InstanceHandle handle, Bytes certificate);
  void take_ownership(InstanceHandle handle, ByteView owner_auth);

  CertVerdict verify_rim_cert(InstanceHandle handle, const RimCertificate& cert) const;
  Digest verify_rim_cert_and_extend(InstanceHandle handle, const RimCertificate& cert,
                                    const Digest& measurement);
  void load_verification_key(InstanceHandle handle, const PublicKey& key);
  std::uint64_t increment_counter(InstanceHandle handle);

  void lock_for_migration(InstanceHandle handle, const Nonce& nonce);
  void abort_migration(InstanceHandle handle);
  Bytes serialize_instance(InstanceHandle handle, const SymmetricKey& migration_key);
  // Imported instance is owned, verified_counter reset to the device counter.
  InstanceHandle import_instance(ByteView image, const SymmetricKey& migration_key);
  // Imported instance stays migration-locked until activate_import; on
  // activation `replacing` is destroyed and the import becomes owned.
  InstanceHandle import_pending(ByteView image, const SymmetricKey& migration_key,
                                InstanceHandle replacing);
  void activate_import(InstanceHandle pending);
  void discard_import(InstanceHandle pending);

  // Device administration (manufacturer / platform side).
  void register_root_key(const StakeholderId& id, PublicKey key) { root_keys_[id] = std::move(key); }
  const TrustRoots& root_verification_keys() const { return root_keys_; }
  void revoke_rim(const Digest& cert_id, std::uint64_t at_counter);
  std::uint64_t monotonic_counter() const { return counter_; }
  void advance_counter() { ++counter_; }

  bool is_live(InstanceHandle handle) const { return instances_.contains(handle); }
  InstanceInfo inspect(InstanceHandle handle) const;
  std::vector<InstanceInfo> instances() const;
  std::optional<InstanceHandle> find_instance(const StakeholderId& stakeholder) const;

  void encode_state(Writer& w) const;
  static MtmDevice decode_state(const CryptoSuite& suite, Reader& r);

 private:
  VmtmInstance& live(InstanceHandle handle);
  const VmtmInstance& live(InstanceHandle handle) const;
  void require_lifecycle(const VmtmInstance& inst, std::initializer_list<Lifecycle> allowed) const;
  void require_mrtm(const VmtmInstance& inst) const;
  void check_new_stakeholder(const StakeholderId& stakeholder,
                             std::optional<InstanceHandle> ignoring = std::nullopt) const;
  InstanceHandle allocate(VmtmInstance inst);

  StoredKey store_key(const KeyPair& kp);
  KeyPair load_stored(const StoredKey& key) const;
  KeyPair load_node(const VmtmInstance& inst, const Digest& key_id) const;
  KeyPair load_usable_key(const VmtmInstance& inst, const Digest& key_id) const;
  VmtmInstance parse_image(ByteView image, const SymmetricKey& migration_key);
  CertVerdict check_rim(const RimCertificate& cert) const;

  const CryptoSuite* suite_;
  Digest device_id_;
  DeterministicRng rng_;
  MtmOptions options_;
  SymmetricKey storage_key_;
  std::map<InstanceHandle, VmtmInstance> instances_;
  std::uint32_t next_handle_ = 1;
  std::uint64_t counter_ = 0;
  TrustRoots root_keys_;
  std::map<Digest, std::uint64_t> rim_revocations_;
};

// Decrypts a serialized instance image to its canonical plaintext form.
// Throws integrity_failure.
Bytes decrypt_instance_image(const CryptoSuite& suite, ByteView image, const SymmetricKey& key);

void encode(Writer& w, const AttestationQuote& q);
AttestationQuote decode_attestation_quote(Reader& r);

}  // namespace mtmsim
