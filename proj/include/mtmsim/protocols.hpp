#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "mtmsim/engine.hpp"

namespace mtmsim {

inline constexpr std::uint8_t kProtocolVersion = 1;

enum class MessageType : std::uint8_t {
  takeown_request = 1,
  takeown_grant = 2,
  migration_hello = 3,
  migration_offer = 4,
  migration_package = 5,
  migration_notice = 6,
  migration_ack = 7,
  migration_error = 8,
};
inline constexpr std::uint8_t kMessageTypeCount = 8;

std::string_view to_string(MessageType t);

/// Canonical envelope: version, type tag, 32-byte session id, 4-byte
/// big-endian payload length, then payload fields in declaration order,
/// each (1-byte tag starting at 1, 4-byte length, bytes).
struct ProtocolMessage {
  MessageType type = MessageType::takeown_request;
  Digest session_id;
  std::vector<Bytes> fields;

  Bytes encode() const;
  // Header bytes (version, type, session id): associated data for payload
  // encryption.
  Bytes header() const;
  static ProtocolMessage decode(ByteView wire);  // throws decode_error / version_mismatch

  friend bool operator==(const ProtocolMessage&, const ProtocolMessage&) = default;
};

Digest takeown_session_id(const CryptoSuite& suite, const Digest& device_id, const StakeholderId& ro,
                          const Nonce& nonce);
Digest migration_session_id(const CryptoSuite& suite, const Digest& source_device, const Digest& dest_device,
                            const Nonce& nonce);

// --- typed payloads -------------------------------------------------------------

// Plaintext of the request payload, encrypted under K_RO,temp.
struct TakeOwnershipPayload {
  PublicKey ek_public;
  TssCertificate certificate;
  AttestationQuote quote;
  std::vector<MeasurementRecord> measurement_log;
  std::string purpose;
  Nonce nonce;
};

struct TakeOwnershipRequest {
  Bytes wrapped_temp_key;
  Bytes payload;

  ProtocolMessage to_message(const Digest& session_id) const;
  static TakeOwnershipRequest from_message(const ProtocolMessage& m);
};

// Plaintext sealed to the EK* public part.
struct GrantBody {
  TssCertificate certificate;  // signed by the remote owner
  std::vector<RimCertificate> rim_certs;
  SecurityPolicy policy;
  SubsystemConfiguration config;
  Nonce nonce_echo;
  Bytes owner_auth;
};

struct TakeOwnershipGrant {
  SealedBlob body;

  ProtocolMessage to_message(const Digest& session_id) const;
  static TakeOwnershipGrant from_message(const ProtocolMessage& m);
};

struct MigrationHello {
  TssCertificate source_cert;
  StakeholderId ro;
  Nonce hello_nonce;
  Digest source_device_id;

  ProtocolMessage to_message(const Digest& session_id) const;
  static MigrationHello from_message(const ProtocolMessage& m);
};

struct MigrationOffer {
  AttestationQuote target_state;
  TssCertificate target_cert;
  SecurityPolicy target_policy;
  Nonce nonce;

  ProtocolMessage to_message(const Digest& session_id) const;
  static MigrationOffer from_message(const ProtocolMessage& m);
};

struct MigrationPackage {
  SealedBlob key_blob;
  Bytes instance_image;
  AttestationQuote source_state_proof;
  SecurityPolicy source_policy;
  SubsystemConfiguration source_config;

  ProtocolMessage to_message(const Digest& session_id) const;
  static MigrationPackage from_message(const ProtocolMessage& m);
};

struct MigrationNotice {
  bool success = false;
  Errc reason = Errc::ok;

  ProtocolMessage to_message(const Digest& session_id) const;
  static MigrationNotice from_message(const ProtocolMessage& m);
};

struct MigrationAck {
  bool finalized = false;

  ProtocolMessage to_message(const Digest& session_id) const;
  static MigrationAck from_message(const ProtocolMessage& m);
};

struct MigrationError {
  Errc code = Errc::ok;
  std::string detail;

  ProtocolMessage to_message(const Digest& session_id) const;
  static MigrationError from_message(const ProtocolMessage& m);
};

// --- remote owner -----------------------------------------------------------------

struct AgentConfig {
  StakeholderId id = "RO";
  std::uint64_t seed = 0;
  std::vector<std::string> allowed_purposes{"telephony"};
  std::vector<std::string> quality_assertions{"operator-certified"};
  std::uint32_t policy_version = 1;
  std::map<std::string, std::string> individualization;
};

/// The remote owner's side of take-ownership. Keys derive from the seed;
/// private parts never leave the agent.
class RemoteOwnerAgent {
 public:
  RemoteOwnerAgent(const CryptoSuite& suite, AgentConfig config);

  const AgentConfig& config() const { return config_; }
  const Stakeholder& stakeholder() const { return stakeholder_; }
  OwnerIdentity identity() const;
  const PublicKey& transport_public() const { return transport_key_.public_part; }
  const SecurityPolicy& policy_template() const { return policy_template_; }
  const SubsystemConfiguration& config_template() const { return config_template_; }
  // PCR 2 value a pristine engine attests to.
  Digest expected_pristine_pcr() const;

  // Verifies the request and returns the grant. Throws decrypt_failed,
  // replayed_request, attestation_rejected or purpose_rejected.
  ProtocolMessage process_request(ByteView request);

  // Opens a request without acting on it (test and audit hook).
  struct OpenedRequest {
    ProtocolMessage message;
    SymmetricKey temp_key;
    TakeOwnershipPayload payload;
  };
  OpenedRequest open_request(ByteView request) const;

  // Signs a policy / TSS certificate with the root key (used when a test or
  // scenario needs an owner-issued artefact outside the protocol).
  void sign(SecurityPolicy& policy) const;
  void sign(TssCertificate& cert) const;
  RimCertificate issue_rim(const std::string& component, const Digest& digest, std::uint8_t pcr,
                           std::uint64_t valid_from = 0) const;

 private:
  const CryptoSuite* suite_;
  AgentConfig config_;
  DeterministicRng rng_;
  KeyPair root_key_;
  KeyPair transport_key_;
  KeyPair rim_key_;
  Secret auth_key_;
  Stakeholder stakeholder_;
  SecurityPolicy policy_template_;
  SubsystemConfiguration config_template_;
  std::set<Digest> used_sessions_;
};

// --- take-ownership, device side --------------------------------------------------

enum class TakeOwnershipState : std::uint8_t { prepared, requested, completed, failed };

struct TakeOwnershipSession {
  StakeholderId ro;
  std::string purpose;
  Nonce nonce;
  Digest session_id;
  Digest ek_id;
  Digest aik_id;
  TakeOwnershipState state = TakeOwnershipState::prepared;
};

TakeOwnershipSession to_prepare(Platform& platform, const Stakeholder& ro, std::string purpose);
ProtocolMessage to_build_request(Platform& platform, TakeOwnershipSession& session, const PublicKey& ro_transport);
TrustedSubsystem& to_complete(Platform& platform, TakeOwnershipSession& session, ByteView grant);

// --- migration ----------------------------------------------------------------------

struct MigrationOptions {
  bool delete_before_send = false;
  std::uint64_t notice_timeout_ticks = 30;
};

enum class SourceState : std::uint8_t { hello_sent, locked, package_sent, finalized, aborted };
enum class DestState : std::uint8_t { opened, offer_sent, imported_pending, activated, discarded, halted };

std::string_view to_string(SourceState s);
std::string_view to_string(DestState s);

struct MigrationSourceSession {
  StakeholderId ro;
  Digest source_device_id;
  Digest dest_device_id;
  Nonce hello_nonce;
  Digest hello_session_id;
  std::optional<Nonce> target_nonce;
  Digest session_id;
  SourceState state = SourceState::hello_sent;
  MigrationOptions options;
  PcrBank locked_pcrs{};
  Digest offer_digest;
  std::optional<TssCertificate> dest_cert;
  PcrConfig matched_config;
  std::optional<Digest> srk_id;
  Errc abort_reason = Errc::ok;
};

struct MigrationDestSession {
  StakeholderId ro;
  Digest source_device_id;
  Digest dest_device_id;
  Digest hello_session_id;
  TssCertificate source_cert;
  Nonce nonce;
  Digest session_id;
  DestState state = DestState::opened;
  Digest package_digest;
  std::optional<InstanceHandle> pending;
  std::optional<SecurityPolicy> source_policy;
  std::optional<SubsystemConfiguration> source_config;
  Errc failure = Errc::ok;
};

struct MigrationStart {
  MigrationSourceSession session;
  ProtocolMessage hello;
};

MigrationStart mig_init(Platform& source, bool owner_approves, const StakeholderId& ro, const Digest& dest_device_id,
                        bool channel_open, MigrationOptions options = {});

MigrationDestSession dest_open(Platform& dest, ByteView hello);
ProtocolMessage dest_screen_source(Platform& dest, MigrationDestSession& session, bool owner_confirms);
// Locks the source; a duplicate delivery of the accepted offer is a no-op.
void src_evaluate_offer(Platform& source, MigrationSourceSession& session, ByteView offer);
ProtocolMessage src_package(Platform& source, MigrationSourceSession& session);
// Returns the success notice; throws on rejection (the caller reports a
// failure notice).
ProtocolMessage dest_import(Platform& dest, MigrationDestSession& session, ByteView package);
// Absorbs a success/failure notice and returns the acknowledgement.
ProtocolMessage src_finalize(Platform& source, MigrationSourceSession& session, ByteView notice);
// Applies the source's acknowledgement; returns the rebuilt subsystem on
// activation.
TrustedSubsystem* dest_on_ack(Platform& dest, MigrationDestSession& session, ByteView ack);

// Abort paths: revert a locked source to owned, discard a pending import.
void src_abort(Platform& source, MigrationSourceSession& session, Errc reason);
void dest_abort(Platform& dest, MigrationDestSession& session, Errc reason);

}  // namespace mtmsim
