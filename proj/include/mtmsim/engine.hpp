#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "mtmsim/mtm.hpp"
#include "mtmsim/rim.hpp"

namespace mtmsim {

enum class Role : std::uint8_t { device_manufacturer = 1, device_owner, user, remote_owner };
std::string_view to_string(Role r);  // "DM", "DO", "U", "RO"

struct Stakeholder {
  StakeholderId id;
  Role role = Role::remote_owner;
  PublicKey root_public_key;
};

enum class Domain : std::uint8_t { mandatory = 1, discretionary = 2 };
enum class EngineState : std::uint8_t { pristine = 0, certified, running, failed };
enum class ServiceKind : std::uint8_t { trusted = 1, normal, measured };
enum class MeasurementVerdict : std::uint8_t { verified = 0, mismatched, unverified };

std::string_view to_string(Domain d);
std::string_view to_string(EngineState s);
std::string_view to_string(MeasurementVerdict v);

struct TrustedService {
  std::string id;
  ServiceKind kind = ServiceKind::normal;
  Bytes image;
  std::vector<std::string> exports;
  std::vector<Digest> aik_refs;  // only trusted services may hold these
};

struct SecurityPolicy {
  StakeholderId owner;
  std::vector<Digest> rim_references;
  std::vector<std::string> quality_assertions;
  std::vector<std::string> allowed_purposes;
  std::vector<PcrConfig> acceptable_target_states;
  std::uint32_t min_policy_version = 0;
  std::optional<Signature> signature;

  Bytes body() const;
};

struct LoadEntry {
  std::string component_id;
  Digest expected;
  std::uint8_t pcr = kPcrEngineImages;
};

struct SubsystemConfiguration {
  StakeholderId owner;
  std::vector<LoadEntry> load_order;
  std::map<std::string, std::string> individualization;
};

struct MeasurementRecord {
  std::string component_id;
  Digest digest;
  MeasurementVerdict verdict = MeasurementVerdict::unverified;
  std::uint8_t pcr_index = 0;
  std::uint64_t counter_at_measure = 0;
};

struct TrustedEngine {
  StakeholderId stakeholder;
  Domain domain = Domain::mandatory;
  EngineState state = EngineState::pristine;
  Bytes image;
  std::vector<MeasurementRecord> measurement_log;
  std::string purpose;
};

struct ExternalServiceRef {
  StakeholderId provider;
  std::string interface_id;
  friend bool operator==(const ExternalServiceRef&, const ExternalServiceRef&) = default;
};

// Certificate of a trusted subsystem: self-generated during take-ownership
// preparation, signed by the remote owner's root key in the grant.
struct TssCertificate {
  StakeholderId subject;
  Digest device_id;
  PublicKey ek_public;
  PublicKey aik_public;
  std::string purpose;
  std::optional<Signature> issuer_signature;

  Bytes body() const;
  Digest id() const;
  friend bool operator==(const TssCertificate&, const TssCertificate&) = default;
};

bool verify_tss_certificate(const CryptoSuite& suite, const TssCertificate& cert, const PublicKey& root);
bool verify_policy(const CryptoSuite& suite, const SecurityPolicy& policy, const PublicKey& root);
void sign_policy(const CryptoSuite& suite, SecurityPolicy& policy, const KeyPair& owner_root);

// The tuple {TE, TS_own, TS_ext, TR, SP, SC} plus the vMTM handle and the
// credentials installed for local verification.
struct TrustedSubsystem {
  TrustedEngine engine;
  InstanceHandle vmtm;
  std::vector<TrustedService> services_own;
  std::vector<ExternalServiceRef> services_external;
  std::vector<std::string> resources;
  SecurityPolicy policy;
  SubsystemConfiguration config;
  std::vector<RimCertificate> rim_certs;
  std::optional<TssCertificate> certificate;

  const Bytes* component_image(const std::string& component_id) const;
  Bytes* component_image(const std::string& component_id);
  const RimCertificate* rim_for(const LoadEntry& entry) const;
};

// A provisioned remote owner: the public keys the device manufacturer
// pre-installs so the platform can talk to and verify that owner.
struct OwnerIdentity {
  StakeholderId id;
  PublicKey root_key;       // signs TSS certificates and policies
  PublicKey transport_key;  // K_RO,PK, receives take-ownership requests
  PublicKey rim_key;        // issues RIM certificates
};

inline constexpr std::string_view kPristineComponent = "pristine-engine";
inline constexpr std::string_view kEngineComponent = "engine";

// Fixed images of the blank engine and its generic trusted services.
const Bytes& pristine_engine_image();
std::vector<TrustedService> generic_trusted_services();

/// One trusted mobile platform: the MTM plus every trusted subsystem and
/// the local verification material.
class Platform {
 public:
  Platform(const CryptoSuite& suite, Digest device_id, DeterministicRng rng, MtmOptions options = {});

  const CryptoSuite& suite() const { return *suite_; }
  const Digest& device_id() const { return mtm.device_id(); }

  TrustedSubsystem* subsystem(const StakeholderId& id);
  const TrustedSubsystem* subsystem(const StakeholderId& id) const;
  TrustedSubsystem& dm_subsystem();
  bool booted() const;

  void provision_owner(const OwnerIdentity& owner);
  const OwnerIdentity* owner(const StakeholderId& id) const;

  void revoke_tss_certificate(const Digest& cert_id, std::uint64_t at_counter);
  bool tss_certificate_revoked(const Digest& cert_id) const;

  void encode_state(Writer& w) const;
  static Platform decode_state(const CryptoSuite& suite, Reader& r);

  MtmDevice mtm;
  StakeholderId dm_id;
  std::map<StakeholderId, TrustedSubsystem> subsystems;
  RimStore rim_store;
  std::map<StakeholderId, OwnerIdentity> owners;
  std::map<Digest, std::uint64_t> revoked_tss;
  std::set<Nonce> seen_offer_nonces;
  DeterministicRng rng;

 private:
  const CryptoSuite* suite_;
};

// --- operations ---------------------------------------------------------------

Digest measure(const CryptoSuite& suite, ByteView image);

// RTM/RTV pipeline for one component. A digest mismatch is a verdict, not an
// error: the record says mismatched and the engine fails. Certificate and
// MTM errors fail the engine and are rethrown.
MeasurementRecord measure_verify_extend(Platform& platform, TrustedSubsystem& subsystem,
                                        const std::string& component_id, ByteView image,
                                        const RimCertificate& rim_cert);

// RTE boot over config.load_order; fail-stop at the first failure.
EngineState rte_boot(Platform& platform, TrustedSubsystem& subsystem);

// Builds the DM subsystem, its RIM certificates (boot chain in PCR 0 and the
// pristine-engine reference) and registers the DM trust root.
TrustedSubsystem& create_dm_subsystem(Platform& platform, const Stakeholder& dm, const KeyPair& dm_key,
                                      const std::vector<std::pair<std::string, Bytes>>& components);

TrustedSubsystem& install_blank_engine(Platform& platform, const Stakeholder& ro);

void remove_engine(Platform& platform, const Stakeholder& requestor, const StakeholderId& owner);

ExternalServiceRef bind_external_service(TrustedSubsystem& consumer, const TrustedSubsystem& provider,
                                         const std::string& interface_id);

// Checks the trusted/normal AIK-reference rule before adding a service.
void add_service(TrustedSubsystem& subsystem, TrustedService service);

// Services are inert images; invoking one returns its measurement, and
// fails on a failed engine.
Digest invoke_service(const TrustedSubsystem& subsystem, const std::string& service_id);

// Expected PCR value after extending zero-initialised register with `digests`.
Digest replay_chain(const CryptoSuite& suite, const std::vector<Digest>& digests,
                    const Digest& start = Digest::zero());

void encode(Writer& w, const TssCertificate& c);
TssCertificate decode_tss_certificate(Reader& r);
void encode(Writer& w, const SecurityPolicy& p);
SecurityPolicy decode_security_policy(Reader& r);
void encode(Writer& w, const SubsystemConfiguration& c);
SubsystemConfiguration decode_subsystem_configuration(Reader& r);
void encode(Writer& w, const MeasurementRecord& m);
MeasurementRecord decode_measurement_record(Reader& r);
void encode(Writer& w, const TrustedSubsystem& s);
TrustedSubsystem decode_trusted_subsystem(Reader& r);

}  // namespace mtmsim
