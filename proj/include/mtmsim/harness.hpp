#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mtmsim/protocols.hpp"

namespace mtmsim {

// --- event log ----------------------------------------------------------------------

struct LogEntry {
  std::uint64_t sequence = 0;
  std::string actor;
  std::string action;
  Digest payload_digest;
  Digest predecessor;

  Digest digest() const;
  friend bool operator==(const LogEntry&, const LogEntry&) = default;
};

/// Append-only, hash-chained log.
class EventLog {
 public:
  const LogEntry& append(std::string actor, std::string action, ByteView payload = {});
  const std::vector<LogEntry>& entries() const { return entries_; }
  Digest head() const;
  bool verify() const;

  void encode(Writer& w) const;
  static EventLog decode(Reader& r);

 private:
  std::vector<LogEntry> entries_;
};

// --- devices ------------------------------------------------------------------------

struct DmIdentity {
  StakeholderId id = "DM";
  std::uint64_t key_seed = 1;
  std::vector<std::pair<std::string, Bytes>> components;

  // A manufacturer with `count` generic boot components.
  static DmIdentity standard(std::size_t count = 3);
  KeyPair key(const CryptoSuite& suite) const;
};

class SimDevice {
 public:
  SimDevice(std::string name, std::uint64_t seed, Platform platform);

  const std::string& name() const { return name_; }
  std::uint64_t seed() const { return seed_; }

  // Runs the DM boot chain (RTE_DM over the DM load order).
  EngineState boot();
  void record(const std::string& action, ByteView payload = {}) { log.append(name_, action, payload); }

  void encode(Writer& w) const;
  static SimDevice decode(const CryptoSuite& suite, Reader& r);

  Platform platform;
  EventLog log;

 private:
  std::string name_;
  std::uint64_t seed_ = 0;
};

SimDevice device_create(const CryptoSuite& suite, std::string name, std::uint64_t seed, const DmIdentity& dm);

// State file: magic, version byte, canonical body, digest. The body holds a
// salt and the device encoding encrypted under a passphrase-derived key.
inline constexpr std::string_view kStateMagic = "MTMSIM01";
inline constexpr std::uint8_t kStateVersion = 1;

Bytes encode_state_file(const SimDevice& device, std::string_view passphrase);
SimDevice decode_state_file(const CryptoSuite& suite, ByteView file, std::string_view passphrase);
void persist_state(const SimDevice& device, const std::filesystem::path& path, std::string_view passphrase);
SimDevice load_state(const CryptoSuite& suite, const std::filesystem::path& path, std::string_view passphrase);

// --- channels -----------------------------------------------------------------------

enum class FaultKind : std::uint8_t { drop, duplicate, reorder, bitflip, tamper };
std::string_view to_string(FaultKind k);

// One scheduled fault: applies to the n-th message of `type` (or of any
// type) sent over the channel. bitflip hits the frame after authentication
// and is caught by the receiver; tamper hits the message before it is
// authenticated, modelling a compromised sender.
struct Fault {
  FaultKind kind = FaultKind::drop;
  std::optional<MessageType> type;
  std::uint32_t occurrence = 1;
  std::uint32_t bit = 0;
  friend bool operator==(const Fault&, const Fault&) = default;
};

// Text form: comma-separated entries `kind[:type][#n][@bit]`, e.g.
// "drop:package", "bitflip:offer@77", "duplicate:notice#2".
struct FaultPlan {
  std::vector<Fault> faults;

  static FaultPlan parse(std::string_view text);
  std::string to_string() const;
  bool empty() const { return faults.empty(); }
};

std::optional<MessageType> message_type_from_name(std::string_view name);
std::string_view short_name(MessageType t);

enum class TransportKind : std::uint8_t { in_process, socket };

// Carries length-delimited frames in one direction.
class Transport {
 public:
  virtual ~Transport() = default;
  virtual void push(ByteView frame) = 0;
  virtual std::optional<Bytes> pop() = 0;
  virtual std::size_t pending() const = 0;
};

std::unique_ptr<Transport> make_transport(TransportKind kind);

/// Authenticated duplex pipe between two named endpoints.
class Channel {
 public:
  using Observer = std::function<void(const std::string& endpoint, const std::string& action, ByteView wire)>;

  Channel(const CryptoSuite& suite, std::string a, std::string b, FaultPlan plan,
          TransportKind kind = TransportKind::in_process);

  void send(const std::string& from, const ProtocolMessage& message);
  void send_wire(const std::string& from, Bytes wire);
  // Next authentic frame for `to`; frames failing authentication are
  // discarded.
  std::optional<Bytes> receive(const std::string& to);
  bool idle() const;
  void set_observer(Observer o) { observer_ = std::move(o); }

  std::uint64_t rejected_frames() const { return rejected_; }
  std::uint64_t sent_frames() const { return sent_; }

 private:
  struct Direction {
    std::unique_ptr<Transport> transport;
    std::optional<Bytes> held;  // reordered frame waiting for a successor
  };
  Direction& towards(const std::string& to);
  Bytes frame(ByteView wire) const;
  void note(const std::string& endpoint, const std::string& action, ByteView wire) const;

  const CryptoSuite* suite_;
  std::string a_, b_;
  FaultPlan plan_;
  Digest key_;
  Direction to_a_, to_b_;
  std::map<std::optional<MessageType>, std::uint32_t> counts_;
  std::uint64_t rejected_ = 0;
  std::uint64_t sent_ = 0;
  Observer observer_;
};

// --- protocol drivers -----------------------------------------------------------------

struct TakeOwnershipRun {
  std::string purpose = "telephony";
  // Single-byte perturbation of the pristine engine image: (offset, xor mask).
  std::optional<std::pair<std::size_t, std::uint8_t>> tamper_image;
  // Service whose image is swapped after the grant arrives.
  std::optional<std::string> swap_component;
  FaultPlan faults;
  TransportKind transport = TransportKind::in_process;
  std::uint32_t max_attempts = 8;
};

struct TakeOwnershipOutcome {
  Errc status = Errc::ok;
  std::string detail;
  TakeOwnershipState state = TakeOwnershipState::prepared;
  bool request_emitted = false;
};

// Provisions the agent's identity on the device when missing, then runs the
// exchange. On rejection the blank subsystem is rolled back.
TakeOwnershipOutcome run_takeown(SimDevice& device, RemoteOwnerAgent& agent, const TakeOwnershipRun& run);

struct MigrationRun {
  MigrationOptions protocol;
  FaultPlan faults;
  TransportKind transport = TransportKind::in_process;
  bool source_approves = true;
  bool dest_confirms = true;
  bool channel_open = true;
  bool extend_after_lock = false;
  std::optional<Bytes> replace_offer;  // delivered to the source instead of the first offer
  std::uint32_t retransmit_interval = 5;
  std::uint64_t max_ticks = 1000;
};

struct MigrationOutcome {
  bool success = false;
  Errc status = Errc::ok;
  std::string detail;
  std::optional<SourceState> source_state;
  std::optional<DestState> dest_state;
  std::uint64_t ticks = 0;
  bool terminated = false;
  bool uniqueness_held = true;
  std::uint32_t max_owned = 0;
  std::optional<Bytes> offer;  // first offer the source received
  std::vector<Bytes> traffic;  // every frame payload sent, for secrecy scans
};

MigrationOutcome run_migration(SimDevice& source, SimDevice& dest, const StakeholderId& ro, const MigrationRun& run);

// Number of devices holding an owned instance for `ro` whose SRK is `srk`.
std::uint32_t owned_holders(const std::vector<const SimDevice*>& devices, const StakeholderId& ro, const Digest& srk);

// --- attestation -----------------------------------------------------------------------

struct AttestationReport {
  TssCertificate certificate;
  AttestationQuote quote;
};

AttestationReport attest(SimDevice& device, const StakeholderId& ro, const Nonce& nonce);
// Verifier side: certificate under the owner root, quote under the
// certified AIK, nonce freshness and a PCR state the policy accepts.
Errc verify_attestation(const CryptoSuite& suite, const OwnerIdentity& owner, const SecurityPolicy& policy,
                        const AttestationReport& report, const Nonce& nonce);

// --- scenarios ---------------------------------------------------------------------------

inline constexpr std::string_view kScenarioHeader = "mtmsim-scenario";
inline constexpr std::uint32_t kScenarioVersion = 1;

struct ScenarioStep {
  std::size_t line = 0;
  std::vector<std::string> words;
};

struct Scenario {
  std::uint32_t version = kScenarioVersion;
  std::vector<ScenarioStep> steps;

  static Scenario parse(std::string_view text);  // throws scenario_syntax / version_mismatch
};

struct Simulation {
  explicit Simulation(const CryptoSuite& suite, std::uint64_t seed = 0,
                      TransportKind transport = TransportKind::in_process)
      : suite(&suite), seed(seed), transport(transport) {}

  const CryptoSuite* suite;
  std::uint64_t seed;
  TransportKind transport;
  std::map<std::string, SimDevice> devices;
  std::map<std::string, RemoteOwnerAgent> agents;
  std::map<std::string, Bytes> recorded_offers;  // keyed "source>dest>ro"
  std::map<std::string, Digest> keys;            // scenario key labels
  EventLog trace;
  std::uint64_t clock = 0;

  SimDevice& device(const std::string& name);
  RemoteOwnerAgent& agent(const std::string& name);
};

struct ScenarioResult {
  Errc status = Errc::ok;
  std::size_t step = 0;  // 1-based index of the failing step
  std::size_t line = 0;
  std::string message;

  bool ok() const { return status == Errc::ok; }
};

ScenarioResult run_scenario(const Scenario& scenario, Simulation& sim);

// 0 success, 2 expected protocol rejection, 1 anything else.
int exit_code_for(Errc status);

}  // namespace mtmsim
