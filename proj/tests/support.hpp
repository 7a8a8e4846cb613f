#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mtmsim/harness.hpp"

namespace mtmsim::test {

// Independent SHA-256 / HMAC-SHA-256 (OpenSSL), outside the library's code path.
Digest oracle_sha256(ByteView data);
Digest oracle_hmac(ByteView key, ByteView data);
Digest oracle_extend(const Digest& prev, const Digest& measurement);
Digest oracle_replay(const std::vector<Digest>& measurements);

// Two booted devices, both taken over by the same remote owner, with one
// unbound signing key created under the source SRK.
struct World {
  SimDevice source;
  SimDevice dest;
  RemoteOwnerAgent agent;
  Digest key;

  static World make(std::uint64_t seed = 1, TransportKind transport = TransportKind::in_process);
  TrustedSubsystem& source_tss() { return *source.platform.subsystem(agent.stakeholder().id); }
};

// Non-pending instance of `ro`, if any.
std::optional<InstanceInfo> instance_for(const SimDevice& d, const StakeholderId& ro);

// True if `d` holds an owned RO instance whose key `key` still signs.
bool signs_with(SimDevice& d, const StakeholderId& ro, const Digest& key);

AgentConfig agent_config(const StakeholderId& id, std::uint64_t seed);

Bytes read_file(const std::string& path);

}  // namespace mtmsim::test
