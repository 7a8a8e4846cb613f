#include "support.hpp"

#include <openssl/evp.h>
#include <openssl/hmac.h>

#include <fstream>
#include <iterator>

namespace mtmsim::test {

Digest oracle_sha256(ByteView data) {
  Digest d;
  unsigned int len = 0;
  EVP_Digest(data.data(), data.size(), d.bytes.data(), &len, EVP_sha256(), nullptr);
  return d;
}

Digest oracle_hmac(ByteView key, ByteView data) {
  Digest d;
  unsigned int len = 0;
  HMAC(EVP_sha256(), key.data(), static_cast<int>(key.size()), data.data(), data.size(), d.bytes.data(), &len);
  return d;
}

Digest oracle_extend(const Digest& prev, const Digest& measurement) {
  Bytes buf(prev.bytes.begin(), prev.bytes.end());
  buf.insert(buf.end(), measurement.bytes.begin(), measurement.bytes.end());
  return oracle_sha256(buf);
}

Digest oracle_replay(const std::vector<Digest>& measurements) {
  Digest pcr;
  for (const auto& m : measurements) pcr = oracle_extend(pcr, m);
  return pcr;
}

AgentConfig agent_config(const StakeholderId& id, std::uint64_t seed) {
  AgentConfig cfg;
  cfg.id = id;
  cfg.seed = seed;
  return cfg;
}

World World::make(std::uint64_t seed, TransportKind transport) {
  const auto& suite = default_suite();
  AgentConfig cfg;
  cfg.seed = seed * 31 + 7;
  World w{device_create(suite, "A", seed * 2, DmIdentity::standard()),
          device_create(suite, "B", seed * 2 + 1, DmIdentity::standard()), RemoteOwnerAgent(suite, cfg), {}};
  w.source.boot();
  w.dest.boot();
  TakeOwnershipRun run;
  run.transport = transport;
  if (auto o = run_takeown(w.source, w.agent, run); o.status != Errc::ok) throw Error(o.status, o.detail);
  if (auto o = run_takeown(w.dest, w.agent, run); o.status != Errc::ok) throw Error(o.status, o.detail);
  auto& tss = w.source_tss();
  w.key = w.source.platform.mtm.create_wrap_key(tss.vmtm, *w.source.platform.mtm.inspect(tss.vmtm).srk_id,
                                                KeyUsage::signing);
  return w;
}

std::optional<InstanceInfo> instance_for(const SimDevice& d, const StakeholderId& ro) {
  for (const auto& info : d.platform.mtm.instances())
    if (info.stakeholder == ro && !info.pending_import) return info;
  return std::nullopt;
}

bool signs_with(SimDevice& d, const StakeholderId& ro, const Digest& key) {
  auto* tss = d.platform.subsystem(ro);
  if (!tss || !d.platform.mtm.is_live(tss->vmtm)) return false;
  if (d.platform.mtm.inspect(tss->vmtm).lifecycle != Lifecycle::owned) return false;
  auto data = to_bytes("probe");
  auto r = d.platform.mtm.route_command(tss->vmtm, cmd::Sign{key, data});
  if (!r.ok()) return false;
  auto pub = d.platform.mtm.public_key(tss->vmtm, key);
  return d.platform.suite().verify(pub, data, std::get<resp::SignatureResult>(r.body).signature);
}

Bytes read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::io_error, path);
  return Bytes(std::istreambuf_iterator<char>(in), {});
}

}  // namespace mtmsim::test
