#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mtmsim/crypto.hpp"

namespace mtmsim {

using StakeholderId = std::string;
using TrustRoots = std::map<StakeholderId, PublicKey>;

// Signed reference integrity metric. The signature and cert_id cover the
// canonical body (component, expected digest, target PCR, issuer,
// valid_from_counter). revoked_at_counter is a revocation mark attached
// after issuance and is not signed.
struct RimCertificate {
  Digest cert_id;
  std::string component_id;
  Digest expected_digest;
  std::uint8_t target_pcr = 0;
  StakeholderId issuer;
  Signature signature;
  std::uint64_t valid_from_counter = 0;
  std::optional<std::uint64_t> revoked_at_counter;

  Bytes body() const;
  friend bool operator==(const RimCertificate&, const RimCertificate&) = default;
};

enum class CertVerdict : std::uint8_t { valid = 0, bad_signature, revoked, not_yet_valid };

std::string_view to_string(CertVerdict v);
Errc to_errc(CertVerdict v);

RimCertificate issue_rim_cert(const CryptoSuite& suite, const StakeholderId& issuer,
                              const KeyPair& issuer_key, std::string component_id,
                              const Digest& expected_digest, std::uint8_t target_pcr,
                              std::uint64_t valid_from_counter,
                              std::optional<std::uint64_t> revoked_at_counter = std::nullopt);

// valid iff the signature verifies under the issuer's trust root, the
// cert_id matches the body, valid_from <= counter, and the counter has not
// reached the revocation mark.
CertVerdict check_cert(const CryptoSuite& suite, const RimCertificate& cert,
                       const TrustRoots& trust_roots, std::uint64_t device_counter);

class RimStore {
 public:
  void add_trust_root(const StakeholderId& id, PublicKey key) { trust_roots_[id] = std::move(key); }
  const TrustRoots& trust_roots() const { return trust_roots_; }

  // Inserts or replaces by cert_id.
  void add(RimCertificate cert);
  const RimCertificate* find(const Digest& cert_id) const;
  // Latest valid_from_counter wins; ties broken by cert_id.
  const RimCertificate* lookup(const std::string& component_id, const StakeholderId& issuer) const;
  // Throws unknown_cert or bad_counter.
  void revoke(const Digest& cert_id, std::uint64_t at_counter);
  CertVerdict check(const CryptoSuite& suite, const Digest& cert_id, std::uint64_t device_counter) const;

  const std::map<Digest, RimCertificate>& certs() const { return certs_; }

 private:
  std::map<Digest, RimCertificate> certs_;
  TrustRoots trust_roots_;
};

void encode(Writer& w, const RimCertificate& c);
RimCertificate decode_rim_certificate(Reader& r);
void encode(Writer& w, const RimStore& s);
RimStore decode_rim_store(Reader& r);

}  // namespace mtmsim
