#include "mtmsim/rim.hpp"

namespace mtmsim {

std::string_view to_string(CertVerdict v) {
  switch (v) {
    case CertVerdict::valid:
      return "valid";
    case CertVerdict::bad_signature:
      return "bad-signature";
    case CertVerdict::revoked:
      return "revoked";
    case CertVerdict::not_yet_valid:
      return "not-yet-valid";
  }
  return "unknown";
}

Errc to_errc(CertVerdict v) {
  switch (v) {
    case CertVerdict::valid:
      return Errc::ok;
    case CertVerdict::bad_signature:
      return Errc::bad_signature;
    case CertVerdict::revoked:
      return Errc::revoked;
    case CertVerdict::not_yet_valid:
      return Errc::not_yet_valid;
  }
  return Errc::bad_signature;
}

Bytes RimCertificate::body() const {
  Writer w;
  w.str("mtmsim-rim-v1");
  w.str(component_id);
  encode(w, expected_digest);
  w.u8(target_pcr);
  w.str(issuer);
  w.u64(valid_from_counter);
  return std::move(w).take();
}

RimCertificate issue_rim_cert(const CryptoSuite& suite, const StakeholderId& issuer,
                              const KeyPair& issuer_key, std::string component_id,
                              const Digest& expected_digest, std::uint8_t target_pcr,
                              std::uint64_t valid_from_counter,
                              std::optional<std::uint64_t> revoked_at_counter) {
  if (issuer_key.usage() != KeyUsage::signing) throw Error(Errc::key_usage, "RIM issuer key must sign");
  if (revoked_at_counter && *revoked_at_counter < valid_from_counter)
    throw Error(Errc::bad_counter, "revocation mark precedes validity start");
  RimCertificate cert;
  cert.component_id = std::move(component_id);
  cert.expected_digest = expected_digest;
  cert.target_pcr = target_pcr;
  cert.issuer = issuer;
  cert.valid_from_counter = valid_from_counter;
  cert.revoked_at_counter = revoked_at_counter;
  auto body = cert.body();
  cert.cert_id = suite.hash(body);
  cert.signature = suite.sign(issuer_key, body);
  return cert;
}

CertVerdict check_cert(const CryptoSuite& suite, const RimCertificate& cert,
                       const TrustRoots& trust_roots, std::uint64_t device_counter) {
  auto root = trust_roots.find(cert.issuer);
  if (root == trust_roots.end()) return CertVerdict::bad_signature;
  auto body = cert.body();
  if (suite.hash(body) != cert.cert_id) return CertVerdict::bad_signature;
  if (!suite.verify(root->second, body, cert.signature)) return CertVerdict::bad_signature;
  if (cert.revoked_at_counter && device_counter >= *cert.revoked_at_counter) return CertVerdict::revoked;
  if (device_counter < cert.valid_from_counter) return CertVerdict::not_yet_valid;
  return CertVerdict::valid;
}

void RimStore::add(RimCertificate cert) {
  auto id = cert.cert_id;
  certs_.insert_or_assign(id, std::move(cert));
}

const RimCertificate* RimStore::find(const Digest& cert_id) const {
  auto it = certs_.find(cert_id);
  return it == certs_.end() ? nullptr : &it->second;
}

const RimCertificate* RimStore::lookup(const std::string& component_id,
                                       const StakeholderId& issuer) const {
  const RimCertificate* best = nullptr;
  for (const auto& [id, cert] : certs_) {
    if (cert.component_id != component_id || cert.issuer != issuer) continue;
    // map iteration is ordered by cert_id, so >= keeps the largest id on ties
    if (!best || cert.valid_from_counter >= best->valid_from_counter) best = &cert;
  }
  return best;
}

void RimStore::revoke(const Digest& cert_id, std::uint64_t at_counter) {
  auto it = certs_.find(cert_id);
  if (it == certs_.end()) throw Error(Errc::unknown_cert, cert_id.hex());
  if (at_counter < it->second.valid_from_counter)
    throw Error(Errc::bad_counter, "revocation mark precedes validity start");
  auto& mark = it->second.revoked_at_counter;
  if (!mark || at_counter < *mark) mark = at_counter;
}

CertVerdict RimStore::check(const CryptoSuite& suite, const Digest& cert_id,
                            std::uint64_t device_counter) const {
  const auto* cert = find(cert_id);
  if (!cert) throw Error(Errc::unknown_cert, cert_id.hex());
  return check_cert(suite, *cert, trust_roots_, device_counter);
}

void encode(Writer& w, const RimCertificate& c) {
  encode(w, c.cert_id);
  w.str(c.component_id);
  encode(w, c.expected_digest);
  w.u8(c.target_pcr);
  w.str(c.issuer);
  encode(w, c.signature);
  w.u64(c.valid_from_counter);
  w.boolean(c.revoked_at_counter.has_value());
  if (c.revoked_at_counter) w.u64(*c.revoked_at_counter);
}

RimCertificate decode_rim_certificate(Reader& r) {
  RimCertificate c;
  c.cert_id = decode_digest(r);
  c.component_id = r.str();
  c.expected_digest = decode_digest(r);
  c.target_pcr = r.u8();
  c.issuer = r.str();
  c.signature = decode_signature(r);
  c.valid_from_counter = r.u64();
  if (r.boolean()) c.revoked_at_counter = r.u64();
  return c;
}

void encode(Writer& w, const RimStore& s) {
  w.u32(static_cast<std::uint32_t>(s.trust_roots().size()));
  for (const auto& [id, key] : s.trust_roots()) {
    w.str(id);
    encode(w, key);
  }
  w.u32(static_cast<std::uint32_t>(s.certs().size()));
  for (const auto& [id, cert] : s.certs()) encode(w, cert);
}

RimStore decode_rim_store(Reader& r) {
  RimStore s;
  auto roots = r.u32();
  for (std::uint32_t i = 0; i < roots; ++i) {
    auto id = r.str();
    s.add_trust_root(id, decode_public_key(r));
  }
  auto n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) s.add(decode_rim_certificate(r));
  return s;
}

}  // namespace mtmsim
