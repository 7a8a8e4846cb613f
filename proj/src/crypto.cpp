#include "mtmsim/crypto.hpp"

#include <sodium.h>

#include <algorithm>
#include <stdexcept>

#include "mtmsim/error.hpp"

namespace mtmsim {

namespace {

constexpr std::size_t kAeadNonceSize = crypto_aead_chacha20poly1305_IETF_NPUBBYTES;
constexpr std::size_t kAeadTagSize = crypto_aead_chacha20poly1305_IETF_ABYTES;
constexpr std::size_t kCurveKeySize = crypto_scalarmult_BYTES;

Digest sha256(std::initializer_list<ByteView> parts) {
  crypto_hash_sha256_state st;
  crypto_hash_sha256_init(&st);
  for (auto p : parts) crypto_hash_sha256_update(&st, p.data(), p.size());
  Digest d;
  crypto_hash_sha256_final(&st, d.bytes.data());
  return d;
}

ByteView label(std::string_view s) {
  return ByteView(reinterpret_cast<const std::uint8_t*>(s.data()), s.size());
}

Bytes be64(std::uint64_t v) {
  Writer w;
  w.u64(v);
  return std::move(w).take();
}

Bytes seal_aad(const PcrConfig& config) {
  Writer w;
  w.raw(label("mtmsim-seal-v1"));
  encode(w, config);
  return std::move(w).take();
}

}  // namespace

std::string_view to_string(KeyUsage usage) {
  switch (usage) {
    case KeyUsage::signing:
      return "signing";
    case KeyUsage::decryption:
      return "decryption";
    case KeyUsage::binding:
      return "binding";
  }
  return "unknown";
}

// --- DeterministicRng -------------------------------------------------------

DeterministicRng DeterministicRng::from_u64(std::uint64_t seed, std::string_view name) {
  return DeterministicRng(sha256({label("mtmsim-seed"), be64(seed), label(name)}));
}

void DeterministicRng::fill(std::span<std::uint8_t> out) {
  auto block_seed = sha256({label("mtmsim-rng"), seed_.view(), be64(position_)});
  ++position_;
  static_assert(randombytes_SEEDBYTES == kDigestSize);
  randombytes_buf_deterministic(out.data(), out.size(), block_seed.bytes.data());
  sodium_memzero(block_seed.bytes.data(), block_seed.bytes.size());
}

Bytes DeterministicRng::bytes(std::size_t n) {
  Bytes out(n);
  fill(out);
  return out;
}

std::uint64_t DeterministicRng::next_u64() {
  std::array<std::uint8_t, 8> b{};
  fill(b);
  std::uint64_t v = 0;
  for (auto x : b) v = v << 8 | x;
  return v;
}

Nonce DeterministicRng::nonce() {
  Nonce n;
  fill(n.bytes);
  return n;
}

SymmetricKey DeterministicRng::symmetric_key(std::string purpose_label) {
  return SymmetricKey{Secret(bytes(kSymmetricKeySize)), std::move(purpose_label)};
}

DeterministicRng DeterministicRng::fork(std::string_view name) {
  auto child = sha256({label("mtmsim-fork"), seed_.view(), be64(position_), label(name)});
  ++position_;
  return DeterministicRng(child);
}

// --- SodiumSuite ------------------------------------------------------------

SodiumSuite::SodiumSuite() {
  if (sodium_init() < 0) throw std::runtime_error("libsodium initialisation failed");
}

Digest SodiumSuite::hash(ByteView data) const { return sha256({data}); }

Digest SodiumSuite::mac(ByteView key, ByteView data) const {
  crypto_auth_hmacsha256_state st;
  crypto_auth_hmacsha256_init(&st, key.data(), key.size());
  crypto_auth_hmacsha256_update(&st, data.data(), data.size());
  Digest d;
  crypto_auth_hmacsha256_final(&st, d.bytes.data());
  return d;
}

KeyPair SodiumSuite::generate_keypair(DeterministicRng& rng, KeyUsage usage) const {
  KeyPair kp;
  kp.public_part.usage = usage;
  if (usage == KeyUsage::signing) {
    Bytes seed = rng.bytes(crypto_sign_SEEDBYTES);
    Bytes pk(crypto_sign_PUBLICKEYBYTES);
    Bytes sk(crypto_sign_SECRETKEYBYTES);
    crypto_sign_seed_keypair(pk.data(), sk.data(), seed.data());
    sodium_memzero(seed.data(), seed.size());
    kp.public_part.bytes = std::move(pk);
    kp.private_part = Secret(std::move(sk));
  } else {
    Bytes sk = rng.bytes(kCurveKeySize);
    Bytes pk(kCurveKeySize);
    crypto_scalarmult_base(pk.data(), sk.data());
    kp.public_part.bytes = std::move(pk);
    kp.private_part = Secret(std::move(sk));
  }
  kp.key_id = hash(kp.public_part.bytes);
  return kp;
}

Signature SodiumSuite::sign(const KeyPair& key, ByteView message) const {
  if (key.usage() != KeyUsage::signing || key.private_part.size() != crypto_sign_SECRETKEYBYTES)
    throw Error(Errc::key_usage, "sign requires a signing key");
  Signature sig;
  sig.bytes.resize(crypto_sign_BYTES);
  crypto_sign_detached(sig.bytes.data(), nullptr, message.data(), message.size(),
                       key.private_part.view().data());
  return sig;
}

bool SodiumSuite::verify(const PublicKey& key, ByteView message, const Signature& sig) const {
  if (key.usage != KeyUsage::signing || key.bytes.size() != crypto_sign_PUBLICKEYBYTES ||
      sig.bytes.size() != crypto_sign_BYTES)
    return false;
  return crypto_sign_verify_detached(sig.bytes.data(), message.data(), message.size(),
                                     key.bytes.data()) == 0;
}

Bytes SodiumSuite::encrypt_to(const PublicKey& recipient, ByteView plaintext,
                              DeterministicRng& rng) const {
  if (recipient.usage == KeyUsage::signing || recipient.bytes.size() != kCurveKeySize)
    throw Error(Errc::key_usage, "encryption requires a decryption or binding key");
  Bytes esk = rng.bytes(kCurveKeySize);
  Bytes epk(kCurveKeySize);
  crypto_scalarmult_base(epk.data(), esk.data());
  std::array<std::uint8_t, kCurveKeySize> shared{};
  if (crypto_scalarmult(shared.data(), esk.data(), recipient.bytes.data()) != 0)
    throw Error(Errc::wrong_key, "degenerate recipient key");
  sodium_memzero(esk.data(), esk.size());
  auto k = sha256({label("mtmsim-ecies"), shared, epk, recipient.bytes});
  sodium_memzero(shared.data(), shared.size());

  Bytes aad = concat({epk, recipient.bytes});
  std::array<std::uint8_t, kAeadNonceSize> zero_nonce{};
  Bytes out = epk;
  out.resize(kCurveKeySize + plaintext.size() + kAeadTagSize);
  unsigned long long clen = 0;
  crypto_aead_chacha20poly1305_ietf_encrypt(out.data() + kCurveKeySize, &clen, plaintext.data(),
                                            plaintext.size(), aad.data(), aad.size(), nullptr,
                                            zero_nonce.data(), k.bytes.data());
  sodium_memzero(k.bytes.data(), k.bytes.size());
  return out;
}

std::optional<Bytes> SodiumSuite::decrypt_with(const KeyPair& recipient, ByteView ciphertext) const {
  if (recipient.usage() == KeyUsage::signing || recipient.private_part.size() != kCurveKeySize)
    throw Error(Errc::key_usage, "decryption requires a decryption or binding key");
  if (ciphertext.size() < kCurveKeySize + kAeadTagSize) return std::nullopt;
  auto epk = ciphertext.first(kCurveKeySize);
  std::array<std::uint8_t, kCurveKeySize> shared{};
  if (crypto_scalarmult(shared.data(), recipient.private_part.view().data(), epk.data()) != 0)
    return std::nullopt;
  auto k = sha256({label("mtmsim-ecies"), shared, epk, recipient.public_part.bytes});
  sodium_memzero(shared.data(), shared.size());

  Bytes aad = concat({epk, recipient.public_part.bytes});
  std::array<std::uint8_t, kAeadNonceSize> zero_nonce{};
  auto body = ciphertext.subspan(kCurveKeySize);
  Bytes out(body.size() - kAeadTagSize);
  unsigned long long mlen = 0;
  int rc = crypto_aead_chacha20poly1305_ietf_decrypt(out.data(), &mlen, nullptr, body.data(),
                                                     body.size(), aad.data(), aad.size(),
                                                     zero_nonce.data(), k.bytes.data());
  sodium_memzero(k.bytes.data(), k.bytes.size());
  if (rc != 0) return std::nullopt;
  return out;
}

Bytes SodiumSuite::aead_encrypt(const SymmetricKey& key, ByteView plaintext, ByteView aad,
                                DeterministicRng& rng) const {
  if (key.bytes.size() != kSymmetricKeySize) throw Error(Errc::wrong_key, "bad symmetric key size");
  Bytes out = rng.bytes(kAeadNonceSize);
  out.resize(kAeadNonceSize + plaintext.size() + kAeadTagSize);
  unsigned long long clen = 0;
  crypto_aead_chacha20poly1305_ietf_encrypt(out.data() + kAeadNonceSize, &clen, plaintext.data(),
                                            plaintext.size(), aad.data(), aad.size(), nullptr,
                                            out.data(), key.bytes.view().data());
  return out;
}

std::optional<Bytes> SodiumSuite::aead_decrypt(const SymmetricKey& key, ByteView ciphertext,
                                               ByteView aad) const {
  if (key.bytes.size() != kSymmetricKeySize) return std::nullopt;
  if (ciphertext.size() < kAeadNonceSize + kAeadTagSize) return std::nullopt;
  auto nonce = ciphertext.first(kAeadNonceSize);
  auto body = ciphertext.subspan(kAeadNonceSize);
  Bytes out(body.size() - kAeadTagSize);
  unsigned long long mlen = 0;
  if (crypto_aead_chacha20poly1305_ietf_decrypt(out.data(), &mlen, nullptr, body.data(),
                                                body.size(), aad.data(), aad.size(), nonce.data(),
                                                key.bytes.view().data()) != 0)
    return std::nullopt;
  return out;
}

const CryptoSuite& default_suite() {
  static const SodiumSuite suite;
  return suite;
}

Digest hash(ByteView data) { return default_suite().hash(data); }

Digest extend_digest(const CryptoSuite& suite, const Digest& previous, const Digest& measurement) {
  return suite.hash(concat({previous.view(), measurement.view()}));
}

// --- seal / unseal ----------------------------------------------------------

bool pcr_config_matches(const PcrConfig& config, std::span<const Digest> live_pcrs) {
  return std::all_of(config.begin(), config.end(), [&](const PcrBinding& b) {
    return b.index < live_pcrs.size() && live_pcrs[b.index] == b.value;
  });
}

SealedBlob seal(const CryptoSuite& suite, const PublicKey& target, ByteView payload,
                PcrConfig required_config, DeterministicRng& rng) {
  if (target.usage != KeyUsage::binding) throw Error(Errc::key_usage, "seal target must be a binding key");
  auto key = rng.symmetric_key("seal");
  SealedBlob blob;
  blob.wrapped_key = suite.encrypt_to(target, key.bytes.view(), rng);
  blob.required_config = std::move(required_config);
  Bytes aad = seal_aad(blob.required_config);
  blob.aad_digest = suite.hash(aad);
  blob.body = suite.aead_encrypt(key, payload, aad, rng);
  return blob;
}

Bytes unseal(const CryptoSuite& suite, const KeyPair& holder, const SealedBlob& blob,
             std::span<const Digest> live_pcrs) {
  if (holder.usage() != KeyUsage::binding) throw Error(Errc::key_usage, "unseal requires a binding key");
  if (!pcr_config_matches(blob.required_config, live_pcrs))
    throw Error(Errc::config_mismatch, "live PCR values differ from the sealed configuration");
  Bytes aad = seal_aad(blob.required_config);
  if (suite.hash(aad) != blob.aad_digest) throw Error(Errc::integrity_failure, "associated data digest");
  auto raw_key = suite.decrypt_with(holder, blob.wrapped_key);
  if (!raw_key || raw_key->size() != kSymmetricKeySize)
    throw Error(Errc::wrong_key, "wrapped key does not open with this key");
  SymmetricKey key{Secret(std::move(*raw_key)), "seal"};
  auto payload = suite.aead_decrypt(key, blob.body, aad);
  if (!payload) throw Error(Errc::integrity_failure, "sealed body failed authentication");
  return std::move(*payload);
}

// --- encodings --------------------------------------------------------------

void encode(Writer& w, const Digest& d) { w.fixed(d.bytes); }
void encode(Writer& w, const Nonce& n) { w.fixed(n.bytes); }

void encode(Writer& w, const PublicKey& k) {
  w.u8(static_cast<std::uint8_t>(k.usage));
  w.bytes(k.bytes);
}

void encode(Writer& w, const Signature& s) { w.bytes(s.bytes); }

void encode(Writer& w, const PcrConfig& c) {
  w.u32(static_cast<std::uint32_t>(c.size()));
  for (const auto& b : c) {
    w.u8(b.index);
    encode(w, b.value);
  }
}

void encode(Writer& w, const SealedBlob& b) {
  w.bytes(b.wrapped_key);
  encode(w, b.required_config);
  w.bytes(b.body);
  encode(w, b.aad_digest);
}

Digest decode_digest(Reader& r) { return Digest{r.fixed<kDigestSize>()}; }
Nonce decode_nonce(Reader& r) { return Nonce{r.fixed<kNonceSize>()}; }

PublicKey decode_public_key(Reader& r) {
  PublicKey k;
  auto usage = r.u8();
  if (usage < 1 || usage > 3) throw Error(Errc::decode_error, "bad key usage");
  k.usage = static_cast<KeyUsage>(usage);
  k.bytes = r.bytes();
  return k;
}

Signature decode_signature(Reader& r) { return Signature{r.bytes()}; }

PcrConfig decode_pcr_config(Reader& r) {
  auto n = r.u32();
  if (n > 256) throw Error(Errc::decode_error, "too many PCR bindings");
  PcrConfig c(n);
  for (auto& b : c) {
    b.index = r.u8();
    b.value = decode_digest(r);
  }
  return c;
}

SealedBlob decode_sealed_blob(Reader& r) {
  SealedBlob b;
  b.wrapped_key = r.bytes();
  b.required_config = decode_pcr_config(r);
  b.body = r.bytes();
  b.aad_digest = decode_digest(r);
  return b;
}

}  // namespace mtmsim
