#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mtmsim/bytes.hpp"
#include "mtmsim/codec.hpp"

namespace mtmsim {

inline constexpr std::size_t kDigestSize = 32;
inline constexpr std::size_t kNonceSize = 16;
inline constexpr std::size_t kSymmetricKeySize = 32;

struct Digest {
  std::array<std::uint8_t, kDigestSize> bytes{};

  static Digest zero() { return {}; }
  ByteView view() const { return bytes; }
  std::string hex() const { return to_hex(bytes); }
  bool is_zero() const { return *this == Digest{}; }

  friend auto operator<=>(const Digest&, const Digest&) = default;
};

struct Nonce {
  std::array<std::uint8_t, kNonceSize> bytes{};

  ByteView view() const { return bytes; }
  friend auto operator<=>(const Nonce&, const Nonce&) = default;
};

enum class KeyUsage : std::uint8_t { signing = 1, decryption = 2, binding = 3 };

std::string_view to_string(KeyUsage usage);

struct PublicKey {
  KeyUsage usage = KeyUsage::signing;
  Bytes bytes;

  friend bool operator==(const PublicKey&, const PublicKey&) = default;
};

struct Signature {
  Bytes bytes;
  friend bool operator==(const Signature&, const Signature&) = default;
};

struct KeyPair {
  PublicKey public_part;
  Secret private_part;
  Digest key_id;

  KeyUsage usage() const { return public_part.usage; }
};

struct SymmetricKey {
  Secret bytes;
  std::string purpose_label;
};

// One PCR binding: register index plus the exact value it must hold.
struct PcrBinding {
  std::uint8_t index = 0;
  Digest value;
  friend auto operator<=>(const PcrBinding&, const PcrBinding&) = default;
};
using PcrConfig = std::vector<PcrBinding>;

struct SealedBlob {
  Bytes wrapped_key;
  PcrConfig required_config;
  Bytes body;
  Digest aad_digest;
  friend bool operator==(const SealedBlob&, const SealedBlob&) = default;
};

/// Seedable deterministic random source. Each draw is a ChaCha20 keystream
/// block addressed by (seed, position), so two generators built from the
/// same seed and advanced to the same position produce identical output.
class DeterministicRng {
 public:
  DeterministicRng() = default;
  explicit DeterministicRng(const Digest& seed, std::uint64_t position = 0)
      : seed_(seed), position_(position) {}
  static DeterministicRng from_u64(std::uint64_t seed, std::string_view label = {});

  void fill(std::span<std::uint8_t> out);
  Bytes bytes(std::size_t n);
  std::uint64_t next_u64();
  Nonce nonce();
  SymmetricKey symmetric_key(std::string purpose_label);
  // Derives an independent generator for a named sub-actor.
  DeterministicRng fork(std::string_view label);

  const Digest& seed() const { return seed_; }
  std::uint64_t position() const { return position_; }

 private:
  Digest seed_;
  std::uint64_t position_ = 0;
};

/// The pluggable primitive set. Everything above this interface is
/// primitive-agnostic; the default implementation is SodiumSuite.
class CryptoSuite {
 public:
  virtual ~CryptoSuite() = default;

  virtual std::string_view name() const = 0;
  virtual Digest hash(ByteView data) const = 0;
  virtual Digest mac(ByteView key, ByteView data) const = 0;
  virtual KeyPair generate_keypair(DeterministicRng& rng, KeyUsage usage) const = 0;
  virtual Signature sign(const KeyPair& key, ByteView message) const = 0;
  virtual bool verify(const PublicKey& key, ByteView message, const Signature& sig) const = 0;
  // Public-key encryption to decryption/binding keys.
  virtual Bytes encrypt_to(const PublicKey& recipient, ByteView plaintext,
                           DeterministicRng& rng) const = 0;
  virtual std::optional<Bytes> decrypt_with(const KeyPair& recipient, ByteView ciphertext) const = 0;
  virtual Bytes aead_encrypt(const SymmetricKey& key, ByteView plaintext, ByteView aad,
                             DeterministicRng& rng) const = 0;
  virtual std::optional<Bytes> aead_decrypt(const SymmetricKey& key, ByteView ciphertext,
                                            ByteView aad) const = 0;
};

class SodiumSuite final : public CryptoSuite {
 public:
  SodiumSuite();
  std::string_view name() const override { return "sha256-ed25519-x25519-chacha20poly1305"; }
  Digest hash(ByteView data) const override;
  Digest mac(ByteView key, ByteView data) const override;
  KeyPair generate_keypair(DeterministicRng& rng, KeyUsage usage) const override;
  Signature sign(const KeyPair& key, ByteView message) const override;
  bool verify(const PublicKey& key, ByteView message, const Signature& sig) const override;
  Bytes encrypt_to(const PublicKey& recipient, ByteView plaintext,
                   DeterministicRng& rng) const override;
  std::optional<Bytes> decrypt_with(const KeyPair& recipient, ByteView ciphertext) const override;
  Bytes aead_encrypt(const SymmetricKey& key, ByteView plaintext, ByteView aad,
                     DeterministicRng& rng) const override;
  std::optional<Bytes> aead_decrypt(const SymmetricKey& key, ByteView ciphertext,
                                    ByteView aad) const override;
};

const CryptoSuite& default_suite();

// Convenience wrappers over default_suite().
Digest hash(ByteView data);
inline Digest hash(std::string_view s) { return hash(ByteView(reinterpret_cast<const std::uint8_t*>(s.data()), s.size())); }

// hash(previous || measurement): the PCR extend step.
Digest extend_digest(const CryptoSuite& suite, const Digest& previous, const Digest& measurement);

// Seals `payload` to the holder of the private part of `target`. The body
// is authenticated together with the PCR binding list.
SealedBlob seal(const CryptoSuite& suite, const PublicKey& target, ByteView payload,
                PcrConfig required_config, DeterministicRng& rng);

// Throws Error{config_mismatch | wrong_key | integrity_failure | key_usage}.
Bytes unseal(const CryptoSuite& suite, const KeyPair& holder, const SealedBlob& blob,
             std::span<const Digest> live_pcrs);

// True iff every binding in `config` matches the live PCR bank.
bool pcr_config_matches(const PcrConfig& config, std::span<const Digest> live_pcrs);

// Canonical encodings of the crypto value types.
void encode(Writer& w, const Digest& d);
void encode(Writer& w, const Nonce& n);
void encode(Writer& w, const PublicKey& k);
void encode(Writer& w, const Signature& s);
void encode(Writer& w, const PcrConfig& c);
void encode(Writer& w, const SealedBlob& b);
Digest decode_digest(Reader& r);
Nonce decode_nonce(Reader& r);
PublicKey decode_public_key(Reader& r);
Signature decode_signature(Reader& r);
PcrConfig decode_pcr_config(Reader& r);
SealedBlob decode_sealed_blob(Reader& r);

template <typename T>
Bytes encode_to_bytes(const T& value) {
  Writer w;
  encode(w, value);
  return std::move(w).take();
}

}  // namespace mtmsim
