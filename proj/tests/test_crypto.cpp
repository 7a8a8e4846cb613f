#include <gtest/gtest.h>

#include "support.hpp"

using namespace mtmsim;
using namespace mtmsim::test;

namespace {
const CryptoSuite& suite() { return default_suite(); }
}

TEST(Hash, KnownVectors) {
  EXPECT_EQ(hash(std::string_view("abc")).hex(), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  EXPECT_EQ(hash(std::string_view("")).hex(), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST(Hash, MatchesOracleOnRandomInputs) {
  auto rng = DeterministicRng::from_u64(11, "hash");
  for (std::size_t n = 0; n < 300; ++n) {
    auto data = rng.bytes(n * 3);
    ASSERT_EQ(suite().hash(data), oracle_sha256(data));
  }
}

TEST(Mac, MatchesOracle) {
  auto rng = DeterministicRng::from_u64(12, "mac");
  for (int i = 0; i < 50; ++i) {
    auto key = rng.bytes(32);
    auto data = rng.bytes(static_cast<std::size_t>(i) * 17);
    ASSERT_EQ(suite().mac(key, data), oracle_hmac(key, data));
  }
}

TEST(Extend, FoldMatchesOracle) {
  auto m1 = hash(std::string_view("m1"));
  auto m2 = hash(std::string_view("m2"));
  EXPECT_EQ(extend_digest(suite(), Digest::zero(), m1), oracle_extend(Digest::zero(), m1));
  EXPECT_EQ(extend_digest(suite(), extend_digest(suite(), Digest::zero(), m1), m2), oracle_replay({m1, m2}));
}

TEST(Rng, DeterministicAndAddressable) {
  auto a = DeterministicRng::from_u64(5, "x");
  auto b = DeterministicRng::from_u64(5, "x");
  EXPECT_EQ(a.bytes(100), b.bytes(100));
  EXPECT_EQ(a.next_u64(), b.next_u64());

  auto c = DeterministicRng::from_u64(5, "x");
  c.bytes(100);
  c.next_u64();
  DeterministicRng d(c.seed(), c.position());
  EXPECT_EQ(c.bytes(40), d.bytes(40));

  EXPECT_NE(DeterministicRng::from_u64(5, "x").bytes(32), DeterministicRng::from_u64(5, "y").bytes(32));
  EXPECT_NE(DeterministicRng::from_u64(5, "x").bytes(32), DeterministicRng::from_u64(6, "x").bytes(32));
  auto parent = DeterministicRng::from_u64(5, "x");
  EXPECT_NE(parent.fork("a").bytes(32), parent.fork("b").bytes(32));
}

TEST(Signatures, SignVerifyAndReject) {
  auto rng = DeterministicRng::from_u64(1, "sig");
  auto kp = suite().generate_keypair(rng, KeyUsage::signing);
  auto sig = suite().sign(kp, to_bytes("message"));
  EXPECT_TRUE(suite().verify(kp.public_part, to_bytes("message"), sig));
  EXPECT_FALSE(suite().verify(kp.public_part, to_bytes("messagf"), sig));
  auto other = suite().generate_keypair(rng, KeyUsage::signing);
  EXPECT_FALSE(suite().verify(other.public_part, to_bytes("message"), sig));
  EXPECT_EQ(kp.key_id, suite().hash(kp.public_part.bytes));
}

TEST(Signatures, DecryptionKeyCannotSign) {
  auto rng = DeterministicRng::from_u64(1, "sig");
  auto kp = suite().generate_keypair(rng, KeyUsage::decryption);
  EXPECT_THROW(suite().sign(kp, to_bytes("m")), Error);
}

TEST(PublicKeyEncryption, RoundTripAndWrongKey) {
  auto rng = DeterministicRng::from_u64(2, "pke");
  auto kp = suite().generate_keypair(rng, KeyUsage::decryption);
  auto other = suite().generate_keypair(rng, KeyUsage::decryption);
  auto ct = suite().encrypt_to(kp.public_part, to_bytes("secret"), rng);
  EXPECT_EQ(suite().decrypt_with(kp, ct), to_bytes("secret"));
  EXPECT_FALSE(suite().decrypt_with(other, ct).has_value());
  ct[ct.size() / 2] ^= 1;
  EXPECT_FALSE(suite().decrypt_with(kp, ct).has_value());
}

TEST(Aead, AadAndTamperDetected) {
  auto rng = DeterministicRng::from_u64(3, "aead");
  auto key = rng.symmetric_key("test");
  auto ct = suite().aead_encrypt(key, to_bytes("plain"), to_bytes("aad"), rng);
  EXPECT_EQ(suite().aead_decrypt(key, ct, to_bytes("aad")), to_bytes("plain"));
  EXPECT_FALSE(suite().aead_decrypt(key, ct, to_bytes("aae")).has_value());
  for (std::size_t bit = 0; bit < ct.size() * 8; bit += 13) {
    auto t = ct;
    t[bit / 8] ^= static_cast<std::uint8_t>(1u << (bit % 8));
    ASSERT_FALSE(suite().aead_decrypt(key, t, to_bytes("aad")).has_value());
  }
}

class SealTest : public ::testing::Test {
 protected:
  DeterministicRng rng = DeterministicRng::from_u64(4, "seal");
  KeyPair holder = suite().generate_keypair(rng, KeyUsage::binding);
  PcrBank pcrs{};
};

TEST_F(SealTest, UnsealWithMatchingConfig) {
  pcrs[1] = hash(std::string_view("state"));
  auto blob = seal(suite(), holder.public_part, to_bytes("k"), {{1, pcrs[1]}}, rng);
  EXPECT_EQ(unseal(suite(), holder, blob, pcrs), to_bytes("k"));
}

TEST_F(SealTest, ConfigMismatch) {
  auto blob = seal(suite(), holder.public_part, to_bytes("k"), {{1, hash(std::string_view("other"))}}, rng);
  try {
    unseal(suite(), holder, blob, pcrs);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::config_mismatch);
  }
}

TEST_F(SealTest, WrongKey) {
  auto other = suite().generate_keypair(rng, KeyUsage::binding);
  auto blob = seal(suite(), holder.public_part, to_bytes("k"), {}, rng);
  try {
    unseal(suite(), other, blob, pcrs);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::wrong_key);
  }
}

TEST_F(SealTest, AlteredBindingIsIntegrityFailure) {
  pcrs[1] = hash(std::string_view("state"));
  auto blob = seal(suite(), holder.public_part, to_bytes("k"), {{1, pcrs[1]}}, rng);
  blob.required_config.clear();  // drop the binding, hoping to bypass it
  try {
    unseal(suite(), holder, blob, pcrs);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::integrity_failure);
  }
}

TEST_F(SealTest, SigningKeyRejected) {
  auto signer = suite().generate_keypair(rng, KeyUsage::signing);
  EXPECT_THROW(seal(suite(), signer.public_part, to_bytes("k"), {}, rng), Error);
}

TEST_F(SealTest, EncodingRoundTrip) {
  auto blob = seal(suite(), holder.public_part, to_bytes("k"), {{3, hash(std::string_view("x"))}}, rng);
  auto bytes = encode_to_bytes(blob);
  Reader r(bytes);
  EXPECT_EQ(decode_sealed_blob(r), blob);
  r.finish();
}

TEST(PcrConfig, Matching) {
  PcrBank bank{};
  bank[4] = hash(std::string_view("v"));
  EXPECT_TRUE(pcr_config_matches({}, bank));
  EXPECT_TRUE(pcr_config_matches({{4, bank[4]}}, bank));
  EXPECT_FALSE(pcr_config_matches({{4, Digest::zero()}}, bank));
  EXPECT_FALSE(pcr_config_matches({{40, bank[4]}}, bank));
}
