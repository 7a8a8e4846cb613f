#include <type_traits>

#include "mtmsim/mtm.hpp"

namespace mtmsim {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

// Tagged-field payload builder: fields are numbered 1.. in declaration order.
class Fields {
 public:
  template <typename T>
  Fields& add(const T& value) {
    Writer inner;
    encode(inner, value);
    w_.field(++tag_, inner.data());
    return *this;
  }
  Fields& add_bytes(ByteView value) {
    w_.field(++tag_, value);
    return *this;
  }
  Fields& add_u8(std::uint8_t v) {
    std::uint8_t b[1] = {v};
    return add_bytes(b);
  }
  Fields& add_u64(std::uint64_t v) {
    Writer inner;
    inner.u64(v);
    return add_bytes(inner.data());
  }
  const Bytes& data() const { return w_.data(); }

 private:
  Writer w_;
  std::uint8_t tag_ = 0;
};

class FieldReader {
 public:
  explicit FieldReader(ByteView payload) : r_(payload) {}

  Bytes next() { return r_.field(++tag_); }
  template <typename F>
  auto next_as(F decode) {
    auto raw = next();
    Reader inner(raw);
    auto value = decode(inner);
    inner.finish();
    return value;
  }
  std::uint8_t next_u8() {
    auto raw = next();
    if (raw.size() != 1) throw Error(Errc::decode_error, "field width");
    return raw[0];
  }
  std::uint64_t next_u64() {
    return next_as([](Reader& r) { return r.u64(); });
  }
  Digest next_digest() { return next_as(decode_digest); }
  void finish() const { r_.finish(); }

 private:
  Reader r_;
  std::uint8_t tag_ = 0;
};

Bytes envelope(std::uint8_t a, std::uint8_t b, std::optional<std::uint32_t> handle, const Fields& f) {
  Writer w;
  w.u8(kCommandFormatVersion).u8(a);
  if (handle) w.u32(*handle);
  else w.u8(b);
  w.bytes(f.data());
  return std::move(w).take();
}

KeyUsage usage_from(std::uint8_t v) {
  if (v < 1 || v > 3) throw Error(Errc::decode_error, "bad key usage");
  return static_cast<KeyUsage>(v);
}

}  // namespace

std::string_view to_string(Opcode op) {
  switch (op) {
    case Opcode::pcr_extend: return "PcrExtend";
    case Opcode::pcr_read: return "PcrRead";
    case Opcode::quote: return "Quote";
    case Opcode::create_aik: return "CreateAik";
    case Opcode::create_wrap_key: return "CreateWrapKey";
    case Opcode::sign: return "Sign";
    case Opcode::unseal: return "Unseal";
    case Opcode::get_public_key: return "GetPublicKey";
    case Opcode::create_endorsement_key: return "CreateEndorsementKey";
    case Opcode::take_ownership: return "TakeOwnership";
    case Opcode::read_counter: return "ReadCounter";
    case Opcode::lock_for_migration: return "LockForMigration";
    case Opcode::abort_migration: return "AbortMigration";
    case Opcode::verify_rim_cert: return "VerifyRimCert";
    case Opcode::verify_rim_cert_and_extend: return "VerifyRimCertAndExtend";
    case Opcode::load_verification_key: return "LoadVerificationKey";
    case Opcode::increment_counter: return "IncrementCounter";
  }
  return "Unknown";
}

bool is_mrtm_only(Opcode op) {
  switch (op) {
    case Opcode::verify_rim_cert:
    case Opcode::verify_rim_cert_and_extend:
    case Opcode::load_verification_key:
    case Opcode::increment_counter:
      return true;
    default:
      return false;
  }
}

// --- proxy routing ------------------------------------------------------------

MtmResponse MtmDevice::route_command(const MtmCommand& command) {
  MtmResponse out;
  try {
    const auto& inst = live(command.target);
    if (is_mrtm_only(command.opcode())) require_mrtm(inst);
    if (inst.replacing && command.opcode() != Opcode::pcr_read)
      throw Error(Errc::lifecycle_violation, "pending import");
    const auto h = command.target;
    out.body = std::visit(
        overloaded{
            [&](const cmd::PcrExtend& c) -> MtmResponseBody {
              return resp::PcrValue{pcr_extend(h, c.index, c.measurement)};
            },
            [&](const cmd::PcrRead& c) -> MtmResponseBody { return resp::PcrValue{pcr_read(h, c.index)}; },
            [&](const cmd::Quote& c) -> MtmResponseBody {
              return resp::QuoteResult{quote(h, c.aik_id, c.nonce, c.selection)};
            },
            [&](const cmd::CreateAik&) -> MtmResponseBody { return create_aik(h); },
            [&](const cmd::CreateWrapKey& c) -> MtmResponseBody {
              auto id = create_wrap_key(h, c.parent_id, c.usage, c.pcr_binding);
              return resp::KeyInfo{id, public_key(h, id)};
            },
            [&](const cmd::Sign& c) -> MtmResponseBody { return resp::SignatureResult{sign(h, c.key_id, c.data)}; },
            [&](const cmd::Unseal& c) -> MtmResponseBody { return resp::Data{unseal(h, c.key_id, c.blob)}; },
            [&](const cmd::GetPublicKey& c) -> MtmResponseBody {
              return resp::KeyInfo{c.key_id, public_key(h, c.key_id)};
            },
            [&](const cmd::CreateEndorsementKey&) -> MtmResponseBody { return create_endorsement_key(h); },
            [&](const cmd::TakeOwnership& c) -> MtmResponseBody {
              take_ownership(h, c.owner_auth);
              return resp::KeyInfo{*live(h).hierarchy.root, public_key(h, *live(h).hierarchy.root)};
            },
            [&](const cmd::ReadCounter&) -> MtmResponseBody { return resp::Counter{counter_}; },
            [&](const cmd::LockForMigration& c) -> MtmResponseBody {
              lock_for_migration(h, c.nonce);
              return resp::Empty{};
            },
            [&](const cmd::AbortMigration&) -> MtmResponseBody {
              abort_migration(h);
              return resp::Empty{};
            },
            [&](const cmd::VerifyRimCert& c) -> MtmResponseBody { return resp::Verdict{verify_rim_cert(h, c.cert)}; },
            [&](const cmd::VerifyRimCertAndExtend& c) -> MtmResponseBody {
              return resp::PcrValue{verify_rim_cert_and_extend(h, c.cert, c.measurement)};
            },
            [&](const cmd::LoadVerificationKey& c) -> MtmResponseBody {
              load_verification_key(h, c.key);
              return resp::Empty{};
            },
            [&](const cmd::IncrementCounter&) -> MtmResponseBody { return resp::Counter{increment_counter(h)}; },
        },
        command.body);
  } catch (const Error& e) {
    out.status = e.code();
    out.body = resp::Empty{};
  }
  return out;
}

// --- wire encoding ------------------------------------------------------------------

Bytes encode_command(const MtmCommand& command) {
  Fields f;
  std::visit(overloaded{
                 [&](const cmd::PcrExtend& c) { f.add_u8(c.index).add(c.measurement); },
                 [&](const cmd::PcrRead& c) { f.add_u8(c.index); },
                 [&](const cmd::Quote& c) { f.add(c.aik_id).add(c.nonce).add_bytes(c.selection); },
                 [&](const cmd::CreateAik&) {},
                 [&](const cmd::CreateWrapKey& c) {
                   f.add(c.parent_id).add_u8(static_cast<std::uint8_t>(c.usage)).add(c.pcr_binding);
                 },
                 [&](const cmd::Sign& c) { f.add(c.key_id).add_bytes(c.data); },
                 [&](const cmd::Unseal& c) { f.add(c.key_id).add(c.blob); },
                 [&](const cmd::GetPublicKey& c) { f.add(c.key_id); },
                 [&](const cmd::CreateEndorsementKey&) {},
                 [&](const cmd::TakeOwnership& c) { f.add_bytes(c.owner_auth); },
                 [&](const cmd::ReadCounter&) {},
                 [&](const cmd::LockForMigration& c) { f.add(c.nonce); },
                 [&](const cmd::AbortMigration&) {},
                 [&](const cmd::VerifyRimCert& c) { f.add(c.cert); },
                 [&](const cmd::VerifyRimCertAndExtend& c) { f.add(c.cert).add(c.measurement); },
                 [&](const cmd::LoadVerificationKey& c) { f.add(c.key); },
                 [&](const cmd::IncrementCounter&) {},
             },
             command.body);
  return envelope(static_cast<std::uint8_t>(command.opcode()), 0, command.target.value, f);
}

MtmCommand decode_command(ByteView data) {
  Reader r(data);
  if (r.u8() != kCommandFormatVersion) throw Error(Errc::version_mismatch, "command format");
  auto op = r.u8();
  MtmCommand c;
  c.target = InstanceHandle{r.u32()};
  auto payload = r.bytes();
  r.finish();
  FieldReader f(payload);
  switch (static_cast<Opcode>(op)) {
    case Opcode::pcr_extend: {
      cmd::PcrExtend x;
      x.index = f.next_u8();
      x.measurement = f.next_digest();
      c.body = x;
      break;
    }
    case Opcode::pcr_read:
      c.body = cmd::PcrRead{f.next_u8()};
      break;
    case Opcode::quote: {
      cmd::Quote x;
      x.aik_id = f.next_digest();
      x.nonce = f.next_as(decode_nonce);
      x.selection = f.next();
      c.body = x;
      break;
    }
    case Opcode::create_aik:
      c.body = cmd::CreateAik{};
      break;
    case Opcode::create_wrap_key: {
      cmd::CreateWrapKey x;
      x.parent_id = f.next_digest();
      x.usage = usage_from(f.next_u8());
      x.pcr_binding = f.next_as(decode_pcr_config);
      c.body = x;
      break;
    }
    case Opcode::sign: {
      cmd::Sign x;
      x.key_id = f.next_digest();
      x.data = f.next();
      c.body = x;
      break;
    }
    case Opcode::unseal: {
      cmd::Unseal x;
      x.key_id = f.next_digest();
      x.blob = f.next_as(decode_sealed_blob);
      c.body = x;
      break;
    }
    case Opcode::get_public_key:
      c.body = cmd::GetPublicKey{f.next_digest()};
      break;
    case Opcode::create_endorsement_key:
      c.body = cmd::CreateEndorsementKey{};
      break;
    case Opcode::take_ownership:
      c.body = cmd::TakeOwnership{f.next()};
      break;
    case Opcode::read_counter:
      c.body = cmd::ReadCounter{};
      break;
    case Opcode::lock_for_migration:
      c.body = cmd::LockForMigration{f.next_as(decode_nonce)};
      break;
    case Opcode::abort_migration:
      c.body = cmd::AbortMigration{};
      break;
    case Opcode::verify_rim_cert:
      c.body = cmd::VerifyRimCert{f.next_as(decode_rim_certificate)};
      break;
    case Opcode::verify_rim_cert_and_extend: {
      cmd::VerifyRimCertAndExtend x;
      x.cert = f.next_as(decode_rim_certificate);
      x.measurement = f.next_digest();
      c.body = x;
      break;
    }
    case Opcode::load_verification_key:
      c.body = cmd::LoadVerificationKey{f.next_as(decode_public_key)};
      break;
    case Opcode::increment_counter:
      c.body = cmd::IncrementCounter{};
      break;
    default:
      throw Error(Errc::decode_error, "unknown opcode");
  }
  f.finish();
  return c;
}

Bytes encode_response(const MtmResponse& response) {
  Fields f;
  std::visit(overloaded{
                 [&](const resp::Empty&) {},
                 [&](const resp::PcrValue& v) { f.add(v.value); },
                 [&](const resp::KeyInfo& v) { f.add(v.key_id).add(v.public_part); },
                 [&](const resp::QuoteResult& v) { f.add(v.quote); },
                 [&](const resp::SignatureResult& v) { f.add(v.signature); },
                 [&](const resp::Data& v) { f.add_bytes(v.data); },
                 [&](const resp::Counter& v) { f.add_u64(v.value); },
                 [&](const resp::Verdict& v) { f.add_u8(static_cast<std::uint8_t>(v.verdict)); },
             },
             response.body);
  return envelope(static_cast<std::uint8_t>(response.status), static_cast<std::uint8_t>(response.body.index()),
                  std::nullopt, f);
}

MtmResponse decode_response(ByteView data) {
  Reader r(data);
  if (r.u8() != kCommandFormatVersion) throw Error(Errc::version_mismatch, "response format");
  MtmResponse out;
  out.status = static_cast<Errc>(r.u8());
  auto kind = r.u8();
  auto payload = r.bytes();
  r.finish();
  FieldReader f(payload);
  switch (kind) {
    case 0:
      out.body = resp::Empty{};
      break;
    case 1:
      out.body = resp::PcrValue{f.next_digest()};
      break;
    case 2: {
      resp::KeyInfo k;
      k.key_id = f.next_digest();
      k.public_part = f.next_as(decode_public_key);
      out.body = k;
      break;
    }
    case 3:
      out.body = resp::QuoteResult{f.next_as(decode_attestation_quote)};
      break;
    case 4:
      out.body = resp::SignatureResult{f.next_as(decode_signature)};
      break;
    case 5:
      out.body = resp::Data{f.next()};
      break;
    case 6:
      out.body = resp::Counter{f.next_u64()};
      break;
    case 7: {
      auto v = f.next_u8();
      if (v > 3) throw Error(Errc::decode_error, "bad verdict");
      out.body = resp::Verdict{static_cast<CertVerdict>(v)};
      break;
    }
    default:
      throw Error(Errc::decode_error, "unknown response kind");
  }
  f.finish();
  return out;
}

void encode(Writer& w, const AttestationQuote& q) {
  encode(w, q.aik_id);
  encode(w, q.nonce);
  encode(w, q.pcrs);
  encode(w, q.signature);
}

AttestationQuote decode_attestation_quote(Reader& r) {
  AttestationQuote q;
  q.aik_id = decode_digest(r);
  q.nonce = decode_nonce(r);
  q.pcrs = decode_pcr_config(r);
  q.signature = decode_signature(r);
  return q;
}

}  // namespace mtmsim
