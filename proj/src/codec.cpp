#include "mtmsim/codec.hpp"

namespace mtmsim {

Writer& Writer::u8(std::uint8_t v) {
  out_.push_back(v);
  return *this;
}

Writer& Writer::u32(std::uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) out_.push_back(static_cast<std::uint8_t>(v >> shift));
  return *this;
}

Writer& Writer::u64(std::uint64_t v) {
  for (int shift = 56; shift >= 0; shift -= 8) out_.push_back(static_cast<std::uint8_t>(v >> shift));
  return *this;
}

Writer& Writer::raw(ByteView data) {
  append(out_, data);
  return *this;
}

Writer& Writer::bytes(ByteView data) {
  u32(static_cast<std::uint32_t>(data.size()));
  return raw(data);
}

Writer& Writer::str(std::string_view s) {
  return bytes(ByteView(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
}

Writer& Writer::field(std::uint8_t tag, ByteView value) {
  u8(tag);
  return bytes(value);
}

std::uint8_t Reader::u8() { return raw(1)[0]; }

std::uint32_t Reader::u32() {
  auto v = raw(4);
  return std::uint32_t{v[0]} << 24 | std::uint32_t{v[1]} << 16 | std::uint32_t{v[2]} << 8 | v[3];
}

std::uint64_t Reader::u64() {
  auto v = raw(8);
  std::uint64_t out = 0;
  for (auto b : v) out = out << 8 | b;
  return out;
}

ByteView Reader::raw(std::size_t n) {
  if (n > remaining()) throw Error(Errc::decode_error, "truncated input");
  auto v = in_.subspan(pos_, n);
  pos_ += n;
  return v;
}

Bytes Reader::bytes() {
  auto n = u32();
  if (n > kMaxElementLength) throw Error(Errc::decode_error, "element too long");
  auto v = raw(n);
  return Bytes(v.begin(), v.end());
}

std::string Reader::str() {
  auto b = bytes();
  return std::string(b.begin(), b.end());
}

bool Reader::boolean() {
  auto v = u8();
  if (v > 1) throw Error(Errc::decode_error, "bad boolean");
  return v == 1;
}

Bytes Reader::field(std::uint8_t expected_tag) {
  auto tag = u8();
  if (tag != expected_tag) throw Error(Errc::decode_error, "unexpected field tag");
  return bytes();
}

void Reader::finish() const {
  if (remaining() != 0) throw Error(Errc::decode_error, "trailing bytes");
}

}  // namespace mtmsim
