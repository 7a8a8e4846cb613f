#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

#include "mtmsim/bytes.hpp"
#include "mtmsim/error.hpp"

namespace mtmsim {

// Canonical binary encoding. Integers are big-endian, variable-length
// values carry a 4-byte length prefix. Structured payloads use tagged
// fields: (1-byte tag, 4-byte length, bytes), in declaration order.
class Writer {
 public:
  Writer& u8(std::uint8_t v);
  Writer& u32(std::uint32_t v);
  Writer& u64(std::uint64_t v);
  Writer& raw(ByteView data);
  Writer& bytes(ByteView data);  // length-prefixed
  Writer& str(std::string_view s);
  Writer& boolean(bool v) { return u8(v ? 1 : 0); }
  template <std::size_t N>
  Writer& fixed(const std::array<std::uint8_t, N>& a) {
    return raw(a);
  }
  Writer& field(std::uint8_t tag, ByteView value);

  const Bytes& data() const& { return out_; }
  Bytes take() && { return std::move(out_); }

 private:
  Bytes out_;
};

// Strict reader: every read past the end and every unconsumed trailing
// byte (see finish) is a decode_error.
class Reader {
 public:
  explicit Reader(ByteView in) : in_(in) {}

  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  ByteView raw(std::size_t n);
  Bytes bytes();
  std::string str();
  bool boolean();
  template <std::size_t N>
  std::array<std::uint8_t, N> fixed() {
    std::array<std::uint8_t, N> a{};
    auto v = raw(N);
    std::copy(v.begin(), v.end(), a.begin());
    return a;
  }
  // Reads one tagged field and requires the given tag.
  Bytes field(std::uint8_t expected_tag);

  std::size_t remaining() const { return in_.size() - pos_; }
  void finish() const;

 private:
  ByteView in_;
  std::size_t pos_ = 0;
};

// Bound on any single length-prefixed element, keeps malformed input from
// triggering huge allocations.
inline constexpr std::uint32_t kMaxElementLength = 16u << 20;

}  // namespace mtmsim
