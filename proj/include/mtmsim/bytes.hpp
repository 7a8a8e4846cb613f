#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mtmsim {

using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;

std::string to_hex(ByteView data);
Bytes from_hex(std::string_view hex);

inline Bytes to_bytes(std::string_view s) { return Bytes(s.begin(), s.end()); }

inline void append(Bytes& out, ByteView data) { out.insert(out.end(), data.begin(), data.end()); }

Bytes concat(std::initializer_list<ByteView> parts);

// True if `needle` occurs anywhere inside `haystack`.
bool contains(ByteView haystack, ByteView needle);

/// Owned secret bytes, wiped on destruction and on reassignment.
class Secret {
 public:
  Secret() = default;
  explicit Secret(Bytes bytes) : bytes_(std::move(bytes)) {}
  Secret(const Secret&) = default;
  Secret(Secret&& other) noexcept : bytes_(std::move(other.bytes_)) {}
  Secret& operator=(const Secret& other);
  Secret& operator=(Secret&& other) noexcept;
  ~Secret();

  ByteView view() const { return bytes_; }
  std::size_t size() const { return bytes_.size(); }
  bool empty() const { return bytes_.empty(); }
  void wipe();

  friend bool operator==(const Secret& a, const Secret& b) { return a.bytes_ == b.bytes_; }

 private:
  Bytes bytes_;
};

}  // namespace mtmsim
