#ifndef FPSWITCH_HASH_H_
#define FPSWITCH_HASH_H_

#include <cstdint>
#include <string>
#include <string_view>

namespace fpswitch {

// Salted FNV-1a. Stable across platforms and runs; not cryptographic.
inline uint64_t HashId(std::string_view id, uint64_t salt) {
  uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](unsigned char c) {
    h ^= c;
    h *= 0x100000001b3ULL;
  };
  for (int i = 0; i < 8; ++i) mix(static_cast<unsigned char>(salt >> (8 * i)));
  for (char c : id) mix(static_cast<unsigned char>(c));
  return h;
}

inline std::string HashHex(uint64_t h) {
  static constexpr char kDigits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[i] = kDigits[h & 0xf];
    h >>= 4;
  }
  return out;
}

}  // namespace fpswitch

#endif  // FPSWITCH_HASH_H_
