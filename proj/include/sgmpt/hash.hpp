#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace sgmpt {

// 64-bit FNV-1a; used for config fingerprints written into reports and tables.
inline std::uint64_t fnv1a64(std::string_view text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v);

}  // namespace sgmpt
