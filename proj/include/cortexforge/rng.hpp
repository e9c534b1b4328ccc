#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace cortexforge {

// All randomness in a run flows from one root seed. Named substreams keep
// modules decoupled: adding a draw in one place never shifts another stream.
inline std::uint64_t derive_seed(std::uint64_t root, std::string_view purpose) {
  // FNV-1a over the purpose string, mixed with the root via splitmix64.
  std::uint64_t h = 1469598103934665603ull;
  for (char c : purpose) {
    h ^= static_cast<std::uint8_t>(c);
    h *= 1099511628211ull;
  }
  std::uint64_t z = root + 0x9e3779b97f4a7c15ull + h;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

inline std::mt19937_64 substream(std::uint64_t root, std::string_view purpose) {
  return std::mt19937_64(derive_seed(root, purpose));
}

}  // namespace cortexforge
