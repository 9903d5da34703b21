#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace geocorr {

/// SplitMix64 finalizer; used to decorrelate derived seeds.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t hash_name(std::string_view name) {
  // FNV-1a
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : name) {
    h ^= static_cast<std::uint8_t>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Derive a named sub-stream seed from a root seed. All randomness in the
/// pipeline flows from one root through these, keyed by stage name and index.
inline std::uint64_t substream_seed(std::uint64_t root, std::string_view stage,
                                    std::uint64_t index = 0) {
  return mix64(root ^ mix64(hash_name(stage)) ^ mix64(index * 0x9e3779b97f4a7c15ULL + 1));
}

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t root, std::string_view stage, std::uint64_t index = 0) {
  return Rng(substream_seed(root, stage, index));
}

}  // namespace geocorr
