#pragma once

#include <cstdint>
#include <initializer_list>

namespace deviloc {

// SplitMix64 finalizer; used to derive independent, order-free RNG streams
// from (seed, id, ...) tuples so concurrent work stays reproducible.
inline uint64_t MixSeed(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t DeriveSeed(std::initializer_list<uint64_t> parts) {
  uint64_t h = 0x243f6a8885a308d3ULL;
  for (const uint64_t p : parts) h = MixSeed(h ^ MixSeed(p));
  return h;
}

}  // namespace deviloc
