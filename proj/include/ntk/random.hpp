#pragma once

#include <cstdint>

namespace ntk {

// Stateless counter-based random source. Every draw is a pure function of
// (seed, stream, counter), so sampling is reproducible under any evaluation
// order and enlarging an array extends it without reshuffling earlier entries.
namespace rng {

inline uint64_t mix64(uint64_t x) {
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ull;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebull;
  x ^= x >> 31;
  return x;
}

inline uint64_t combine(uint64_t h, uint64_t v) {
  return mix64(h + 0x9e3779b97f4a7c15ull + v);
}

// Per-(seed, stream) base key; draws then cost one combine each.
inline uint64_t stream_key(uint64_t seed, uint64_t stream) {
  return combine(mix64(seed + 0x632be59bd9b4e019ull), stream);
}

inline uint64_t key(uint64_t seed, uint64_t stream, uint64_t counter) {
  return combine(stream_key(seed, stream), counter);
}

inline uint64_t key(uint64_t seed, uint64_t stream, uint64_t c0, uint64_t c1) {
  return combine(key(seed, stream, c0), c1);
}

// Uniform in the open interval (0, 1); never returns an exact endpoint.
inline double to_unit(uint64_t bits) {
  return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
}

// Inverse of the standard normal CDF (Wichura's AS241, ~1e-15 accuracy).
double normal_icdf(double p);

inline double normal(uint64_t seed, uint64_t stream, uint64_t counter) {
  return normal_icdf(to_unit(key(seed, stream, counter)));
}

inline double normal(uint64_t seed, uint64_t stream, uint64_t c0, uint64_t c1) {
  return normal_icdf(to_unit(key(seed, stream, c0, c1)));
}

// Draw from a precomputed base key (see stream_key/combine).
inline double normal_at(uint64_t base, uint64_t counter) {
  return normal_icdf(to_unit(combine(base, counter)));
}

}  // namespace rng
}  // namespace ntk
