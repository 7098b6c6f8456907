#pragma once

// Counter-based deterministic random numbers.
//
// Every random draw in the library is addressed by (seed, stream name,
// draw index) instead of consuming a shared mutable generator.  Draws for
// one stream are therefore independent of when — or whether — any other
// stream is sampled, so a handler that inserts auxiliary sites into a model
// does not perturb the draws of the sites around it, and per-chain draws do
// not depend on thread scheduling.

#include <cmath>
#include <cstdint>
#include <string>
#include <string_view>

namespace reparam {

namespace detail {

// SplitMix64 finaliser: a cheap bijective mixer with good avalanche.
inline uint64_t mix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t fnv1a(std::string_view s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace detail

// Stateless stream of uniforms/normals identified by (seed, name).
class StreamRng {
 public:
  StreamRng(uint64_t seed, std::string_view name)
      : key_(detail::mix64(detail::mix64(seed) ^ detail::fnv1a(name))) {}

  // Uniform draw in [2^-53, 1): never exactly zero so logs are safe.
  double uniform(uint64_t index) const {
    const uint64_t bits = detail::mix64(key_ ^ detail::mix64(index));
    return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
  }

  // Standard normal via Box-Muller on counters (2*index, 2*index+1).
  double normal(uint64_t index) const {
    const double u1 = uniform(2 * index);
    const double u2 = uniform(2 * index + 1);
    constexpr double two_pi = 6.28318530717958647692;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
  }

  // Bernoulli draw with success probability p.
  double bernoulli(uint64_t index, double p) const {
    return uniform(index) < p ? 1.0 : 0.0;
  }

 private:
  uint64_t key_;
};

// Convenience: one named scalar stream with a composed label, e.g.
// chain_stream(seed, "chain", 3, "momentum").
inline StreamRng chain_stream(uint64_t seed, std::string_view what, int chain,
                              std::string_view sub = "") {
  std::string name;
  name.reserve(what.size() + sub.size() + 16);
  name.append(what);
  name.push_back('#');
  name.append(std::to_string(chain));
  if (!sub.empty()) {
    name.push_back('/');
    name.append(sub);
  }
  return StreamRng(seed, name);
}

}  // namespace reparam
