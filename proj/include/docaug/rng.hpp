#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace docaug {

using Rng = std::mt19937_64;

// Named random streams. Every consumer of randomness derives its generator
// from (master seed, stream, indices) so results do not depend on the order
// in which work is scheduled.
enum class Stream : std::uint64_t {
  latent = 0x6c6174656e74ULL,      // z draws shared by DA training and augmentation
  latent_fresh = 0x667265736831ULL,  // resampled z at augmentation time
  init = 0x696e6974ULL,
  shuffle = 0x73687566ULL,
  dropout = 0x64726f70ULL,
  ppl = 0x70706cULL,
  synth = 0x73796e7468ULL,
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, Stream stream,
                                 std::initializer_list<std::uint64_t> path = {}) {
  std::uint64_t h = splitmix64(master ^ splitmix64(static_cast<std::uint64_t>(stream)));
  for (std::uint64_t k : path) h = splitmix64(h ^ splitmix64(k + 0x632be59bd9b4e019ULL));
  return h;
}

inline Rng make_rng(std::uint64_t master, Stream stream,
                    std::initializer_list<std::uint64_t> path = {}) {
  return Rng(derive_seed(master, stream, path));
}

// Uniform integer in [lo, hi]. Implemented here instead of
// std::uniform_int_distribution so sequences are identical across standard
// libraries.
inline std::int64_t uniform_int(Rng& rng, std::int64_t lo, std::int64_t hi) {
  const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
  if (span == 0) return static_cast<std::int64_t>(rng());
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % span;
  std::uint64_t r;
  do {
    r = rng();
  } while (r >= limit);
  return lo + static_cast<std::int64_t>(r % span);
}

// Uniform real in [0, 1) with 53 random bits.
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

template <class It>
void shuffle_range(It first, It last, Rng& rng) {
  const auto n = last - first;
  for (auto i = n - 1; i > 0; --i) {
    auto j = uniform_int(rng, 0, i);
    std::swap(first[i], first[j]);
  }
}

}  // namespace docaug
