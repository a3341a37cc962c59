#include "risklab/rng.hpp"

namespace risklab::rng {

namespace {

// splitmix64 finalizer (Steele/Lea/Flood mixing constants).
inline std::uint64_t mix(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace

std::uint64_t word(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  std::uint64_t h = mix(seed + 0x9E3779B97F4A7C15ULL);
  h = mix(h ^ (stream * 0xBF58476D1CE4E5B9ULL + 0x94D049BB133111EBULL));
  h = mix(h ^ (index * 0x94D049BB133111EBULL + 0xBF58476D1CE4E5B9ULL));
  return h;
}

double unit(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  return static_cast<double>(word(seed, stream, index) >> 11) * 0x1.0p-53;
}

std::uint64_t derive(std::uint64_t seed, std::uint64_t tag, std::uint64_t index) {
  return word(seed, tag ^ 0xD6E8FEB86659FD93ULL, index);
}

std::size_t inverse_cdf(std::span<const double> probs, double u) {
  double cdf = 0.0;
  const std::size_t n = probs.size();
  for (std::size_t k = 0; k + 1 < n; ++k) {
    cdf += probs[k];
    if (u < cdf) return k;
  }
  return n > 0 ? n - 1 : 0;  // u in the final cell (or fp slack pushed it there)
}

}  // namespace risklab::rng
