#pragma once

#include <cstdint>
#include <span>

namespace risklab {

// Counter-based random words: every output is a pure function of
// (seed, stream, index), so parallel workers can consume disjoint streams
// and reruns are bit-identical on any platform (pure uint64 arithmetic).
namespace rng {

// One output word. Three chained avalanche rounds; stream and index enter
// through distinct odd multipliers so they are not interchangeable.
std::uint64_t word(std::uint64_t seed, std::uint64_t stream, std::uint64_t index);

// Uniform double in [0, 1) from the top 53 bits of word().
double unit(std::uint64_t seed, std::uint64_t stream, std::uint64_t index);

// Derive a child seed (for per-trial sub-experiments).
std::uint64_t derive(std::uint64_t seed, std::uint64_t tag, std::uint64_t index);

// Smallest k with cdf(k) > u for the distribution given by probs.
// Walks the cumulative sum in index order; deterministic given u.
std::size_t inverse_cdf(std::span<const double> probs, double u);

}  // namespace rng

// Sequential view over one (seed, stream): hands out unit/u64 draws by
// advancing an internal index. Cheap to copy; copies replay the stream.
class CounterRng {
 public:
  CounterRng(std::uint64_t seed, std::uint64_t stream)
      : seed_(seed), stream_(stream) {}

  std::uint64_t next_u64() { return rng::word(seed_, stream_, index_++); }
  double next_unit() { return rng::unit(seed_, stream_, index_++); }
  std::size_t next_index(std::span<const double> probs) {
    return rng::inverse_cdf(probs, next_unit());
  }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::uint64_t index_ = 0;
};

}  // namespace risklab
