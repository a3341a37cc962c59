#include "risklab/sampling.hpp"

#include "risklab/errors.hpp"
#include "risklab/rng.hpp"

namespace risklab {

namespace {

// Draw slots within an anchor's stream: 0 = anchor, 1 = positive,
// 2+j = j-th negative. Shared negative lists reuse stream 0's negative
// slots so a 1-anchor shared sample coincides with the per-anchor one.
constexpr std::uint64_t kAnchorSlot = 0;
constexpr std::uint64_t kPositiveSlot = 1;
constexpr std::uint64_t kNegativeBase = 2;

void check_counts(std::size_t n, std::size_t m) {
  if (n == 0 || m == 0) throw DimensionMismatch("sample sizes n, m must be >= 1");
}

}  // namespace

ScrlSample sample_scrl(const ContrastiveProblem& problem, std::size_t n,
                       std::size_t m, std::uint64_t seed) {
  check_counts(n, m);
  ScrlSample s;
  s.anchor_size = problem.anchor_size;
  s.item_size = problem.item_size;
  s.n = n;
  s.m = m;
  s.seed = seed;
  s.anchors.resize(n);
  s.positives.resize(n);
  s.negatives.resize(n * m);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t x =
        rng::inverse_cdf(problem.anchor_marginal, rng::unit(seed, i, kAnchorSlot));
    s.anchors[i] = x;
    s.positives[i] = rng::inverse_cdf(problem.pos_row(x), rng::unit(seed, i, kPositiveSlot));
    for (std::size_t j = 0; j < m; ++j)
      s.negatives[i * m + j] =
          rng::inverse_cdf(problem.neg_row(x), rng::unit(seed, i, kNegativeBase + j));
  }
  return s;
}

SscrlSample sample_sscrl(const ContrastiveProblem& problem, std::size_t n,
                         std::size_t m, std::uint64_t seed) {
  check_counts(n, m);
  if (!problem.homogeneous_negatives())
    throw HeterogeneousNegatives(
        "shared-negative sampling requires identical neg_cond rows (joint-built problem)");
  SscrlSample s;
  s.anchor_size = problem.anchor_size;
  s.item_size = problem.item_size;
  s.n = n;
  s.m = m;
  s.seed = seed;
  s.anchors.resize(n);
  s.positives.resize(n);
  s.negatives.resize(m);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t x =
        rng::inverse_cdf(problem.anchor_marginal, rng::unit(seed, i, kAnchorSlot));
    s.anchors[i] = x;
    s.positives[i] = rng::inverse_cdf(problem.pos_row(x), rng::unit(seed, i, kPositiveSlot));
  }
  const auto shared_row = problem.neg_row(0);
  for (std::size_t j = 0; j < m; ++j)
    s.negatives[j] = rng::inverse_cdf(shared_row, rng::unit(seed, 0, kNegativeBase + j));
  return s;
}

SscrlSample as_shared(const ScrlSample& sample) {
  for (std::size_t i = 1; i < sample.n; ++i)
    for (std::size_t j = 0; j < sample.m; ++j)
      if (sample.negatives[i * sample.m + j] != sample.negatives[j])
        throw HeterogeneousNegatives("negative lists differ across anchors");
  SscrlSample s;
  s.anchor_size = sample.anchor_size;
  s.item_size = sample.item_size;
  s.n = sample.n;
  s.m = sample.m;
  s.seed = sample.seed;
  s.anchors = sample.anchors;
  s.positives = sample.positives;
  s.negatives.assign(sample.negatives.begin(), sample.negatives.begin() + sample.m);
  return s;
}

}  // namespace risklab
