#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "risklab/problem.hpp"

namespace risklab {

// Per-anchor-negatives draw: n anchors, one positive each, m negatives each.
// Indices are reproducible from (problem, n, m, seed) alone.
struct ScrlSample {
  std::size_t anchor_size = 0;  // |X| of the generating problem
  std::size_t item_size = 0;    // |Y|
  std::size_t n = 0;
  std::size_t m = 0;
  std::uint64_t seed = 0;
  std::vector<std::size_t> anchors;    // n
  std::vector<std::size_t> positives;  // n
  std::vector<std::size_t> negatives;  // n x m row-major
};

// Shared-negatives draw: n positive pairs plus one negative list reused by
// every anchor.
struct SscrlSample {
  std::size_t anchor_size = 0;
  std::size_t item_size = 0;
  std::size_t n = 0;
  std::size_t m = 0;
  std::uint64_t seed = 0;
  std::vector<std::size_t> anchors;    // n
  std::vector<std::size_t> positives;  // n
  std::vector<std::size_t> negatives;  // m, shared
};

// Anchors ~ anchor_marginal, positive ~ pos_cond row, negatives i.i.d. ~
// neg_cond row, all via inverse CDF on the counter RNG. Bit-identical
// output for identical inputs.
ScrlSample sample_scrl(const ContrastiveProblem& problem, std::size_t n,
                       std::size_t m, std::uint64_t seed);

// Negatives drawn once from the shared neg_cond row. Throws
// HeterogeneousNegatives unless all neg rows agree within 1e-12.
SscrlSample sample_sscrl(const ContrastiveProblem& problem, std::size_t n,
                         std::size_t m, std::uint64_t seed);

// View of an SCRL sample whose negative lists are all identical, as a
// shared-negatives sample.
SscrlSample as_shared(const ScrlSample& sample);

}  // namespace risklab
