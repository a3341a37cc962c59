#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace risklab {

// A finite contrastive problem: anchor marginal p_X, per-anchor positive
// and negative item distributions, and a temperature. Instances are
// validated at construction and treated as immutable afterwards; all
// evaluators take them by const reference.
struct ContrastiveProblem {
  std::size_t anchor_size = 0;
  std::size_t item_size = 0;
  std::vector<double> anchor_marginal;  // |X|
  std::vector<double> pos_cond;         // |X| x |Y|, row-major
  std::vector<double> neg_cond;         // |X| x |Y|, row-major
  double temperature = 1.0;

  std::span<const double> pos_row(std::size_t x) const {
    return {pos_cond.data() + x * item_size, item_size};
  }
  std::span<const double> neg_row(std::size_t x) const {
    return {neg_cond.data() + x * item_size, item_size};
  }
  // True when every negative row equals the first within tol (the shared-
  // negative structure produced by from_joint).
  bool homogeneous_negatives(double tol = 1e-12) const;
};

// Joint distribution over (x, y, z) with binary relevance label z.
struct LabeledJoint {
  std::size_t anchor_size = 0;
  std::size_t item_size = 0;
  std::vector<double> pos_slice;  // p(x, y, z=+1), row-major |X| x |Y|
  std::vector<double> neg_slice;  // p(x, y, z=-1)
};

// Class layout for multi-class construction and zero-shot evaluation.
struct ClassStructure {
  std::size_t class_count = 0;
  std::size_t item_size = 0;
  std::vector<double> prior;      // rho over classes
  std::vector<double> item_dist;  // C x |Y| row-major, row c = D_Y(c)
  std::optional<std::vector<std::size_t>> label_map;  // y -> c, when deterministic

  std::span<const double> class_row(std::size_t c) const {
    return {item_dist.data() + c * item_size, item_size};
  }
};

// Validating constructor. Inputs may be off by up to 1e-9 per row sum and
// are renormalized; support violations (positive mass where negative mass
// is zero) are rejected, never repaired.
ContrastiveProblem new_problem(std::vector<double> anchor_marginal,
                               std::vector<double> pos_cond,
                               std::vector<double> neg_cond,
                               double temperature);

// Build from a joint over (x, y): positives are the conditional rows, the
// negative distribution is the item marginal (same for every anchor).
ContrastiveProblem from_joint(std::span<const double> joint_xy,
                              std::size_t anchor_size, std::size_t item_size,
                              double temperature);

// Build from a labeled joint: pos row x = p(y | x, z=+1), neg row x =
// p(y | x, z=-1).
ContrastiveProblem from_labeled(const LabeledJoint& labeled, double temperature);

// One anchor per class c: positives D_c (rows of per_class_cond), negatives
// the prior-weighted mixture of the other classes' rows.
ContrastiveProblem from_multiclass(const ClassStructure& classes,
                                   std::span<const double> per_class_cond,
                                   double temperature);

// Element-wise pos/neg for one anchor, with 0/0 -> 0 (those items carry no
// mass in any expectation evaluated here).
std::vector<double> density_ratio(const ContrastiveProblem& problem, std::size_t x);

// Deterministic random instance with every probability entry >= min_mass
// and temperature log-uniform in [0.1, 10].
ContrastiveProblem random_problem(std::size_t anchor_size, std::size_t item_size,
                                  std::uint64_t seed, double min_mass);

// JSON document {anchor_marginal, pos_cond, neg_cond, temperature} with
// matrices as arrays of rows.
std::string problem_to_json(const ContrastiveProblem& problem);
ContrastiveProblem problem_from_json(const std::string& text);

}  // namespace risklab
