#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "risklab/errors.hpp"
#include "risklab/problem.hpp"
#include "risklab/retrieval.hpp"
#include "risklab/risks.hpp"
#include "risklab/rng.hpp"
#include "risklab/scorer.hpp"

using namespace risklab;

namespace {

ContrastiveProblem two_point() {
  std::vector<double> joint{0.4, 0.1, 0.1, 0.4};
  return from_joint(joint, 2, 2, 1.0);
}

// One anchor, ratios r = (2.5, 1, 0.4). Hand enumeration:
//   E(s=[.4,-.1,.7]) = 0.395     E* = (1/2) E max(r, r') = 0.695
ContrastiveProblem one_row() {
  return new_problem({1.0}, {0.5, 0.3, 0.2}, {0.2, 0.3, 0.5}, 0.8);
}

}  // namespace

TEST_CASE("retrieval criterion by exact enumeration, ties at half weight") {
  const ContrastiveProblem p = one_row();
  const AucBreakdown b = auc_score(p, Scorer::tabular(1, 3, {0.4, -0.1, 0.7}));
  CHECK(b.score == doctest::Approx(0.395).epsilon(1e-13));
  CHECK(b.strict_win + 0.5 * b.tie == doctest::Approx(b.score).epsilon(1e-14));

  // All-constant scores are one big tie: E = 1/2 regardless of the problem.
  const AucBreakdown flat = auc_score(p, Scorer::constant(1, 3, 2.0));
  CHECK(flat.strict_win == doctest::Approx(0.0));
  CHECK(flat.tie == doctest::Approx(1.0).epsilon(1e-13));
  CHECK(flat.score == doctest::Approx(0.5).epsilon(1e-13));
}

TEST_CASE("the optimum matches the closed form and the log-ratio scorer attains it") {
  CHECK(auc_optimum(one_row()) == doctest::Approx(0.695).epsilon(1e-13));
  CHECK(auc_optimum(two_point()) == doctest::Approx(0.65).epsilon(1e-13));

  const AucBreakdown at_opt = auc_score(two_point(), optimal_scorer(two_point()).scorer);
  CHECK(at_opt.score == doctest::Approx(0.65).epsilon(1e-12));

  for (std::uint64_t seed = 1; seed <= 30; ++seed) {
    const ContrastiveProblem p = random_problem(3, 5, seed, 1e-3);
    const double star = auc_optimum(p);
    CHECK(auc_score(p, optimal_scorer(p).scorer).score ==
          doctest::Approx(star).epsilon(1e-11));
    // No scorer may exceed the optimum.
    const Scorer s = Scorer::random_tabular(3, 5, seed + 500, 2.0);
    CHECK(auc_score(p, s).score <= star + 1e-12);
  }
}

TEST_CASE("maximizer characterization: concordance with the density ratio") {
  const ContrastiveProblem p = two_point();
  CHECK(is_auc_maximizer(p, optimal_scorer(p).scorer, 1e-9).ok);

  // Anchor 0 prefers item 0 (r = 1.6 vs 0.4) but this scorer ranks item 1
  // higher; the check must locate that discordance.
  const MaximizerCheck bad =
      is_auc_maximizer(p, Scorer::tabular(2, 2, {0.0, 1.0, 1.0, 0.0}), 1e-9);
  CHECK_FALSE(bad.ok);
  CHECK(bad.x == 0);
  CHECK(bad.ratio_gap > 1.0);

  // Any monotone per-anchor transform of the ratio also maximizes.
  const Scorer squash = Scorer::tabular(2, 2, {std::tanh(1.6), std::tanh(0.4),
                                               std::tanh(0.4), std::tanh(1.6)});
  CHECK(is_auc_maximizer(p, squash, 1e-9).ok);
  CHECK(auc_score(p, squash).score == doctest::Approx(0.65).epsilon(1e-12));
}

TEST_CASE("calibration control: flat scorer on the symmetric two-point instance") {
  // lhs = 0.65 - 0.5; rhs = sqrt(2 * 0.19274475702175745) with tau = 1.
  const CalibrationTriple c =
      calibration_bound(two_point(), Scorer::constant(2, 2, 0.0));
  CHECK(c.lhs == doctest::Approx(0.15).epsilon(1e-12));
  CHECK(c.rhs == doctest::Approx(0.6208780186506162).epsilon(1e-9));
  CHECK(c.slack == doctest::Approx(c.rhs - c.lhs).epsilon(1e-14));
}

TEST_CASE("the retrieval shortfall never beats the excess-risk bound") {
  for (std::uint64_t seed = 100; seed < 160; ++seed) {
    const std::size_t nx = 2 + rng::word(seed, 1, 0) % 3;
    const std::size_t ny = 2 + rng::word(seed, 2, 0) % 5;
    const ContrastiveProblem p = random_problem(nx, ny, seed, 1e-3);
    const Scorer s =
        Scorer::random_tabular(nx, ny, seed + 999, 3.0 * p.temperature);
    const CalibrationTriple c = calibration_bound(p, s);
    CHECK(c.slack >= -1e-9);
    CHECK(c.lhs >= -1e-12);
  }
}

TEST_CASE("general-form diagnostic pairs the gap with the excess") {
  const ContrastiveProblem p = two_point();
  const Scorer s = Scorer::random_tabular(2, 2, 7, 1.5);
  const ExcessDiagnostic d = excess_bounds_general(
      p, s, Disutility::entropy_risk(), PairwiseLoss::linear());
  // For (entropy, linear) the default reference is the exact optimum.
  CHECK(d.reference == doctest::Approx(optimal_risk(p)).epsilon(1e-12));
  CHECK(d.excess_oce >= -1e-10);
  CHECK(d.retrieval_gap ==
        doctest::Approx(auc_optimum(p) - auc_score(p, s).score).epsilon(1e-12));
}

TEST_CASE("zero-shot posterior equals class overlaps under the optimal scorer") {
  // Two classes over two items; anchor = class with joint prior * D_c, so
  // negatives are the shared item marginal. With the log-ratio scorer the
  // posterior at anchor 0 reduces to sum_y D_c(y) D_0(y):
  //   raw = (0.68, 0.38), normalized = raw / 1.06.
  ClassStructure cs;
  cs.class_count = 2;
  cs.item_size = 2;
  cs.prior = {0.5, 0.5};
  cs.item_dist = {0.8, 0.2, 0.3, 0.7};
  std::vector<double> joint{0.4, 0.1, 0.15, 0.35};
  const ContrastiveProblem p = from_joint(joint, 2, 2, 1.0);
  const ZeroShotPosterior z =
      zero_shot_posterior(p, cs, optimal_scorer(p).scorer, 0);
  REQUIRE(z.raw.size() == 2);
  CHECK(z.raw[0] == doctest::Approx(0.68).epsilon(1e-12));
  CHECK(z.raw[1] == doctest::Approx(0.38).epsilon(1e-12));
  CHECK(z.normalized[0] == doctest::Approx(0.68 / 1.06).epsilon(1e-12));
  CHECK(z.normalized[0] + z.normalized[1] == doctest::Approx(1.0).epsilon(1e-14));

  // Per-anchor negative rows (multi-class leave-one-out) are rejected.
  const ContrastiveProblem lo = from_multiclass(cs, cs.item_dist, 1.0);
  CHECK_THROWS_AS(
      zero_shot_posterior(lo, cs, Scorer::constant(2, 2, 0.0), 0),
      HeterogeneousNegatives);
}
