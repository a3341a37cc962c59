#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <vector>

#include "risklab/errors.hpp"
#include "risklab/experiments.hpp"
#include "risklab/problem.hpp"
#include "risklab/retrieval.hpp"
#include "risklab/rng.hpp"
#include "risklab/risks.hpp"
#include "risklab/scorer.hpp"
#include "risklab/trainer.hpp"

using namespace risklab;

namespace {

ContrastiveProblem two_point() {
  std::vector<double> joint{0.4, 0.1, 0.1, 0.4};
  return from_joint(joint, 2, 2, 1.0);
}

// Joint with log-weights spread*(2u - 1); replicates the generator the
// command-line tool uses for synthetic instances.
ContrastiveProblem spread_joint(std::size_t nx, std::size_t ny, double spread,
                                double tau, std::uint64_t seed) {
  std::vector<double> joint(nx * ny);
  double total = 0.0;
  for (std::size_t i = 0; i < joint.size(); ++i) {
    joint[i] = std::exp(spread * (2.0 * rng::unit(seed, 0, i) - 1.0));
    total += joint[i];
  }
  for (double& v : joint) v /= total;
  return from_joint(joint, nx, ny, tau);
}

ContrastiveProblem heterogeneous_problem() {
  ClassStructure cs;
  cs.class_count = 3;
  cs.item_size = 3;
  cs.prior = {0.5, 0.25, 0.25};
  cs.item_dist = {0.8, 0.1, 0.1, 0.1, 0.8, 0.1, 0.1, 0.1, 0.8};
  return from_multiclass(cs, cs.item_dist, 1.0);
}

}  // namespace

TEST_CASE("the decomposition splits the gap and respects the triangle bound") {
  const ContrastiveProblem p = spread_joint(4, 8, 1.3, 0.5, 11);
  const Scorer s = Scorer::random_tabular(4, 8, 12, 1.5 * p.temperature);

  for (SampleMode mode : {SampleMode::Scrl, SampleMode::Sscrl}) {
    const DecompositionReport r =
        inner_outer_decomposition(p, s, mode, 32, 8, 200, 77);
    CHECK(r.mode == mode);
    CHECK(r.n == 32);
    CHECK(r.m == 8);
    CHECK(r.trials == 200);
    CHECK(std::abs(r.population - population_risk(p, s).value) <= 1e-12);
    CHECK(r.total_gap > 0.0);
    CHECK(r.inner_mad > 0.0);
    CHECK(r.outer_mad > 0.0);
    CHECK(r.total_gap_se >= 0.0);
    CHECK(r.inner_bias_se >= 0.0);
    CHECK(r.triangle_slack() >= 0.0);
    // Per-anchor sampling carries the positive O(1/m) inner bias; shared
    // lists keep it within noise. Both must clear the noise floor from below.
    CHECK(r.inner_signed_bias >= -3.0 * r.inner_bias_se);

    const DecompositionReport again =
        inner_outer_decomposition(p, s, mode, 32, 8, 200, 77);
    CHECK(r.to_json() == again.to_json());
  }
}

TEST_CASE("decomposition guards") {
  const ContrastiveProblem p = two_point();
  const Scorer s = Scorer::random_tabular(2, 2, 3, 1.0);
  CHECK_THROWS_AS(inner_outer_decomposition(p, s, SampleMode::Scrl, 8, 4, 99, 1),
                  InsufficientTrials);
  CHECK_THROWS_AS(inner_outer_decomposition(p, s, SampleMode::Scrl, 0, 4, 100, 1),
                  DimensionMismatch);

  const ContrastiveProblem het = heterogeneous_problem();
  const Scorer s3 = Scorer::random_tabular(3, 3, 4, 1.0);
  CHECK_THROWS_AS(inner_outer_decomposition(het, s3, SampleMode::Sscrl, 8, 4, 100, 1),
                  HeterogeneousNegatives);
  // Per-anchor sampling never needs a shared negative row.
  CHECK_NOTHROW(inner_outer_decomposition(het, s3, SampleMode::Scrl, 8, 4, 100, 1));
}

TEST_CASE("a singleton hypothesis set reproduces the decomposition's total gap") {
  const ContrastiveProblem p = spread_joint(3, 6, 1.0, 0.7, 21);
  const Scorer s = Scorer::random_tabular(3, 6, 22, 1.0);

  for (SampleMode mode : {SampleMode::Scrl, SampleMode::Sscrl}) {
    const DecompositionReport rep =
        inner_outer_decomposition(p, s, mode, 16, 4, 150, 99);
    const GapReport gap =
        generalization_gap(p, std::span<const Scorer>(&s, 1), mode, 16, 4, 150, 99);
    CHECK(gap.trials == 150);
    REQUIRE(gap.per_hypothesis_mean.size() == 1);
    // Same draws, same arithmetic: exact equality, not an approximation.
    CHECK(gap.mean == rep.total_gap);
    CHECK(gap.per_hypothesis_mean[0] == gap.mean);
    CHECK(gap.q50 <= gap.q90);
    CHECK(gap.q90 <= gap.max_gap);
    CHECK(gap.mean <= gap.max_gap);
  }
}

TEST_CASE("the default hypothesis set carries random, optimal and trained members") {
  const ContrastiveProblem p = two_point();
  const std::vector<Scorer> set = default_hypothesis_set(p, 3, 5);
  REQUIRE(set.size() == 5);
  for (const Scorer& h : set) {
    CHECK(h.anchor_size == 2);
    CHECK(h.item_size == 2);
  }
  const double opt = optimal_risk(p);
  CHECK(std::abs(population_risk(p, set[3]).value - opt) <= 1e-12);
  CHECK(population_risk(p, set[4]).value <= opt + 1e-8);

  const GapReport gap =
      generalization_gap(p, set, SampleMode::Sscrl, 32, 8, 120, 17);
  REQUIRE(gap.per_hypothesis_mean.size() == set.size());
  // Mean of a per-trial max dominates every per-hypothesis mean.
  for (double per : gap.per_hypothesis_mean) CHECK(gap.mean >= per - 1e-12);

  CHECK_THROWS_AS(generalization_gap(p, {}, SampleMode::Scrl, 8, 4, 100, 1),
                  UsageError);
  CHECK_THROWS_AS(generalization_gap(p, set, SampleMode::Scrl, 8, 4, 0, 1),
                  InsufficientTrials);
}

TEST_CASE("inner and outer error statistics shrink at their characteristic rates") {
  const ContrastiveProblem p = spread_joint(4, 8, 1.3, 0.5, 31);
  const Scorer s = Scorer::random_tabular(4, 8, 32, 1.5 * p.temperature);
  const std::array<std::size_t, 5> grid{8, 16, 32, 64, 128};

  const SlopeFit mad = scaling_study(p, s, SweepMode::InnerMSscrlMad, grid, 400, 41);
  CHECK(mad.conclusive);
  CHECK(mad.r_squared >= 0.9);
  CHECK(mad.slope >= -0.65);
  CHECK(mad.slope <= -0.35);
  REQUIRE(mad.mean_err.size() == grid.size());
  CHECK(std::is_sorted(mad.mean_err.rbegin(), mad.mean_err.rend()));
  CHECK(mad.to_csv().rfind("sweep_var,mean_err,se,trials\n", 0) == 0);
  const SlopeFit mad2 = scaling_study(p, s, SweepMode::InnerMSscrlMad, grid, 400, 41);
  CHECK(mad.to_csv() == mad2.to_csv());
  CHECK(mad.to_json() == mad2.to_json());

  // Signed-bias noise shrinks only like 1/sqrt(m), so clearing the 10%
  // relative-se gate at m = 128 takes ~5000 trials; 12000 leaves margin.
  const SlopeFit bias = scaling_study(p, s, SweepMode::InnerMScrl, grid, 12000, 43);
  CHECK(bias.conclusive);
  CHECK(bias.slope >= -1.3);
  CHECK(bias.slope <= -0.7);
  // The signed bias is an order smaller than the absolute error at the same m.
  CHECK(bias.mean_err.back() < mad.mean_err.back());

  const SlopeFit outer = scaling_study(p, s, SweepMode::OuterN, grid, 400, 47);
  CHECK(outer.conclusive);
  CHECK(outer.slope >= -0.65);
  CHECK(outer.slope <= -0.35);
}

TEST_CASE("scaling study guards") {
  const ContrastiveProblem p = two_point();
  const Scorer s = Scorer::random_tabular(2, 2, 3, 1.0);
  const std::array<std::size_t, 4> short_grid{8, 16, 32, 64};
  CHECK_THROWS_AS(scaling_study(p, s, SweepMode::OuterN, short_grid, 400, 1),
                  UsageError);
  const std::array<std::size_t, 5> grid{8, 16, 32, 64, 128};
  CHECK_THROWS_AS(scaling_study(p, s, SweepMode::OuterN, grid, 99, 1),
                  InsufficientTrials);
  const std::array<std::size_t, 5> unsorted{8, 16, 16, 64, 128};
  CHECK_THROWS_AS(scaling_study(p, s, SweepMode::OuterN, unsorted, 400, 1),
                  UsageError);
}

TEST_CASE("calibration sweep rows all satisfy the retrieval inequality") {
  const CalibrationSweepResult res = calibration_sweep(5, 4, 61, true);
  REQUIRE(res.rows.size() == 25);

  std::size_t controls = 0;
  double min_slack = res.rows.front().slack;
  for (const CalibrationRow& row : res.rows) {
    CHECK(row.slack >= -1e-9);
    CHECK(std::abs(row.slack - (row.rhs - row.lhs)) <= 1e-15);
    CHECK(row.lhs >= -1e-12);
    min_slack = std::min(min_slack, row.slack);
    if (row.scorer_seed == 0) {
      ++controls;
      // Optimal-scorer rows: both sides collapse to numerical zero.
      CHECK(std::abs(row.lhs) <= 1e-9);
      CHECK(row.rhs <= 1e-5);
    }
  }
  CHECK(controls == 5);
  CHECK(res.min_slack == min_slack);
  CHECK(res.median_slack >= res.min_slack);

  CHECK(res.to_csv().rfind("problem_seed,scorer_seed,lhs,rhs,slack\n", 0) == 0);
  const CalibrationSweepResult again = calibration_sweep(5, 4, 61, true);
  CHECK(res.to_csv() == again.to_csv());

  CHECK(calibration_sweep(5, 4, 61, false).rows.size() == 20);
  CHECK_THROWS_AS(calibration_sweep(0, 4, 1, false), UsageError);
}

TEST_CASE("the saturation study marks one m* per n") {
  const ContrastiveProblem p = default_critical_problem();
  CHECK(p.anchor_size == 8);
  CHECK(p.item_size == 16);
  CHECK(p.homogeneous_negatives());

  const std::array<std::size_t, 2> n_grid{32, 64};
  const std::array<std::size_t, 3> m_grid{2, 8, 32};
  TrainConfig config;
  config.max_iters = 50'000;
  config.grad_tol = 1e-7;
  const CriticalMReport rep = critical_m_study(p, n_grid, m_grid, config, 0.01, 3, 71);

  REQUIRE(rep.cells.size() == 6);
  REQUIRE(rep.per_n.size() == 2);
  for (std::size_t i = 0; i < rep.cells.size(); ++i) {
    const CriticalMCell& c = rep.cells[i];
    CHECK(c.n == n_grid[i / 3]);
    CHECK(c.m == m_grid[i % 3]);
    CHECK(c.mean_auc > 0.5);
    CHECK(c.mean_auc <= 1.0);
    CHECK(c.se >= 0.0);
  }
  for (std::size_t k = 0; k < rep.per_n.size(); ++k) {
    const CriticalMRow& row = rep.per_n[k];
    CHECK(row.n == n_grid[k]);
    CHECK(std::count(m_grid.begin(), m_grid.end(), row.m_star) == 1);
    double best = 0.0;
    std::size_t starred = 0;
    for (std::size_t j = 0; j < m_grid.size(); ++j) {
      const CriticalMCell& c = rep.cells[k * m_grid.size() + j];
      best = std::max(best, c.mean_auc);
      if (c.is_mstar) {
        ++starred;
        CHECK(c.m == row.m_star);
        CHECK(c.mean_auc >= row.plateau_auc - 0.01);
      }
    }
    CHECK(starred == 1);
    CHECK(row.plateau_auc == best);
    CHECK(row.exact_neg_auc > 0.5);
  }
  CHECK(rep.to_csv().rfind("n,m,mean_auc,se,is_mstar\n", 0) == 0);

  CHECK_THROWS_AS(critical_m_study(p, n_grid, m_grid, config, 0.0, 3, 71), UsageError);
  CHECK_THROWS_AS(critical_m_study(p, n_grid, m_grid, config, 0.01, 0, 71), UsageError);
}

TEST_CASE("risk training drives the retrieval shortfall to zero") {
  const ContrastiveProblem p = two_point();
  TrainConfig config;
  config.max_iters = 200'000;
  config.grad_tol = 1e-11;

  const ConsistencyReport rep =
      consistency_experiment(p, Disutility::entropy_risk(), PairwiseLoss::linear(), config);
  CHECK(std::abs(rep.reference - optimal_risk(p)) <= 1e-15);
  CHECK(std::abs(rep.optimum_auc - auc_optimum(p)) <= 1e-15);
  CHECK(rep.final_excess >= -1e-12);
  CHECK(rep.final_excess <= 1e-8);
  CHECK(rep.final_retrieval_gap <= 1e-6);
  CHECK(rep.maximizer_checked);
  CHECK(rep.maximizer_ok);
  REQUIRE(!rep.iter.empty());
  CHECK(rep.risk.size() == rep.iter.size());
  CHECK(rep.auc.size() == rep.iter.size());
  CHECK(rep.retrieval_gap.size() == rep.iter.size());
  for (std::size_t i = 0; i < rep.iter.size(); ++i) {
    if (i > 0) CHECK(rep.risk[i] <= rep.risk[i - 1] + 1e-12);
    CHECK(std::abs(rep.excess[i] - (rep.risk[i] - rep.reference)) <= 1e-15);
    CHECK(std::abs(rep.retrieval_gap[i] - (rep.optimum_auc - rep.auc[i])) <= 1e-15);
  }
  CHECK(rep.scorer.anchor_size == 2);
  CHECK(rep.to_csv().rfind("iter,risk,excess,auc,retrieval_gap\n", 0) == 0);

  // Pairs without a closed-form optimum self-reference the final risk.
  const ConsistencyReport mv = consistency_experiment(
      p, Disutility::mean_variance(), PairwiseLoss::softplus(), config);
  CHECK(mv.final_excess == 0.0);
  CHECK(mv.reference == mv.risk.back());
  CHECK(mv.maximizer_checked);

  // A custom starting point is honored.
  const Scorer init = Scorer::constant(2, 2, 0.3);
  const ConsistencyReport warm = consistency_experiment(
      p, Disutility::entropy_risk(), PairwiseLoss::linear(), config, &init);
  CHECK(warm.risk.front() == doctest::Approx(population_risk(p, init).value).epsilon(1e-12));
  CHECK(warm.final_excess <= 1e-8);
}

TEST_CASE("mode names round-trip") {
  for (SampleMode m : {SampleMode::Scrl, SampleMode::Sscrl})
    CHECK(sample_mode_from_string(to_string(m)) == m);
  for (SweepMode m : {SweepMode::InnerMScrl, SweepMode::InnerMSscrlBias,
                      SweepMode::InnerMSscrlMad, SweepMode::OuterN})
    CHECK(sweep_mode_from_string(to_string(m)) == m);
  CHECK(to_string(SampleMode::Sscrl) == "sscrl");
  CHECK(to_string(SweepMode::OuterN) == "outer_n");
  CHECK_THROWS_AS(sample_mode_from_string("bogus"), UsageError);
  CHECK_THROWS_AS(sweep_mode_from_string("bogus"), UsageError);
}
