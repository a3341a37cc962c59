#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "risklab/oce.hpp"
#include "risklab/problem.hpp"
#include "risklab/sampling.hpp"
#include "risklab/scorer.hpp"
#include "risklab/trainer.hpp"

namespace risklab {

// Which sampling scheme generates the empirical risks under study.
enum class SampleMode { Scrl, Sscrl };

// What a scaling study sweeps and which error statistic it tracks.
//   InnerMScrl      signed inner bias, per-anchor negatives, exact outer
//   InnerMSscrlBias signed inner bias, shared negatives, exact outer
//   InnerMSscrlMad  mean absolute inner error, shared negatives, exact outer
//   OuterN          mean absolute outer error, exact inner values
enum class SweepMode { InnerMScrl, InnerMSscrlBias, InnerMSscrlMad, OuterN };

std::string to_string(SampleMode mode);
std::string to_string(SweepMode mode);
SampleMode sample_mode_from_string(const std::string& name);  // UsageError on miss
SweepMode sweep_mode_from_string(const std::string& name);    // UsageError on miss

// Monte-Carlo split of the generalization gap. Inner statistics replace the
// outer average by the exact expectation over (x, y); the outer statistic
// replaces every inner estimate by its exact per-pair value. All three are
// measured on independent draws, so the triangle inequality
// total <= inner_mad + outer_mad holds up to the reported noise.
struct DecompositionReport {
  SampleMode mode = SampleMode::Scrl;
  std::size_t n = 0;
  std::size_t m = 0;
  std::size_t trials = 0;
  double population = 0.0;  // exact risk, reference for every gap below

  double total_gap = 0.0;  // mean |population - fully sampled risk|
  double total_gap_se = 0.0;
  double inner_signed_bias = 0.0;  // mean (population - exact-outer estimate)
  double inner_bias_se = 0.0;
  double inner_mad = 0.0;  // mean |population - exact-outer estimate|
  double inner_mad_se = 0.0;
  double outer_mad = 0.0;  // mean |population - n-pair average of exact values|
  double outer_mad_se = 0.0;

  // inner_mad + outer_mad + 3*(rss of the standard errors) - total_gap;
  // nonnegative on every healthy run.
  double triangle_slack() const;
  std::string to_json() const;
};

// Log-log regression of a Monte-Carlo error statistic against the swept
// sample size. The fit never extrapolates; r_squared below 0.9 marks the
// run inconclusive instead of asserting the slope.
struct SlopeFit {
  SweepMode mode = SweepMode::InnerMScrl;
  std::vector<std::size_t> grid;
  std::vector<double> mean_err;
  std::vector<double> se;
  std::size_t trials = 0;  // per grid point
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
  bool conclusive = false;  // r_squared >= 0.9

  std::string to_csv() const;  // sweep_var,mean_err,se,trials
  std::string to_json() const;
};

// sup over a finite hypothesis set of |population - empirical|, per trial.
struct GapReport {
  std::size_t trials = 0;
  double mean = 0.0;
  double q50 = 0.0;
  double q90 = 0.0;
  double max_gap = 0.0;
  std::vector<double> per_hypothesis_mean;  // |set| entries, set order

  std::string to_json() const;
};

struct CalibrationRow {
  std::uint64_t problem_seed = 0;
  std::uint64_t scorer_seed = 0;  // 0 marks an injected optimal-scorer control
  double lhs = 0.0;               // retrieval shortfall
  double rhs = 0.0;               // sqrt(2/tau * excess risk)
  double slack = 0.0;             // rhs - lhs
};

struct CalibrationSweepResult {
  std::vector<CalibrationRow> rows;
  double min_slack = 0.0;
  double median_slack = 0.0;

  std::string to_csv() const;  // problem_seed,scorer_seed,lhs,rhs,slack
  std::string to_json() const;
};

struct CriticalMCell {
  std::size_t n = 0;
  std::size_t m = 0;
  double mean_auc = 0.0;
  double se = 0.0;
  bool is_mstar = false;
};

// Per-n summary of the saturation study.
struct CriticalMRow {
  std::size_t n = 0;
  std::size_t m_star = 0;     // smallest m within delta of the plateau
  double plateau_auc = 0.0;   // best mean AUC over the m grid
  double exact_neg_auc = 0.0; // same pairs trained against exact negatives
  bool between_sqrt_n_and_n = false;
};

struct CriticalMReport {
  std::vector<std::size_t> n_grid;
  std::vector<std::size_t> m_grid;
  std::vector<CriticalMCell> cells;  // n-major, |n_grid| x |m_grid|
  std::vector<CriticalMRow> per_n;
  double delta = 0.005;
  std::size_t seeds = 0;

  std::string to_csv() const;  // n,m,mean_auc,se,is_mstar
  std::string to_json() const;
};

// Population-risk training trace paired with the downstream retrieval
// shortfall at every recorded iterate.
struct ConsistencyReport {
  std::vector<std::size_t> iter;
  std::vector<double> risk;
  std::vector<double> excess;         // risk - reference
  std::vector<double> auc;
  std::vector<double> retrieval_gap;  // optimum_auc - auc
  double reference = 0.0;   // closed-form optimum when known, else final risk
  double optimum_auc = 0.0;
  double final_excess = 0.0;
  double final_retrieval_gap = 0.0;
  bool maximizer_checked = false;  // ran only when final_excess <= 1e-8
  bool maximizer_ok = false;
  Scorer scorer;  // terminal iterate

  std::string to_csv() const;  // iter,risk,excess,auc,retrieval_gap
  std::string to_json() const;
};

// Splits the gap between the exact risk and its (n, m)-sampled estimate.
// Trials run in parallel over derived per-trial seeds; results are identical
// for any worker count. Throws InsufficientTrials below 100 trials and
// HeterogeneousNegatives for shared-negative mode on problems whose
// negative rows differ.
DecompositionReport inner_outer_decomposition(
    const ContrastiveProblem& problem, const Scorer& scorer, SampleMode mode,
    std::size_t n, std::size_t m, std::size_t trials, std::uint64_t seed,
    const Disutility& phi = Disutility::entropy_risk(),
    const PairwiseLoss& ell = PairwiseLoss::linear());

// Fits the chosen error statistic against a strictly increasing grid of at
// least 5 sizes (m for inner sweeps, n for the outer sweep). Throws
// InsufficientTrials when any point's relative standard error exceeds 10%
// or a signed mean fails to resolve above the noise.
SlopeFit scaling_study(const ContrastiveProblem& problem, const Scorer& scorer,
                       SweepMode sweep, std::span<const std::size_t> grid,
                       std::size_t trials, std::uint64_t seed,
                       const Disutility& phi = Disutility::entropy_risk(),
                       const PairwiseLoss& ell = PairwiseLoss::linear());

// Per-trial max over the hypothesis set of |population - empirical| on one
// shared (n, m) sample. Draws coincide with inner_outer_decomposition's
// total-gap draws for the same (seed, trial), so a singleton set reproduces
// the decomposition's total gap exactly.
GapReport generalization_gap(const ContrastiveProblem& problem,
                             std::span<const Scorer> hypotheses, SampleMode mode,
                             std::size_t n, std::size_t m, std::size_t trials,
                             std::uint64_t seed,
                             const Disutility& phi = Disutility::entropy_risk(),
                             const PairwiseLoss& ell = PairwiseLoss::linear());

// K random bounded tabular scorers plus the optimal scorer and a
// population-trained scorer: the registered stand-in for a sup over an
// uncountable hypothesis class (reported gaps lower-bound the true sup).
std::vector<Scorer> default_hypothesis_set(const ContrastiveProblem& problem,
                                           std::size_t random_count,
                                           std::uint64_t seed,
                                           const TrainConfig& config = {});

// Random problems x random scorers, one retrieval-vs-risk inequality row
// each. include_controls appends one optimal-scorer row per problem with
// scorer_seed 0.
CalibrationSweepResult calibration_sweep(std::size_t problem_count,
                                         std::size_t scorers_per_problem,
                                         std::uint64_t seed,
                                         bool include_controls = false);

// Shared-negative training on a (n, m) grid: per cell, train a tabular
// scorer on the empirical risk and average its population AUC over
// `seeds` repetitions. Negative lists are nested prefixes across the m
// grid, so larger m reuses the smaller draws. m*(n) is the smallest m whose
// mean AUC is within delta of that n's best mean AUC.
CriticalMReport critical_m_study(const ContrastiveProblem& problem,
                                 std::span<const std::size_t> n_grid,
                                 std::span<const std::size_t> m_grid,
                                 const TrainConfig& config, double delta,
                                 std::size_t seeds, std::uint64_t seed);

// The synthetic family the saturation study ships with: 8 anchors x 16
// items, well-separated density-ratio levels per anchor, one shared item
// marginal (so shared-negative sampling applies).
ContrastiveProblem default_critical_problem();

// Trains on the population risk from a zero (or given) init and reports the
// paired (excess risk, retrieval shortfall) trace. The terminal iterate is
// checked against the exact maximizer characterization when its excess is
// at most 1e-8.
ConsistencyReport consistency_experiment(const ContrastiveProblem& problem,
                                         const Disutility& phi,
                                         const PairwiseLoss& ell,
                                         const TrainConfig& config,
                                         const Scorer* init = nullptr);

}  // namespace risklab
