#pragma once

#include <cstddef>
#include <string>
#include <utility>
#include <vector>

#include "risklab/oce.hpp"
#include "risklab/problem.hpp"
#include "risklab/risks.hpp"
#include "risklab/scorer.hpp"

namespace risklab {

struct TrainConfig {
  enum class StepRule { Constant, InvSqrt };
  StepRule step_rule = StepRule::Constant;
  // <= 0 picks the default 0.5 * tau, safe for the standard population risk
  // whose per-anchor curvature is at most 2 / tau inside the box.
  double step = 0.0;
  std::size_t max_iters = 2'000'000;
  // Stop when the projected-gradient mapping norm (L2) drops below this.
  double grad_tol = 1e-11;
  // Projection box [-B, B] on tabular scores; <= 0 picks 5 * tau * max|log
  // density ratio| (the empirical analog uses the collapsed frequencies).
  double bound = 0.0;
  std::size_t trace_stride = 1000;
};

struct TrainTrace {
  std::vector<std::size_t> iter;
  std::vector<double> risk;
  std::vector<double> grad_norm;
  std::vector<double> auc;  // parallel to iter when downstream tracking is on
  std::size_t iterations = 0;
  double final_risk = 0.0;
  double final_grad_norm = 0.0;
  // True when no accepted step raised the risk by more than 1e-12 (certified
  // for the standard population risk under the default constant step).
  bool monotone = true;
  double wall_seconds = 0.0;

  // Columns iter,risk,grad_norm,auc; the auc field is empty when untracked.
  std::string to_csv() const;
};

// Projected gradient descent on the population OCE risk over the init's
// scorer shape. Tabular scorers are clipped into the box each step;
// LinearEmbed scorers take plain (unprojected) chain-rule steps and carry a
// descent-only contract. record_auc pairs each recorded iterate with its
// population retrieval score.
std::pair<Scorer, TrainTrace> minimize_population(const ContrastiveProblem& problem,
                                                  const Disutility& phi,
                                                  const PairwiseLoss& ell,
                                                  const TrainConfig& config,
                                                  const Scorer& init,
                                                  bool record_auc = false);

// Same algorithm on the empirical objective; deterministic given
// (sample, config). The shared-negative variant trains on the collapsed
// pair/negative frequencies (algebraically the same objective).
std::pair<Scorer, TrainTrace> minimize_empirical(const ScrlSample& sample,
                                                 const Scorer& init,
                                                 const Disutility& phi,
                                                 const PairwiseLoss& ell, double tau,
                                                 const TrainConfig& config);
std::pair<Scorer, TrainTrace> minimize_empirical(const SscrlSample& sample,
                                                 const Scorer& init,
                                                 const Disutility& phi,
                                                 const PairwiseLoss& ell, double tau,
                                                 const TrainConfig& config);

// Engine over an explicit weighted-pair objective. auc_problem, when given,
// turns on paired downstream AUC recording against that problem.
std::pair<Scorer, TrainTrace> minimize_weighted(const detail::WeightedPairs& objective,
                                                const Disutility& phi,
                                                const PairwiseLoss& ell,
                                                const TrainConfig& config,
                                                const Scorer& init,
                                                const ContrastiveProblem* auc_problem = nullptr);

// Max discrepancy between the analytic gradient and central finite
// differences over every tabular coordinate: relative where the larger
// magnitude is at least 1e-8, absolute below that. h must lie in
// [1e-7, 1e-3].
double finite_diff_certify(const ContrastiveProblem& problem, const Scorer& scorer,
                           const Disutility& phi, const PairwiseLoss& ell, double h);
double finite_diff_certify(const detail::WeightedPairs& objective, const Scorer& scorer,
                           const Disutility& phi, const PairwiseLoss& ell, double h);
double finite_diff_certify(const ScrlSample& sample, const Scorer& scorer,
                           const Disutility& phi, const PairwiseLoss& ell, double tau,
                           double h);

}  // namespace risklab
