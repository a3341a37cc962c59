#pragma once

#include <cstddef>
#include <limits>
#include <vector>

#include "risklab/oce.hpp"
#include "risklab/problem.hpp"
#include "risklab/scorer.hpp"

namespace risklab {

// Retrieval criterion E(s) = P(positive outscores negative) + tie mass / 2,
// split into its two indicator terms.
struct AucBreakdown {
  double strict_win = 0.0;
  double tie = 0.0;
  double score = 0.0;  // strict_win + tie / 2
};

// Exact enumeration over (x, y ~ pos, y' ~ neg); score differences within
// 1e-12 count as ties.
AucBreakdown auc_score(const ContrastiveProblem& problem, const Scorer& scorer);

// Supremum E* = (1/4) E_x E_{y,y' ~ neg x neg} [r(y) + r(y') + |r(y) - r(y')|]
// with r the positive/negative density ratio; equals E at any optimal scorer.
double auc_optimum(const ContrastiveProblem& problem);

struct MaximizerCheck {
  bool ok = true;
  // First violating triple when !ok: ratios at (x,y) and (x,y') differ by
  // more than tol yet the scores are not strictly concordant.
  std::size_t x = 0;
  std::size_t y = 0;
  std::size_t y_prime = 0;
  double ratio_gap = 0.0;
  double score_gap = 0.0;
};

// Concordance test: for every anchor and every (pos-support, neg-support)
// item pair with |r - r'| > tol, the score difference must have the same
// sign and exceed tol in magnitude.
MaximizerCheck is_auc_maximizer(const ContrastiveProblem& problem,
                                const Scorer& scorer, double tol);

struct CalibrationTriple {
  double lhs = 0.0;    // auc_optimum - auc_score
  double rhs = 0.0;    // sqrt(max(0, 2/tau * excess risk))
  double slack = 0.0;  // rhs - lhs, contractually >= -1e-9
};

CalibrationTriple calibration_bound(const ContrastiveProblem& problem,
                                    const Scorer& scorer);

struct ExcessDiagnostic {
  double retrieval_gap = 0.0;  // E* - E(s)
  double excess_oce = 0.0;     // OCE risk minus the reference below
  double reference = 0.0;
};

// Diagnostic pair (no inequality asserted): the retrieval gap next to the
// general-form excess. When reference is NaN it defaults to the exact
// optimum for (EntropyRisk, Linear) and otherwise to the OCE risk of the
// zero-gauge log-ratio scorer, which the trained family may undercut.
ExcessDiagnostic excess_bounds_general(
    const ContrastiveProblem& problem, const Scorer& scorer,
    const Disutility& phi, const PairwiseLoss& ell,
    double reference = std::numeric_limits<double>::quiet_NaN());

struct ZeroShotPosterior {
  std::vector<double> raw;         // literal formula, one entry per class
  std::vector<double> normalized;  // raw rescaled to sum to 1
};

// P(c | x) proportional to E_{y~D_Y(c)} [p_Y(y) exp(s(x,y)/tau)] divided by
// E_{y~p_Y} exp(s(x,y)/tau), with p_Y the shared negative row.
ZeroShotPosterior zero_shot_posterior(const ContrastiveProblem& problem,
                                      const ClassStructure& classes,
                                      const Scorer& scorer, std::size_t x);

}  // namespace risklab
