#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "risklab/oce.hpp"
#include "risklab/problem.hpp"
#include "risklab/sampling.hpp"
#include "risklab/scorer.hpp"

namespace risklab {

// A risk evaluation plus the convex decomposition it was aggregated from:
// value == sum(weights[i] * contributions[i]) within 1e-12. Population
// risks decompose per anchor (weights = anchor_marginal); empirical risks
// decompose per sampled instance (weights = 1/n).
struct RiskValue {
  double value = 0.0;
  std::vector<double> contributions;
  std::vector<double> weights;
  struct Meta {
    std::string kind;
    std::string phi;
    std::string ell;
    double tau = 0.0;
  } meta;

  // {kind, phi, ell, tau, value, contributions}
  std::string to_json() const;
};

// L(s) = E_x E_{y~pos} tau * log E_{y'~neg} exp((s(x,y') - s(x,y))/tau),
// evaluated as an exact finite sum with stable log-sum-exp.
RiskValue population_risk(const ContrastiveProblem& problem, const Scorer& scorer);

// General form: per (x,y) pair the inner tau-scaled OCE of the pairwise
// losses ell(s(x,y') - s(x,y)) under the anchor's neg_cond row, aggregated
// over pos_cond and anchor_marginal. (EntropyRisk, Linear) reproduces
// population_risk.
RiskValue population_oce_risk(const ContrastiveProblem& problem, const Scorer& scorer,
                              const Disutility& phi, const PairwiseLoss& ell);

// L* = tau * E_x E_{y~pos} log(neg/pos); the global minimum of L.
double optimal_risk(const ContrastiveProblem& problem);

struct OptimalScorerResult {
  Scorer scorer;
  // Flattened x*|Y|+y cells whose positive and negative mass are both zero;
  // their log-ratio is indeterminate and they carry the finite sentinel
  // (min finite score - 10*tau), as do genuine zero-ratio cells.
  std::vector<std::size_t> flagged;
};

// s(x,y) = tau*log(pos/neg) + g(x). Empty g means zero. Minimizes L and
// maximizes the retrieval criterion for every g.
OptimalScorerResult optimal_scorer(const ContrastiveProblem& problem,
                                   std::span<const double> g = {});

struct KlExcess {
  double excess = 0.0;    // L(s) - L*
  double kl_term = 0.0;   // tau * E_x KL(pos_x || tilted q_x)
  double deviation = 0.0; // |excess - kl_term|
};

// Both sides of the excess-risk identity, computed independently:
// q_x(y) proportional to neg(y)*exp(s(x,y)/tau).
KlExcess kl_excess_identity(const ContrastiveProblem& problem, const Scorer& scorer);

// (1/n) sum_i OCE over the instance's m pairwise values, uniform inner
// weights. Contributions are per instance.
RiskValue empirical_scrl_risk(const ScrlSample& sample, const Scorer& scorer,
                              const Disutility& phi, const PairwiseLoss& ell, double tau);

// Same aggregation with every anchor scored against the shared list.
RiskValue empirical_sscrl_risk(const SscrlSample& sample, const Scorer& scorer,
                               const Disutility& phi, const PairwiseLoss& ell, double tau);

// Sum of the two directional risks of one joint: the y->x direction scores
// with the transposed scorer.
double symmetric_sscrl_risk(const ContrastiveProblem& problem_xy,
                            const ContrastiveProblem& problem_yx, const Scorer& scorer);

// d(risk)/d s(x,y) as a flattened |X| x |Y| matrix, via the envelope
// theorem at the inner minimizer. CVaR is rejected (kinked phi).
std::vector<double> risk_gradient(const ContrastiveProblem& problem, const Scorer& scorer,
                                  const Disutility& phi, const PairwiseLoss& ell);
std::vector<double> risk_gradient(const ScrlSample& sample, const Scorer& scorer,
                                  const Disutility& phi, const PairwiseLoss& ell, double tau);
std::vector<double> risk_gradient(const SscrlSample& sample, const Scorer& scorer,
                                  const Disutility& phi, const PairwiseLoss& ell, double tau);

namespace detail {

// Common core of the population and collapsed-empirical objectives:
// sum over pairs of pair_weight(x,y) * OCE_{neg row x}(ell(s(x,.)-s(x,y))).
// pair_weight sums to 1; neg rows are per-anchor distributions.
struct WeightedPairs {
  std::size_t anchor_size = 0;
  std::size_t item_size = 0;
  double tau = 0.0;
  std::vector<double> pair_weight;  // |X| x |Y|
  std::vector<double> neg_weight;   // |X| x |Y|
};

WeightedPairs pairs_from_problem(const ContrastiveProblem& problem);
// Collapses a shared-negative sample to pair frequencies and negative
// counts / m; algebraically the same objective as the uncollapsed sum.
WeightedPairs pairs_from_sscrl(const SscrlSample& sample, double tau);

// One pass over the pairs filling whichever of value/grad is non-null.
// (EntropyRisk, Linear) takes the closed tilt form (the per-pair inner
// minimizer is mu* = tau*lse - s(x,y), shared per anchor); everything else
// goes through the envelope theorem at the solved mu*.
void weighted_pairs_eval(const WeightedPairs& w, const Scorer& scorer,
                         const Disutility& phi, const PairwiseLoss& ell,
                         double* value, std::vector<double>* grad,
                         std::vector<double>* anchor_contributions = nullptr);

double weighted_pairs_value(const WeightedPairs& w, const Scorer& scorer,
                            const Disutility& phi, const PairwiseLoss& ell,
                            std::vector<double>* anchor_contributions = nullptr);
std::vector<double> weighted_pairs_gradient(const WeightedPairs& w, const Scorer& scorer,
                                            const Disutility& phi, const PairwiseLoss& ell);

}  // namespace detail

}  // namespace risklab
