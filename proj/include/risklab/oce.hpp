#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace risklab {

// Disutility for certainty-equivalent risk: nondecreasing, closed, convex,
// with phi(0) = 0 and 1 in the subdifferential at 0. Those two anchors force
// phi(t) >= t, which is what makes the resulting risk measure risk-averse.
enum class DisutilityKind { Identity, EntropyRisk, MeanVariance, CVaR };

struct Disutility {
  DisutilityKind kind = DisutilityKind::Identity;
  double alpha = 0.5;  // CVaR tail level, in (0,1)

  double phi(double t) const;
  // A nondecreasing subgradient selection (the derivative where smooth).
  double dphi(double t) const;
  // CVaR has a kink at 0; everything else is C1.
  bool smooth() const { return kind != DisutilityKind::CVaR; }
  // phi'' > 0 on the working interval (enables envelope gradients and the
  // uniqueness of the inner minimizer).
  bool strongly_convex_on(double lo, double hi) const;

  // Certified constants on [lo, hi], computed analytically per variant.
  double lipschitz(double lo, double hi) const;
  double strong_convexity(double lo, double hi) const;

  std::string name() const;

  static Disutility identity() { return {DisutilityKind::Identity, 0.0}; }
  static Disutility entropy_risk() { return {DisutilityKind::EntropyRisk, 0.0}; }
  static Disutility mean_variance() { return {DisutilityKind::MeanVariance, 0.0}; }
  static Disutility cvar(double alpha);
};

// Pairwise loss applied to score differences. All variants nondecreasing.
enum class PairwiseKind { Linear, Exponential, SoftPlus, SquaredHinge };

struct PairwiseLoss {
  PairwiseKind kind = PairwiseKind::Linear;

  double eval(double t) const;
  double deriv(double t) const;
  // Certified constants on [-2B, 2B].
  double lipschitz(double score_bound) const;
  double range_bound(double score_bound) const;

  std::string name() const;

  static PairwiseLoss linear() { return {PairwiseKind::Linear}; }
  static PairwiseLoss exponential() { return {PairwiseKind::Exponential}; }
  static PairwiseLoss softplus() { return {PairwiseKind::SoftPlus}; }
  static PairwiseLoss squared_hinge() { return {PairwiseKind::SquaredHinge}; }
};

struct OceResult {
  double value = 0.0;
  double mu_star = 0.0;
  double bracket_lo = 0.0;
  double bracket_hi = 0.0;
  std::size_t iterations = 0;
};

// min over mu of tau * sum_j w_j phi((z_j - mu)/tau) + mu. The bracket
// [min z, max z] over positive-weight entries always contains a minimizer:
// phi' >= 1 right of 0 and <= 1 left of 0, so the objective's derivative
// changes sign inside. Smooth phi: bisection on the derivative sign
// (EntropyRisk sign evaluated in log space to dodge exp overflow);
// CVaR: golden section on the value.
OceResult oce_weighted(const Disutility& phi, std::span<const double> values,
                       std::span<const double> weights, double tau);

// Uniform weights 1/m.
OceResult oce_empirical(const Disutility& phi, std::span<const double> samples,
                        double tau);

// |tau*log-mean-exp(z/tau) - (-tau + min_{|mu|<=2B} (tau/m) sum exp((z-mu)/tau) + mu)|
// with B = max|z|/2. Left side by stable reduction, right side by the same
// 1-D solver the OCE path uses; the two routes are independent.
double logsumexp_identity_check(std::span<const double> samples, double tau);

struct DroDual {
  double value = 0.0;
  std::vector<double> tilt;  // worst-case reweighting, a distribution
};

// max over distributions p of sum p_j z_j - tau * KL(p, weights), evaluated
// by plugging the exponential tilt p_j ∝ w_j exp(z_j/tau) into the primal
// objective (not by shortcutting to the log-sum-exp closed form).
DroDual dro_dual_kl(std::span<const double> values, std::span<const double> weights,
                    double tau);

// Generator of the KL divergence: t log t - t + 1 (value 1 at t = 0).
double kl_divergence_generator(double t);

// Brute-force simplex-grid maximum of sum p_j z_j - tau * D(p, weights)
// where D(p,w) = sum_j w_j gen(p_j/w_j). Oracle only; m <= 4.
double dro_primal_grid(const std::function<double(double)>& divergence_generator,
                       std::span<const double> values,
                       std::span<const double> weights, double tau,
                       double grid_step);

}  // namespace risklab
