#include "risklab/oce.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "risklab/errors.hpp"
#include "risklab/numerics.hpp"

namespace risklab {

// ---------------------------------------------------------------- Disutility

Disutility Disutility::cvar(double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0))
    throw Error("cvar: alpha must lie in (0,1)");
  return {DisutilityKind::CVaR, alpha};
}

double Disutility::phi(double t) const {
  switch (kind) {
    case DisutilityKind::Identity:
      return t;
    case DisutilityKind::EntropyRisk:
      return std::expm1(t);
    case DisutilityKind::MeanVariance:
      // Quadratic branch for t >= -1; constant -1/2 below keeps the function
      // nondecreasing, closed and convex without touching the anchors at 0.
      return t >= -1.0 ? 0.5 * t * t + t : -0.5;
    case DisutilityKind::CVaR:
      return t > 0.0 ? t / alpha : 0.0;
  }
  return 0.0;
}

double Disutility::dphi(double t) const {
  switch (kind) {
    case DisutilityKind::Identity:
      return 1.0;
    case DisutilityKind::EntropyRisk:
      return std::exp(t);
    case DisutilityKind::MeanVariance:
      return t >= -1.0 ? t + 1.0 : 0.0;
    case DisutilityKind::CVaR:
      // Subgradient selection at the kink: the right derivative.
      return t >= 0.0 ? 1.0 / alpha : 0.0;
  }
  return 0.0;
}

bool Disutility::strongly_convex_on(double lo, double hi) const {
  return strong_convexity(lo, hi) > 0.0;
}

double Disutility::lipschitz(double lo, double hi) const {
  switch (kind) {
    case DisutilityKind::Identity:
      return 1.0;
    case DisutilityKind::EntropyRisk:
      return std::exp(hi);
    case DisutilityKind::MeanVariance:
      return std::max(0.0, hi + 1.0);
    case DisutilityKind::CVaR:
      return 1.0 / alpha;
  }
  (void)lo;
  return 0.0;
}

double Disutility::strong_convexity(double lo, double hi) const {
  switch (kind) {
    case DisutilityKind::Identity:
      return 0.0;
    case DisutilityKind::EntropyRisk:
      return std::exp(lo);  // phi'' = exp is minimized at the left end
    case DisutilityKind::MeanVariance:
      return lo >= -1.0 ? 1.0 : 0.0;  // flat tail kills curvature below -1
    case DisutilityKind::CVaR:
      return 0.0;
  }
  (void)hi;
  return 0.0;
}

std::string Disutility::name() const {
  switch (kind) {
    case DisutilityKind::Identity:
      return "identity";
    case DisutilityKind::EntropyRisk:
      return "entropy_risk";
    case DisutilityKind::MeanVariance:
      return "mean_variance";
    case DisutilityKind::CVaR:
      return "cvar(" + std::to_string(alpha) + ")";
  }
  return "?";
}

// -------------------------------------------------------------- PairwiseLoss

double PairwiseLoss::eval(double t) const {
  switch (kind) {
    case PairwiseKind::Linear:
      return t;
    case PairwiseKind::Exponential:
      return std::exp(t);
    case PairwiseKind::SoftPlus:
      // log(1 + e^t) without overflow on either side.
      return t > 0.0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t));
    case PairwiseKind::SquaredHinge: {
      const double u = std::max(0.0, 1.0 + t);
      return u * u;
    }
  }
  return 0.0;
}

double PairwiseLoss::deriv(double t) const {
  switch (kind) {
    case PairwiseKind::Linear:
      return 1.0;
    case PairwiseKind::Exponential:
      return std::exp(t);
    case PairwiseKind::SoftPlus:
      return 1.0 / (1.0 + std::exp(-t));
    case PairwiseKind::SquaredHinge:
      return 2.0 * std::max(0.0, 1.0 + t);
  }
  return 0.0;
}

double PairwiseLoss::lipschitz(double score_bound) const {
  const double b = 2.0 * score_bound;
  switch (kind) {
    case PairwiseKind::Linear:
      return 1.0;
    case PairwiseKind::Exponential:
      return std::exp(b);
    case PairwiseKind::SoftPlus:
      return 1.0 / (1.0 + std::exp(-b));
    case PairwiseKind::SquaredHinge:
      return 2.0 * (1.0 + b);
  }
  return 0.0;
}

double PairwiseLoss::range_bound(double score_bound) const {
  const double b = 2.0 * score_bound;
  switch (kind) {
    case PairwiseKind::Linear:
      return b;
    case PairwiseKind::Exponential:
      return std::exp(b);
    case PairwiseKind::SoftPlus:
      return eval(b);
    case PairwiseKind::SquaredHinge: {
      const double u = 1.0 + b;
      return u * u;
    }
  }
  return 0.0;
}

std::string PairwiseLoss::name() const {
  switch (kind) {
    case PairwiseKind::Linear:
      return "linear";
    case PairwiseKind::Exponential:
      return "exponential";
    case PairwiseKind::SoftPlus:
      return "softplus";
    case PairwiseKind::SquaredHinge:
      return "squared_hinge";
  }
  return "?";
}

// ------------------------------------------------------------ 1-D minimizer

namespace {

constexpr double kMuTol = 1e-12;

struct ScalarMin {
  double mu = 0.0;
  double value = 0.0;
  std::size_t iterations = 0;
};

// Bisection on the derivative sign of a convex objective over [lo, hi].
// `deriv_nonneg(mu)` must be monotone in mu (true once true forever).
template <class DerivNonneg, class Value>
ScalarMin bisect_derivative(double lo, double hi, DerivNonneg&& deriv_nonneg,
                            Value&& value) {
  ScalarMin out;
  double a = lo, b = hi;
  while (b - a > kMuTol) {
    const double mid = 0.5 * (a + b);
    if (mid <= a || mid >= b) break;  // interval at fp resolution
    if (deriv_nonneg(mid))
      b = mid;
    else
      a = mid;
    ++out.iterations;
  }
  out.mu = 0.5 * (a + b);
  out.value = value(out.mu);
  return out;
}

// Golden-section search for nonsmooth convex objectives (value calls only).
template <class Value>
ScalarMin golden_section(double lo, double hi, Value&& value) {
  constexpr double inv_phi = 0.6180339887498949;
  ScalarMin out;
  double a = lo, b = hi;
  double x1 = b - inv_phi * (b - a);
  double x2 = a + inv_phi * (b - a);
  double f1 = value(x1), f2 = value(x2);
  double best_mu = f1 <= f2 ? x1 : x2;
  double best_val = std::min(f1, f2);
  while (b - a > kMuTol) {
    if (f1 <= f2) {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - inv_phi * (b - a);
      f1 = value(x1);
    } else {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + inv_phi * (b - a);
      f2 = value(x2);
    }
    if (f1 < best_val) {
      best_val = f1;
      best_mu = x1;
    }
    if (f2 < best_val) {
      best_val = f2;
      best_mu = x2;
    }
    ++out.iterations;
    if (out.iterations > 256) break;
  }
  out.mu = best_mu;
  out.value = best_val;
  return out;
}

void check_oce_inputs(std::span<const double> values,
                      std::span<const double> weights, double tau) {
  if (values.size() != weights.size())
    throw DimensionMismatch("oce: values and weights lengths differ");
  if (values.empty()) throw NonFiniteInput("oce: empty sample");
  if (!(tau > 0.0) || !std::isfinite(tau))
    throw NonFiniteInput("oce: tau must be strictly positive");
  KahanSum wsum;
  for (std::size_t j = 0; j < values.size(); ++j) {
    if (!std::isfinite(values[j])) throw NonFiniteInput("oce: non-finite value");
    if (!(weights[j] >= 0.0)) throw NotADistribution("oce: negative weight");
    wsum.add(weights[j]);
  }
  if (std::fabs(wsum.value() - 1.0) > 1e-9)
    throw NotADistribution("oce: weights do not sum to 1");
}

}  // namespace

OceResult oce_weighted(const Disutility& phi, std::span<const double> values,
                       std::span<const double> weights, double tau) {
  check_oce_inputs(values, weights, tau);

  // Bracket over positive-weight entries only: values outside the carried
  // support must not widen the search (a minimizer lies within the range
  // of the carried values for any admissible disutility).
  double mn = std::numeric_limits<double>::infinity();
  double mx = -mn;
  for (std::size_t j = 0; j < values.size(); ++j) {
    if (weights[j] <= 0.0) continue;
    mn = std::min(mn, values[j]);
    mx = std::max(mx, values[j]);
  }
  if (!std::isfinite(mn)) throw NotADistribution("oce: all weights are zero");

  OceResult out;
  out.bracket_lo = mn;
  out.bracket_hi = mx;

  // Degenerate bracket: the certainty equivalent of a constant is itself.
  if (mx - mn <= 0.0) {
    out.value = mn;
    out.mu_star = mn;
    return out;
  }

  const auto objective = [&](double mu) {
    KahanSum acc;
    for (std::size_t j = 0; j < values.size(); ++j) {
      if (weights[j] <= 0.0) continue;
      acc.add(weights[j] * phi.phi((values[j] - mu) / tau));
    }
    return tau * acc.value() + mu;
  };

  switch (phi.kind) {
    case DisutilityKind::Identity: {
      // Objective is flat in mu; report the weighted mean and the midpoint.
      KahanSum mean;
      for (std::size_t j = 0; j < values.size(); ++j)
        mean.add(weights[j] * values[j]);
      out.value = mean.value();
      out.mu_star = 0.5 * (mn + mx);
      return out;
    }
    case DisutilityKind::EntropyRisk: {
      // Derivative sign via log-space: 1 - sum w exp((z-mu)/tau) >= 0 iff
      // the weighted log-sum-exp of (z-mu)/tau is <= 0. No overflow even
      // when (max z - mu)/tau is in the hundreds.
      std::vector<double> t(values.size());
      const auto deriv_nonneg = [&](double mu) {
        for (std::size_t j = 0; j < values.size(); ++j) t[j] = (values[j] - mu) / tau;
        return log_sum_exp_weighted(t, weights) <= 0.0;
      };
      const auto value = [&](double mu) {
        for (std::size_t j = 0; j < values.size(); ++j) t[j] = (values[j] - mu) / tau;
        return tau * std::expm1(log_sum_exp_weighted(t, weights)) + mu;
      };
      const ScalarMin m = bisect_derivative(mn, mx, deriv_nonneg, value);
      out.mu_star = m.mu;
      out.value = m.value;
      out.iterations = m.iterations;
      return out;
    }
    case DisutilityKind::MeanVariance: {
      const auto deriv_nonneg = [&](double mu) {
        KahanSum s;
        for (std::size_t j = 0; j < values.size(); ++j) {
          if (weights[j] <= 0.0) continue;
          s.add(weights[j] * phi.dphi((values[j] - mu) / tau));
        }
        return s.value() <= 1.0;
      };
      const ScalarMin m = bisect_derivative(mn, mx, deriv_nonneg, objective);
      out.mu_star = m.mu;
      out.value = m.value;
      out.iterations = m.iterations;
      return out;
    }
    case DisutilityKind::CVaR: {
      const ScalarMin m = golden_section(mn, mx, objective);
      out.mu_star = m.mu;
      out.value = m.value;
      out.iterations = m.iterations;
      return out;
    }
  }
  throw Error("oce_weighted: unreachable");
}

OceResult oce_empirical(const Disutility& phi, std::span<const double> samples,
                        double tau) {
  std::vector<double> w(samples.size(),
                        1.0 / static_cast<double>(samples.size()));
  return oce_weighted(phi, samples, w, tau);
}

double logsumexp_identity_check(std::span<const double> samples, double tau) {
  if (samples.empty()) throw NonFiniteInput("identity check: empty sample");
  const double lhs = log_mean_exp(samples, tau);

  double amax = 0.0;
  for (double z : samples) amax = std::max(amax, std::fabs(z));
  const double two_b = amax;  // bracket |mu| <= 2B with B = max|z|/2

  // Minimize (tau/m) sum exp((z-mu)/tau) + mu on [-2B, 2B] with the same
  // bisection machinery; the derivative sign check runs in log space.
  const double logm = std::log(static_cast<double>(samples.size()));
  std::vector<double> t(samples.size());
  const auto deriv_nonneg = [&](double mu) {
    for (std::size_t j = 0; j < samples.size(); ++j) t[j] = (samples[j] - mu) / tau;
    return log_sum_exp(t) - logm <= 0.0;
  };
  const auto value = [&](double mu) {
    for (std::size_t j = 0; j < samples.size(); ++j) t[j] = (samples[j] - mu) / tau;
    return tau * std::exp(log_sum_exp(t) - logm) + mu;
  };

  ScalarMin m = bisect_derivative(-two_b, two_b, deriv_nonneg, value);
  const double rhs = -tau + m.value;
  return std::fabs(lhs - rhs);
}

DroDual dro_dual_kl(std::span<const double> values,
                    std::span<const double> weights, double tau) {
  check_oce_inputs(values, weights, tau);
  const double neg_inf = -std::numeric_limits<double>::infinity();

  double m = neg_inf;
  for (std::size_t j = 0; j < values.size(); ++j)
    if (weights[j] > 0.0) m = std::max(m, values[j]);
  if (m == neg_inf) throw NotADistribution("dro_dual_kl: all weights zero");

  std::vector<double> shifted(values.size());
  for (std::size_t j = 0; j < values.size(); ++j)
    shifted[j] = (values[j] - m) / tau;
  const double log_s = log_sum_exp_weighted(shifted, weights);

  DroDual out;
  out.tilt.assign(values.size(), 0.0);
  std::vector<double> log_tilt(values.size(), neg_inf);
  for (std::size_t j = 0; j < values.size(); ++j) {
    if (weights[j] <= 0.0) continue;
    log_tilt[j] = std::log(weights[j]) + shifted[j] - log_s;
    out.tilt[j] = std::exp(log_tilt[j]);
  }

  // Evaluate the primal objective at the tilt: sum p z - tau sum p log(p/w).
  // Equality with tau*log sum w exp(z/tau) is a theorem, not an assignment;
  // callers check it.
  KahanSum lin, kl;
  for (std::size_t j = 0; j < values.size(); ++j) {
    if (out.tilt[j] <= 0.0) continue;
    lin.add(out.tilt[j] * values[j]);
    kl.add(out.tilt[j] * (log_tilt[j] - std::log(weights[j])));
  }
  out.value = lin.value() - tau * kl.value();
  return out;
}

double kl_divergence_generator(double t) {
  if (t < 0.0) return std::numeric_limits<double>::infinity();
  if (t == 0.0) return 1.0;
  return t * std::log(t) - t + 1.0;
}

double dro_primal_grid(const std::function<double(double)>& divergence_generator,
                       std::span<const double> values,
                       std::span<const double> weights, double tau,
                       double grid_step) {
  check_oce_inputs(values, weights, tau);
  const std::size_t m = values.size();
  if (m > 4) throw SimplexTooLarge("dro_primal_grid: m > 4");
  if (!(grid_step > 0.0) || grid_step > 1e-2)
    throw Error("dro_primal_grid: grid_step must lie in (0, 1e-2]");

  const std::size_t K = static_cast<std::size_t>(std::llround(1.0 / grid_step));
  const double neg_inf = -std::numeric_limits<double>::infinity();

  // Per-coordinate tables: the objective at p = (k_1/K, ..., k_m/K) is the
  // sum of independent single-coordinate terms, so the grid sweep reduces
  // to table adds.
  std::vector<std::vector<double>> table(m, std::vector<double>(K + 1));
  for (std::size_t j = 0; j < m; ++j) {
    for (std::size_t k = 0; k <= K; ++k) {
      const double p = static_cast<double>(k) / static_cast<double>(K);
      if (weights[j] == 0.0) {
        table[j][k] = (k == 0) ? 0.0 : neg_inf;  // absolute continuity
      } else {
        table[j][k] =
            p * values[j] - tau * weights[j] * divergence_generator(p / weights[j]);
      }
    }
  }

  double best = neg_inf;
  switch (m) {
    case 1:
      best = table[0][K];
      break;
    case 2:
      for (std::size_t k = 0; k <= K; ++k)
        best = std::max(best, table[0][k] + table[1][K - k]);
      break;
    case 3:
      for (std::size_t k1 = 0; k1 <= K; ++k1) {
        const double t1 = table[0][k1];
        for (std::size_t k2 = 0; k2 + k1 <= K; ++k2)
          best = std::max(best, t1 + table[1][k2] + table[2][K - k1 - k2]);
      }
      break;
    case 4:
      for (std::size_t k1 = 0; k1 <= K; ++k1) {
        const double t1 = table[0][k1];
        for (std::size_t k2 = 0; k2 + k1 <= K; ++k2) {
          const double t12 = t1 + table[1][k2];
          const std::size_t rest = K - k1 - k2;
          const double* t3 = table[2].data();
          const double* t4 = table[3].data();
          for (std::size_t k3 = 0; k3 <= rest; ++k3) {
            const double v = t12 + t3[k3] + t4[rest - k3];
            if (v > best) best = v;
          }
        }
      }
      break;
    default:
      break;
  }
  return best;
}

}  // namespace risklab
