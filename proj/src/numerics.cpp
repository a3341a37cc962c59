#include "risklab/numerics.hpp"

#include <cmath>
#include <cstdio>
#include <limits>

#include "risklab/errors.hpp"

namespace risklab {

double kahan_total(std::span<const double> xs) {
  KahanSum acc;
  for (double x : xs) acc.add(x);
  return acc.value();
}

double log_sum_exp(std::span<const double> v) {
  if (v.empty()) return -std::numeric_limits<double>::infinity();
  double m = v[0];
  for (double x : v)
    if (x > m) m = x;
  if (!std::isfinite(m)) return m;  // all -inf, or an explicit +inf
  KahanSum acc;
  for (double x : v) acc.add(std::exp(x - m));
  return m + std::log(acc.value());
}

double log_sum_exp_weighted(std::span<const double> v, std::span<const double> w) {
  const double neg_inf = -std::numeric_limits<double>::infinity();
  double m = neg_inf;
  for (std::size_t j = 0; j < v.size(); ++j)
    if (w[j] > 0.0 && v[j] > m) m = v[j];
  if (m == neg_inf) return neg_inf;
  if (!std::isfinite(m)) return m;
  KahanSum acc;
  for (std::size_t j = 0; j < v.size(); ++j)
    if (w[j] > 0.0) acc.add(w[j] * std::exp(v[j] - m));
  return m + std::log(acc.value());
}

double log_mean_exp(std::span<const double> z, double tau) {
  if (z.empty()) return -std::numeric_limits<double>::infinity();
  double m = z[0];
  for (double x : z)
    if (x > m) m = x;
  KahanSum acc;
  for (double x : z) acc.add(std::exp((x - m) / tau));
  return m + tau * std::log(acc.value() / static_cast<double>(z.size()));
}

LinearFit ols_fit(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size())
    throw DimensionMismatch("ols_fit: x and y lengths differ");
  if (x.size() < 2) throw Error("ols_fit: need at least 2 points");
  const double n = static_cast<double>(x.size());
  KahanSum sx, sy;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx.add(x[i]);
    sy.add(y[i]);
  }
  const double mx = sx.value() / n;
  const double my = sy.value() / n;
  KahanSum sxx, sxy, syy;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx;
    const double dy = y[i] - my;
    sxx.add(dx * dx);
    sxy.add(dx * dy);
    syy.add(dy * dy);
  }
  LinearFit fit;
  if (sxx.value() == 0.0) throw Error("ols_fit: degenerate x (all equal)");
  fit.slope = sxy.value() / sxx.value();
  fit.intercept = my - fit.slope * mx;
  // R^2 = 1 - SS_res / SS_tot; guard the constant-y case.
  if (syy.value() == 0.0) {
    fit.r_squared = 1.0;
  } else {
    KahanSum ss_res;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double r = y[i] - (fit.slope * x[i] + fit.intercept);
      ss_res.add(r * r);
    }
    fit.r_squared = 1.0 - ss_res.value() / syy.value();
  }
  return fit;
}

namespace {

// Series expansion of the lower regularized gamma P(a, x), valid x < a+1.
double gamma_p_series(double a, double x) {
  double ap = a;
  double sum = 1.0 / a;
  double del = sum;
  for (int n = 0; n < 512; ++n) {
    ap += 1.0;
    del *= x / ap;
    sum += del;
    if (std::fabs(del) < std::fabs(sum) * 1e-16) break;
  }
  return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

// Lentz continued fraction for the upper regularized gamma Q(a, x), x >= a+1.
double gamma_q_cf(double a, double x) {
  const double tiny = 1e-300;
  double b = x + 1.0 - a;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i <= 512; ++i) {
    const double an = -static_cast<double>(i) * (static_cast<double>(i) - a);
    b += 2.0;
    d = an * d + b;
    if (std::fabs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < 1e-16) break;
  }
  return h * std::exp(-x + a * std::log(x) - std::lgamma(a));
}

}  // namespace

double gamma_q(double a, double x) {
  if (a <= 0.0 || x < 0.0) throw NonFiniteInput("gamma_q: invalid arguments");
  if (x == 0.0) return 1.0;
  if (x < a + 1.0) return 1.0 - gamma_p_series(a, x);
  return gamma_q_cf(a, x);
}

double chi_square_sf(double stat, double dof) {
  if (stat <= 0.0) return 1.0;
  return gamma_q(0.5 * dof, 0.5 * stat);
}

ChiSquareTest chi_square_gof(std::span<const std::size_t> observed,
                             std::span<const double> expected_probs,
                             std::size_t draws) {
  if (observed.size() != expected_probs.size())
    throw DimensionMismatch("chi_square_gof: size mismatch");
  ChiSquareTest t;
  KahanSum stat;
  std::size_t cells = 0;
  for (std::size_t k = 0; k < observed.size(); ++k) {
    const double e = expected_probs[k] * static_cast<double>(draws);
    if (e == 0.0) continue;  // zero-probability cell carries no constraint
    ++cells;
    const double d = static_cast<double>(observed[k]) - e;
    stat.add(d * d / e);
  }
  t.statistic = stat.value();
  t.dof = static_cast<double>(cells > 0 ? cells - 1 : 0);
  t.p_value = t.dof > 0 ? chi_square_sf(t.statistic, t.dof) : 1.0;
  return t;
}

std::string format_double(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::uint64_t fnv1a64(std::string_view data) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}

}  // namespace risklab
