#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace risklab {

// Compensated (Kahan) accumulator. Fixed evaluation order + compensation
// keeps reductions reproducible and accurate enough for 1e-12 contracts.
class KahanSum {
 public:
  void add(double x) {
    const double y = x - c_;
    const double t = s_ + y;
    c_ = (t - s_) - y;
    s_ = t;
  }
  double value() const { return s_; }

 private:
  double s_ = 0.0;
  double c_ = 0.0;
};

double kahan_total(std::span<const double> xs);

// log(sum_j exp(v_j)), max-shifted. Empty input -> -inf.
double log_sum_exp(std::span<const double> v);

// log(sum_j w_j * exp(v_j)) over nonnegative weights; zero-weight terms are
// skipped so w=0 paired with v=+-inf cannot poison the sum. All-zero
// weights -> -inf.
double log_sum_exp_weighted(std::span<const double> v, std::span<const double> w);

// tau * log( (1/n) sum_j exp(z_j / tau) ), stable for small tau.
double log_mean_exp(std::span<const double> z, double tau);

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
};

// Ordinary least squares y ~ slope*x + intercept.
LinearFit ols_fit(std::span<const double> x, std::span<const double> y);

// Regularized upper incomplete gamma Q(a, x) = Gamma(a,x)/Gamma(a).
// Series for x < a+1, continued fraction otherwise.
double gamma_q(double a, double x);

// Survival function of the chi-square distribution with `dof` degrees of
// freedom: P(X > stat).
double chi_square_sf(double stat, double dof);

struct ChiSquareTest {
  double statistic = 0.0;
  double dof = 0.0;
  double p_value = 1.0;
};

// Pearson goodness-of-fit of observed counts against expected probabilities.
ChiSquareTest chi_square_gof(std::span<const std::size_t> observed,
                             std::span<const double> expected_probs,
                             std::size_t draws);

// Shortest round-trippable decimal ("%.17g"); used by every CSV writer so
// identical runs emit identical bytes.
std::string format_double(double x);

// FNV-1a 64-bit hash; stable fingerprint for manifests.
std::uint64_t fnv1a64(std::string_view data);

}  // namespace risklab
