#include "risklab/risks.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <json.hpp>

#include "risklab/errors.hpp"
#include "risklab/numerics.hpp"

namespace risklab {

namespace {

void check_dims(const ContrastiveProblem& p, const Scorer& s) {
  if (s.anchor_size != p.anchor_size || s.item_size != p.item_size)
    throw DimensionMismatch("scorer dimensions do not match the problem");
}

void check_sample_shape(std::size_t anchor_size, std::size_t item_size,
                        const Scorer& s, std::span<const std::size_t> anchors,
                        std::span<const std::size_t> items) {
  if (s.anchor_size != anchor_size || s.item_size != item_size)
    throw ShapeMismatch("scorer dimensions do not match the sample");
  for (std::size_t x : anchors)
    if (x >= anchor_size) throw ShapeMismatch("anchor index out of range");
  for (std::size_t y : items)
    if (y >= item_size) throw ShapeMismatch("item index out of range");
}

// Weighted phi'((v - mu)/tau); EntropyRisk goes through log space so a huge
// phi' cannot overflow against a tiny weight (their product is <= 1 at the
// stationary mu).
double weighted_dphi(const Disutility& phi, double weight, double arg) {
  if (weight <= 0.0) return 0.0;
  if (phi.kind == DisutilityKind::EntropyRisk) return std::exp(std::log(weight) + arg);
  return weight * phi.dphi(arg);
}

// Envelope gradient of one sampled instance's inner OCE: uniform 1/m
// weights over an index list (repeats allowed).
void accumulate_instance_gradient(std::span<const double> srow, std::size_t x,
                                  std::size_t y,
                                  std::span<const std::size_t> negs,
                                  double instance_weight, const Disutility& phi,
                                  const PairwiseLoss& ell, double tau,
                                  std::vector<double>& vbuf,
                                  std::vector<double>& grad,
                                  std::size_t item_size) {
  const std::size_t m = negs.size();
  vbuf.resize(m);
  const double sy = srow[y];
  for (std::size_t j = 0; j < m; ++j) vbuf[j] = ell.eval(srow[negs[j]] - sy);
  const OceResult r = oce_empirical(phi, vbuf, tau);
  const double w = 1.0 / static_cast<double>(m);
  double total = 0.0;
  const std::size_t base = x * item_size;
  for (std::size_t j = 0; j < m; ++j) {
    const double c = weighted_dphi(phi, w, (vbuf[j] - r.mu_star) / tau) *
                     ell.deriv(srow[negs[j]] - sy);
    grad[base + negs[j]] += instance_weight * c;
    total += c;
  }
  grad[base + y] -= instance_weight * total;
}

void require_smooth(const Disutility& phi) {
  if (!phi.smooth())
    throw NonSmoothDisutility("gradients need a C1 disutility; CVaR is kinked");
}

RiskValue aggregate_instances(std::vector<double> contributions, std::string kind,
                              const Disutility& phi, const PairwiseLoss& ell,
                              double tau) {
  RiskValue r;
  const double w = 1.0 / static_cast<double>(contributions.size());
  KahanSum total;
  for (double c : contributions) total.add(w * c);
  r.value = total.value();
  r.contributions = std::move(contributions);
  r.weights.assign(r.contributions.size(), w);
  r.meta = {std::move(kind), phi.name(), ell.name(), tau};
  return r;
}

}  // namespace

std::string RiskValue::to_json() const {
  nlohmann::json j;
  j["kind"] = meta.kind;
  j["phi"] = meta.phi;
  j["ell"] = meta.ell;
  j["tau"] = meta.tau;
  j["value"] = value;
  j["contributions"] = contributions;
  return j.dump(2);
}

RiskValue population_risk(const ContrastiveProblem& p, const Scorer& scorer) {
  check_dims(p, scorer);
  const Scorer mat = scorer.materialized();
  const double tau = p.temperature;
  RiskValue r;
  r.contributions.resize(p.anchor_size);
  r.weights = p.anchor_marginal;
  std::vector<double> zbuf(p.item_size);
  KahanSum total;
  for (std::size_t x = 0; x < p.anchor_size; ++x) {
    const auto srow = mat.row(x);
    const auto neg = p.neg_row(x);
    const auto pos = p.pos_row(x);
    for (std::size_t y = 0; y < p.item_size; ++y) zbuf[y] = srow[y] / tau;
    const double lse = log_sum_exp_weighted(zbuf, neg);
    KahanSum anchor;
    for (std::size_t y = 0; y < p.item_size; ++y) {
      if (pos[y] <= 0.0) continue;
      anchor.add(pos[y] * tau * (lse - srow[y] / tau));
    }
    r.contributions[x] = anchor.value();
    total.add(p.anchor_marginal[x] * r.contributions[x]);
  }
  r.value = total.value();
  r.meta = {"population", Disutility::entropy_risk().name(), PairwiseLoss::linear().name(), tau};
  return r;
}

RiskValue population_oce_risk(const ContrastiveProblem& p, const Scorer& scorer,
                              const Disutility& phi, const PairwiseLoss& ell) {
  check_dims(p, scorer);
  const Scorer mat = scorer.materialized();
  const double tau = p.temperature;
  RiskValue r;
  r.contributions.resize(p.anchor_size);
  r.weights = p.anchor_marginal;
  std::vector<double> vbuf(p.item_size);
  KahanSum total;
  for (std::size_t x = 0; x < p.anchor_size; ++x) {
    const auto srow = mat.row(x);
    const auto neg = p.neg_row(x);
    const auto pos = p.pos_row(x);
    KahanSum anchor;
    for (std::size_t y = 0; y < p.item_size; ++y) {
      if (pos[y] <= 0.0) continue;
      for (std::size_t j = 0; j < p.item_size; ++j) vbuf[j] = ell.eval(srow[j] - srow[y]);
      anchor.add(pos[y] * oce_weighted(phi, vbuf, neg, tau).value);
    }
    r.contributions[x] = anchor.value();
    total.add(p.anchor_marginal[x] * r.contributions[x]);
  }
  r.value = total.value();
  r.meta = {"population_oce", phi.name(), ell.name(), tau};
  return r;
}

double optimal_risk(const ContrastiveProblem& p) {
  KahanSum total;
  for (std::size_t x = 0; x < p.anchor_size; ++x) {
    const auto pos = p.pos_row(x);
    const auto neg = p.neg_row(x);
    KahanSum anchor;
    for (std::size_t y = 0; y < p.item_size; ++y) {
      if (pos[y] <= 0.0) continue;
      anchor.add(pos[y] * std::log(neg[y] / pos[y]));
    }
    total.add(p.anchor_marginal[x] * p.temperature * anchor.value());
  }
  return total.value();
}

OptimalScorerResult optimal_scorer(const ContrastiveProblem& p,
                                   std::span<const double> g) {
  if (!g.empty() && g.size() != p.anchor_size)
    throw DimensionMismatch("g must have one entry per anchor");
  const double tau = p.temperature;
  std::vector<double> core(p.anchor_size * p.item_size);
  std::vector<std::size_t> flagged;
  double min_finite = std::numeric_limits<double>::infinity();
  for (std::size_t x = 0; x < p.anchor_size; ++x) {
    const std::vector<double> ratios = density_ratio(p, x);
    for (std::size_t y = 0; y < p.item_size; ++y) {
      const double ratio = ratios[y];
      if (ratio > 0.0) {
        core[x * p.item_size + y] = tau * std::log(ratio);
        min_finite = std::min(min_finite, core[x * p.item_size + y]);
      } else {
        core[x * p.item_size + y] = std::numeric_limits<double>::quiet_NaN();
        if (p.pos_row(x)[y] <= 0.0 && p.neg_row(x)[y] <= 0.0)
          flagged.push_back(x * p.item_size + y);
      }
    }
  }
  const double sentinel = min_finite - 10.0 * tau;
  for (std::size_t x = 0; x < p.anchor_size; ++x)
    for (std::size_t y = 0; y < p.item_size; ++y) {
      double& v = core[x * p.item_size + y];
      if (std::isnan(v)) v = sentinel;
      if (!g.empty()) v += g[x];
    }
  return {Scorer::tabular(p.anchor_size, p.item_size, std::move(core)),
          std::move(flagged)};
}

KlExcess kl_excess_identity(const ContrastiveProblem& p, const Scorer& scorer) {
  check_dims(p, scorer);
  const Scorer mat = scorer.materialized();
  const double tau = p.temperature;
  KlExcess out;
  out.excess = population_risk(p, mat).value - optimal_risk(p);
  std::vector<double> zbuf(p.item_size);
  KahanSum kl_total;
  for (std::size_t x = 0; x < p.anchor_size; ++x) {
    const auto srow = mat.row(x);
    const auto neg = p.neg_row(x);
    const auto pos = p.pos_row(x);
    for (std::size_t y = 0; y < p.item_size; ++y) zbuf[y] = srow[y] / tau;
    const double lse = log_sum_exp_weighted(zbuf, neg);
    KahanSum kl;
    for (std::size_t y = 0; y < p.item_size; ++y) {
      if (pos[y] <= 0.0) continue;
      const double log_q = srow[y] / tau + std::log(neg[y]) - lse;
      kl.add(pos[y] * (std::log(pos[y]) - log_q));
    }
    kl_total.add(p.anchor_marginal[x] * tau * kl.value());
  }
  out.kl_term = kl_total.value();
  out.deviation = std::abs(out.excess - out.kl_term);
  return out;
}

RiskValue empirical_scrl_risk(const ScrlSample& sample, const Scorer& scorer,
                              const Disutility& phi, const PairwiseLoss& ell,
                              double tau) {
  if (sample.negatives.size() != sample.n * sample.m ||
      sample.anchors.size() != sample.n || sample.positives.size() != sample.n)
    throw ShapeMismatch("per-anchor sample has inconsistent field sizes");
  check_sample_shape(sample.anchor_size, sample.item_size, scorer, sample.anchors,
                     sample.positives);
  check_sample_shape(sample.anchor_size, sample.item_size, scorer, {}, sample.negatives);
  const Scorer mat = scorer.materialized();
  std::vector<double> contributions(sample.n);
  std::vector<double> vbuf(sample.m);
  for (std::size_t i = 0; i < sample.n; ++i) {
    const auto srow = mat.row(sample.anchors[i]);
    const double sy = srow[sample.positives[i]];
    for (std::size_t j = 0; j < sample.m; ++j)
      vbuf[j] = ell.eval(srow[sample.negatives[i * sample.m + j]] - sy);
    contributions[i] = oce_empirical(phi, vbuf, tau).value;
  }
  return aggregate_instances(std::move(contributions), "empirical_scrl", phi, ell, tau);
}

RiskValue empirical_sscrl_risk(const SscrlSample& sample, const Scorer& scorer,
                               const Disutility& phi, const PairwiseLoss& ell,
                               double tau) {
  if (sample.negatives.size() != sample.m || sample.anchors.size() != sample.n ||
      sample.positives.size() != sample.n)
    throw ShapeMismatch("shared-negative sample has inconsistent field sizes");
  check_sample_shape(sample.anchor_size, sample.item_size, scorer, sample.anchors,
                     sample.positives);
  check_sample_shape(sample.anchor_size, sample.item_size, scorer, {}, sample.negatives);
  const Scorer mat = scorer.materialized();
  std::vector<double> contributions(sample.n);
  std::vector<double> vbuf(sample.m);
  for (std::size_t i = 0; i < sample.n; ++i) {
    const auto srow = mat.row(sample.anchors[i]);
    const double sy = srow[sample.positives[i]];
    for (std::size_t j = 0; j < sample.m; ++j)
      vbuf[j] = ell.eval(srow[sample.negatives[j]] - sy);
    contributions[i] = oce_empirical(phi, vbuf, tau).value;
  }
  return aggregate_instances(std::move(contributions), "empirical_sscrl", phi, ell, tau);
}

double symmetric_sscrl_risk(const ContrastiveProblem& problem_xy,
                            const ContrastiveProblem& problem_yx,
                            const Scorer& scorer) {
  if (problem_xy.anchor_size != problem_yx.item_size ||
      problem_xy.item_size != problem_yx.anchor_size)
    throw DimensionMismatch("the two problems are not transposed directions of one joint");
  check_dims(problem_xy, scorer);
  return population_risk(problem_xy, scorer).value +
         population_risk(problem_yx, scorer.transposed()).value;
}

std::vector<double> risk_gradient(const ContrastiveProblem& p, const Scorer& scorer,
                                  const Disutility& phi, const PairwiseLoss& ell) {
  require_smooth(phi);
  check_dims(p, scorer);
  return detail::weighted_pairs_gradient(detail::pairs_from_problem(p), scorer, phi, ell);
}

std::vector<double> risk_gradient(const ScrlSample& sample, const Scorer& scorer,
                                  const Disutility& phi, const PairwiseLoss& ell,
                                  double tau) {
  require_smooth(phi);
  check_sample_shape(sample.anchor_size, sample.item_size, scorer, sample.anchors,
                     sample.positives);
  const Scorer mat = scorer.materialized();
  std::vector<double> grad(sample.anchor_size * sample.item_size, 0.0);
  std::vector<double> vbuf(sample.m);
  const double w = 1.0 / static_cast<double>(sample.n);
  for (std::size_t i = 0; i < sample.n; ++i) {
    const std::size_t x = sample.anchors[i];
    accumulate_instance_gradient(
        mat.row(x), x, sample.positives[i],
        {sample.negatives.data() + i * sample.m, sample.m}, w, phi, ell, tau,
        vbuf, grad, sample.item_size);
  }
  return grad;
}

std::vector<double> risk_gradient(const SscrlSample& sample, const Scorer& scorer,
                                  const Disutility& phi, const PairwiseLoss& ell,
                                  double tau) {
  require_smooth(phi);
  check_sample_shape(sample.anchor_size, sample.item_size, scorer, sample.anchors,
                     sample.positives);
  const Scorer mat = scorer.materialized();
  std::vector<double> grad(sample.anchor_size * sample.item_size, 0.0);
  std::vector<double> vbuf(sample.m);
  const double w = 1.0 / static_cast<double>(sample.n);
  for (std::size_t i = 0; i < sample.n; ++i) {
    const std::size_t x = sample.anchors[i];
    accumulate_instance_gradient(mat.row(x), x, sample.positives[i],
                                 sample.negatives, w, phi, ell, tau, vbuf, grad,
                                 sample.item_size);
  }
  return grad;
}

namespace detail {

WeightedPairs pairs_from_problem(const ContrastiveProblem& p) {
  WeightedPairs w;
  w.anchor_size = p.anchor_size;
  w.item_size = p.item_size;
  w.tau = p.temperature;
  w.pair_weight.resize(p.anchor_size * p.item_size);
  for (std::size_t x = 0; x < p.anchor_size; ++x)
    for (std::size_t y = 0; y < p.item_size; ++y)
      w.pair_weight[x * p.item_size + y] =
          p.anchor_marginal[x] * p.pos_cond[x * p.item_size + y];
  w.neg_weight = p.neg_cond;
  return w;
}

WeightedPairs pairs_from_sscrl(const SscrlSample& sample, double tau) {
  WeightedPairs w;
  w.anchor_size = sample.anchor_size;
  w.item_size = sample.item_size;
  w.tau = tau;
  w.pair_weight.assign(sample.anchor_size * sample.item_size, 0.0);
  const double pw = 1.0 / static_cast<double>(sample.n);
  for (std::size_t i = 0; i < sample.n; ++i)
    w.pair_weight[sample.anchors[i] * sample.item_size + sample.positives[i]] += pw;
  std::vector<double> neg_row(sample.item_size, 0.0);
  const double nw = 1.0 / static_cast<double>(sample.m);
  for (std::size_t j : sample.negatives) neg_row[j] += nw;
  w.neg_weight.resize(sample.anchor_size * sample.item_size);
  for (std::size_t x = 0; x < sample.anchor_size; ++x)
    std::copy(neg_row.begin(), neg_row.end(),
              w.neg_weight.begin() + x * sample.item_size);
  return w;
}

void weighted_pairs_eval(const WeightedPairs& w, const Scorer& scorer,
                         const Disutility& phi, const PairwiseLoss& ell,
                         double* value, std::vector<double>* grad,
                         std::vector<double>* anchor_contributions) {
  if (scorer.anchor_size != w.anchor_size || scorer.item_size != w.item_size)
    throw DimensionMismatch("scorer dimensions do not match the objective");
  const Scorer mat = scorer.materialized();
  const std::size_t ny = w.item_size;
  const bool tilt_form = phi.kind == DisutilityKind::EntropyRisk &&
                         ell.kind == PairwiseKind::Linear;
  if (grad) grad->assign(w.anchor_size * ny, 0.0);
  if (anchor_contributions) anchor_contributions->assign(w.anchor_size, 0.0);
  std::vector<double> vbuf(ny);
  KahanSum total;
  for (std::size_t x = 0; x < w.anchor_size; ++x) {
    const auto srow = mat.row(x);
    const std::span<const double> neg{w.neg_weight.data() + x * ny, ny};
    const double* pw_row = w.pair_weight.data() + x * ny;
    KahanSum anchor;
    if (tilt_form) {
      for (std::size_t j = 0; j < ny; ++j) vbuf[j] = srow[j] / w.tau;
      const double lse = log_sum_exp_weighted(vbuf, neg);
      double anchor_mass = 0.0;
      for (std::size_t y = 0; y < ny; ++y) {
        if (pw_row[y] <= 0.0) continue;
        anchor.add(pw_row[y] * (w.tau * lse - srow[y]));
        anchor_mass += pw_row[y];
      }
      if (grad && anchor_mass > 0.0) {
        // d/ds(x,b) = anchor_mass * q_x(b) - pair_weight(x,b), with the
        // exponential tilt q_x(b) ∝ neg(b) exp(s(x,b)/tau).
        double* grow = grad->data() + x * ny;
        for (std::size_t b = 0; b < ny; ++b) {
          const double q = neg[b] > 0.0 ? std::exp(std::log(neg[b]) + srow[b] / w.tau - lse) : 0.0;
          grow[b] = anchor_mass * q - pw_row[b];
        }
      }
    } else {
      for (std::size_t y = 0; y < ny; ++y) {
        const double pw = pw_row[y];
        if (pw <= 0.0) continue;
        for (std::size_t j = 0; j < ny; ++j) vbuf[j] = ell.eval(srow[j] - srow[y]);
        const OceResult r = oce_weighted(phi, vbuf, neg, w.tau);
        anchor.add(pw * r.value);
        if (grad) {
          double* grow = grad->data() + x * ny;
          double pair_total = 0.0;
          for (std::size_t j = 0; j < ny; ++j) {
            if (neg[j] <= 0.0) continue;
            const double c =
                weighted_dphi(phi, neg[j], (vbuf[j] - r.mu_star) / w.tau) *
                ell.deriv(srow[j] - srow[y]);
            grow[j] += pw * c;
            pair_total += c;
          }
          grow[y] -= pw * pair_total;
        }
      }
    }
    if (anchor_contributions) (*anchor_contributions)[x] = anchor.value();
    total.add(anchor.value());
  }
  if (value) *value = total.value();
}

double weighted_pairs_value(const WeightedPairs& w, const Scorer& scorer,
                            const Disutility& phi, const PairwiseLoss& ell,
                            std::vector<double>* anchor_contributions) {
  double v = 0.0;
  weighted_pairs_eval(w, scorer, phi, ell, &v, nullptr, anchor_contributions);
  return v;
}

std::vector<double> weighted_pairs_gradient(const WeightedPairs& w,
                                            const Scorer& scorer,
                                            const Disutility& phi,
                                            const PairwiseLoss& ell) {
  std::vector<double> grad;
  weighted_pairs_eval(w, scorer, phi, ell, nullptr, &grad, nullptr);
  return grad;
}

}  // namespace detail

}  // namespace risklab
