#include "risklab/retrieval.hpp"

#include <cmath>

#include "risklab/errors.hpp"
#include "risklab/numerics.hpp"
#include "risklab/risks.hpp"

namespace risklab {

namespace {

constexpr double kTieTol = 1e-12;

void check_dims(const ContrastiveProblem& p, const Scorer& s) {
  if (s.anchor_size != p.anchor_size || s.item_size != p.item_size)
    throw DimensionMismatch("scorer dimensions do not match the problem");
}

}  // namespace

AucBreakdown auc_score(const ContrastiveProblem& p, const Scorer& scorer) {
  check_dims(p, scorer);
  const Scorer mat = scorer.materialized();
  KahanSum win, tie;
  for (std::size_t x = 0; x < p.anchor_size; ++x) {
    const double px = p.anchor_marginal[x];
    if (px <= 0.0) continue;
    const auto srow = mat.row(x);
    const auto pos = p.pos_row(x);
    const auto neg = p.neg_row(x);
    for (std::size_t y = 0; y < p.item_size; ++y) {
      if (pos[y] <= 0.0) continue;
      for (std::size_t yp = 0; yp < p.item_size; ++yp) {
        if (neg[yp] <= 0.0) continue;
        const double mass = px * pos[y] * neg[yp];
        const double d = srow[y] - srow[yp];
        if (d > kTieTol)
          win.add(mass);
        else if (d >= -kTieTol)
          tie.add(mass);
      }
    }
  }
  AucBreakdown b;
  b.strict_win = win.value();
  b.tie = tie.value();
  b.score = b.strict_win + 0.5 * b.tie;
  return b;
}

double auc_optimum(const ContrastiveProblem& p) {
  KahanSum total;
  for (std::size_t x = 0; x < p.anchor_size; ++x) {
    const double px = p.anchor_marginal[x];
    if (px <= 0.0) continue;
    const std::vector<double> r = density_ratio(p, x);
    const auto neg = p.neg_row(x);
    KahanSum anchor;
    for (std::size_t y = 0; y < p.item_size; ++y) {
      if (neg[y] <= 0.0) continue;
      for (std::size_t yp = 0; yp < p.item_size; ++yp) {
        if (neg[yp] <= 0.0) continue;
        anchor.add(neg[y] * neg[yp] * (r[y] + r[yp] + std::abs(r[y] - r[yp])));
      }
    }
    total.add(px * 0.25 * anchor.value());
  }
  return total.value();
}

MaximizerCheck is_auc_maximizer(const ContrastiveProblem& p, const Scorer& scorer,
                                double tol) {
  check_dims(p, scorer);
  const Scorer mat = scorer.materialized();
  for (std::size_t x = 0; x < p.anchor_size; ++x) {
    if (p.anchor_marginal[x] <= 0.0) continue;
    const std::vector<double> r = density_ratio(p, x);
    const auto srow = mat.row(x);
    const auto pos = p.pos_row(x);
    const auto neg = p.neg_row(x);
    for (std::size_t y = 0; y < p.item_size; ++y) {
      if (pos[y] <= 0.0) continue;
      for (std::size_t yp = 0; yp < p.item_size; ++yp) {
        if (neg[yp] <= 0.0) continue;
        const double rgap = r[y] - r[yp];
        if (std::abs(rgap) <= tol) continue;
        const double sgap = srow[y] - srow[yp];
        if (sgap * (rgap > 0.0 ? 1.0 : -1.0) > tol) continue;
        MaximizerCheck c;
        c.ok = false;
        c.x = x;
        c.y = y;
        c.y_prime = yp;
        c.ratio_gap = rgap;
        c.score_gap = sgap;
        return c;
      }
    }
  }
  return {};
}

CalibrationTriple calibration_bound(const ContrastiveProblem& p, const Scorer& scorer) {
  CalibrationTriple t;
  t.lhs = auc_optimum(p) - auc_score(p, scorer).score;
  const double excess = population_risk(p, scorer).value - optimal_risk(p);
  t.rhs = std::sqrt(std::max(0.0, 2.0 / p.temperature * excess));
  t.slack = t.rhs - t.lhs;
  return t;
}

ExcessDiagnostic excess_bounds_general(const ContrastiveProblem& p,
                                       const Scorer& scorer, const Disutility& phi,
                                       const PairwiseLoss& ell, double reference) {
  ExcessDiagnostic d;
  d.retrieval_gap = auc_optimum(p) - auc_score(p, scorer).score;
  if (std::isnan(reference)) {
    if (phi.kind == DisutilityKind::EntropyRisk && ell.kind == PairwiseKind::Linear)
      reference = optimal_risk(p);
    else
      reference = population_oce_risk(p, optimal_scorer(p).scorer, phi, ell).value;
  }
  d.reference = reference;
  d.excess_oce = population_oce_risk(p, scorer, phi, ell).value - reference;
  return d;
}

ZeroShotPosterior zero_shot_posterior(const ContrastiveProblem& p,
                                      const ClassStructure& classes,
                                      const Scorer& scorer, std::size_t x) {
  check_dims(p, scorer);
  if (classes.item_size != p.item_size)
    throw DimensionMismatch("class structure item count does not match the problem");
  if (classes.class_count == 0 || classes.prior.size() != classes.class_count ||
      classes.item_dist.size() != classes.class_count * classes.item_size)
    throw DimensionMismatch("class structure has inconsistent field sizes");
  if (x >= p.anchor_size) throw DimensionMismatch("anchor index out of range");
  if (!p.homogeneous_negatives())
    throw HeterogeneousNegatives("zero-shot evaluation needs the shared item marginal");

  const Scorer mat = scorer.materialized();
  const auto srow = mat.row(x);
  const auto p_y = p.neg_row(0);
  double smax = srow[0];
  for (double v : srow) smax = std::max(smax, v);

  // Common exp table with the max shifted out; the shift cancels in every
  // ratio below.
  std::vector<double> e(p.item_size);
  for (std::size_t y = 0; y < p.item_size; ++y)
    e[y] = std::exp((srow[y] - smax) / p.temperature);

  KahanSum den_sum;
  for (std::size_t y = 0; y < p.item_size; ++y) den_sum.add(p_y[y] * e[y]);
  const double den = den_sum.value();

  ZeroShotPosterior out;
  out.raw.resize(classes.class_count);
  KahanSum raw_total;
  for (std::size_t c = 0; c < classes.class_count; ++c) {
    const auto d_c = classes.class_row(c);
    KahanSum num;
    for (std::size_t y = 0; y < p.item_size; ++y) num.add(d_c[y] * p_y[y] * e[y]);
    out.raw[c] = num.value() / den;
    raw_total.add(out.raw[c]);
  }
  out.normalized.resize(classes.class_count);
  const double total = raw_total.value();
  for (std::size_t c = 0; c < classes.class_count; ++c)
    out.normalized[c] = out.raw[c] / total;
  return out;
}

}  // namespace risklab
