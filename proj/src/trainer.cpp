#include "risklab/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>

#include "risklab/errors.hpp"
#include "risklab/numerics.hpp"
#include "risklab/retrieval.hpp"

namespace risklab {

namespace {

constexpr double kMonotoneTol = 1e-12;
constexpr std::size_t kDivergedAfter = 10;  // consecutive risk increases

double default_bound(const detail::WeightedPairs& w) {
  double max_abs_log = 0.0;
  bool found = false;
  for (std::size_t x = 0; x < w.anchor_size; ++x) {
    const double* pw = w.pair_weight.data() + x * w.item_size;
    const double* ng = w.neg_weight.data() + x * w.item_size;
    double mass = 0.0;
    for (std::size_t y = 0; y < w.item_size; ++y) mass += pw[y];
    if (mass <= 0.0) continue;
    for (std::size_t y = 0; y < w.item_size; ++y) {
      if (pw[y] <= 0.0 || ng[y] <= 0.0) continue;
      found = true;
      max_abs_log = std::max(max_abs_log, std::abs(std::log(pw[y] / mass / ng[y])));
    }
  }
  // Degenerate overlap (e.g. a single pair against a disjoint negative):
  // any finite box works, the minimizer just rides its edge.
  return 5.0 * w.tau * (found ? max_abs_log : 1.0);
}

struct Gradients {
  std::vector<double> tab;   // d/ds(x,y), always in tabular coordinates
  std::vector<double> u, v;  // chain-rule factors, LinearEmbed only
};

void chain_to_embed(const Scorer& s, const std::vector<double>& tab, Gradients& g) {
  g.u.assign(s.anchor_size * s.dim, 0.0);
  g.v.assign(s.item_size * s.dim, 0.0);
  for (std::size_t x = 0; x < s.anchor_size; ++x)
    for (std::size_t y = 0; y < s.item_size; ++y) {
      const double gxy = tab[x * s.item_size + y];
      if (gxy == 0.0) continue;
      for (std::size_t k = 0; k < s.dim; ++k) {
        g.u[x * s.dim + k] += gxy * s.V[y * s.dim + k];
        g.v[y * s.dim + k] += gxy * s.U[x * s.dim + k];
      }
    }
}

// Norm of the step-normalized progress direction: for tabular scorers the
// projected-gradient mapping (s - clip(s - step*g)) / step, which vanishes
// exactly at box-constrained stationary points; for embeddings the plain
// gradient norm over (U, V).
double mapping_norm(const Scorer& s, const Gradients& g, double step, double bound) {
  KahanSum sq;
  if (s.kind == Scorer::Kind::Tabular) {
    for (std::size_t i = 0; i < s.table.size(); ++i) {
      const double moved = std::clamp(s.table[i] - step * g.tab[i], -bound, bound);
      const double d = (s.table[i] - moved) / step;
      sq.add(d * d);
    }
  } else {
    for (double d : g.u) sq.add(d * d);
    for (double d : g.v) sq.add(d * d);
  }
  return std::sqrt(sq.value());
}

void apply_step(Scorer& s, const Gradients& g, double step, double bound) {
  if (s.kind == Scorer::Kind::Tabular) {
    for (std::size_t i = 0; i < s.table.size(); ++i)
      s.table[i] = std::clamp(s.table[i] - step * g.tab[i], -bound, bound);
  } else {
    for (std::size_t i = 0; i < s.U.size(); ++i) s.U[i] -= step * g.u[i];
    for (std::size_t i = 0; i < s.V.size(); ++i) s.V[i] -= step * g.v[i];
  }
}

// Shared projected-GD engine; eval fills (value, tabular gradient) at the
// given scorer.
std::pair<Scorer, TrainTrace> descend(
    Scorer cur, double tau, const TrainConfig& config, double bound,
    const ContrastiveProblem* auc_problem,
    const std::function<void(const Scorer&, double&, std::vector<double>&)>& eval) {
  if (!(config.grad_tol > 0.0)) throw UsageError("grad_tol must be positive");
  if (config.step < 0.0 || config.bound < 0.0)
    throw UsageError("step and bound must be nonnegative");
  const double base_step = config.step > 0.0 ? config.step : 0.5 * tau;
  const std::size_t stride = std::max<std::size_t>(1, config.trace_stride);

  const auto t0 = std::chrono::steady_clock::now();
  if (cur.kind == Scorer::Kind::Tabular)
    for (double& s : cur.table) s = std::clamp(s, -bound, bound);

  Gradients g;
  double value = 0.0;
  // An iterate whose scores overflow the objective (exp of a huge difference)
  // surfaces as a non-finite-input error from the risk evaluation; inside the
  // descent loop that is divergence, not a malformed call.
  auto evaluate = [&](std::size_t k) {
    try {
      eval(cur, value, g.tab);
    } catch (const NonFiniteInput&) {
      value = std::numeric_limits<double>::quiet_NaN();
    }
    if (!std::isfinite(value))
      throw TrainingDiverged(k == 0 ? std::string("non-finite risk at the initial point")
                                    : "non-finite risk at iteration " + std::to_string(k));
    if (cur.kind == Scorer::Kind::LinearEmbed) chain_to_embed(cur, g.tab, g);
  };
  evaluate(0);

  TrainTrace trace;
  double norm = mapping_norm(cur, g, base_step, bound);
  auto record = [&](std::size_t k) {
    trace.iter.push_back(k);
    trace.risk.push_back(value);
    trace.grad_norm.push_back(norm);
    if (auc_problem) trace.auc.push_back(auc_score(*auc_problem, cur).score);
  };
  record(0);

  std::size_t consecutive_increases = 0;
  std::size_t k = 0;
  while (k < config.max_iters && norm > config.grad_tol) {
    ++k;
    const double step = config.step_rule == TrainConfig::StepRule::Constant
                            ? base_step
                            : base_step / std::sqrt(static_cast<double>(k));
    const double prev = value;
    apply_step(cur, g, step, bound);
    evaluate(k);
    if (value > prev + kMonotoneTol) {
      trace.monotone = false;
      if (++consecutive_increases >= kDivergedAfter)
        throw TrainingDiverged("risk rose for " + std::to_string(kDivergedAfter) +
                               " consecutive steps");
    } else {
      consecutive_increases = 0;
    }
    norm = mapping_norm(cur, g, base_step, bound);
    if (k % stride == 0) record(k);
  }
  if (trace.iter.back() != k) record(k);

  trace.iterations = k;
  trace.final_risk = value;
  trace.final_grad_norm = norm;
  trace.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {std::move(cur), std::move(trace)};
}

void check_init(const Scorer& init, std::size_t anchor_size, std::size_t item_size,
                const Disutility& phi) {
  if (!phi.smooth())
    throw NonSmoothDisutility("gradient training needs a C1 disutility; CVaR is kinked");
  if (init.anchor_size != anchor_size || init.item_size != item_size)
    throw DimensionMismatch("init scorer dimensions do not match the objective");
}

}  // namespace

std::string TrainTrace::to_csv() const {
  std::string out = "iter,risk,grad_norm,auc\n";
  for (std::size_t i = 0; i < iter.size(); ++i) {
    out += std::to_string(iter[i]);
    out += ',';
    out += format_double(risk[i]);
    out += ',';
    out += format_double(grad_norm[i]);
    out += ',';
    if (i < auc.size()) out += format_double(auc[i]);
    out += '\n';
  }
  return out;
}

std::pair<Scorer, TrainTrace> minimize_weighted(const detail::WeightedPairs& objective,
                                                const Disutility& phi,
                                                const PairwiseLoss& ell,
                                                const TrainConfig& config,
                                                const Scorer& init,
                                                const ContrastiveProblem* auc_problem) {
  check_init(init, objective.anchor_size, objective.item_size, phi);
  const double bound = config.bound > 0.0 ? config.bound : default_bound(objective);
  return descend(init, objective.tau, config, bound, auc_problem,
                 [&](const Scorer& s, double& value, std::vector<double>& grad) {
                   detail::weighted_pairs_eval(objective, s, phi, ell, &value, &grad);
                 });
}

std::pair<Scorer, TrainTrace> minimize_population(const ContrastiveProblem& problem,
                                                  const Disutility& phi,
                                                  const PairwiseLoss& ell,
                                                  const TrainConfig& config,
                                                  const Scorer& init, bool record_auc) {
  return minimize_weighted(detail::pairs_from_problem(problem), phi, ell, config, init,
                           record_auc ? &problem : nullptr);
}

std::pair<Scorer, TrainTrace> minimize_empirical(const SscrlSample& sample,
                                                 const Scorer& init,
                                                 const Disutility& phi,
                                                 const PairwiseLoss& ell, double tau,
                                                 const TrainConfig& config) {
  return minimize_weighted(detail::pairs_from_sscrl(sample, tau), phi, ell, config, init);
}

std::pair<Scorer, TrainTrace> minimize_empirical(const ScrlSample& sample,
                                                 const Scorer& init,
                                                 const Disutility& phi,
                                                 const PairwiseLoss& ell, double tau,
                                                 const TrainConfig& config) {
  check_init(init, sample.anchor_size, sample.item_size, phi);

  // Per-instance negative lists do not collapse into one weighted objective,
  // so evaluation walks the sample. The default box still comes from pooled
  // frequencies (a heuristic; it never changes the objective).
  double bound = config.bound;
  if (bound <= 0.0) {
    detail::WeightedPairs pooled;
    pooled.anchor_size = sample.anchor_size;
    pooled.item_size = sample.item_size;
    pooled.tau = tau;
    pooled.pair_weight.assign(sample.anchor_size * sample.item_size, 0.0);
    pooled.neg_weight.assign(sample.anchor_size * sample.item_size, 0.0);
    const double pw = 1.0 / static_cast<double>(sample.n);
    const double nw = 1.0 / static_cast<double>(sample.n * sample.m);
    for (std::size_t i = 0; i < sample.n; ++i) {
      const std::size_t x = sample.anchors[i];
      pooled.pair_weight[x * sample.item_size + sample.positives[i]] += pw;
      for (std::size_t j = 0; j < sample.m; ++j)
        pooled.neg_weight[x * sample.item_size + sample.negatives[i * sample.m + j]] += nw;
    }
    bound = default_bound(pooled);
  }

  return descend(init, tau, config, bound, nullptr,
                 [&](const Scorer& s, double& value, std::vector<double>& grad) {
                   value = empirical_scrl_risk(sample, s, phi, ell, tau).value;
                   grad = risk_gradient(sample, s, phi, ell, tau);
                 });
}

namespace {

double certify(const std::function<double(const Scorer&)>& value_of,
               const std::vector<double>& grad, const Scorer& scorer, double h) {
  if (h < 1e-7 || h > 1e-3) throw UsageError("finite-difference h must lie in [1e-7, 1e-3]");
  Scorer probe = scorer.materialized();
  double max_err = 0.0;
  for (std::size_t i = 0; i < probe.table.size(); ++i) {
    const double saved = probe.table[i];
    probe.table[i] = saved + h;
    const double up = value_of(probe);
    probe.table[i] = saved - h;
    const double down = value_of(probe);
    probe.table[i] = saved;
    const double fd = (up - down) / (2.0 * h);
    const double denom = std::max(std::abs(grad[i]), std::abs(fd));
    const double diff = std::abs(grad[i] - fd);
    max_err = std::max(max_err, denom >= 1e-8 ? diff / denom : diff);
  }
  return max_err;
}

}  // namespace

double finite_diff_certify(const detail::WeightedPairs& objective, const Scorer& scorer,
                           const Disutility& phi, const PairwiseLoss& ell, double h) {
  const std::vector<double> grad =
      detail::weighted_pairs_gradient(objective, scorer, phi, ell);
  return certify(
      [&](const Scorer& s) { return detail::weighted_pairs_value(objective, s, phi, ell); },
      grad, scorer, h);
}

double finite_diff_certify(const ContrastiveProblem& problem, const Scorer& scorer,
                           const Disutility& phi, const PairwiseLoss& ell, double h) {
  return finite_diff_certify(detail::pairs_from_problem(problem), scorer, phi, ell, h);
}

double finite_diff_certify(const ScrlSample& sample, const Scorer& scorer,
                           const Disutility& phi, const PairwiseLoss& ell, double tau,
                           double h) {
  const std::vector<double> grad = risk_gradient(sample, scorer, phi, ell, tau);
  return certify(
      [&](const Scorer& s) { return empirical_scrl_risk(sample, s, phi, ell, tau).value; },
      grad, scorer, h);
}

}  // namespace risklab
