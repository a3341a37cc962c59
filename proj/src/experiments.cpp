#include "risklab/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include <json.hpp>

#include "risklab/errors.hpp"
#include "risklab/numerics.hpp"
#include "risklab/retrieval.hpp"
#include "risklab/risks.hpp"
#include "risklab/rng.hpp"
#include "risklab/threadpool.hpp"

namespace risklab {

namespace {

// Derivation tags keeping a study's independent draw families apart. The
// total-gap tag is shared with generalization_gap on purpose: a singleton
// hypothesis set must reproduce the decomposition's total gap bit for bit.
constexpr std::uint64_t kTagInner = 0x494E4E45;
constexpr std::uint64_t kTagOuter = 0x4F555445;
constexpr std::uint64_t kTagTotal = 0x544F5441;
constexpr std::uint64_t kTagCalibProblem = 0x43414C50;
constexpr std::uint64_t kTagCalibScorer = 0x43414C53;
constexpr std::uint64_t kTagCritical = 0x43524954;
constexpr std::uint64_t kTagHypothesis = 0x48595053;
constexpr std::uint64_t kStreamCalibSizes = 0x53495A45;

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
};

MeanSe reduce(std::span<const double> xs) {
  const double count = static_cast<double>(xs.size());
  KahanSum sum;
  for (double x : xs) sum.add(x);
  const double mean = sum.value() / count;
  KahanSum sq;
  for (double x : xs) sq.add((x - mean) * (x - mean));
  const double var = xs.size() > 1 ? sq.value() / (count - 1.0) : 0.0;
  return {mean, std::sqrt(var / count)};
}

double quantile_sorted(const std::vector<double>& sorted, double p) {
  const double rank = std::ceil(p * static_cast<double>(sorted.size()));
  std::size_t idx = rank <= 1.0 ? 0 : static_cast<std::size_t>(rank) - 1;
  if (idx >= sorted.size()) idx = sorted.size() - 1;
  return sorted[idx];
}

// Exact quantities shared by every trial of a study: the materialized score
// table, the joint pair weights, the exact per-pair inner value h(x,y), and
// their weighted sum (the exact risk all gaps are measured against).
struct StudyTables {
  const ContrastiveProblem* problem = nullptr;
  std::size_t anchor_size = 0;
  std::size_t item_size = 0;
  double tau = 0.0;
  bool fast = false;  // log-mean-exp inner form applies
  std::vector<double> scores;
  std::vector<double> pair_weight;
  std::vector<double> h;
  double population = 0.0;
};

StudyTables make_tables(const ContrastiveProblem& problem, const Scorer& scorer,
                        const Disutility& phi, const PairwiseLoss& ell) {
  if (scorer.anchor_size != problem.anchor_size ||
      scorer.item_size != problem.item_size)
    throw DimensionMismatch("scorer shape does not match the problem");
  StudyTables t;
  t.problem = &problem;
  t.anchor_size = problem.anchor_size;
  t.item_size = problem.item_size;
  t.tau = problem.temperature;
  t.fast = phi.kind == DisutilityKind::EntropyRisk && ell.kind == PairwiseKind::Linear;
  t.scores = scorer.materialized().table;
  const std::size_t cells = t.anchor_size * t.item_size;
  t.pair_weight.assign(cells, 0.0);
  t.h.assign(cells, 0.0);

  KahanSum pop;
  std::vector<double> vals(t.item_size);
  std::vector<double> scaled(t.item_size);
  for (std::size_t x = 0; x < t.anchor_size; ++x) {
    const double px = problem.anchor_marginal[x];
    const auto pos = problem.pos_row(x);
    const auto neg = problem.neg_row(x);
    double lse = 0.0;
    if (t.fast) {
      for (std::size_t b = 0; b < t.item_size; ++b)
        scaled[b] = t.scores[x * t.item_size + b] / t.tau;
      lse = log_sum_exp_weighted(scaled, neg);
    }
    for (std::size_t y = 0; y < t.item_size; ++y) {
      const double pw = px * pos[y];
      if (pw <= 0.0) continue;
      const std::size_t cell = x * t.item_size + y;
      t.pair_weight[cell] = pw;
      double hxy;
      if (t.fast) {
        hxy = t.tau * lse - t.scores[cell];
      } else {
        for (std::size_t b = 0; b < t.item_size; ++b)
          vals[b] = ell.eval(t.scores[x * t.item_size + b] - t.scores[cell]);
        hxy = oce_weighted(phi, vals, neg, t.tau).value;
      }
      t.h[cell] = hxy;
      pop.add(pw * hxy);
    }
  }
  t.population = pop.value();
  return t;
}

double estimate_cell(const StudyTables& t, const Disutility& phi,
                     const PairwiseLoss& ell, std::span<double> vals) {
  if (t.fast) return log_mean_exp(vals, t.tau);
  for (double& v : vals) v = ell.eval(v);
  return oce_empirical(phi, vals, t.tau).value;
}

// Exact-outer estimate, per-anchor negatives: every carried pair gets its
// own m i.i.d. draws from the anchor's negative row (stream = pair index).
double inner_estimate_scrl(const StudyTables& t, const Disutility& phi,
                           const PairwiseLoss& ell, std::size_t m,
                           std::uint64_t seed, std::vector<double>& vals) {
  KahanSum acc;
  for (std::size_t x = 0; x < t.anchor_size; ++x) {
    const auto neg = t.problem->neg_row(x);
    for (std::size_t y = 0; y < t.item_size; ++y) {
      const std::size_t cell = x * t.item_size + y;
      const double pw = t.pair_weight[cell];
      if (pw <= 0.0) continue;
      const double sy = t.scores[cell];
      for (std::size_t j = 0; j < m; ++j) {
        const std::size_t b = rng::inverse_cdf(neg, rng::unit(seed, cell, j));
        vals[j] = t.scores[x * t.item_size + b] - sy;
      }
      acc.add(pw * estimate_cell(t, phi, ell, std::span(vals.data(), m)));
    }
  }
  return acc.value();
}

// Exact-outer estimate, shared negatives: one m-draw list (stream 0) feeds
// every carried pair, so the fluctuations do not average out across pairs.
double inner_estimate_sscrl(const StudyTables& t, const Disutility& phi,
                            const PairwiseLoss& ell, std::size_t m,
                            std::uint64_t seed, std::vector<std::size_t>& idx,
                            std::vector<double>& vals) {
  const auto neg = t.problem->neg_row(0);
  for (std::size_t j = 0; j < m; ++j)
    idx[j] = rng::inverse_cdf(neg, rng::unit(seed, 0, j));
  KahanSum acc;
  for (std::size_t x = 0; x < t.anchor_size; ++x)
    for (std::size_t y = 0; y < t.item_size; ++y) {
      const std::size_t cell = x * t.item_size + y;
      const double pw = t.pair_weight[cell];
      if (pw <= 0.0) continue;
      const double sy = t.scores[cell];
      for (std::size_t j = 0; j < m; ++j)
        vals[j] = t.scores[x * t.item_size + idx[j]] - sy;
      acc.add(pw * estimate_cell(t, phi, ell, std::span(vals.data(), m)));
    }
  return acc.value();
}

// Exact-inner estimate: average of exact per-pair values at n sampled pairs.
double outer_average(const StudyTables& t, std::size_t n, std::uint64_t seed) {
  const auto& p = *t.problem;
  KahanSum acc;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t x = rng::inverse_cdf(p.anchor_marginal, rng::unit(seed, i, 0));
    const std::size_t y = rng::inverse_cdf(p.pos_row(x), rng::unit(seed, i, 1));
    acc.add(t.h[x * t.item_size + y]);
  }
  return acc.value() / static_cast<double>(n);
}

// Fully sampled empirical risk for one trial's total-gap measurement.
double total_estimate(const ContrastiveProblem& problem, const Scorer& scorer,
                      const Disutility& phi, const PairwiseLoss& ell,
                      SampleMode mode, std::size_t n, std::size_t m,
                      std::uint64_t seed) {
  if (mode == SampleMode::Scrl)
    return empirical_scrl_risk(sample_scrl(problem, n, m, seed), scorer, phi, ell,
                               problem.temperature)
        .value;
  return empirical_sscrl_risk(sample_sscrl(problem, n, m, seed), scorer, phi, ell,
                              problem.temperature)
      .value;
}

void require_shared_rows(const ContrastiveProblem& problem) {
  if (!problem.homogeneous_negatives())
    throw HeterogeneousNegatives(
        "shared-negative statistics need identical negative rows (joint-built problem)");
}

// One grid point of a scaling study: mean and standard error of the swept
// statistic. Draw indices run 0..size-1 inside fixed streams, so grid
// points share nested prefixes of the same draws (variance reduction; the
// per-point value equals a standalone run at that size).
MeanSe sweep_point(const StudyTables& t, SweepMode sweep, std::size_t size,
                   std::size_t trials, std::uint64_t seed, const Disutility& phi,
                   const PairwiseLoss& ell) {
  std::vector<double> d(trials);
  parallel_for(trials, [&](std::size_t tr) {
    switch (sweep) {
      case SweepMode::InnerMScrl: {
        std::vector<double> vals(size);
        const double v =
            inner_estimate_scrl(t, phi, ell, size, rng::derive(seed, kTagInner, tr), vals);
        d[tr] = t.population - v;
        break;
      }
      case SweepMode::InnerMSscrlBias:
      case SweepMode::InnerMSscrlMad: {
        std::vector<std::size_t> idx(size);
        std::vector<double> vals(size);
        const double v = inner_estimate_sscrl(t, phi, ell, size,
                                              rng::derive(seed, kTagInner, tr), idx, vals);
        const double dev = t.population - v;
        d[tr] = sweep == SweepMode::InnerMSscrlMad ? std::abs(dev) : dev;
        break;
      }
      case SweepMode::OuterN:
        d[tr] =
            std::abs(t.population - outer_average(t, size, rng::derive(seed, kTagOuter, tr)));
        break;
    }
  });
  return reduce(d);
}

void check_grid(std::span<const std::size_t> grid, std::size_t min_points) {
  if (grid.size() < min_points)
    throw UsageError("grid needs at least " + std::to_string(min_points) + " points");
  if (grid.front() == 0) throw UsageError("grid sizes must be >= 1");
  for (std::size_t i = 1; i < grid.size(); ++i)
    if (grid[i] <= grid[i - 1]) throw UsageError("grid must be strictly increasing");
}

}  // namespace

std::string to_string(SampleMode mode) {
  return mode == SampleMode::Scrl ? "scrl" : "sscrl";
}

std::string to_string(SweepMode mode) {
  switch (mode) {
    case SweepMode::InnerMScrl:
      return "inner_m_scrl";
    case SweepMode::InnerMSscrlBias:
      return "inner_m_sscrl_bias";
    case SweepMode::InnerMSscrlMad:
      return "inner_m_sscrl_mad";
    case SweepMode::OuterN:
      return "outer_n";
  }
  return "?";
}

SampleMode sample_mode_from_string(const std::string& name) {
  if (name == "scrl") return SampleMode::Scrl;
  if (name == "sscrl") return SampleMode::Sscrl;
  throw UsageError("unknown sample mode '" + name + "' (scrl | sscrl)");
}

SweepMode sweep_mode_from_string(const std::string& name) {
  for (SweepMode m : {SweepMode::InnerMScrl, SweepMode::InnerMSscrlBias,
                      SweepMode::InnerMSscrlMad, SweepMode::OuterN})
    if (name == to_string(m)) return m;
  throw UsageError("unknown sweep mode '" + name +
                   "' (inner_m_scrl | inner_m_sscrl_bias | inner_m_sscrl_mad | outer_n)");
}

double DecompositionReport::triangle_slack() const {
  const double noise = 3.0 * std::sqrt(total_gap_se * total_gap_se +
                                       inner_mad_se * inner_mad_se +
                                       outer_mad_se * outer_mad_se);
  return inner_mad + outer_mad + noise - total_gap;
}

std::string DecompositionReport::to_json() const {
  nlohmann::json j;
  j["mode"] = to_string(mode);
  j["n"] = n;
  j["m"] = m;
  j["trials"] = trials;
  j["population"] = population;
  j["total_gap"] = total_gap;
  j["total_gap_se"] = total_gap_se;
  j["inner_signed_bias"] = inner_signed_bias;
  j["inner_bias_se"] = inner_bias_se;
  j["inner_mad"] = inner_mad;
  j["inner_mad_se"] = inner_mad_se;
  j["outer_mad"] = outer_mad;
  j["outer_mad_se"] = outer_mad_se;
  j["triangle_slack"] = triangle_slack();
  return j.dump(2);
}

std::string SlopeFit::to_csv() const {
  std::string out = "sweep_var,mean_err,se,trials\n";
  for (std::size_t i = 0; i < grid.size(); ++i) {
    out += std::to_string(grid[i]);
    out += ',';
    out += format_double(mean_err[i]);
    out += ',';
    out += format_double(se[i]);
    out += ',';
    out += std::to_string(trials);
    out += '\n';
  }
  return out;
}

std::string SlopeFit::to_json() const {
  nlohmann::json j;
  j["mode"] = to_string(mode);
  j["grid"] = grid;
  j["mean_err"] = mean_err;
  j["se"] = se;
  j["trials"] = trials;
  j["slope"] = slope;
  j["intercept"] = intercept;
  j["r_squared"] = r_squared;
  j["conclusive"] = conclusive;
  return j.dump(2);
}

std::string GapReport::to_json() const {
  nlohmann::json j;
  j["trials"] = trials;
  j["mean"] = mean;
  j["q50"] = q50;
  j["q90"] = q90;
  j["max_gap"] = max_gap;
  j["per_hypothesis_mean"] = per_hypothesis_mean;
  return j.dump(2);
}

std::string CalibrationSweepResult::to_csv() const {
  std::string out = "problem_seed,scorer_seed,lhs,rhs,slack\n";
  for (const CalibrationRow& r : rows) {
    out += std::to_string(r.problem_seed);
    out += ',';
    out += std::to_string(r.scorer_seed);
    out += ',';
    out += format_double(r.lhs);
    out += ',';
    out += format_double(r.rhs);
    out += ',';
    out += format_double(r.slack);
    out += '\n';
  }
  return out;
}

std::string CalibrationSweepResult::to_json() const {
  nlohmann::json j;
  j["rows"] = nlohmann::json::array();
  for (const CalibrationRow& r : rows)
    j["rows"].push_back({{"problem_seed", r.problem_seed},
                         {"scorer_seed", r.scorer_seed},
                         {"lhs", r.lhs},
                         {"rhs", r.rhs},
                         {"slack", r.slack}});
  j["min_slack"] = min_slack;
  j["median_slack"] = median_slack;
  return j.dump(2);
}

std::string CriticalMReport::to_csv() const {
  std::string out = "n,m,mean_auc,se,is_mstar\n";
  for (const CriticalMCell& c : cells) {
    out += std::to_string(c.n);
    out += ',';
    out += std::to_string(c.m);
    out += ',';
    out += format_double(c.mean_auc);
    out += ',';
    out += format_double(c.se);
    out += ',';
    out += c.is_mstar ? '1' : '0';
    out += '\n';
  }
  return out;
}

std::string CriticalMReport::to_json() const {
  nlohmann::json j;
  j["n_grid"] = n_grid;
  j["m_grid"] = m_grid;
  j["delta"] = delta;
  j["seeds"] = seeds;
  j["cells"] = nlohmann::json::array();
  for (const CriticalMCell& c : cells)
    j["cells"].push_back({{"n", c.n},
                          {"m", c.m},
                          {"mean_auc", c.mean_auc},
                          {"se", c.se},
                          {"is_mstar", c.is_mstar}});
  j["per_n"] = nlohmann::json::array();
  for (const CriticalMRow& r : per_n)
    j["per_n"].push_back({{"n", r.n},
                          {"m_star", r.m_star},
                          {"plateau_auc", r.plateau_auc},
                          {"exact_neg_auc", r.exact_neg_auc},
                          {"between_sqrt_n_and_n", r.between_sqrt_n_and_n}});
  return j.dump(2);
}

std::string ConsistencyReport::to_csv() const {
  std::string out = "iter,risk,excess,auc,retrieval_gap\n";
  for (std::size_t i = 0; i < iter.size(); ++i) {
    out += std::to_string(iter[i]);
    out += ',';
    out += format_double(risk[i]);
    out += ',';
    out += format_double(excess[i]);
    out += ',';
    out += format_double(auc[i]);
    out += ',';
    out += format_double(retrieval_gap[i]);
    out += '\n';
  }
  return out;
}

std::string ConsistencyReport::to_json() const {
  nlohmann::json j;
  j["reference"] = reference;
  j["optimum_auc"] = optimum_auc;
  j["final_excess"] = final_excess;
  j["final_retrieval_gap"] = final_retrieval_gap;
  j["maximizer_checked"] = maximizer_checked;
  j["maximizer_ok"] = maximizer_ok;
  j["trace"] = {{"iter", iter},
                {"risk", risk},
                {"excess", excess},
                {"auc", auc},
                {"retrieval_gap", retrieval_gap}};
  return j.dump(2);
}

DecompositionReport inner_outer_decomposition(const ContrastiveProblem& problem,
                                              const Scorer& scorer, SampleMode mode,
                                              std::size_t n, std::size_t m,
                                              std::size_t trials, std::uint64_t seed,
                                              const Disutility& phi,
                                              const PairwiseLoss& ell) {
  if (trials < 100) throw InsufficientTrials("decomposition needs at least 100 trials");
  if (n == 0 || m == 0) throw DimensionMismatch("sample sizes n, m must be >= 1");
  if (mode == SampleMode::Sscrl) require_shared_rows(problem);
  const StudyTables t = make_tables(problem, scorer, phi, ell);

  std::vector<double> inner_dev(trials);
  std::vector<double> outer_dev(trials);
  std::vector<double> total_dev(trials);
  parallel_for(trials, [&](std::size_t tr) {
    const std::uint64_t inner_seed = rng::derive(seed, kTagInner, tr);
    std::vector<double> vals(m);
    double v;
    if (mode == SampleMode::Scrl) {
      v = inner_estimate_scrl(t, phi, ell, m, inner_seed, vals);
    } else {
      std::vector<std::size_t> idx(m);
      v = inner_estimate_sscrl(t, phi, ell, m, inner_seed, idx, vals);
    }
    inner_dev[tr] = t.population - v;
    outer_dev[tr] =
        t.population - outer_average(t, n, rng::derive(seed, kTagOuter, tr));
    total_dev[tr] = std::abs(t.population - total_estimate(problem, scorer, phi, ell, mode,
                                                           n, m, rng::derive(seed, kTagTotal, tr)));
  });

  DecompositionReport r;
  r.mode = mode;
  r.n = n;
  r.m = m;
  r.trials = trials;
  r.population = t.population;
  const MeanSe total = reduce(total_dev);
  r.total_gap = total.mean;
  r.total_gap_se = total.se;
  const MeanSe bias = reduce(inner_dev);
  r.inner_signed_bias = bias.mean;
  r.inner_bias_se = bias.se;
  std::vector<double> abs_dev(trials);
  for (std::size_t tr = 0; tr < trials; ++tr) abs_dev[tr] = std::abs(inner_dev[tr]);
  const MeanSe imad = reduce(abs_dev);
  r.inner_mad = imad.mean;
  r.inner_mad_se = imad.se;
  for (std::size_t tr = 0; tr < trials; ++tr) abs_dev[tr] = std::abs(outer_dev[tr]);
  const MeanSe omad = reduce(abs_dev);
  r.outer_mad = omad.mean;
  r.outer_mad_se = omad.se;
  return r;
}

SlopeFit scaling_study(const ContrastiveProblem& problem, const Scorer& scorer,
                       SweepMode sweep, std::span<const std::size_t> grid,
                       std::size_t trials, std::uint64_t seed, const Disutility& phi,
                       const PairwiseLoss& ell) {
  check_grid(grid, 5);
  if (trials < 100) throw InsufficientTrials("scaling study needs at least 100 trials");
  if (sweep == SweepMode::InnerMSscrlBias || sweep == SweepMode::InnerMSscrlMad)
    require_shared_rows(problem);
  const StudyTables t = make_tables(problem, scorer, phi, ell);

  SlopeFit fit;
  fit.mode = sweep;
  fit.grid.assign(grid.begin(), grid.end());
  fit.trials = trials;
  for (std::size_t size : grid) {
    const MeanSe point = sweep_point(t, sweep, size, trials, seed, phi, ell);
    if (!(point.mean > 0.0))
      throw InsufficientTrials("error statistic at size " + std::to_string(size) +
                               " is not positive; the signal is below the noise");
    if (point.se > 0.10 * point.mean)
      throw InsufficientTrials("relative standard error exceeds 10% at size " +
                               std::to_string(size));
    fit.mean_err.push_back(point.mean);
    fit.se.push_back(point.se);
  }

  std::vector<double> lx(grid.size());
  std::vector<double> ly(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    lx[i] = std::log(static_cast<double>(grid[i]));
    ly[i] = std::log(fit.mean_err[i]);
  }
  const LinearFit f = ols_fit(lx, ly);
  fit.slope = f.slope;
  fit.intercept = f.intercept;
  fit.r_squared = f.r_squared;
  fit.conclusive = f.r_squared >= 0.9;
  return fit;
}

GapReport generalization_gap(const ContrastiveProblem& problem,
                             std::span<const Scorer> hypotheses, SampleMode mode,
                             std::size_t n, std::size_t m, std::size_t trials,
                             std::uint64_t seed, const Disutility& phi,
                             const PairwiseLoss& ell) {
  if (hypotheses.empty()) throw UsageError("hypothesis set must be nonempty");
  if (trials == 0) throw InsufficientTrials("generalization gap needs at least 1 trial");
  if (n == 0 || m == 0) throw DimensionMismatch("sample sizes n, m must be >= 1");
  if (mode == SampleMode::Sscrl) require_shared_rows(problem);

  const std::size_t count = hypotheses.size();
  std::vector<double> population(count);
  for (std::size_t k = 0; k < count; ++k)
    population[k] = make_tables(problem, hypotheses[k], phi, ell).population;

  std::vector<double> trial_max(trials);
  std::vector<double> per(trials * count);
  parallel_for(trials, [&](std::size_t tr) {
    const std::uint64_t total_seed = rng::derive(seed, kTagTotal, tr);
    const double tau = problem.temperature;
    if (mode == SampleMode::Scrl) {
      const ScrlSample s = sample_scrl(problem, n, m, total_seed);
      for (std::size_t k = 0; k < count; ++k)
        per[tr * count + k] = std::abs(
            population[k] - empirical_scrl_risk(s, hypotheses[k], phi, ell, tau).value);
    } else {
      const SscrlSample s = sample_sscrl(problem, n, m, total_seed);
      for (std::size_t k = 0; k < count; ++k)
        per[tr * count + k] = std::abs(
            population[k] - empirical_sscrl_risk(s, hypotheses[k], phi, ell, tau).value);
    }
    trial_max[tr] =
        *std::max_element(per.begin() + tr * count, per.begin() + (tr + 1) * count);
  });

  GapReport r;
  r.trials = trials;
  r.mean = reduce(trial_max).mean;
  std::vector<double> sorted = trial_max;
  std::sort(sorted.begin(), sorted.end());
  r.q50 = quantile_sorted(sorted, 0.5);
  r.q90 = quantile_sorted(sorted, 0.9);
  r.max_gap = sorted.back();
  r.per_hypothesis_mean.resize(count);
  for (std::size_t k = 0; k < count; ++k) {
    KahanSum acc;
    for (std::size_t tr = 0; tr < trials; ++tr) acc.add(per[tr * count + k]);
    r.per_hypothesis_mean[k] = acc.value() / static_cast<double>(trials);
  }
  return r;
}

std::vector<Scorer> default_hypothesis_set(const ContrastiveProblem& problem,
                                           std::size_t random_count, std::uint64_t seed,
                                           const TrainConfig& config) {
  std::vector<Scorer> out;
  out.reserve(random_count + 2);
  for (std::size_t i = 0; i < random_count; ++i)
    out.push_back(Scorer::random_tabular(problem.anchor_size, problem.item_size,
                                         rng::derive(seed, kTagHypothesis, i),
                                         3.0 * problem.temperature));
  out.push_back(optimal_scorer(problem).scorer);
  out.push_back(minimize_population(problem, Disutility::entropy_risk(),
                                    PairwiseLoss::linear(), config,
                                    Scorer::constant(problem.anchor_size,
                                                     problem.item_size, 0.0))
                    .first);
  return out;
}

CalibrationSweepResult calibration_sweep(std::size_t problem_count,
                                         std::size_t scorers_per_problem,
                                         std::uint64_t seed, bool include_controls) {
  if (problem_count == 0 || scorers_per_problem == 0)
    throw UsageError("calibration sweep counts must be >= 1");

  CalibrationSweepResult out;
  out.rows.reserve(problem_count * (scorers_per_problem + (include_controls ? 1 : 0)));
  for (std::size_t i = 0; i < problem_count; ++i) {
    const std::size_t nx = 2 + rng::word(seed, kStreamCalibSizes, 2 * i) % 4;
    const std::size_t ny = 2 + rng::word(seed, kStreamCalibSizes, 2 * i + 1) % 7;
    const std::uint64_t problem_seed = rng::derive(seed, kTagCalibProblem, i);
    const ContrastiveProblem p = random_problem(nx, ny, problem_seed, 1e-3);
    for (std::size_t k = 0; k < scorers_per_problem; ++k) {
      const std::uint64_t scorer_seed =
          rng::derive(seed, kTagCalibScorer, i * scorers_per_problem + k);
      const Scorer s = Scorer::random_tabular(nx, ny, scorer_seed, 3.0 * p.temperature);
      const CalibrationTriple c = calibration_bound(p, s);
      out.rows.push_back({problem_seed, scorer_seed, c.lhs, c.rhs, c.slack});
    }
    if (include_controls) {
      const CalibrationTriple c = calibration_bound(p, optimal_scorer(p).scorer);
      out.rows.push_back({problem_seed, 0, c.lhs, c.rhs, c.slack});
    }
  }

  std::vector<double> slacks(out.rows.size());
  for (std::size_t i = 0; i < out.rows.size(); ++i) slacks[i] = out.rows[i].slack;
  std::sort(slacks.begin(), slacks.end());
  out.min_slack = slacks.front();
  out.median_slack = quantile_sorted(slacks, 0.5);
  return out;
}

CriticalMReport critical_m_study(const ContrastiveProblem& problem,
                                 std::span<const std::size_t> n_grid,
                                 std::span<const std::size_t> m_grid,
                                 const TrainConfig& config, double delta,
                                 std::size_t seeds, std::uint64_t seed) {
  check_grid(n_grid, 1);
  check_grid(m_grid, 1);
  if (seeds == 0) throw UsageError("critical-m study needs at least 1 seed repetition");
  if (!(delta > 0.0)) throw UsageError("saturation threshold delta must be positive");
  require_shared_rows(problem);

  const std::size_t n_count = n_grid.size();
  const std::size_t m_count = m_grid.size();
  const std::size_t m_max = m_grid.back();
  const Disutility phi = Disutility::entropy_risk();
  const PairwiseLoss ell = PairwiseLoss::linear();
  const Scorer init =
      Scorer::constant(problem.anchor_size, problem.item_size, 0.0);

  std::vector<double> auc(n_count * m_count * seeds);
  std::vector<double> exact_auc(n_count * seeds);
  parallel_for(n_count * seeds, [&](std::size_t w) {
    const std::size_t ni = w / seeds;
    const std::size_t n = n_grid[ni];
    const SscrlSample base =
        sample_sscrl(problem, n, m_max, rng::derive(seed, kTagCritical, w));

    // Negative lists are nested prefixes across m (draw j is a pure
    // function of its index), so one m_max sample serves the whole row.
    for (std::size_t mi = 0; mi < m_count; ++mi) {
      SscrlSample s = base;
      s.m = m_grid[mi];
      s.negatives.resize(s.m);
      const Scorer trained =
          minimize_empirical(s, init, phi, ell, problem.temperature, config).first;
      auc[(ni * m_count + mi) * seeds + (w % seeds)] =
          auc_score(problem, trained).score;
    }

    // Same sampled pairs against the exact negative rows: the saturation
    // target this n's plateau is compared with.
    detail::WeightedPairs pairs;
    pairs.anchor_size = problem.anchor_size;
    pairs.item_size = problem.item_size;
    pairs.tau = problem.temperature;
    pairs.pair_weight.assign(pairs.anchor_size * pairs.item_size, 0.0);
    const double pw = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i)
      pairs.pair_weight[base.anchors[i] * pairs.item_size + base.positives[i]] += pw;
    pairs.neg_weight = problem.neg_cond;
    const Scorer trained = minimize_weighted(pairs, phi, ell, config, init).first;
    exact_auc[w] = auc_score(problem, trained).score;
  });

  CriticalMReport report;
  report.n_grid.assign(n_grid.begin(), n_grid.end());
  report.m_grid.assign(m_grid.begin(), m_grid.end());
  report.delta = delta;
  report.seeds = seeds;
  report.cells.resize(n_count * m_count);
  for (std::size_t ni = 0; ni < n_count; ++ni) {
    double plateau = 0.0;
    for (std::size_t mi = 0; mi < m_count; ++mi) {
      const MeanSe cell =
          reduce(std::span(auc.data() + (ni * m_count + mi) * seeds, seeds));
      report.cells[ni * m_count + mi] = {n_grid[ni], m_grid[mi], cell.mean, cell.se, false};
      plateau = std::max(plateau, cell.mean);
    }
    std::size_t star_index = m_count - 1;
    for (std::size_t mi = 0; mi < m_count; ++mi)
      if (report.cells[ni * m_count + mi].mean_auc >= plateau - delta) {
        star_index = mi;
        break;
      }
    report.cells[ni * m_count + star_index].is_mstar = true;

    CriticalMRow row;
    row.n = n_grid[ni];
    row.m_star = m_grid[star_index];
    row.plateau_auc = plateau;
    row.exact_neg_auc = reduce(std::span(exact_auc.data() + ni * seeds, seeds)).mean;
    row.between_sqrt_n_and_n =
        row.m_star * row.m_star >= row.n && row.m_star <= row.n;
    report.per_n.push_back(row);
  }
  return report;
}

ContrastiveProblem default_critical_problem() {
  // 8 anchors x 16 items; anchor x puts 0.55 on item 2x, 0.25 on item 2x+1
  // and spreads the rest, giving well-separated density-ratio levels
  // against the shared item marginal.
  constexpr std::size_t nx = 8;
  constexpr std::size_t ny = 16;
  std::vector<double> joint(nx * ny, 0.0);
  const double rest = 0.2 / static_cast<double>(ny - 2);
  for (std::size_t x = 0; x < nx; ++x)
    for (std::size_t y = 0; y < ny; ++y) {
      double pos = rest;
      if (y == 2 * x) pos = 0.55;
      if (y == 2 * x + 1) pos = 0.25;
      joint[x * ny + y] = pos / static_cast<double>(nx);
    }
  return from_joint(joint, nx, ny, 0.5);
}

ConsistencyReport consistency_experiment(const ContrastiveProblem& problem,
                                         const Disutility& phi, const PairwiseLoss& ell,
                                         const TrainConfig& config, const Scorer* init) {
  const Scorer start =
      init ? *init : Scorer::constant(problem.anchor_size, problem.item_size, 0.0);
  auto [scorer, trace] =
      minimize_population(problem, phi, ell, config, start, /*record_auc=*/true);

  ConsistencyReport r;
  const bool closed_form =
      phi.kind == DisutilityKind::EntropyRisk && ell.kind == PairwiseKind::Linear;
  r.reference = closed_form ? optimal_risk(problem) : trace.final_risk;
  r.optimum_auc = auc_optimum(problem);
  r.iter = trace.iter;
  r.risk = trace.risk;
  r.auc = trace.auc;
  r.excess.reserve(r.risk.size());
  r.retrieval_gap.reserve(r.risk.size());
  for (std::size_t i = 0; i < r.risk.size(); ++i) {
    r.excess.push_back(r.risk[i] - r.reference);
    r.retrieval_gap.push_back(r.optimum_auc - r.auc[i]);
  }
  r.final_excess = trace.final_risk - r.reference;
  r.final_retrieval_gap = r.retrieval_gap.back();
  r.scorer = std::move(scorer);
  r.maximizer_checked = r.final_excess <= 1e-8;
  if (r.maximizer_checked) r.maximizer_ok = is_auc_maximizer(problem, r.scorer, 1e-9).ok;
  return r;
}

}  // namespace risklab
