#include "risklab/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <utility>

#include <CLI11.hpp>
#include <json.hpp>

#include "risklab/errors.hpp"
#include "risklab/experiments.hpp"
#include "risklab/numerics.hpp"
#include "risklab/oce.hpp"
#include "risklab/problem.hpp"
#include "risklab/retrieval.hpp"
#include "risklab/risks.hpp"
#include "risklab/rng.hpp"
#include "risklab/threadpool.hpp"
#include "risklab/trainer.hpp"

#ifndef RISKLAB_GIT_DESCRIBE
#define RISKLAB_GIT_DESCRIBE "unversioned"
#endif

namespace risklab {

namespace {

constexpr const char* kVersion = "1.0.0";

constexpr std::uint64_t kTagProblem = 0x50524F42;
constexpr std::uint64_t kTagScorer = 0x53434F52;
constexpr std::uint64_t kTagSample = 0x53414D50;
constexpr std::uint64_t kTagInstance = 0x494E5354;
constexpr std::uint64_t kTagConsistency = 0x434F4E53;
constexpr std::uint64_t kTagClasses = 0x434C5353;

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot read " + path);
  std::ostringstream body;
  body << in.rdbuf();
  return body.str();
}

Disutility phi_from_string(const std::string& name) {
  if (name == "identity") return Disutility::identity();
  if (name == "entropy_risk") return Disutility::entropy_risk();
  if (name == "mean_variance") return Disutility::mean_variance();
  if (name.rfind("cvar:", 0) == 0) {
    try {
      return Disutility::cvar(std::stod(name.substr(5)));
    } catch (const std::logic_error&) {
      throw UsageError("bad cvar level in '" + name + "'");
    }
  }
  throw UsageError("unknown disutility '" + name +
                   "' (identity | entropy_risk | mean_variance | cvar:ALPHA)");
}

PairwiseLoss ell_from_string(const std::string& name) {
  if (name == "linear") return PairwiseLoss::linear();
  if (name == "exponential") return PairwiseLoss::exponential();
  if (name == "softplus") return PairwiseLoss::softplus();
  if (name == "squared_hinge") return PairwiseLoss::squared_hinge();
  throw UsageError("unknown pairwise loss '" + name +
                   "' (linear | exponential | softplus | squared_hinge)");
}

// Gathers every file of one run and writes them together with the manifest
// that references them; nothing is written until flush().
struct Sink {
  std::filesystem::path dir;
  std::uint64_t seed = 0;
  nlohmann::json config = nlohmann::json::object();
  std::vector<std::pair<std::string, std::string>> files;

  void add(std::string name, std::string body) {
    files.emplace_back(std::move(name), std::move(body));
  }

  // Report JSON wrapped in the run metadata envelope.
  std::string wrap(const std::string& report_json) const {
    nlohmann::json j;
    j["metadata"] = {{"git_describe", RISKLAB_GIT_DESCRIBE},
                     {"config_hash", hex64(fnv1a64(config.dump()))},
                     {"seed", seed}};
    j["data"] = nlohmann::json::parse(report_json);
    return j.dump(2) + "\n";
  }

  void flush() const {
    std::filesystem::create_directories(dir);
    nlohmann::json manifest;
    manifest["config"] = config;
    manifest["seed"] = seed;
    manifest["versions"] = {{"risklab", kVersion},
                            {"git_describe", RISKLAB_GIT_DESCRIBE},
                            {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) +
                                                  "." +
                                                  std::to_string(NLOHMANN_JSON_VERSION_MINOR) +
                                                  "." +
                                                  std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
                            {"cli11", CLI11_VERSION}};
    nlohmann::json hashes = nlohmann::json::object();
    for (const auto& [name, body] : files) {
      const std::filesystem::path path = dir / name;
      std::ofstream out(path, std::ios::binary);
      if (!out) throw UsageError("cannot write " + path.string());
      out << body;
      hashes[name] = hex64(fnv1a64(body));
    }
    manifest["files"] = hashes;
    std::ofstream out(dir / "manifest.json", std::ios::binary);
    if (!out) throw UsageError("cannot write " + (dir / "manifest.json").string());
    out << manifest.dump(2) << "\n";
  }
};

struct Common {
  std::uint64_t seed = 1;
  std::string out = ".";
  std::string format = "csv";
  unsigned threads = 0;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--seed", c.seed, "base RNG seed")->capture_default_str();
  cmd->add_option("--out", c.out, "output directory")->capture_default_str();
  cmd->add_option("--format", c.format, "tabular output format")
      ->check(CLI::IsMember({"csv", "json"}))
      ->capture_default_str();
  cmd->add_option("--threads", c.threads, "worker count (0 = hardware)");
}

Sink make_sink(const Common& c, const char* subcommand) {
  if (c.threads > 0) setenv("CRL_RISKLAB_THREADS", std::to_string(c.threads).c_str(), 1);
  Sink sink;
  sink.dir = c.out;
  sink.seed = c.seed;
  sink.config["subcommand"] = subcommand;
  sink.config["seed"] = c.seed;
  sink.config["out"] = c.out;
  sink.config["format"] = c.format;
  sink.config["threads"] = c.threads;
  return sink;
}

struct ProblemSource {
  std::string path;
  std::string generate;
  double floor = 1e-3;
};

void add_problem_source(CLI::App* cmd, ProblemSource& s) {
  cmd->add_option("--problem", s.path, "problem JSON file");
  cmd->add_option("--generate", s.generate, "random problem spec NXxNY, e.g. 4x8");
  cmd->add_option("--floor", s.floor, "probability floor for --generate")
      ->capture_default_str();
}

std::pair<std::size_t, std::size_t> parse_size_pair(const std::string& text) {
  const auto sep = text.find('x');
  std::size_t nx = 0;
  std::size_t ny = 0;
  try {
    if (sep == std::string::npos) throw std::invalid_argument("no separator");
    std::size_t used = 0;
    nx = std::stoul(text.substr(0, sep), &used);
    if (used != sep) throw std::invalid_argument("trailing junk");
    ny = std::stoul(text.substr(sep + 1), &used);
    if (used != text.size() - sep - 1) throw std::invalid_argument("trailing junk");
  } catch (const std::logic_error&) {
    throw UsageError("bad size spec '" + text + "' (want NXxNY, e.g. 4x8)");
  }
  if (nx == 0 || ny == 0) throw UsageError("size spec '" + text + "' must be positive");
  return {nx, ny};
}

// Joint-built random family (identical negative rows, so every sampling
// mode applies): entries exp(spread * (2u - 1)), normalized.
ContrastiveProblem make_joint_problem(std::size_t nx, std::size_t ny, double spread,
                                      double tau, std::uint64_t seed) {
  std::vector<double> joint(nx * ny);
  KahanSum total;
  for (std::size_t i = 0; i < joint.size(); ++i) {
    joint[i] = std::exp(spread * (2.0 * rng::unit(seed, 0, i) - 1.0));
    total.add(joint[i]);
  }
  for (double& j : joint) j /= total.value();
  return from_joint(joint, nx, ny, tau);
}

ContrastiveProblem resolve_problem(const ProblemSource& s, std::uint64_t seed,
                                   const std::function<ContrastiveProblem()>& fallback,
                                   nlohmann::json& config) {
  config["problem"] = s.path;
  config["generate"] = s.generate;
  config["floor"] = s.floor;
  if (!s.path.empty() && !s.generate.empty())
    throw UsageError("give either --problem or --generate, not both");
  if (!s.path.empty()) return problem_from_json(read_file(s.path));
  if (!s.generate.empty()) {
    const auto [nx, ny] = parse_size_pair(s.generate);
    return random_problem(nx, ny, rng::derive(seed, kTagProblem, 0), s.floor);
  }
  if (fallback) return fallback();
  throw UsageError("this subcommand needs --problem or --generate");
}

std::string scorer_to_json_text(const Scorer& scorer) {
  const Scorer m = scorer.materialized();
  nlohmann::json j;
  j["anchor_size"] = m.anchor_size;
  j["item_size"] = m.item_size;
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t x = 0; x < m.anchor_size; ++x) {
    nlohmann::json row = nlohmann::json::array();
    for (std::size_t y = 0; y < m.item_size; ++y) row.push_back(m.table[x * m.item_size + y]);
    rows.push_back(std::move(row));
  }
  j["table"] = std::move(rows);
  return j.dump(2) + "\n";
}

// ------------------------------------------------------------- subcommands

struct OceCheckOpts {
  Common cm;
  std::size_t instances = 500;
  double tol = 1e-9;
};

void run_oce_check(const OceCheckOpts& o) {
  Sink sink = make_sink(o.cm, "oce-check");
  sink.config["instances"] = o.instances;
  sink.config["tol"] = o.tol;
  if (o.instances == 0) throw UsageError("--instances must be >= 1");

  std::vector<double> dev(o.instances);
  parallel_for(o.instances, [&](std::size_t i) {
    const std::uint64_t s = rng::derive(o.cm.seed, kTagInstance, i);
    const std::size_t dim = 2 + rng::word(s, 0, 0) % 15;
    std::vector<double> z(dim);
    for (std::size_t j = 0; j < dim; ++j) z[j] = 6.0 * rng::unit(s, 1, j) - 3.0;
    const double tau = 0.1 * std::pow(100.0, rng::unit(s, 2, 0));
    dev[i] = logsumexp_identity_check(z, tau);
  });
  std::size_t worst = 0;
  for (std::size_t i = 1; i < o.instances; ++i)
    if (dev[i] > dev[worst]) worst = i;

  nlohmann::json report;
  report["instances"] = o.instances;
  report["max_deviation"] = dev[worst];
  report["worst_instance"] = worst;
  report["tol"] = o.tol;
  report["pass"] = dev[worst] <= o.tol;
  sink.add("oce_check.json", sink.wrap(report.dump(2)));
  sink.flush();
  std::cout << "oce-check: max deviation " << format_double(dev[worst]) << " over "
            << o.instances << " instances\n";
  if (dev[worst] > o.tol)
    throw ContractViolation("log-sum-exp reformulation deviates by " +
                            format_double(dev[worst]) + " at instance " +
                            std::to_string(worst));
}

struct DroCheckOpts {
  Common cm;
  std::size_t instances = 500;
  std::size_t grid_instances = 50;
  double step = 1e-3;
  double tol = 1e-12;
  double grid_factor = 10.0;
};

void run_dro_check(const DroCheckOpts& o) {
  Sink sink = make_sink(o.cm, "dro-check");
  sink.config["instances"] = o.instances;
  sink.config["grid_instances"] = o.grid_instances;
  sink.config["step"] = o.step;
  sink.config["tol"] = o.tol;
  sink.config["grid_factor"] = o.grid_factor;
  if (o.instances == 0) throw UsageError("--instances must be >= 1");

  // Closed-form dual against the certainty-equivalent route.
  std::vector<double> dual_dev(o.instances);
  parallel_for(o.instances, [&](std::size_t i) {
    const std::uint64_t s = rng::derive(o.cm.seed, kTagInstance, i);
    const std::size_t dim = 2 + rng::word(s, 0, 0) % 15;
    std::vector<double> z(dim);
    std::vector<double> w(dim);
    KahanSum total;
    for (std::size_t j = 0; j < dim; ++j) {
      z[j] = 6.0 * rng::unit(s, 1, j) - 3.0;
      w[j] = 0.1 + rng::unit(s, 2, j);
      total.add(w[j]);
    }
    for (double& x : w) x /= total.value();
    const double tau = 0.1 * std::pow(100.0, rng::unit(s, 3, 0));
    dual_dev[i] = std::abs(dro_dual_kl(z, w, tau).value -
                           oce_weighted(Disutility::entropy_risk(), z, w, tau).value);
  });
  std::size_t worst_dual = 0;
  for (std::size_t i = 1; i < o.instances; ++i)
    if (dual_dev[i] > dual_dev[worst_dual]) worst_dual = i;

  // Brute-force simplex grid against the dual, low dimensions only.
  std::vector<double> grid_ratio(o.grid_instances);
  parallel_for(o.grid_instances, [&](std::size_t i) {
    const std::uint64_t s = rng::derive(o.cm.seed, kTagInstance, 1'000'000 + i);
    const std::size_t dim = 2 + rng::word(s, 0, 0) % 3;
    std::vector<double> z(dim);
    std::vector<double> w(dim);
    KahanSum total;
    for (std::size_t j = 0; j < dim; ++j) {
      z[j] = 2.0 * rng::unit(s, 1, j) - 1.0;
      w[j] = 0.1 + rng::unit(s, 2, j);
      total.add(w[j]);
    }
    for (double& x : w) x /= total.value();
    const double tau = 0.3 * std::pow(10.0, rng::unit(s, 3, 0));
    const double range =
        *std::max_element(z.begin(), z.end()) - *std::min_element(z.begin(), z.end());
    const double primal =
        dro_primal_grid(kl_divergence_generator, z, w, tau, o.step);
    const double gap = std::abs(primal - dro_dual_kl(z, w, tau).value);
    grid_ratio[i] = range > 0.0 ? gap / (o.step * range) : 0.0;
  });
  std::size_t worst_grid = 0;
  for (std::size_t i = 1; i < o.grid_instances; ++i)
    if (grid_ratio[i] > grid_ratio[worst_grid]) worst_grid = i;

  nlohmann::json report;
  report["instances"] = o.instances;
  report["max_dual_deviation"] = dual_dev[worst_dual];
  report["tol"] = o.tol;
  report["grid_instances"] = o.grid_instances;
  report["step"] = o.step;
  report["max_grid_ratio"] = grid_ratio[worst_grid];
  report["grid_factor"] = o.grid_factor;
  report["pass"] =
      dual_dev[worst_dual] <= o.tol && grid_ratio[worst_grid] <= o.grid_factor;
  sink.add("dro_check.json", sink.wrap(report.dump(2)));
  sink.flush();
  std::cout << "dro-check: max dual deviation " << format_double(dual_dev[worst_dual])
            << ", max grid ratio " << format_double(grid_ratio[worst_grid]) << "\n";
  if (dual_dev[worst_dual] > o.tol)
    throw ContractViolation("KL dual deviates from the certainty equivalent by " +
                            format_double(dual_dev[worst_dual]));
  if (grid_ratio[worst_grid] > o.grid_factor)
    throw ContractViolation("simplex-grid primal misses the dual by " +
                            format_double(grid_ratio[worst_grid]) +
                            " step-range units");
}

struct ConsistencyOpts {
  Common cm;
  std::size_t problems = 20;
  std::string sizes = "3x6";
  double floor = 1e-3;
  std::string phi = "entropy_risk";
  std::string ell = "linear";
  double excess_tol = 1e-8;
  double gap_tol = 0.0;  // 0 = pick by objective
  std::size_t max_iters = 2'000'000;
  double grad_tol = 1e-11;
};

void run_consistency(const ConsistencyOpts& o) {
  Sink sink = make_sink(o.cm, "consistency");
  sink.config["problems"] = o.problems;
  sink.config["sizes"] = o.sizes;
  sink.config["floor"] = o.floor;
  sink.config["phi"] = o.phi;
  sink.config["ell"] = o.ell;
  sink.config["max_iters"] = o.max_iters;
  sink.config["grad_tol"] = o.grad_tol;
  if (o.problems == 0) throw UsageError("--problems must be >= 1");

  const Disutility phi = phi_from_string(o.phi);
  const PairwiseLoss ell = ell_from_string(o.ell);
  const bool closed_form =
      phi.kind == DisutilityKind::EntropyRisk && ell.kind == PairwiseKind::Linear;
  const double gap_tol = o.gap_tol > 0.0 ? o.gap_tol : (closed_form ? 1e-4 : 1e-3);
  sink.config["excess_tol"] = o.excess_tol;
  sink.config["gap_tol"] = gap_tol;
  const auto [nx, ny] = parse_size_pair(o.sizes);

  TrainConfig config;
  config.max_iters = o.max_iters;
  config.grad_tol = o.grad_tol;

  struct Row {
    std::uint64_t problem_seed = 0;
    double final_excess = 0.0;
    double final_retrieval_gap = 0.0;
    bool maximizer_checked = false;
    bool maximizer_ok = false;
  };
  std::vector<Row> rows(o.problems);
  parallel_for(o.problems, [&](std::size_t i) {
    const std::uint64_t problem_seed = rng::derive(o.cm.seed, kTagConsistency, i);
    const ContrastiveProblem p = random_problem(nx, ny, problem_seed, o.floor);
    const ConsistencyReport r = consistency_experiment(p, phi, ell, config);
    rows[i] = {problem_seed, r.final_excess, r.final_retrieval_gap, r.maximizer_checked,
               r.maximizer_ok};
  });

  std::string csv = "problem_seed,final_excess,final_retrieval_gap,maximizer_checked,maximizer_ok\n";
  nlohmann::json jrows = nlohmann::json::array();
  double max_excess = 0.0;
  double max_gap = 0.0;
  std::string violation;
  for (const Row& r : rows) {
    csv += std::to_string(r.problem_seed);
    csv += ',';
    csv += format_double(r.final_excess);
    csv += ',';
    csv += format_double(r.final_retrieval_gap);
    csv += ',';
    csv += r.maximizer_checked ? '1' : '0';
    csv += ',';
    csv += r.maximizer_ok ? '1' : '0';
    csv += '\n';
    jrows.push_back({{"problem_seed", r.problem_seed},
                     {"final_excess", r.final_excess},
                     {"final_retrieval_gap", r.final_retrieval_gap},
                     {"maximizer_checked", r.maximizer_checked},
                     {"maximizer_ok", r.maximizer_ok}});
    max_excess = std::max(max_excess, r.final_excess);
    max_gap = std::max(max_gap, r.final_retrieval_gap);
    if (violation.empty()) {
      if (closed_form && r.final_excess > o.excess_tol)
        violation = "excess risk " + format_double(r.final_excess) + " above " +
                    format_double(o.excess_tol) + " on problem seed " +
                    std::to_string(r.problem_seed);
      else if (r.final_retrieval_gap > gap_tol)
        violation = "retrieval shortfall " + format_double(r.final_retrieval_gap) +
                    " above " + format_double(gap_tol) + " on problem seed " +
                    std::to_string(r.problem_seed);
    }
  }

  nlohmann::json report;
  report["rows"] = std::move(jrows);
  report["max_excess"] = max_excess;
  report["max_retrieval_gap"] = max_gap;
  if (o.cm.format == "csv")
    sink.add("consistency.csv", csv);
  else
    sink.add("consistency.json", sink.wrap(report.dump(2)));
  sink.flush();
  std::cout << "consistency: max excess " << format_double(max_excess)
            << ", max retrieval gap " << format_double(max_gap) << " over "
            << o.problems << " problems\n";
  if (!violation.empty()) throw ContractViolation(violation);
}

struct CalibrationOpts {
  Common cm;
  std::size_t problems = 50;
  std::size_t scorers = 20;
  bool controls = false;
  double tol = 1e-9;
};

void run_calibration(const CalibrationOpts& o) {
  Sink sink = make_sink(o.cm, "calibration");
  sink.config["problems"] = o.problems;
  sink.config["scorers"] = o.scorers;
  sink.config["controls"] = o.controls;
  sink.config["tol"] = o.tol;

  const CalibrationSweepResult result =
      calibration_sweep(o.problems, o.scorers, o.cm.seed, o.controls);
  if (o.cm.format == "csv")
    sink.add("calibration.csv", result.to_csv());
  else
    sink.add("calibration.json", sink.wrap(result.to_json()));
  sink.flush();
  std::cout << "calibration: " << result.rows.size() << " rows, min slack "
            << format_double(result.min_slack) << ", median slack "
            << format_double(result.median_slack) << "\n";
  if (result.min_slack < -o.tol)
    throw ContractViolation("calibration slack " + format_double(result.min_slack) +
                            " below -" + format_double(o.tol));
}

struct ScalingOpts {
  Common cm;
  ProblemSource src;
  std::string mode = "inner_m_scrl";
  std::string grid = "8:1024:x2";
  std::size_t trials = 4000;
  double amplitude = 1.5;
  std::string phi = "entropy_risk";
  std::string ell = "linear";
  double r2_min = 0.95;
  bool no_band = false;
};

void run_scaling(const ScalingOpts& o) {
  Sink sink = make_sink(o.cm, "scaling");
  sink.config["mode"] = o.mode;
  sink.config["grid"] = o.grid;
  sink.config["trials"] = o.trials;
  sink.config["amplitude"] = o.amplitude;
  sink.config["phi"] = o.phi;
  sink.config["ell"] = o.ell;
  sink.config["r2_min"] = o.r2_min;
  sink.config["no_band"] = o.no_band;

  const SweepMode mode = sweep_mode_from_string(o.mode);
  const std::vector<std::size_t> grid = parse_grid(o.grid);
  const ContrastiveProblem problem = resolve_problem(
      o.src, o.cm.seed,
      [&] {
        return make_joint_problem(4, 8, 1.3, 0.5, rng::derive(o.cm.seed, kTagProblem, 0));
      },
      sink.config);
  const Scorer scorer =
      Scorer::random_tabular(problem.anchor_size, problem.item_size,
                             rng::derive(o.cm.seed, kTagScorer, 0),
                             o.amplitude * problem.temperature);

  const SlopeFit fit = scaling_study(problem, scorer, mode, grid, o.trials, o.cm.seed,
                                     phi_from_string(o.phi), ell_from_string(o.ell));
  if (o.cm.format == "csv")
    sink.add("scaling.csv", fit.to_csv());
  else
    sink.add("scaling.json", sink.wrap(fit.to_json()));
  sink.flush();
  std::cout << "scaling " << o.mode << ": slope " << format_double(fit.slope)
            << ", r2 " << format_double(fit.r_squared) << "\n";

  if (o.no_band) return;
  double lo = 0.0;
  double hi = 0.0;
  switch (mode) {
    case SweepMode::InnerMScrl:
      lo = -1.2;
      hi = -0.8;
      break;
    case SweepMode::InnerMSscrlMad:
    case SweepMode::OuterN:
      lo = -0.65;
      hi = -0.35;
      break;
    case SweepMode::InnerMSscrlBias:
      return;  // report-only sweep, no pinned band
  }
  if (fit.slope < lo || fit.slope > hi)
    throw ContractViolation("fitted slope " + format_double(fit.slope) +
                            " outside [" + format_double(lo) + ", " + format_double(hi) +
                            "]");
  if (fit.r_squared < o.r2_min)
    throw ContractViolation("log-log fit r2 " + format_double(fit.r_squared) +
                            " below " + format_double(o.r2_min));
}

struct GapOpts {
  Common cm;
  ProblemSource src;
  std::string mode = "scrl";
  std::size_t n = 64;
  std::size_t m = 16;
  std::size_t trials = 1000;
  std::size_t hypotheses = 8;
};

void run_gap(const GapOpts& o) {
  Sink sink = make_sink(o.cm, "gap");
  sink.config["mode"] = o.mode;
  sink.config["n"] = o.n;
  sink.config["m"] = o.m;
  sink.config["trials"] = o.trials;
  sink.config["hypotheses"] = o.hypotheses;

  const ContrastiveProblem problem = resolve_problem(
      o.src, o.cm.seed,
      [&] {
        return make_joint_problem(4, 8, 1.3, 0.5, rng::derive(o.cm.seed, kTagProblem, 0));
      },
      sink.config);
  TrainConfig config;
  config.max_iters = 200'000;
  config.grad_tol = 1e-9;
  const std::vector<Scorer> set = default_hypothesis_set(
      problem, o.hypotheses, rng::derive(o.cm.seed, kTagScorer, 0), config);
  const GapReport report = generalization_gap(
      problem, set, sample_mode_from_string(o.mode), o.n, o.m, o.trials, o.cm.seed);
  sink.add("gap.json", sink.wrap(report.to_json()));
  sink.flush();
  std::cout << "gap: mean sup gap " << format_double(report.mean) << " over "
            << o.trials << " trials, " << set.size() << " hypotheses\n";
}

struct CriticalOpts {
  Common cm;
  ProblemSource src;
  std::string n_grid = "64:1024:x4";
  std::string m_grid = "4:1024:x2";
  double delta = 0.005;
  std::size_t seeds = 20;
  std::size_t max_iters = 200'000;
  double grad_tol = 1e-8;
  bool no_check = false;
};

void run_critical_m(const CriticalOpts& o) {
  Sink sink = make_sink(o.cm, "critical-m");
  sink.config["n_grid"] = o.n_grid;
  sink.config["m_grid"] = o.m_grid;
  sink.config["delta"] = o.delta;
  sink.config["seeds"] = o.seeds;
  sink.config["max_iters"] = o.max_iters;
  sink.config["grad_tol"] = o.grad_tol;
  sink.config["no_check"] = o.no_check;

  const ContrastiveProblem problem =
      resolve_problem(o.src, o.cm.seed, [] { return default_critical_problem(); },
                      sink.config);
  TrainConfig config;
  config.max_iters = o.max_iters;
  config.grad_tol = o.grad_tol;
  const std::vector<std::size_t> n_grid = parse_grid(o.n_grid);
  const std::vector<std::size_t> m_grid = parse_grid(o.m_grid);

  const CriticalMReport report =
      critical_m_study(problem, n_grid, m_grid, config, o.delta, o.seeds, o.cm.seed);
  if (o.cm.format == "csv")
    sink.add("critical_m.csv", report.to_csv());
  else
    sink.add("critical_m.json", sink.wrap(report.to_json()));
  sink.flush();
  for (const CriticalMRow& row : report.per_n)
    std::cout << "critical-m: n " << row.n << " -> m* " << row.m_star << ", plateau "
              << format_double(row.plateau_auc) << ", exact-negative "
              << format_double(row.exact_neg_auc) << "\n";

  if (o.no_check) return;
  for (std::size_t i = 1; i < report.per_n.size(); ++i)
    if (report.per_n[i].m_star < report.per_n[i - 1].m_star)
      throw ContractViolation("m*(n) decreases between n " +
                              std::to_string(report.per_n[i - 1].n) + " and n " +
                              std::to_string(report.per_n[i].n));
  for (const CriticalMRow& row : report.per_n)
    if (std::abs(row.plateau_auc - row.exact_neg_auc) > o.delta)
      throw ContractViolation("plateau at n " + std::to_string(row.n) + " sits " +
                              format_double(std::abs(row.plateau_auc - row.exact_neg_auc)) +
                              " from the exact-negative reference");
}

struct TrainOpts {
  Common cm;
  ProblemSource src;
  std::string phi = "entropy_risk";
  std::string ell = "linear";
  std::string empirical;  // "", "scrl", "sscrl"
  std::size_t n = 256;
  std::size_t m = 64;
  std::string step_rule = "constant";
  double step = 0.0;
  std::size_t max_iters = 2'000'000;
  double grad_tol = 1e-11;
  double bound = 0.0;
  std::size_t trace_stride = 1000;
};

void run_train(const TrainOpts& o) {
  Sink sink = make_sink(o.cm, "train");
  sink.config["phi"] = o.phi;
  sink.config["ell"] = o.ell;
  sink.config["empirical"] = o.empirical;
  sink.config["n"] = o.n;
  sink.config["m"] = o.m;
  sink.config["step_rule"] = o.step_rule;
  sink.config["step"] = o.step;
  sink.config["max_iters"] = o.max_iters;
  sink.config["grad_tol"] = o.grad_tol;
  sink.config["bound"] = o.bound;
  sink.config["trace_stride"] = o.trace_stride;

  const ContrastiveProblem problem =
      resolve_problem(o.src, o.cm.seed, nullptr, sink.config);
  const Disutility phi = phi_from_string(o.phi);
  const PairwiseLoss ell = ell_from_string(o.ell);
  TrainConfig config;
  if (o.step_rule == "constant")
    config.step_rule = TrainConfig::StepRule::Constant;
  else if (o.step_rule == "inv_sqrt")
    config.step_rule = TrainConfig::StepRule::InvSqrt;
  else
    throw UsageError("unknown step rule '" + o.step_rule + "' (constant | inv_sqrt)");
  config.step = o.step;
  config.max_iters = o.max_iters;
  config.grad_tol = o.grad_tol;
  config.bound = o.bound;
  config.trace_stride = o.trace_stride;

  const Scorer init = Scorer::constant(problem.anchor_size, problem.item_size, 0.0);
  std::pair<Scorer, TrainTrace> trained;
  if (o.empirical.empty()) {
    trained = minimize_population(problem, phi, ell, config, init, /*record_auc=*/true);
  } else if (o.empirical == "scrl") {
    const ScrlSample s =
        sample_scrl(problem, o.n, o.m, rng::derive(o.cm.seed, kTagSample, 0));
    trained = minimize_empirical(s, init, phi, ell, problem.temperature, config);
  } else if (o.empirical == "sscrl") {
    const SscrlSample s =
        sample_sscrl(problem, o.n, o.m, rng::derive(o.cm.seed, kTagSample, 0));
    trained = minimize_empirical(s, init, phi, ell, problem.temperature, config);
  } else {
    throw UsageError("unknown empirical mode '" + o.empirical + "' (scrl | sscrl)");
  }

  const auto& [scorer, trace] = trained;
  nlohmann::json report;
  report["iterations"] = trace.iterations;
  report["final_risk"] = trace.final_risk;
  report["final_grad_norm"] = trace.final_grad_norm;
  report["monotone"] = trace.monotone;
  report["population_risk"] = population_oce_risk(problem, scorer, phi, ell).value;
  report["population_auc"] = auc_score(problem, scorer).score;
  sink.add("train_trace.csv", trace.to_csv());
  sink.add("scorer.json", scorer_to_json_text(scorer));
  sink.add("train.json", sink.wrap(report.dump(2)));
  sink.flush();
  // Wall time goes to stdout only: the written reports must be byte-identical
  // across reruns with the same flags.
  std::cout << "train: " << trace.iterations << " iterations, final risk "
            << format_double(trace.final_risk) << ", grad norm "
            << format_double(trace.final_grad_norm) << " ("
            << format_double(trace.wall_seconds) << " s)\n";
}

struct ZeroShotOpts {
  Common cm;
  std::size_t classes = 4;
  std::size_t items = 12;
  std::size_t anchor = 0;
  double tau = 1.0;
};

void run_zero_shot(const ZeroShotOpts& o) {
  Sink sink = make_sink(o.cm, "zero-shot");
  sink.config["classes"] = o.classes;
  sink.config["items"] = o.items;
  sink.config["anchor"] = o.anchor;
  sink.config["tau"] = o.tau;
  if (o.classes < 2) throw UsageError("--classes must be >= 2");
  if (o.items < o.classes) throw UsageError("--items must be >= --classes");
  if (o.anchor >= o.classes) throw UsageError("--anchor must index a class");

  // Deterministic soft-class layout: each class is a 0.9/0.1 mixture of the
  // uniform distribution on its own item block and a smooth random profile.
  // The noise range exp(+-0.8) keeps every off-block mass below the
  // own-block mass, so the own-class inner product dominates for any seed.
  const std::uint64_t s = rng::derive(o.cm.seed, kTagClasses, 0);
  ClassStructure classes;
  classes.class_count = o.classes;
  classes.item_size = o.items;
  classes.prior.resize(o.classes);
  KahanSum prior_total;
  for (std::size_t c = 0; c < o.classes; ++c) {
    classes.prior[c] = 0.5 + rng::unit(s, 0, c);
    prior_total.add(classes.prior[c]);
  }
  for (double& p : classes.prior) p /= prior_total.value();
  classes.item_dist.resize(o.classes * o.items);
  const std::size_t block = o.items / o.classes;
  const double own_share = 0.9 / static_cast<double>(block);
  for (std::size_t c = 0; c < o.classes; ++c) {
    std::vector<double> noise(o.items);
    KahanSum noise_total;
    for (std::size_t y = 0; y < o.items; ++y) {
      noise[y] = std::exp(0.8 * (2.0 * rng::unit(s, 1 + c, y) - 1.0));
      noise_total.add(noise[y]);
    }
    for (std::size_t y = 0; y < o.items; ++y) {
      double mass = 0.1 * noise[y] / noise_total.value();
      if (y / block == c) mass += own_share;
      classes.item_dist[c * o.items + y] = mass;
    }
  }

  // Anchor = class. The joint prior(c) * D_c(y) gives every anchor the same
  // negative row (the item marginal), which the posterior formula needs.
  std::vector<double> joint(o.classes * o.items);
  for (std::size_t c = 0; c < o.classes; ++c)
    for (std::size_t y = 0; y < o.items; ++y)
      joint[c * o.items + y] = classes.prior[c] * classes.item_dist[c * o.items + y];
  const ContrastiveProblem problem = from_joint(joint, o.classes, o.items, o.tau);
  const Scorer scorer = optimal_scorer(problem).scorer;
  const ZeroShotPosterior post = zero_shot_posterior(problem, classes, scorer, o.anchor);

  KahanSum total;
  for (double p : post.normalized) total.add(p);
  const std::size_t argmax = static_cast<std::size_t>(
      std::max_element(post.normalized.begin(), post.normalized.end()) -
      post.normalized.begin());

  nlohmann::json report;
  report["classes"] = o.classes;
  report["items"] = o.items;
  report["anchor"] = o.anchor;
  report["tau"] = o.tau;
  report["raw"] = post.raw;
  report["normalized"] = post.normalized;
  report["argmax"] = argmax;
  report["normalized_sum"] = total.value();
  sink.add("zero_shot.json", sink.wrap(report.dump(2)));
  sink.flush();
  std::cout << "zero-shot: anchor " << o.anchor << " -> argmax class " << argmax
            << ", posterior " << format_double(post.normalized[argmax]) << "\n";

  if (std::abs(total.value() - 1.0) > 1e-9)
    throw ContractViolation("normalized posterior sums to " +
                            format_double(total.value()));
  if (argmax != o.anchor)
    throw ContractViolation("optimal scorer ranks class " + std::to_string(argmax) +
                            " above the anchor's own class " + std::to_string(o.anchor));
}

struct ValidateOpts {
  Common cm;
  std::string path;
};

void run_validate(const ValidateOpts& o) {
  Sink sink = make_sink(o.cm, "validate");
  sink.config["problem"] = o.path;

  const std::string text = read_file(o.path);
  const ContrastiveProblem problem = problem_from_json(text);
  const std::string round_trip = problem_to_json(problem);
  const ContrastiveProblem reparsed = problem_from_json(round_trip);

  nlohmann::json report;
  report["anchor_size"] = problem.anchor_size;
  report["item_size"] = problem.item_size;
  report["temperature"] = problem.temperature;
  report["homogeneous_negatives"] = problem.homogeneous_negatives();
  report["optimal_risk"] = optimal_risk(problem);
  report["optimum_auc"] = auc_optimum(problem);
  report["round_trip_stable"] = problem_to_json(reparsed) == round_trip;
  sink.add("validate.json", sink.wrap(report.dump(2)));
  sink.flush();
  std::cout << "validate: " << problem.anchor_size << "x" << problem.item_size
            << " problem, temperature " << format_double(problem.temperature) << "\n";
}

}  // namespace

std::vector<std::size_t> parse_grid(const std::string& text) {
  const auto first = text.find(':');
  const auto second = text.find(':', first == std::string::npos ? first : first + 1);
  if (first == std::string::npos || second == std::string::npos ||
      second + 1 >= text.size() || text[second + 1] != 'x')
    throw UsageError("bad grid '" + text + "' (want lo:hi:xK, e.g. 8:1024:x2)");
  std::size_t lo = 0;
  std::size_t hi = 0;
  std::size_t factor = 0;
  try {
    std::size_t used = 0;
    lo = std::stoul(text.substr(0, first), &used);
    if (used != first) throw std::invalid_argument("junk");
    hi = std::stoul(text.substr(first + 1, second - first - 1), &used);
    if (used != second - first - 1) throw std::invalid_argument("junk");
    factor = std::stoul(text.substr(second + 2), &used);
    if (used != text.size() - second - 2) throw std::invalid_argument("junk");
  } catch (const std::logic_error&) {
    throw UsageError("bad grid '" + text + "' (want lo:hi:xK, e.g. 8:1024:x2)");
  }
  if (lo == 0 || hi < lo || factor < 2)
    throw UsageError("bad grid '" + text + "': need 1 <= lo <= hi and K >= 2");
  std::vector<std::size_t> grid;
  for (std::size_t v = lo; v <= hi; v *= factor) {
    grid.push_back(v);
    if (v > hi / factor) break;  // next multiply would overflow or pass hi
  }
  return grid;
}

int run_cli(int argc, const char* const* argv) {
  CLI::App app{"Finite-space laboratory for contrastive risk functionals"};
  app.require_subcommand(1);

  OceCheckOpts oce;
  auto* oce_cmd = app.add_subcommand(
      "oce-check", "certainty-equivalent vs log-sum-exp reformulation");
  add_common(oce_cmd, oce.cm);
  oce_cmd->add_option("--instances", oce.instances)->capture_default_str();
  oce_cmd->add_option("--tol", oce.tol)->capture_default_str();

  DroCheckOpts dro;
  auto* dro_cmd =
      app.add_subcommand("dro-check", "KL robustness dual vs primal routes");
  add_common(dro_cmd, dro.cm);
  dro_cmd->add_option("--instances", dro.instances)->capture_default_str();
  dro_cmd->add_option("--grid-instances", dro.grid_instances)->capture_default_str();
  dro_cmd->add_option("--step", dro.step)->capture_default_str();
  dro_cmd->add_option("--tol", dro.tol)->capture_default_str();
  dro_cmd->add_option("--grid-factor", dro.grid_factor)->capture_default_str();

  ConsistencyOpts consistency;
  auto* consistency_cmd = app.add_subcommand(
      "consistency", "train on the exact risk; verify excess and retrieval gaps");
  add_common(consistency_cmd, consistency.cm);
  consistency_cmd->add_option("--problems", consistency.problems)->capture_default_str();
  consistency_cmd->add_option("--sizes", consistency.sizes)->capture_default_str();
  consistency_cmd->add_option("--floor", consistency.floor)->capture_default_str();
  consistency_cmd->add_option("--phi", consistency.phi)->capture_default_str();
  consistency_cmd->add_option("--ell", consistency.ell)->capture_default_str();
  consistency_cmd->add_option("--excess-tol", consistency.excess_tol)->capture_default_str();
  consistency_cmd->add_option("--gap-tol", consistency.gap_tol,
                              "retrieval tolerance (0 = by objective)");
  consistency_cmd->add_option("--max-iters", consistency.max_iters)->capture_default_str();
  consistency_cmd->add_option("--grad-tol", consistency.grad_tol)->capture_default_str();

  CalibrationOpts calibration;
  auto* calibration_cmd = app.add_subcommand(
      "calibration", "retrieval-shortfall vs excess-risk inequality sweep");
  add_common(calibration_cmd, calibration.cm);
  calibration_cmd->add_option("--problems", calibration.problems)->capture_default_str();
  calibration_cmd->add_option("--scorers", calibration.scorers)->capture_default_str();
  calibration_cmd->add_flag("--controls", calibration.controls,
                            "append optimal-scorer control rows");
  calibration_cmd->add_option("--tol", calibration.tol)->capture_default_str();

  ScalingOpts scaling;
  auto* scaling_cmd =
      app.add_subcommand("scaling", "Monte-Carlo error scaling against m or n");
  add_common(scaling_cmd, scaling.cm);
  add_problem_source(scaling_cmd, scaling.src);
  scaling_cmd->add_option("--mode", scaling.mode)->capture_default_str();
  scaling_cmd->add_option("--grid", scaling.grid)->capture_default_str();
  scaling_cmd->add_option("--trials", scaling.trials)->capture_default_str();
  scaling_cmd->add_option("--amplitude", scaling.amplitude,
                          "scorer amplitude in units of the temperature")
      ->capture_default_str();
  scaling_cmd->add_option("--phi", scaling.phi)->capture_default_str();
  scaling_cmd->add_option("--ell", scaling.ell)->capture_default_str();
  scaling_cmd->add_option("--r2-min", scaling.r2_min)->capture_default_str();
  scaling_cmd->add_flag("--no-band", scaling.no_band, "skip the slope band check");

  GapOpts gap;
  auto* gap_cmd = app.add_subcommand(
      "gap", "sup generalization gap over a registered hypothesis set");
  add_common(gap_cmd, gap.cm);
  add_problem_source(gap_cmd, gap.src);
  gap_cmd->add_option("--mode", gap.mode)->capture_default_str();
  gap_cmd->add_option("--n", gap.n)->capture_default_str();
  gap_cmd->add_option("--m", gap.m)->capture_default_str();
  gap_cmd->add_option("--trials", gap.trials)->capture_default_str();
  gap_cmd->add_option("--hypotheses", gap.hypotheses)->capture_default_str();

  CriticalOpts critical;
  auto* critical_cmd =
      app.add_subcommand("critical-m", "negative-sample saturation study");
  add_common(critical_cmd, critical.cm);
  add_problem_source(critical_cmd, critical.src);
  critical_cmd->add_option("--n-grid", critical.n_grid)->capture_default_str();
  critical_cmd->add_option("--m-grid", critical.m_grid)->capture_default_str();
  critical_cmd->add_option("--delta", critical.delta)->capture_default_str();
  critical_cmd->add_option("--seeds", critical.seeds)->capture_default_str();
  critical_cmd->add_option("--max-iters", critical.max_iters)->capture_default_str();
  critical_cmd->add_option("--grad-tol", critical.grad_tol)->capture_default_str();
  critical_cmd->add_flag("--no-check", critical.no_check,
                         "skip the trend and plateau checks");

  TrainOpts train;
  auto* train_cmd = app.add_subcommand("train", "projected gradient descent");
  add_common(train_cmd, train.cm);
  add_problem_source(train_cmd, train.src);
  train_cmd->add_option("--phi", train.phi)->capture_default_str();
  train_cmd->add_option("--ell", train.ell)->capture_default_str();
  train_cmd->add_option("--empirical", train.empirical,
                        "train on a sampled objective (scrl | sscrl)");
  train_cmd->add_option("--n", train.n)->capture_default_str();
  train_cmd->add_option("--m", train.m)->capture_default_str();
  train_cmd->add_option("--step-rule", train.step_rule)->capture_default_str();
  train_cmd->add_option("--step", train.step, "step size (0 = default)");
  train_cmd->add_option("--max-iters", train.max_iters)->capture_default_str();
  train_cmd->add_option("--grad-tol", train.grad_tol)->capture_default_str();
  train_cmd->add_option("--bound", train.bound, "projection box (0 = default)");
  train_cmd->add_option("--trace-stride", train.trace_stride)->capture_default_str();

  ZeroShotOpts zero;
  auto* zero_cmd =
      app.add_subcommand("zero-shot", "class posterior from a trained scorer");
  add_common(zero_cmd, zero.cm);
  zero_cmd->add_option("--classes", zero.classes)->capture_default_str();
  zero_cmd->add_option("--items", zero.items)->capture_default_str();
  zero_cmd->add_option("--anchor", zero.anchor)->capture_default_str();
  zero_cmd->add_option("--tau", zero.tau)->capture_default_str();

  ValidateOpts validate;
  auto* validate_cmd = app.add_subcommand("validate", "check a problem file");
  add_common(validate_cmd, validate.cm);
  validate_cmd->add_option("--problem", validate.path, "problem JSON file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*oce_cmd) run_oce_check(oce);
    if (*dro_cmd) run_dro_check(dro);
    if (*consistency_cmd) run_consistency(consistency);
    if (*calibration_cmd) run_calibration(calibration);
    if (*scaling_cmd) run_scaling(scaling);
    if (*gap_cmd) run_gap(gap);
    if (*critical_cmd) run_critical_m(critical);
    if (*train_cmd) run_train(train);
    if (*zero_cmd) run_zero_shot(zero);
    if (*validate_cmd) run_validate(validate);
    return 0;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const ContractViolation& e) {
    std::cerr << "contract violation: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace risklab
