#include "risklab/problem.hpp"

#include <cmath>
#include <json.hpp>

#include "risklab/errors.hpp"
#include "risklab/numerics.hpp"
#include "risklab/rng.hpp"

namespace risklab {

namespace {

constexpr double kInputTol = 1e-9;

// Validates nonnegativity and a row sum within kInputTol of 1, then
// renormalizes so downstream identities see sums exact to ~1 ulp.
void normalize_row(double* row, std::size_t n, const char* what) {
  KahanSum sum;
  for (std::size_t j = 0; j < n; ++j) {
    if (!std::isfinite(row[j]) || row[j] < 0.0)
      throw NotADistribution(std::string(what) + ": negative or non-finite entry");
    sum.add(row[j]);
  }
  const double s = sum.value();
  if (std::fabs(s - 1.0) > kInputTol)
    throw NotADistribution(std::string(what) + ": row sums to " + std::to_string(s));
  for (std::size_t j = 0; j < n; ++j) row[j] /= s;
}

}  // namespace

bool ContrastiveProblem::homogeneous_negatives(double tol) const {
  for (std::size_t x = 1; x < anchor_size; ++x)
    for (std::size_t y = 0; y < item_size; ++y)
      if (std::fabs(neg_cond[x * item_size + y] - neg_cond[y]) > tol) return false;
  return true;
}

ContrastiveProblem new_problem(std::vector<double> anchor_marginal,
                               std::vector<double> pos_cond,
                               std::vector<double> neg_cond,
                               double temperature) {
  const std::size_t nx = anchor_marginal.size();
  if (nx == 0) throw DimensionMismatch("new_problem: no anchors");
  if (pos_cond.size() != neg_cond.size() || pos_cond.size() % nx != 0)
    throw DimensionMismatch("new_problem: conditional matrix shapes disagree");
  const std::size_t ny = pos_cond.size() / nx;
  if (ny == 0) throw DimensionMismatch("new_problem: no items");
  if (!(temperature > 0.0) || !std::isfinite(temperature))
    throw Error("new_problem: temperature must be strictly positive");

  normalize_row(anchor_marginal.data(), nx, "anchor_marginal");
  for (std::size_t x = 0; x < nx; ++x) {
    normalize_row(pos_cond.data() + x * ny, ny, "pos_cond");
    normalize_row(neg_cond.data() + x * ny, ny, "neg_cond");
  }
  for (std::size_t x = 0; x < nx; ++x)
    for (std::size_t y = 0; y < ny; ++y)
      if (pos_cond[x * ny + y] > 0.0 && neg_cond[x * ny + y] == 0.0)
        throw SupportViolation("new_problem: positive mass where negative mass is zero");

  ContrastiveProblem p;
  p.anchor_size = nx;
  p.item_size = ny;
  p.anchor_marginal = std::move(anchor_marginal);
  p.pos_cond = std::move(pos_cond);
  p.neg_cond = std::move(neg_cond);
  p.temperature = temperature;
  return p;
}

ContrastiveProblem from_joint(std::span<const double> joint_xy,
                              std::size_t anchor_size, std::size_t item_size,
                              double temperature) {
  if (joint_xy.size() != anchor_size * item_size)
    throw DimensionMismatch("from_joint: joint size != |X|*|Y|");
  KahanSum total;
  for (double v : joint_xy) {
    if (!std::isfinite(v) || v < 0.0)
      throw NotADistribution("from_joint: negative or non-finite entry");
    total.add(v);
  }
  if (std::fabs(total.value() - 1.0) > kInputTol)
    throw NotADistribution("from_joint: joint does not sum to 1");

  std::vector<double> marginal(anchor_size, 0.0);
  std::vector<double> item_marginal(item_size, 0.0);
  for (std::size_t x = 0; x < anchor_size; ++x) {
    KahanSum row;
    for (std::size_t y = 0; y < item_size; ++y) row.add(joint_xy[x * item_size + y]);
    marginal[x] = row.value();
    if (marginal[x] == 0.0)
      throw ZeroMarginal("from_joint: anchor row sums to 0");
  }
  for (std::size_t y = 0; y < item_size; ++y) {
    KahanSum col;
    for (std::size_t x = 0; x < anchor_size; ++x) col.add(joint_xy[x * item_size + y]);
    item_marginal[y] = col.value();
  }

  std::vector<double> pos(anchor_size * item_size);
  std::vector<double> neg(anchor_size * item_size);
  for (std::size_t x = 0; x < anchor_size; ++x)
    for (std::size_t y = 0; y < item_size; ++y) {
      pos[x * item_size + y] = joint_xy[x * item_size + y] / marginal[x];
      neg[x * item_size + y] = item_marginal[y];
    }
  return new_problem(std::move(marginal), std::move(pos), std::move(neg), temperature);
}

ContrastiveProblem from_labeled(const LabeledJoint& labeled, double temperature) {
  const std::size_t nx = labeled.anchor_size;
  const std::size_t ny = labeled.item_size;
  if (labeled.pos_slice.size() != nx * ny || labeled.neg_slice.size() != nx * ny)
    throw DimensionMismatch("from_labeled: slice shapes disagree");
  KahanSum total;
  for (double v : labeled.pos_slice) {
    if (v < 0.0 || !std::isfinite(v)) throw NotADistribution("from_labeled: bad entry");
    total.add(v);
  }
  for (double v : labeled.neg_slice) {
    if (v < 0.0 || !std::isfinite(v)) throw NotADistribution("from_labeled: bad entry");
    total.add(v);
  }
  if (std::fabs(total.value() - 1.0) > kInputTol)
    throw NotADistribution("from_labeled: tensor does not sum to 1");

  std::vector<double> marginal(nx);
  std::vector<double> pos(nx * ny), neg(nx * ny);
  for (std::size_t x = 0; x < nx; ++x) {
    KahanSum pos_mass, neg_mass;
    for (std::size_t y = 0; y < ny; ++y) {
      pos_mass.add(labeled.pos_slice[x * ny + y]);
      neg_mass.add(labeled.neg_slice[x * ny + y]);
    }
    const double pm = pos_mass.value();
    const double nm = neg_mass.value();
    marginal[x] = pm + nm;
    if (pm == 0.0 || nm == 0.0)
      throw MissingLabelSlice("from_labeled: an anchor is missing one label slice");
    for (std::size_t y = 0; y < ny; ++y) {
      pos[x * ny + y] = labeled.pos_slice[x * ny + y] / pm;
      neg[x * ny + y] = labeled.neg_slice[x * ny + y] / nm;
    }
  }
  return new_problem(std::move(marginal), std::move(pos), std::move(neg), temperature);
}

ContrastiveProblem from_multiclass(const ClassStructure& classes,
                                   std::span<const double> per_class_cond,
                                   double temperature) {
  const std::size_t nc = classes.class_count;
  const std::size_t ny = classes.item_size;
  if (classes.prior.size() != nc) throw DimensionMismatch("from_multiclass: prior size");
  if (per_class_cond.size() != nc * ny)
    throw DimensionMismatch("from_multiclass: per_class_cond shape");
  for (std::size_t c = 0; c < nc; ++c)
    if (classes.prior[c] >= 1.0)
      throw DegenerateClassPrior("from_multiclass: a class holds all prior mass");

  // Anchor c: positives D_c, negatives the renormalized mixture of the rest.
  std::vector<double> marginal(classes.prior);
  std::vector<double> pos(per_class_cond.begin(), per_class_cond.end());
  std::vector<double> neg(nc * ny, 0.0);
  for (std::size_t c = 0; c < nc; ++c) {
    const double rest = 1.0 - classes.prior[c];
    for (std::size_t o = 0; o < nc; ++o) {
      if (o == c) continue;
      const double w = classes.prior[o] / rest;
      for (std::size_t y = 0; y < ny; ++y)
        neg[c * ny + y] += w * per_class_cond[o * ny + y];
    }
  }
  return new_problem(std::move(marginal), std::move(pos), std::move(neg), temperature);
}

std::vector<double> density_ratio(const ContrastiveProblem& problem, std::size_t x) {
  std::vector<double> r(problem.item_size);
  const auto pos = problem.pos_row(x);
  const auto neg = problem.neg_row(x);
  for (std::size_t y = 0; y < problem.item_size; ++y)
    r[y] = (pos[y] == 0.0 && neg[y] == 0.0) ? 0.0 : pos[y] / neg[y];
  return r;
}

namespace {

// Floor-respecting random distribution: floor + (1 - n*floor) * Dirichlet(1).
std::vector<double> random_distribution(CounterRng& gen, std::size_t n, double floor) {
  std::vector<double> e(n);
  KahanSum sum;
  for (std::size_t j = 0; j < n; ++j) {
    // Exponential draws make the normalized vector uniform on the simplex.
    e[j] = -std::log(1.0 - gen.next_unit());
    sum.add(e[j]);
  }
  const double free_mass = 1.0 - floor * static_cast<double>(n);
  std::vector<double> p(n);
  for (std::size_t j = 0; j < n; ++j) p[j] = floor + free_mass * e[j] / sum.value();
  return p;
}

}  // namespace

ContrastiveProblem random_problem(std::size_t anchor_size, std::size_t item_size,
                                  std::uint64_t seed, double min_mass) {
  if (anchor_size == 0 || item_size == 0)
    throw DimensionMismatch("random_problem: empty space");
  if (!(min_mass > 0.0)) throw InfeasibleFloor("random_problem: min_mass must be > 0");
  // The floor applies to every probability entry, anchor marginal included.
  if (min_mass * static_cast<double>(item_size) >= 1.0 ||
      min_mass * static_cast<double>(anchor_size) >= 1.0)
    throw InfeasibleFloor("random_problem: floor * support size >= 1");

  CounterRng gen(seed, 0);
  std::vector<double> marginal = random_distribution(gen, anchor_size, min_mass);
  std::vector<double> pos, neg;
  pos.reserve(anchor_size * item_size);
  neg.reserve(anchor_size * item_size);
  for (std::size_t x = 0; x < anchor_size; ++x) {
    auto row = random_distribution(gen, item_size, min_mass);
    pos.insert(pos.end(), row.begin(), row.end());
  }
  for (std::size_t x = 0; x < anchor_size; ++x) {
    auto row = random_distribution(gen, item_size, min_mass);
    neg.insert(neg.end(), row.begin(), row.end());
  }
  const double log_lo = std::log(0.1), log_hi = std::log(10.0);
  const double tau = std::exp(log_lo + (log_hi - log_lo) * gen.next_unit());
  return new_problem(std::move(marginal), std::move(pos), std::move(neg), tau);
}

std::string problem_to_json(const ContrastiveProblem& problem) {
  nlohmann::json j;
  j["anchor_marginal"] = problem.anchor_marginal;
  auto rows = [&](const std::vector<double>& m) {
    nlohmann::json out = nlohmann::json::array();
    for (std::size_t x = 0; x < problem.anchor_size; ++x) {
      nlohmann::json row = nlohmann::json::array();
      for (std::size_t y = 0; y < problem.item_size; ++y)
        row.push_back(m[x * problem.item_size + y]);
      out.push_back(std::move(row));
    }
    return out;
  };
  j["pos_cond"] = rows(problem.pos_cond);
  j["neg_cond"] = rows(problem.neg_cond);
  j["temperature"] = problem.temperature;
  return j.dump(2);
}

ContrastiveProblem problem_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("problem_from_json: parse error: ") + e.what());
  }
  if (!j.contains("anchor_marginal") || !j.contains("pos_cond") ||
      !j.contains("neg_cond") || !j.contains("temperature"))
    throw UsageError("problem_from_json: missing required key");
  std::vector<double> marginal = j["anchor_marginal"].get<std::vector<double>>();
  auto flat = [](const nlohmann::json& rows) {
    std::vector<double> out;
    for (const auto& row : rows)
      for (const auto& v : row) out.push_back(v.get<double>());
    return out;
  };
  std::vector<double> pos = flat(j["pos_cond"]);
  std::vector<double> neg = flat(j["neg_cond"]);
  return new_problem(std::move(marginal), std::move(pos), std::move(neg),
                     j["temperature"].get<double>());
}

}  // namespace risklab
