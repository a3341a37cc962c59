#include "risklab/scorer.hpp"

#include <cmath>
#include <cstdlib>

#include "risklab/errors.hpp"
#include "risklab/rng.hpp"

namespace risklab {

namespace {

void check_finite(std::span<const double> v, const char* what) {
  for (double x : v) {
    if (!std::isfinite(x)) throw NonFiniteInput(std::string(what) + " contains a non-finite entry");
  }
}

}  // namespace

double Scorer::score(std::size_t x, std::size_t y) const {
  if (kind == Kind::Tabular) return table[x * item_size + y];
  double acc = 0.0;
  const double* u = U.data() + x * dim;
  const double* v = V.data() + y * dim;
  for (std::size_t k = 0; k < dim; ++k) acc += u[k] * v[k];
  return acc;
}

std::span<const double> Scorer::row(std::size_t x) const {
  if (kind != Kind::Tabular) throw ShapeMismatch("row() requires a tabular scorer");
  return {table.data() + x * item_size, item_size};
}

double Scorer::bound() const {
  double b = 0.0;
  for (std::size_t x = 0; x < anchor_size; ++x)
    for (std::size_t y = 0; y < item_size; ++y) b = std::max(b, std::abs(score(x, y)));
  return b;
}

Scorer Scorer::materialized() const {
  if (kind == Kind::Tabular) return *this;
  std::vector<double> values(anchor_size * item_size);
  for (std::size_t x = 0; x < anchor_size; ++x)
    for (std::size_t y = 0; y < item_size; ++y) values[x * item_size + y] = score(x, y);
  return tabular(anchor_size, item_size, std::move(values));
}

Scorer Scorer::transposed() const {
  if (kind == Kind::LinearEmbed) {
    Scorer t;
    t.kind = Kind::LinearEmbed;
    t.anchor_size = item_size;
    t.item_size = anchor_size;
    t.dim = dim;
    t.U = V;
    t.V = U;
    return t;
  }
  std::vector<double> values(anchor_size * item_size);
  for (std::size_t x = 0; x < anchor_size; ++x)
    for (std::size_t y = 0; y < item_size; ++y) values[y * anchor_size + x] = table[x * item_size + y];
  return tabular(item_size, anchor_size, std::move(values));
}

Scorer Scorer::tabular(std::size_t anchor_size, std::size_t item_size,
                       std::vector<double> values) {
  if (anchor_size == 0 || item_size == 0) throw DimensionMismatch("scorer dimensions must be positive");
  if (values.size() != anchor_size * item_size)
    throw DimensionMismatch("scorer table size does not match anchor_size * item_size");
  check_finite(values, "scorer table");
  Scorer s;
  s.kind = Kind::Tabular;
  s.anchor_size = anchor_size;
  s.item_size = item_size;
  s.table = std::move(values);
  return s;
}

Scorer Scorer::constant(std::size_t anchor_size, std::size_t item_size, double value) {
  return tabular(anchor_size, item_size,
                 std::vector<double>(anchor_size * item_size, value));
}

Scorer Scorer::linear_embed(std::size_t anchor_size, std::size_t item_size,
                            std::size_t dim, std::vector<double> u,
                            std::vector<double> v) {
  if (anchor_size == 0 || item_size == 0 || dim == 0)
    throw DimensionMismatch("scorer dimensions must be positive");
  if (u.size() != anchor_size * dim) throw DimensionMismatch("U size does not match anchor_size * dim");
  if (v.size() != item_size * dim) throw DimensionMismatch("V size does not match item_size * dim");
  check_finite(u, "U");
  check_finite(v, "V");
  Scorer s;
  s.kind = Kind::LinearEmbed;
  s.anchor_size = anchor_size;
  s.item_size = item_size;
  s.dim = dim;
  s.U = std::move(u);
  s.V = std::move(v);
  return s;
}

Scorer Scorer::random_tabular(std::size_t anchor_size, std::size_t item_size,
                              std::uint64_t seed, double amplitude) {
  if (!(amplitude >= 0.0) || !std::isfinite(amplitude))
    throw NonFiniteInput("amplitude must be finite and nonnegative");
  std::vector<double> values(anchor_size * item_size);
  for (std::size_t i = 0; i < values.size(); ++i)
    values[i] = amplitude * (2.0 * rng::unit(seed, 0, i) - 1.0);
  return tabular(anchor_size, item_size, std::move(values));
}

}  // namespace risklab
