#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace risklab {

// Scoring function s(x, y) over a finite anchor/item grid. Either a dense
// table or a low-rank inner-product form <U_x, V_y>. Immutable by
// convention; trainers build new instances.
struct Scorer {
  enum class Kind { Tabular, LinearEmbed };

  Kind kind = Kind::Tabular;
  std::size_t anchor_size = 0;
  std::size_t item_size = 0;
  std::size_t dim = 0;        // LinearEmbed only
  std::vector<double> table;  // Tabular: |X| x |Y| row-major
  std::vector<double> U;      // LinearEmbed: |X| x d
  std::vector<double> V;      // LinearEmbed: |Y| x d

  double score(std::size_t x, std::size_t y) const;
  std::span<const double> row(std::size_t x) const;  // Tabular only

  // Largest |s(x,y)| over the grid.
  double bound() const;

  // Dense copy; for LinearEmbed this materializes the inner products.
  Scorer materialized() const;

  // Scores transposed: t(y, x) = s(x, y).
  Scorer transposed() const;

  static Scorer tabular(std::size_t anchor_size, std::size_t item_size,
                        std::vector<double> values);
  static Scorer constant(std::size_t anchor_size, std::size_t item_size,
                         double value);
  static Scorer linear_embed(std::size_t anchor_size, std::size_t item_size,
                             std::size_t dim, std::vector<double> u,
                             std::vector<double> v);
  // Entries independent uniform in [-amplitude, amplitude], deterministic
  // in the seed.
  static Scorer random_tabular(std::size_t anchor_size, std::size_t item_size,
                               std::uint64_t seed, double amplitude);
};

}  // namespace risklab
