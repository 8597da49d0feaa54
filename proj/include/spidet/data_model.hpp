#pragma once

#include <utility>
#include <vector>

#include "spidet/numerics.hpp"

namespace spidet {

// R x C grid of spatial units. Grid coordinates are 1-based in files and CLI
// output, 0-based everywhere inside the library; a unit's flat id is
// r * cols + c with 0-based (r, c).
struct GridShape {
  int rows = 0;
  int cols = 0;

  GridShape() = default;
  GridShape(int r, int c) : rows(r), cols(c) {
    if (r < 2 || c < 2) throw InvalidInput("GridShape: needs at least 2 rows and 2 cols");
  }

  int units() const { return rows * cols; }
  int neighbor_count() const { return units() - 1; }
  // Length of vec(S): one row of P-1 coefficients per unit.
  long interference_len() const {
    return static_cast<long>(units()) * static_cast<long>(neighbor_count());
  }

  int unit_id(int r, int c) const {
    if (r < 0 || r >= rows || c < 0 || c >= cols) {
      throw InvalidInput("GridShape: unit outside grid");
    }
    return r * cols + c;
  }
  std::pair<int, int> unit_coords(int unit) const {
    if (unit < 0 || unit >= units()) throw InvalidInput("GridShape: unit id out of range");
    return {unit / cols, unit % cols};
  }

  bool operator==(const GridShape& o) const { return rows == o.rows && cols == o.cols; }
};

// Distance-ordered neighbor lists: for every unit, the other P-1 units sorted
// by Euclidean distance to it, ties broken row-major (smaller row first, then
// smaller column).
class NeighborOrder {
 public:
  explicit NeighborOrder(GridShape shape);

  const GridShape& shape() const { return shape_; }

  // Neighbor unit ids of `unit` in rank order (length P-1).
  const std::vector<int>& neighbors_of(int unit) const;

  // Rank of `other` in the list of `unit`; throws when unit == other.
  int rank_of(int unit, int other) const;

 private:
  GridShape shape_;
  std::vector<std::vector<int>> order_;
  std::vector<std::vector<int>> rank_;
};

// Flat position of interference coefficient (unit, rank): lexicographic in
// (row, col, rank). This ordering is shared by estimation, the bootstrap
// ensemble and both detectors.
long flat_index(int unit, int rank, const GridShape& shape);
std::pair<int, int> flat_inverse(long index, const GridShape& shape);  // (unit, rank)

// Observed panel: outcomes Y, state covariates X and treatments M for n
// observations on every grid unit.
struct PanelData {
  GridShape shape;
  int n = 0;
  int d = 0;
  Vector y;  // [i*P + u]
  Vector x;  // [(i*P + u)*d + k]
  Vector m;  // [i*P + u], entries in {-1, +1}

  double y_at(int i, int u) const { return y[static_cast<std::size_t>(i) * shape.units() + u]; }
  double m_at(int i, int u) const { return m[static_cast<std::size_t>(i) * shape.units() + u]; }
  double x_at(int i, int u, int k) const {
    return x[(static_cast<std::size_t>(i) * shape.units() + u) * d + k];
  }

  Vector y_col(int u) const;
  Vector m_col(int u) const;
  Matrix x_block(int u) const;  // n x d

  // Checks tensor sizes, finiteness and that treatments are exactly +-1.
  void validate() const;
};

// Model coefficients: per-unit state effects, the direct-effect matrix and
// the interference tensor in canonical neighbor-rank order.
struct CoefficientSet {
  Matrix beta;  // P x d, row u
  Matrix L;     // R x C
  Matrix S;     // P x (P-1), row u holds S_u in neighbor-rank order

  // vec(S) in the canonical flat order (row-major storage coincides with the
  // lexicographic (r, c, rank) ordering).
  const Vector& interference_vec() const { return S.storage(); }
};

// n x (P-1) design whose column j is the treatment series of the j-th ordered
// neighbor of `unit`.
Matrix build_neighbor_design(const PanelData& data, int unit, const NeighborOrder& order);

// Panel restricted to the given observation indices (order preserved).
PanelData subset_rows(const PanelData& data, const std::vector<int>& rows);

}  // namespace spidet
