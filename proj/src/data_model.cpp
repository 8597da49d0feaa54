#include "spidet/data_model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace spidet {

NeighborOrder::NeighborOrder(GridShape shape) : shape_(shape) {
  const int p = shape_.units();
  order_.assign(p, {});
  rank_.assign(p, std::vector<int>(p, -1));
  for (int u = 0; u < p; ++u) {
    auto [r0, c0] = shape_.unit_coords(u);
    std::vector<int> others;
    others.reserve(p - 1);
    for (int v = 0; v < p; ++v) {
      if (v != u) others.push_back(v);
    }
    std::sort(others.begin(), others.end(), [&](int a, int b) {
      auto [ra, ca] = shape_.unit_coords(a);
      auto [rb, cb] = shape_.unit_coords(b);
      const long da = static_cast<long>(ra - r0) * (ra - r0) + static_cast<long>(ca - c0) * (ca - c0);
      const long db = static_cast<long>(rb - r0) * (rb - r0) + static_cast<long>(cb - c0) * (cb - c0);
      if (da != db) return da < db;
      if (ra != rb) return ra < rb;
      return ca < cb;
    });
    for (int j = 0; j < p - 1; ++j) rank_[u][others[j]] = j;
    order_[u] = std::move(others);
  }
}

const std::vector<int>& NeighborOrder::neighbors_of(int unit) const {
  if (unit < 0 || unit >= shape_.units()) throw InvalidInput("NeighborOrder: unit out of range");
  return order_[unit];
}

int NeighborOrder::rank_of(int unit, int other) const {
  if (unit < 0 || unit >= shape_.units() || other < 0 || other >= shape_.units()) {
    throw InvalidInput("NeighborOrder: unit out of range");
  }
  const int r = rank_[unit][other];
  if (r < 0) throw InvalidInput("NeighborOrder: a unit is not its own neighbor");
  return r;
}

long flat_index(int unit, int rank, const GridShape& shape) {
  if (unit < 0 || unit >= shape.units() || rank < 0 || rank >= shape.neighbor_count()) {
    throw InvalidInput("flat_index: coordinate out of range");
  }
  return static_cast<long>(unit) * shape.neighbor_count() + rank;
}

std::pair<int, int> flat_inverse(long index, const GridShape& shape) {
  if (index < 0 || index >= shape.interference_len()) {
    throw InvalidInput("flat_inverse: index out of range");
  }
  const int q = shape.neighbor_count();
  return {static_cast<int>(index / q), static_cast<int>(index % q)};
}

Vector PanelData::y_col(int u) const {
  const int p = shape.units();
  Vector out(n);
  for (int i = 0; i < n; ++i) out[i] = y[static_cast<std::size_t>(i) * p + u];
  return out;
}

Vector PanelData::m_col(int u) const {
  const int p = shape.units();
  Vector out(n);
  for (int i = 0; i < n; ++i) out[i] = m[static_cast<std::size_t>(i) * p + u];
  return out;
}

Matrix PanelData::x_block(int u) const {
  const int p = shape.units();
  Matrix out(n, d);
  for (int i = 0; i < n; ++i) {
    const std::size_t base = (static_cast<std::size_t>(i) * p + u) * d;
    for (int k = 0; k < d; ++k) out(i, k) = x[base + k];
  }
  return out;
}

void PanelData::validate() const {
  const std::size_t p = shape.units();
  if (n < 1) throw InvalidInput("PanelData: needs at least one observation");
  if (d < 1) throw InvalidInput("PanelData: needs at least one state covariate");
  if (y.size() != static_cast<std::size_t>(n) * p) throw InvalidInput("PanelData: Y size mismatch");
  if (m.size() != static_cast<std::size_t>(n) * p) throw InvalidInput("PanelData: M size mismatch");
  if (x.size() != static_cast<std::size_t>(n) * p * d) {
    throw InvalidInput("PanelData: X size mismatch");
  }
  for (double v : y) {
    if (!std::isfinite(v)) throw InvalidInput("PanelData: non-finite outcome");
  }
  for (double v : x) {
    if (!std::isfinite(v)) throw InvalidInput("PanelData: non-finite covariate");
  }
  for (double v : m) {
    if (v != 1.0 && v != -1.0) throw InvalidInput("PanelData: treatments must be -1 or +1");
  }
}

PanelData subset_rows(const PanelData& data, const std::vector<int>& rows) {
  const int p = data.shape.units();
  PanelData out;
  out.shape = data.shape;
  out.n = static_cast<int>(rows.size());
  out.d = data.d;
  out.y.reserve(rows.size() * p);
  out.m.reserve(rows.size() * p);
  out.x.reserve(rows.size() * p * data.d);
  for (int i : rows) {
    if (i < 0 || i >= data.n) throw InvalidInput("subset_rows: row index out of range");
    const std::size_t base = static_cast<std::size_t>(i) * p;
    out.y.insert(out.y.end(), data.y.begin() + base, data.y.begin() + base + p);
    out.m.insert(out.m.end(), data.m.begin() + base, data.m.begin() + base + p);
    const std::size_t xbase = base * data.d;
    out.x.insert(out.x.end(), data.x.begin() + xbase,
                 data.x.begin() + xbase + static_cast<std::size_t>(p) * data.d);
  }
  return out;
}

Matrix build_neighbor_design(const PanelData& data, int unit, const NeighborOrder& order) {
  if (unit < 0 || unit >= data.shape.units()) {
    throw InvalidInput("build_neighbor_design: unit outside grid");
  }
  const auto& nb = order.neighbors_of(unit);
  const int p = data.shape.units();
  Matrix out(data.n, nb.size());
  for (int i = 0; i < data.n; ++i) {
    const std::size_t base = static_cast<std::size_t>(i) * p;
    double* row = out.row(i);
    for (std::size_t j = 0; j < nb.size(); ++j) row[j] = data.m[base + nb[j]];
  }
  return out;
}

}  // namespace spidet
