#include "spidet/detection.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace spidet {

namespace {

std::string unit_label(const GridShape& shape, int u) {
  auto [r, c] = shape.unit_coords(u);
  std::ostringstream os;
  os << "(" << r + 1 << "," << c + 1 << ")";
  return os.str();
}

void check_detect_inputs(const Vector& u, const BootstrapEnsemble& ensemble, double alpha) {
  if (static_cast<long>(u.size()) != ensemble.p) {
    throw InvalidInput("detection: statistic and ensemble dimensions differ");
  }
  if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidInput("detection: alpha outside (0,1)");
}

// Unit count P from p = P(P-1); p determines P uniquely. Returns 0 when the
// length does not decompose (detection still works at the flat level, with no
// per-unit view).
int units_from_len(long p) {
  const long root = static_cast<long>((1.0 + std::sqrt(1.0 + 4.0 * static_cast<double>(p))) / 2.0);
  for (long cand = std::max<long>(root - 2, 2); cand <= root + 2; ++cand) {
    if (cand * (cand - 1) == p) return static_cast<int>(cand);
  }
  return 0;
}

std::vector<std::vector<int>> unflatten(const std::vector<long>& rejected, long p) {
  const int units = units_from_len(p);
  if (units == 0) return {};
  std::vector<std::vector<int>> per_unit(units);
  for (long j : rejected) {
    per_unit[j / (units - 1)].push_back(static_cast<int>(j % (units - 1)));
  }
  for (auto& v : per_unit) std::sort(v.begin(), v.end());
  return per_unit;
}

}  // namespace

std::vector<std::vector<int>> per_unit_from_flat(const std::vector<long>& rejected,
                                                 const GridShape& shape) {
  std::vector<std::vector<int>> per_unit(shape.units());
  for (long j : rejected) {
    auto [unit, rank] = flat_inverse(j, shape);
    per_unit[unit].push_back(rank);
  }
  for (auto& v : per_unit) std::sort(v.begin(), v.end());
  return per_unit;
}

DetectionResult stepdown_detect(const Vector& u, const BootstrapEnsemble& ensemble, double alpha,
                                bool restrict_to_nonzero) {
  check_detect_inputs(u, ensemble, alpha);
  const long p = ensemble.p;

  std::vector<long> surviving(p);
  for (long j = 0; j < p; ++j) surviving[j] = j;

  DetectionResult res;
  res.method = "stepdown";
  res.alpha = alpha;
  for (long round = 0; round < p && !surviving.empty(); ++round) {
    ++res.rounds;
    const double c = critical_value(ensemble, alpha, surviving);
    std::vector<long> keep;
    keep.reserve(surviving.size());
    bool any = false;
    for (long j : surviving) {
      if (restrict_to_nonzero && u[j] == 0.0) {
        keep.push_back(j);
        continue;
      }
      if (u[j] > c) {
        res.rejected.push_back(j);
        any = true;
      } else {
        keep.push_back(j);
      }
    }
    surviving.swap(keep);
    if (!any) break;
  }
  std::sort(res.rejected.begin(), res.rejected.end());
  res.per_unit = unflatten(res.rejected, p);
  return res;
}

DetectionResult birs_detect(const Vector& u, const BootstrapEnsemble& ensemble, double alpha,
                            bool restrict_to_nonzero) {
  check_detect_inputs(u, ensemble, alpha);
  const long p = ensemble.p;

  std::vector<char> detected(p, 0);
  DetectionResult res;
  res.method = "birs";
  res.alpha = alpha;

  struct Segment {
    long lo, hi;  // [lo, hi)
  };

  auto live_indices = [&](long lo, long hi, std::vector<long>& out) {
    for (long j = lo; j < hi; ++j) {
      if (!detected[j]) out.push_back(j);
    }
  };
  auto segment_max = [&](const Segment& s) {
    double best = 0.0;
    for (long j = s.lo; j < s.hi; ++j) {
      if (detected[j]) continue;
      if (restrict_to_nonzero && u[j] == 0.0) continue;
      best = std::max(best, u[j]);
    }
    return best;
  };

  for (;;) {
    ++res.rounds;
    std::vector<long> all_live;
    all_live.reserve(p);
    live_indices(0, p, all_live);
    if (all_live.empty()) break;
    const double c_full = critical_value(ensemble, alpha, all_live);
    double t_full = 0.0;
    for (long j : all_live) t_full = std::max(t_full, u[j]);
    if (!(t_full > c_full)) break;  // global test accepts

    // One binary-segmentation pass over the zeroed-out statistic.
    std::vector<long> pass_detected;
    std::vector<Segment> level{{0, p / 2}, {p / 2, p}};
    while (!level.empty()) {
      std::vector<long> eta;
      for (const Segment& s : level) live_indices(s.lo, s.hi, eta);
      if (eta.empty()) break;
      const double c_level = critical_value(ensemble, alpha, eta);
      std::vector<Segment> next;
      for (const Segment& s : level) {
        if (!(segment_max(s) > c_level)) continue;
        if (s.hi - s.lo == 1) {
          pass_detected.push_back(s.lo);
        } else {
          const long mid = s.lo + (s.hi - s.lo) / 2;
          next.push_back({s.lo, mid});
          next.push_back({mid, s.hi});
        }
      }
      level.swap(next);
    }

    if (pass_detected.empty()) break;
    for (long j : pass_detected) {
      detected[j] = 1;
      res.rejected.push_back(j);
    }
  }
  std::sort(res.rejected.begin(), res.rejected.end());
  res.per_unit = unflatten(res.rejected, p);
  return res;
}

double jaccard(const std::vector<long>& i1, const std::vector<long>& i2) {
  if (i1.empty() && i2.empty()) return 1.0;
  std::size_t a = 0, b = 0, both = 0;
  while (a < i1.size() && b < i2.size()) {
    if (i1[a] == i2[b]) {
      ++both;
      ++a;
      ++b;
    } else if (i1[a] < i2[b]) {
      ++a;
    } else {
      ++b;
    }
  }
  const double uni = static_cast<double>(i1.size() + i2.size() - both);
  return static_cast<double>(both) / uni;
}

AteEstimate post_detection_ate(const PanelData& data, const DetectionResult& detected,
                               const NeighborOrder& order) {
  data.validate();
  const int p = data.shape.units();
  if (detected.per_unit.size() != static_cast<std::size_t>(p)) {
    throw InvalidInput("post_detection_ate: detection result does not match the grid");
  }

  AteEstimate out;
  out.per_unit_contributions = Matrix(data.shape.rows, data.shape.cols);
  out.detected_sizes.assign(p, 0);

  double total = 0.0;
  for (int u = 0; u < p; ++u) {
    const auto& ranks = detected.per_unit[u];
    const int s = static_cast<int>(ranks.size());
    out.detected_sizes[u] = s;
    if (data.d + 1 + s >= data.n) {
      throw InvalidInput("post_detection_ate: unit " + unit_label(data.shape, u) +
                         " has too many detected neighbors (" + std::to_string(s) +
                         ") for n = " + std::to_string(data.n));
    }
    Matrix z(data.n, data.d + 1 + s);
    Matrix nb = build_neighbor_design(data, u, order);
    Matrix xb = data.x_block(u);
    for (int i = 0; i < data.n; ++i) {
      double* zrow = z.row(i);
      const double* xrow = xb.row(i);
      for (int k = 0; k < data.d; ++k) zrow[k] = xrow[k];
      zrow[data.d] = data.m_at(i, u);
      for (int j = 0; j < s; ++j) zrow[data.d + 1 + j] = nb(i, ranks[j]);
    }
    Vector gamma;
    try {
      gamma = ols(z, data.y_col(u));
    } catch (const NumericalFailure& e) {
      throw NumericalFailure(std::string(e.what()) + " at unit " + unit_label(data.shape, u));
    }
    double contribution = gamma[data.d];
    for (int j = 0; j < s; ++j) contribution += gamma[data.d + 1 + j];
    auto [r, c] = data.shape.unit_coords(u);
    out.per_unit_contributions(r, c) = contribution;
    total += contribution;
  }
  out.value = total / p;
  return out;
}

std::vector<int> mean_field_ranks(int unit, const NeighborOrder& order) {
  const GridShape& shape = order.shape();
  auto [r, c] = shape.unit_coords(unit);
  std::vector<int> ranks;
  const int dr[4] = {-1, 1, 0, 0};
  const int dc[4] = {0, 0, -1, 1};
  for (int k = 0; k < 4; ++k) {
    const int rr = r + dr[k];
    const int cc = c + dc[k];
    if (rr < 0 || rr >= shape.rows || cc < 0 || cc >= shape.cols) continue;
    ranks.push_back(order.rank_of(unit, shape.unit_id(rr, cc)));
  }
  std::sort(ranks.begin(), ranks.end());
  return ranks;
}

AteEstimate mean_field_ate(const PanelData& data, const NeighborOrder& order) {
  DetectionResult det;
  det.method = "mean_field";
  det.per_unit.resize(data.shape.units());
  for (int u = 0; u < data.shape.units(); ++u) {
    det.per_unit[u] = mean_field_ranks(u, order);
    for (int rank : det.per_unit[u]) det.rejected.push_back(flat_index(u, rank, data.shape));
  }
  std::sort(det.rejected.begin(), det.rejected.end());
  return post_detection_ate(data, det, order);
}

}  // namespace spidet
