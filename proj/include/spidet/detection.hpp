#pragma once

#include <string>
#include <vector>

#include "spidet/inference.hpp"

namespace spidet {

// Detected interference locations. `rejected` holds sorted flat coordinates;
// `per_unit` is its unflattening: per_unit[u] lists the rejected neighbor
// ranks of unit u, ascending.
struct DetectionResult {
  std::string method;
  std::vector<long> rejected;
  std::vector<std::vector<int>> per_unit;
  double alpha = 0.0;
  int rounds = 0;
};

// Stepdown multiple testing: reject coordinates above the bootstrap threshold
// of the surviving set, shrink the set, recompute, stop when a round rejects
// nothing. `u` is |sqrt(n) vec(S_hat)| from the main fit.
//
// `restrict_to_nonzero` skips scanning coordinates with u_j = 0; thresholds
// are unchanged and zero coordinates can never exceed them, so the output is
// identical with the flag on or off.
DetectionResult stepdown_detect(const Vector& u, const BootstrapEnsemble& ensemble, double alpha,
                                bool restrict_to_nonzero = false);

// Binary segmentation with bootstrap-calibrated segment tests, re-searching
// after zeroing detected coordinates until the global test accepts. `rounds`
// counts global-test rounds.
DetectionResult birs_detect(const Vector& u, const BootstrapEnsemble& ensemble, double alpha,
                            bool restrict_to_nonzero = false);

// |I1 and I2| / |I1 or I2| for sorted unique index sets; both empty gives 1.
double jaccard(const std::vector<long>& i1, const std::vector<long>& i2);

struct AteEstimate {
  double value = 0.0;
  Matrix per_unit_contributions;   // R x C
  std::vector<int> detected_sizes; // per unit, row-major
};

// Post-detection average treatment effect: per unit, OLS of Y on
// (X, M, detected neighbor treatments); the estimate averages the treatment
// coefficient plus the detected interference coefficients over units.
AteEstimate post_detection_ate(const PanelData& data, const DetectionResult& detected,
                               const NeighborOrder& order);

// Baseline that fixes each unit's neighbors to the edge-sharing ones.
AteEstimate mean_field_ate(const PanelData& data, const NeighborOrder& order);

// Neighbor ranks of the edge-sharing units of `unit`.
std::vector<int> mean_field_ranks(int unit, const NeighborOrder& order);

// Rebuilds the per-unit decomposition of a flat rejected set.
std::vector<std::vector<int>> per_unit_from_flat(const std::vector<long>& rejected,
                                                 const GridShape& shape);

}  // namespace spidet
