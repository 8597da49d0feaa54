#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "spidet/data_model.hpp"
#include "spidet/solvers.hpp"

namespace spidet {

struct FitConfig {
  double lambda = 0.0;  // nuclear penalty; used when lambda_cv is false
  bool lambda_cv = true;
  double A = 2.0 * 1.7320508075688772;  // sparse-penalty multiplier, default 2*sqrt(3)
  double tau = 1e-4;                    // outer convergence tolerance
  int max_outer_iter = 500;
  int cv_folds = 5;
  std::uint64_t seed = 0;
  bool allow_unpenalized = false;  // debug bypass of the A > 2*sqrt(2) bound
  int threads = 1;
};

struct FitResult {
  GridShape shape;
  int n = 0;
  int d = 0;
  CoefficientSet coeffs;
  Matrix sigma_hat;       // R x C noise levels
  double lambda_used = 0.0;
  Matrix lambda_rc_used;  // R x C, A * sigma_hat * sqrt(log(RC)/n)
  int outer_iters = 0;
  bool converged = false;
  double final_delta = 0.0;
  std::vector<double> objective_trace;  // objective at init, then per iteration
  std::vector<std::string> warnings;
};

// Cached per-unit design blocks shared by the profiling loop, the noise
// estimation and the bootstrap.
struct UnitWorkspace {
  Matrix x;            // n x d
  Vector m;            // length n
  Matrix neighbors;    // n x (P-1) in canonical neighbor order
  Matrix neighbors_t;  // (P-1) x n: the same design stored column-contiguous
  Matrix xtx;          // d x d Gram matrix
  CholFactor xtx_chol;
  std::vector<unsigned char> excluded;  // constant neighbor columns, pinned at 0
};

std::vector<UnitWorkspace> build_unit_workspaces(const PanelData& data, const NeighborOrder& order,
                                                 std::vector<std::string>* warnings = nullptr);

// Per-unit noise levels via the scaled lasso of Y_rc on (X_rc, M_rc, M_-rc).
// Units whose scaled lasso fails to converge fall back to the OLS residual SD
// on (X_rc, M_rc) and are reported in `warnings`.
Matrix estimate_noise_levels(const PanelData& data, const NeighborOrder& order, int threads = 1,
                             std::vector<std::string>* warnings = nullptr);

// Two-layer profiling: per outer iteration an accelerated proximal update of
// L, per-unit OLS for beta, then per-unit lasso for S, until the summed
// relative coefficient change drops below tau.
FitResult fit_profiling(const PanelData& data, const FitConfig& cfg);

struct CvResult {
  std::vector<double> grid;         // ascending candidate penalties
  Matrix fold_scores;               // grid x folds held-out mean squared error
  std::vector<double> mean_scores;  // per grid point
  double chosen = 0.0;
};

// 5-fold (by default) cross validation of the nuclear penalty over a 20-point
// log grid anchored at the operator norm of the profiled gradient at L = 0.
CvResult select_lambda_cv(const PanelData& data, const FitConfig& cfg);

}  // namespace spidet
