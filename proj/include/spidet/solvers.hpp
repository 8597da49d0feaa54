#pragma once

#include <functional>
#include <vector>

#include "spidet/data_model.hpp"
#include "spidet/numerics.hpp"

namespace spidet {

struct LassoConfig {
  double lambda = 0.0;  // penalty level of (1/n)||y - Xb||^2 + lambda*||b||_1
  double tol = 1e-7;    // max coordinate change per full sweep, also KKT slack
  int max_iter = 5000;  // sweep budget
  bool track_objective = false;
};

struct LassoResult {
  Vector coef;
  Vector residual;  // y - X coef
  bool converged = true;
  int sweeps = 0;
  std::vector<double> objective_trace;  // one entry per sweep when tracked
};

// Cyclic coordinate descent with active-set sweeps for
//   (1/n) ||y - X b||^2 + lambda ||b||_1.
// Columns flagged in `excluded` (and identically-zero columns) are pinned at
// zero. On hitting the sweep budget the best iterate is returned with
// converged = false.
LassoResult lasso_cd(const Matrix& x, const Vector& y, const LassoConfig& cfg,
                     const std::vector<unsigned char>* excluded = nullptr,
                     const Vector* warm_start = nullptr);

// Largest penalty with a nonzero lasso solution: max_j |(2/n) x_j^T y|.
double lasso_lambda_max(const Matrix& x, const Vector& y);

// Allocation-free coordinate descent for +-1 designs stored transposed (row j
// of xt holds column j's series, so (1/n)||x_j||^2 = 1). `coef` and `resid`
// are updated in place and must satisfy resid = y - X coef on entry; excluded
// coefficients must enter as zero and stay zero. Returns false when the sweep
// budget ran out.
bool lasso_cd_pm1(const Matrix& xt, const std::vector<unsigned char>* excluded, double lambda,
                  double tol, int max_iter, double* coef, double* resid);

// Least squares via the normal equations. Throws NumericalFailure when X is
// rank deficient.
Vector ols(const Matrix& x, const Vector& y);

struct ScaledLassoResult {
  Vector gamma;
  double sigma_hat = 0.0;
  int iters = 0;
};

// Joint coefficient / noise-level estimation: alternates a lasso at penalty
// sigma * rho0 with sigma^2 = ||y - Z gamma||^2 / n until sigma stabilizes.
// Throws NonConvergence when no fixed point is reached.
ScaledLassoResult scaled_lasso(const Matrix& z, const Vector& y, double rho0,
                               const std::vector<unsigned char>* excluded = nullptr,
                               double tol = 1e-4, int max_iter = 100);

// Momentum state of the accelerated proximal step for the direct-effect
// matrix. Scale parameters start at r_prev = r_curr = 1.
struct FistaState {
  Matrix L_curr;
  Matrix L_prev;
  double r_curr = 1.0;
  double r_prev = 1.0;
};

// One accelerated proximal step: extrapolate, take a gradient step of size
// 1/eta, then apply the nuclear-norm soft threshold at lambda/eta; advances
// the momentum scalars.
FistaState fista_L_step(const FistaState& state,
                        const std::function<Matrix(const Matrix&)>& gradient_at,
                        double lambda, double eta = 2.0);

// Full penalized objective: (1/n) sum_rc ||Y_rc - X_rc b_rc - M_rc L_rc -
// Mnb_rc S_rc||^2 + lambda ||L||_* + sum_rc lambda_rc ||S_rc||_1.
double objective_Q(const PanelData& data, const CoefficientSet& coeffs, double lambda,
                   const Matrix& lambda_rc, const NeighborOrder& order);

}  // namespace spidet
