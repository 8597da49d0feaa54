#include "spidet/solvers.hpp"

#include <algorithm>
#include <cmath>

namespace spidet {

namespace {

double soft(double z, double t) {
  if (z > t) return z - t;
  if (z < -t) return z + t;
  return 0.0;
}

}  // namespace

LassoResult lasso_cd(const Matrix& x, const Vector& y, const LassoConfig& cfg,
                     const std::vector<unsigned char>* excluded, const Vector* warm_start) {
  const std::size_t n = x.rows();
  const std::size_t p = x.cols();
  if (y.size() != n) throw InvalidInput("lasso_cd: y length mismatch");
  if (!(cfg.tol > 0.0) || cfg.max_iter < 1) throw InvalidInput("lasso_cd: bad config");
  if (cfg.lambda < 0.0) throw InvalidInput("lasso_cd: negative lambda");
  if (excluded && excluded->size() != p) throw InvalidInput("lasso_cd: exclusion mask size");
  if (warm_start && warm_start->size() != p) throw InvalidInput("lasso_cd: warm start size");

  const double inv_n = 1.0 / static_cast<double>(n);
  Vector scale(p, 0.0);  // (1/n) ||x_j||^2
  for (std::size_t j = 0; j < p; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += x(i, j) * x(i, j);
    scale[j] = s * inv_n;
  }

  auto usable = [&](std::size_t j) {
    return scale[j] > 0.0 && !(excluded && (*excluded)[j]);
  };

  LassoResult res;
  res.coef.assign(p, 0.0);
  res.residual = y;
  if (warm_start) {
    for (std::size_t j = 0; j < p; ++j) {
      const double bj = (*warm_start)[j];
      if (bj == 0.0 || !usable(j)) continue;
      res.coef[j] = bj;
      for (std::size_t i = 0; i < n; ++i) res.residual[i] -= x(i, j) * bj;
    }
  }

  const double thr = cfg.lambda / 2.0;
  std::vector<std::size_t> active;
  active.reserve(p);

  auto update_coord = [&](std::size_t j) -> double {
    const double bj = res.coef[j];
    double grad = 0.0;
    for (std::size_t i = 0; i < n; ++i) grad += x(i, j) * res.residual[i];
    const double z = grad * inv_n + scale[j] * bj;
    const double bnew = soft(z, thr) / scale[j];
    const double diff = bnew - bj;
    if (diff != 0.0) {
      for (std::size_t i = 0; i < n; ++i) res.residual[i] -= x(i, j) * diff;
      res.coef[j] = bnew;
    }
    return std::abs(diff);
  };

  auto objective = [&]() {
    double rss = 0.0;
    for (double r : res.residual) rss += r * r;
    double l1 = 0.0;
    for (double b : res.coef) l1 += std::abs(b);
    return rss * inv_n + cfg.lambda * l1;
  };

  // Stationarity residual; lets flat solution sets (p > n) terminate even
  // when coordinates keep drifting.
  auto kkt_residual = [&]() {
    double worst = 0.0;
    for (std::size_t j = 0; j < p; ++j) {
      if (!usable(j)) continue;
      double grad = 0.0;
      for (std::size_t i = 0; i < n; ++i) grad += x(i, j) * res.residual[i];
      grad *= 2.0 * inv_n;
      const double viol = res.coef[j] == 0.0
                              ? std::max(0.0, std::abs(grad) - cfg.lambda)
                              : std::abs(grad - cfg.lambda * (res.coef[j] > 0 ? 1.0 : -1.0));
      worst = std::max(worst, viol);
    }
    return worst;
  };

  bool converged = false;
  while (res.sweeps < cfg.max_iter) {
    // Full sweep; collects the active set for the inner sweeps.
    ++res.sweeps;
    active.clear();
    double max_change = 0.0;
    for (std::size_t j = 0; j < p; ++j) {
      if (!usable(j)) continue;
      max_change = std::max(max_change, update_coord(j));
      if (res.coef[j] != 0.0) active.push_back(j);
    }
    if (cfg.track_objective) res.objective_trace.push_back(objective());
    if (max_change < cfg.tol) {
      converged = true;
      break;
    }
    // Iterate on the active set until it stabilizes, then re-check all.
    while (res.sweeps < cfg.max_iter) {
      ++res.sweeps;
      double inner_change = 0.0;
      for (std::size_t j : active) inner_change = std::max(inner_change, update_coord(j));
      if (cfg.track_objective) res.objective_trace.push_back(objective());
      if (inner_change < cfg.tol) break;
    }
    if (kkt_residual() <= cfg.tol) {
      converged = true;
      break;
    }
  }
  res.converged = converged;
  return res;
}

bool lasso_cd_pm1(const Matrix& xt, const std::vector<unsigned char>* excluded, double lambda,
                  double tol, int max_iter, double* coef, double* resid) {
  const std::size_t q = xt.rows();
  const std::size_t n = xt.cols();
  if (!(tol > 0.0) || max_iter < 1 || lambda < 0.0) {
    throw InvalidInput("lasso_cd_pm1: bad config");
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  const double thr = lambda / 2.0;

  auto skip = [&](std::size_t j) { return excluded && (*excluded)[j]; };

  auto update_coord = [&](std::size_t j) -> double {
    const double* col = xt.row(j);
    double grad = 0.0;
    for (std::size_t i = 0; i < n; ++i) grad += col[i] * resid[i];
    const double z = grad * inv_n + coef[j];
    const double bnew = z > thr ? z - thr : (z < -thr ? z + thr : 0.0);
    const double diff = bnew - coef[j];
    if (diff != 0.0) {
      for (std::size_t i = 0; i < n; ++i) resid[i] -= col[i] * diff;
      coef[j] = bnew;
    }
    return std::abs(diff);
  };

  auto kkt_residual = [&]() {
    double worst = 0.0;
    for (std::size_t j = 0; j < q; ++j) {
      if (skip(j)) continue;
      const double* col = xt.row(j);
      double grad = 0.0;
      for (std::size_t i = 0; i < n; ++i) grad += col[i] * resid[i];
      grad *= 2.0 * inv_n;
      const double viol = coef[j] == 0.0
                              ? std::max(0.0, std::abs(grad) - lambda)
                              : std::abs(grad - lambda * (coef[j] > 0 ? 1.0 : -1.0));
      worst = std::max(worst, viol);
    }
    return worst;
  };

  std::vector<std::size_t> active;
  active.reserve(q);
  int sweeps = 0;
  while (sweeps < max_iter) {
    ++sweeps;
    active.clear();
    double max_change = 0.0;
    for (std::size_t j = 0; j < q; ++j) {
      if (skip(j)) continue;
      max_change = std::max(max_change, update_coord(j));
      if (coef[j] != 0.0) active.push_back(j);
    }
    if (max_change < tol) return true;
    while (sweeps < max_iter) {
      ++sweeps;
      double inner_change = 0.0;
      for (std::size_t j : active) inner_change = std::max(inner_change, update_coord(j));
      if (inner_change < tol) break;
    }
    if (kkt_residual() <= tol) return true;
  }
  return false;
}

double lasso_lambda_max(const Matrix& x, const Vector& y) {
  const std::size_t n = x.rows();
  if (y.size() != n) throw InvalidInput("lasso_lambda_max: y length mismatch");
  double best = 0.0;
  for (std::size_t j = 0; j < x.cols(); ++j) {
    double g = 0.0;
    for (std::size_t i = 0; i < n; ++i) g += x(i, j) * y[i];
    best = std::max(best, std::abs(2.0 * g / static_cast<double>(n)));
  }
  return best;
}

Vector ols(const Matrix& x, const Vector& y) {
  const std::size_t n = x.rows();
  const std::size_t d = x.cols();
  if (y.size() != n) throw InvalidInput("ols: y length mismatch");
  if (n < d) throw NumericalFailure("ols: fewer rows than columns");
  Matrix gram(d, d);
  for (std::size_t a = 0; a < d; ++a) {
    for (std::size_t b = a; b < d; ++b) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) s += x(i, a) * x(i, b);
      gram(a, b) = s;
      gram(b, a) = s;
    }
  }
  CholFactor fac;
  try {
    fac = CholFactor(gram);
  } catch (const NumericalFailure&) {
    throw NumericalFailure("ols: rank-deficient design");
  }
  return fac.solve(transpose_matvec(x, y));
}

ScaledLassoResult scaled_lasso(const Matrix& z, const Vector& y, double rho0,
                               const std::vector<unsigned char>* excluded, double tol,
                               int max_iter) {
  const std::size_t n = z.rows();
  if (y.size() != n) throw InvalidInput("scaled_lasso: y length mismatch");
  if (!(rho0 > 0.0)) throw InvalidInput("scaled_lasso: rho0 must be positive");

  double mean = 0.0;
  for (double v : y) mean += v;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double v : y) var += (v - mean) * (v - mean);
  double sigma = std::sqrt(var / static_cast<double>(n));

  ScaledLassoResult out;
  out.gamma.assign(z.cols(), 0.0);
  for (int iter = 1; iter <= max_iter; ++iter) {
    LassoConfig cfg;
    cfg.lambda = sigma * rho0;
    LassoResult fit = lasso_cd(z, y, cfg, excluded, &out.gamma);
    out.gamma = fit.coef;
    const double sigma_new = norm2(fit.residual) / std::sqrt(static_cast<double>(n));
    out.iters = iter;
    if (std::abs(sigma_new - sigma) <= tol * std::max(sigma, 1e-12)) {
      out.sigma_hat = sigma_new;
      return out;
    }
    sigma = sigma_new;
  }
  throw NonConvergence("scaled_lasso: no fixed point within iteration budget");
}

FistaState fista_L_step(const FistaState& state,
                        const std::function<Matrix(const Matrix&)>& gradient_at, double lambda,
                        double eta) {
  const std::size_t r = state.L_curr.rows();
  const std::size_t c = state.L_curr.cols();
  if (state.L_prev.rows() != r || state.L_prev.cols() != c || r == 0) {
    throw InvalidInput("fista_L_step: state matrices must share a nonempty shape");
  }
  if (!(eta > 0.0)) throw InvalidInput("fista_L_step: eta must be positive");
  if (lambda < 0.0) throw InvalidInput("fista_L_step: negative lambda");

  const double momentum = (state.r_prev - 1.0) / state.r_curr;
  Matrix extrapolated(r, c);
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      extrapolated(i, j) =
          state.L_curr(i, j) + momentum * (state.L_curr(i, j) - state.L_prev(i, j));
    }
  }
  Matrix grad = gradient_at(extrapolated);
  if (grad.rows() != r || grad.cols() != c) {
    throw InvalidInput("fista_L_step: gradient shape mismatch");
  }
  Matrix target(r, c);
  for (std::size_t i = 0; i < r; ++i) {
    for (std::size_t j = 0; j < c; ++j) target(i, j) = extrapolated(i, j) - grad(i, j) / eta;
  }

  FistaState next;
  next.L_prev = state.L_curr;
  next.L_curr = soft_threshold_matrix(target, lambda / eta);
  next.r_prev = state.r_curr;
  next.r_curr = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * state.r_curr * state.r_curr));
  return next;
}

double objective_Q(const PanelData& data, const CoefficientSet& coeffs, double lambda,
                   const Matrix& lambda_rc, const NeighborOrder& order) {
  const int p = data.shape.units();
  if (coeffs.L.rows() != static_cast<std::size_t>(data.shape.rows) ||
      coeffs.L.cols() != static_cast<std::size_t>(data.shape.cols) ||
      coeffs.beta.rows() != static_cast<std::size_t>(p) ||
      coeffs.beta.cols() != static_cast<std::size_t>(data.d) ||
      coeffs.S.rows() != static_cast<std::size_t>(p) ||
      coeffs.S.cols() != static_cast<std::size_t>(data.shape.neighbor_count())) {
    throw InvalidInput("objective_Q: coefficient shapes inconsistent with panel");
  }
  if (lambda_rc.rows() != static_cast<std::size_t>(data.shape.rows) ||
      lambda_rc.cols() != static_cast<std::size_t>(data.shape.cols)) {
    throw InvalidInput("objective_Q: lambda_rc shape mismatch");
  }

  double rss = 0.0;
  double l1_term = 0.0;
  for (int u = 0; u < p; ++u) {
    auto [r, c] = data.shape.unit_coords(u);
    const auto& nb = order.neighbors_of(u);
    const double l_u = coeffs.L(r, c);
    const double* s_u = coeffs.S.row(u);
    const double* b_u = coeffs.beta.row(u);
    for (int i = 0; i < data.n; ++i) {
      double fit = data.m_at(i, u) * l_u;
      for (int k = 0; k < data.d; ++k) fit += data.x_at(i, u, k) * b_u[k];
      const std::size_t base = static_cast<std::size_t>(i) * p;
      for (std::size_t j = 0; j < nb.size(); ++j) {
        if (s_u[j] != 0.0) fit += data.m[base + nb[j]] * s_u[j];
      }
      const double resid = data.y_at(i, u) - fit;
      rss += resid * resid;
    }
    double l1 = 0.0;
    for (std::size_t j = 0; j < nb.size(); ++j) l1 += std::abs(s_u[j]);
    l1_term += lambda_rc(r, c) * l1;
  }
  return rss / static_cast<double>(data.n) + lambda * nuclear_norm(coeffs.L) + l1_term;
}

}  // namespace spidet
