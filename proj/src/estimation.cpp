#include "spidet/estimation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>

#include "spidet/parallel.hpp"

namespace spidet {

namespace {

std::string unit_label(const GridShape& shape, int u) {
  auto [r, c] = shape.unit_coords(u);
  std::ostringstream os;
  os << "(" << r + 1 << "," << c + 1 << ")";
  return os.str();
}

double rel_change(double diff_norm, double prev_norm) {
  return prev_norm > 0.0 ? diff_norm / prev_norm : diff_norm;
}

double frob_diff(const Matrix& a, const Matrix& b) {
  double s = 0.0;
  const auto& av = a.storage();
  const auto& bv = b.storage();
  for (std::size_t i = 0; i < av.size(); ++i) {
    const double dlt = av[i] - bv[i];
    s += dlt * dlt;
  }
  return std::sqrt(s);
}

struct ProfileOutput {
  CoefficientSet coeffs;
  int outer_iters = 0;
  bool converged = false;
  double final_delta = 0.0;
  std::vector<double> objective_trace;
};

// The profiling engine. Maintains the residual tensor E = Y - X beta - M L -
// Mnb S in unit-major layout (resid[u*n + i]) and updates it in place after
// every stage, so each outer iteration streams contiguous per-unit slices.
ProfileOutput profile_engine(const PanelData& data, const std::vector<UnitWorkspace>& ws,
                             double lambda, const Matrix& lambda_rc, const FitConfig& cfg,
                             const CoefficientSet* warm, bool track_objective) {
  const int p = data.shape.units();
  const int n = data.n;
  const int d = data.d;
  const int q = data.shape.neighbor_count();
  const double inv_n = 1.0 / static_cast<double>(n);

  CoefficientSet cur;
  cur.beta = Matrix(p, d);
  cur.L = Matrix(data.shape.rows, data.shape.cols);
  cur.S = Matrix(p, q);
  if (warm) {
    cur = *warm;
  } else {
    for (int u = 0; u < p; ++u) {
      Vector b = ws[u].xtx_chol.solve(transpose_matvec(ws[u].x, data.y_col(u)));
      for (int k = 0; k < d; ++k) cur.beta(u, k) = b[k];
    }
  }

  // Residuals in unit-major layout, kept exact across incremental updates.
  Vector resid(static_cast<std::size_t>(p) * n);
  for (int u = 0; u < p; ++u) {
    auto [r, c] = data.shape.unit_coords(u);
    const double l_u = cur.L(r, c);
    const double* b_u = cur.beta.row(u);
    const double* s_u = cur.S.row(u);
    double* e_u = resid.data() + static_cast<std::size_t>(u) * n;
    for (int i = 0; i < n; ++i) {
      double fit = ws[u].m[i] * l_u;
      const double* xrow = ws[u].x.row(i);
      for (int k = 0; k < d; ++k) fit += xrow[k] * b_u[k];
      e_u[i] = data.y_at(i, u) - fit;
    }
    for (int j = 0; j < q; ++j) {
      if (s_u[j] == 0.0) continue;
      const double* col = ws[u].neighbors_t.row(j);
      for (int i = 0; i < n; ++i) e_u[i] -= col[i] * s_u[j];
    }
  }

  auto objective = [&]() {
    double rss = 0.0;
    for (double r : resid) rss += r * r;
    double l1 = 0.0;
    for (int u = 0; u < p; ++u) {
      auto [r, c] = data.shape.unit_coords(u);
      double s = 0.0;
      const double* s_u = cur.S.row(u);
      for (int j = 0; j < q; ++j) s += std::abs(s_u[j]);
      l1 += lambda_rc(r, c) * s;
    }
    return rss * inv_n + lambda * nuclear_norm(cur.L) + l1;
  };

  // Exact per-unit least-squares refresh of beta against the current
  // residuals, shared by the loop stage and the final touch-up.
  auto refresh_beta = [&](int u) {
    double* e_u = resid.data() + static_cast<std::size_t>(u) * n;
    Vector xte(d, 0.0);
    for (int i = 0; i < n; ++i) {
      const double e = e_u[i];
      const double* xrow = ws[u].x.row(i);
      for (int k = 0; k < d; ++k) xte[k] += xrow[k] * e;
    }
    Vector rhs(d, 0.0);
    const double* b_u = cur.beta.row(u);
    for (int a = 0; a < d; ++a) {
      double s = xte[a];
      for (int k = 0; k < d; ++k) s += ws[u].xtx(a, k) * b_u[k];
      rhs[a] = s;
    }
    Vector bnew = ws[u].xtx_chol.solve(rhs);
    Vector db(d);
    for (int k = 0; k < d; ++k) db[k] = bnew[k] - b_u[k];
    for (int i = 0; i < n; ++i) {
      const double* xrow = ws[u].x.row(i);
      double delta = 0.0;
      for (int k = 0; k < d; ++k) delta += xrow[k] * db[k];
      e_u[i] -= delta;
    }
    for (int k = 0; k < d; ++k) cur.beta(u, k) = bnew[k];
  };

  ProfileOutput out;
  if (track_objective) out.objective_trace.push_back(objective());

  Matrix l_prev = cur.L;
  double r_curr = 1.0;
  double r_prev = 1.0;

  Matrix beta_old, l_old, s_old;
  for (int t = 0; t < cfg.max_outer_iter; ++t) {
    beta_old = cur.beta;
    l_old = cur.L;
    s_old = cur.S;

    // Direct-effect update: one accelerated proximal step.
    const double momentum = (r_prev - 1.0) / r_curr;
    Matrix l_tilde(data.shape.rows, data.shape.cols);
    Matrix target(data.shape.rows, data.shape.cols);
    for (int u = 0; u < p; ++u) {
      auto [r, c] = data.shape.unit_coords(u);
      l_tilde(r, c) = cur.L(r, c) + momentum * (cur.L(r, c) - l_prev(r, c));
      const double* e_u = resid.data() + static_cast<std::size_t>(u) * n;
      const Vector& m_u = ws[u].m;
      double mte = 0.0;
      for (int i = 0; i < n; ++i) mte += m_u[i] * e_u[i];
      // gradient entry at the extrapolated point; m_u^T m_u = n exactly
      const double grad = -2.0 * inv_n * mte - 2.0 * (cur.L(r, c) - l_tilde(r, c));
      target(r, c) = l_tilde(r, c) - 0.5 * grad;
    }
    Matrix l_new = soft_threshold_matrix(target, lambda / 2.0);
    for (int u = 0; u < p; ++u) {
      auto [r, c] = data.shape.unit_coords(u);
      const double dl = l_new(r, c) - cur.L(r, c);
      if (dl == 0.0) continue;
      double* e_u = resid.data() + static_cast<std::size_t>(u) * n;
      const Vector& m_u = ws[u].m;
      for (int i = 0; i < n; ++i) e_u[i] -= m_u[i] * dl;
    }
    l_prev = cur.L;
    cur.L = l_new;
    r_prev = r_curr;
    r_curr = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * r_curr * r_curr));

    // State-effect update: exact per-unit least squares.
    parallel_for(p, cfg.threads, [&](std::size_t uu) { refresh_beta(static_cast<int>(uu)); });

    // Interference update: warm-started in-place coordinate descent; the
    // residual slice doubles as the lasso residual, so nothing is rebuilt.
    parallel_for(p, cfg.threads, [&](std::size_t uu) {
      const int u = static_cast<int>(uu);
      auto [r, c] = data.shape.unit_coords(u);
      lasso_cd_pm1(ws[u].neighbors_t, &ws[u].excluded, lambda_rc(r, c), 1e-7, 5000,
                   cur.S.row(u), resid.data() + static_cast<std::size_t>(u) * n);
    });

    out.outer_iters = t + 1;
    out.final_delta = rel_change(frob_diff(cur.beta, beta_old), frobenius_norm(beta_old)) +
                      rel_change(frob_diff(cur.L, l_old), frobenius_norm(l_old)) +
                      rel_change(frob_diff(cur.S, s_old), frobenius_norm(s_old));
    if (track_objective) out.objective_trace.push_back(objective());
    if (out.final_delta < cfg.tau) {
      out.converged = true;
      break;
    }
  }

  // Refresh beta against the final (L, S) so the returned state-effect
  // estimates solve their least-squares stage at the solution itself.
  for (int u = 0; u < p; ++u) refresh_beta(u);
  if (track_objective) out.objective_trace.push_back(objective());

  out.coeffs = std::move(cur);
  return out;
}

void validate_fit_config(const FitConfig& cfg) {
  if (!(cfg.tau > 0.0)) throw InvalidInput("FitConfig: tau must be positive");
  if (cfg.max_outer_iter < 1) throw InvalidInput("FitConfig: max_outer_iter must be >= 1");
  if (!cfg.allow_unpenalized && !(cfg.A > 2.0 * std::sqrt(2.0))) {
    throw InvalidInput("FitConfig: A must exceed 2*sqrt(2)");
  }
  if (cfg.lambda_cv && cfg.cv_folds < 2) throw InvalidInput("FitConfig: cv_folds must be >= 2");
  if (!cfg.lambda_cv && cfg.lambda < 0.0) throw InvalidInput("FitConfig: negative lambda");
}

Matrix sparse_penalties(const GridShape& shape, const Matrix& sigma, double a, int n) {
  const double level = std::sqrt(std::log(static_cast<double>(shape.units())) / n);
  Matrix out(shape.rows, shape.cols);
  for (int r = 0; r < shape.rows; ++r) {
    for (int c = 0; c < shape.cols; ++c) out(r, c) = a * sigma(r, c) * level;
  }
  return out;
}

// Operator-norm anchor for the CV grid: largest singular value of the
// L-subproblem gradient at L = 0 with beta at its per-unit OLS initializer
// and S = 0.
double lambda_grid_anchor(const PanelData& data, const std::vector<UnitWorkspace>& ws) {
  const int p = data.shape.units();
  Matrix g(data.shape.rows, data.shape.cols);
  for (int u = 0; u < p; ++u) {
    auto [r, c] = data.shape.unit_coords(u);
    Vector y_u = data.y_col(u);
    Vector beta0 = ws[u].xtx_chol.solve(transpose_matvec(ws[u].x, y_u));
    Vector fitted = matvec(ws[u].x, beta0);
    double mte = 0.0;
    for (int i = 0; i < data.n; ++i) mte += ws[u].m[i] * (y_u[i] - fitted[i]);
    g(r, c) = -2.0 * mte / static_cast<double>(data.n);
  }
  return svd(g).singular_values.front();
}

CvResult select_lambda_cv_impl(const PanelData& data, const FitConfig& cfg, const Matrix& sigma) {
  if (cfg.cv_folds < 2) throw InvalidInput("select_lambda_cv: cv_folds must be >= 2");
  if (data.n < cfg.cv_folds) throw InvalidInput("select_lambda_cv: fewer observations than folds");

  const int folds = cfg.cv_folds;
  const int grid_size = 20;
  NeighborOrder order(data.shape);
  std::vector<UnitWorkspace> ws_full = build_unit_workspaces(data, order);
  const double anchor = lambda_grid_anchor(data, ws_full);

  CvResult cv;
  cv.grid.resize(grid_size);
  cv.fold_scores = Matrix(grid_size, folds);
  cv.mean_scores.assign(grid_size, 0.0);
  if (!(anchor > 0.0)) return cv;  // degenerate data: all-zero grid, lambda 0

  // Span three decades below the anchor: the anchor tracks the direct-effect
  // signal scale while the prediction-optimal penalty sits at the noise
  // scale, which can be two orders of magnitude lower.
  for (int g = 0; g < grid_size; ++g) {
    cv.grid[g] = anchor * std::pow(0.001, 1.0 - static_cast<double>(g) / (grid_size - 1));
  }

  const int p = data.shape.units();
  parallel_for(folds, cfg.threads, [&](std::size_t f) {
    std::vector<int> train_rows, test_rows;
    for (int i = 0; i < data.n; ++i) {
      (i % folds == static_cast<int>(f) ? test_rows : train_rows).push_back(i);
    }
    PanelData train = subset_rows(data, train_rows);
    std::vector<UnitWorkspace> ws_train = build_unit_workspaces(train, order);
    Matrix lrc = sparse_penalties(data.shape, sigma, cfg.A, train.n);

    FitConfig inner = cfg;
    inner.lambda_cv = false;
    inner.threads = 1;

    CoefficientSet warm;
    bool have_warm = false;
    for (int g = grid_size - 1; g >= 0; --g) {
      ProfileOutput fit = profile_engine(train, ws_train, cv.grid[g], lrc, inner,
                                         have_warm ? &warm : nullptr, false);
      warm = fit.coeffs;
      have_warm = true;

      double sse = 0.0;
      for (int i : test_rows) {
        for (int u = 0; u < p; ++u) {
          auto [r, c] = data.shape.unit_coords(u);
          double pred = data.m_at(i, u) * fit.coeffs.L(r, c);
          const double* b_u = fit.coeffs.beta.row(u);
          for (int k = 0; k < data.d; ++k) pred += data.x_at(i, u, k) * b_u[k];
          const double* s_u = fit.coeffs.S.row(u);
          const auto& nb = order.neighbors_of(u);
          const std::size_t base = static_cast<std::size_t>(i) * p;
          for (std::size_t j = 0; j < nb.size(); ++j) {
            if (s_u[j] != 0.0) pred += data.m[base + nb[j]] * s_u[j];
          }
          const double e = data.y_at(i, u) - pred;
          sse += e * e;
        }
      }
      cv.fold_scores(g, f) = sse / (static_cast<double>(test_rows.size()) * p);
    }
  });

  for (int g = 0; g < grid_size; ++g) {
    double s = 0.0;
    for (int f = 0; f < folds; ++f) s += cv.fold_scores(g, f);
    cv.mean_scores[g] = s / folds;
  }
  int best = grid_size - 1;
  for (int g = grid_size - 2; g >= 0; --g) {
    if (cv.mean_scores[g] < cv.mean_scores[best]) best = g;
  }
  cv.chosen = cv.grid[best];
  return cv;
}

}  // namespace

std::vector<UnitWorkspace> build_unit_workspaces(const PanelData& data, const NeighborOrder& order,
                                                 std::vector<std::string>* warnings) {
  const int p = data.shape.units();
  std::vector<UnitWorkspace> ws(p);
  for (int u = 0; u < p; ++u) {
    UnitWorkspace& w = ws[u];
    w.x = data.x_block(u);
    w.m = data.m_col(u);
    w.neighbors = build_neighbor_design(data, u, order);
    w.neighbors_t = transpose(w.neighbors);
    const int d = data.d;
    w.xtx = Matrix(d, d);
    for (int a = 0; a < d; ++a) {
      for (int b = a; b < d; ++b) {
        double s = 0.0;
        for (int i = 0; i < data.n; ++i) s += w.x(i, a) * w.x(i, b);
        w.xtx(a, b) = s;
        w.xtx(b, a) = s;
      }
    }
    try {
      w.xtx_chol = CholFactor(w.xtx);
    } catch (const NumericalFailure&) {
      throw NumericalFailure("rank-deficient state design at unit " +
                             unit_label(data.shape, u));
    }
    const int q = data.shape.neighbor_count();
    w.excluded.assign(q, 0);
    for (int j = 0; j < q; ++j) {
      bool constant = true;
      const double first = w.neighbors(0, j);
      for (int i = 1; i < data.n; ++i) {
        if (w.neighbors(i, j) != first) {
          constant = false;
          break;
        }
      }
      if (constant && data.n > 1) {
        w.excluded[j] = 1;
        if (warnings) {
          warnings->push_back("unit " + unit_label(data.shape, u) + ": neighbor column " +
                              std::to_string(j + 1) +
                              " has constant treatments; coefficient pinned at 0");
        }
      }
    }
  }
  return ws;
}

Matrix estimate_noise_levels(const PanelData& data, const NeighborOrder& order, int threads,
                             std::vector<std::string>* warnings) {
  data.validate();
  if (data.n <= data.d + 2) {
    throw InvalidInput("estimate_noise_levels: needs n > d + 2");
  }
  std::vector<UnitWorkspace> ws = build_unit_workspaces(data, order, warnings);
  const int p = data.shape.units();
  const int q = data.shape.neighbor_count();
  const int zcols = data.d + 1 + q;
  // The universal level overfits at these sample sizes and a downward-biased
  // noise level is fatal to the bootstrap calibration, so the penalty is run
  // a notch higher and the variance gets a degrees-of-freedom correction.
  const double rho0 = 1.25 * std::sqrt(2.0 * std::log(static_cast<double>(zcols)) / data.n);

  Matrix sigma(data.shape.rows, data.shape.cols);
  std::vector<std::string> unit_warnings(p);
  parallel_for(p, threads, [&](std::size_t uu) {
    const int u = static_cast<int>(uu);
    auto [r, c] = data.shape.unit_coords(u);
    Vector y_u = data.y_col(u);
    Matrix z(data.n, zcols);
    std::vector<unsigned char> excluded(zcols, 0);
    for (int i = 0; i < data.n; ++i) {
      double* zrow = z.row(i);
      const double* xrow = ws[u].x.row(i);
      for (int k = 0; k < data.d; ++k) zrow[k] = xrow[k];
      zrow[data.d] = ws[u].m[i];
      const double* nbrow = ws[u].neighbors.row(i);
      for (int j = 0; j < q; ++j) zrow[data.d + 1 + j] = nbrow[j];
    }
    for (int j = 0; j < q; ++j) excluded[data.d + 1 + j] = ws[u].excluded[j];
    try {
      ScaledLassoResult res = scaled_lasso(z, y_u, rho0, &excluded);
      int support = 0;
      for (double g : res.gamma) {
        if (g != 0.0) ++support;
      }
      const int dof = std::max(1, data.n - support);
      sigma(r, c) = res.sigma_hat * std::sqrt(static_cast<double>(data.n) / dof);
    } catch (const NonConvergence&) {
      // Fall back to the residual SD of OLS on (X, M).
      Matrix xm(data.n, data.d + 1);
      for (int i = 0; i < data.n; ++i) {
        const double* xrow = ws[u].x.row(i);
        for (int k = 0; k < data.d; ++k) xm(i, k) = xrow[k];
        xm(i, data.d) = ws[u].m[i];
      }
      Vector b = ols(xm, y_u);
      Vector fitted = matvec(xm, b);
      double rss = 0.0;
      for (int i = 0; i < data.n; ++i) {
        const double e = y_u[i] - fitted[i];
        rss += e * e;
      }
      sigma(r, c) = std::sqrt(rss / std::max(1, data.n - data.d - 1));
      unit_warnings[u] = "unit " + unit_label(data.shape, u) +
                         ": scaled lasso did not converge; using OLS residual SD";
    }
  });
  if (warnings) {
    for (auto& w : unit_warnings) {
      if (!w.empty()) warnings->push_back(std::move(w));
    }
  }
  return sigma;
}

FitResult fit_profiling(const PanelData& data, const FitConfig& cfg) {
  data.validate();
  validate_fit_config(cfg);

  NeighborOrder order(data.shape);
  FitResult result;
  Matrix sigma = estimate_noise_levels(data, order, cfg.threads, &result.warnings);

  double lambda = cfg.lambda;
  if (cfg.lambda_cv) {
    lambda = select_lambda_cv_impl(data, cfg, sigma).chosen;
  }

  std::vector<UnitWorkspace> ws = build_unit_workspaces(data, order);
  Matrix lambda_rc = sparse_penalties(data.shape, sigma, cfg.A, data.n);
  ProfileOutput prof = profile_engine(data, ws, lambda, lambda_rc, cfg, nullptr, true);

  result.shape = data.shape;
  result.n = data.n;
  result.d = data.d;
  result.coeffs = std::move(prof.coeffs);
  result.sigma_hat = std::move(sigma);
  result.lambda_used = lambda;
  result.lambda_rc_used = std::move(lambda_rc);
  result.outer_iters = prof.outer_iters;
  result.converged = prof.converged;
  result.final_delta = prof.final_delta;
  result.objective_trace = std::move(prof.objective_trace);
  return result;
}

CvResult select_lambda_cv(const PanelData& data, const FitConfig& cfg) {
  data.validate();
  NeighborOrder order(data.shape);
  Matrix sigma = estimate_noise_levels(data, order, cfg.threads);
  return select_lambda_cv_impl(data, cfg, sigma);
}

}  // namespace spidet
