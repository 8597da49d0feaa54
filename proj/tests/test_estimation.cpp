#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "spidet/estimation.hpp"
#include "spidet/simgen.hpp"
#include "test_util.hpp"

using namespace spidet;

namespace {

struct SyntheticPanel {
  PanelData data;
  CoefficientSet truth;
};

// Controlled panel: standard-normal X, random +-1 treatments, explicit
// coefficients, optional noise.
SyntheticPanel make_panel(GridShape shape, int n, int d, const Matrix& l_truth,
                          const Matrix& s_truth, double noise_sd, std::uint64_t seed) {
  const int p = shape.units();
  Rng rng(seed);
  SyntheticPanel out;
  out.truth.beta = Matrix(p, d);
  for (double& v : out.truth.beta.storage()) v = rng.normal();
  out.truth.L = l_truth;
  out.truth.S = s_truth;

  Vector x(static_cast<std::size_t>(n) * p * d);
  for (double& v : x) v = rng.normal();
  Vector m(static_cast<std::size_t>(n) * p);
  for (double& v : m) v = rng.sign();

  NeighborOrder order(shape);
  GroundTruth truth;
  truth.coeffs = out.truth;
  out.data = gen_outcomes(truth, m, x, noise_sd, rng, shape, n, d, order);
  return out;
}

FitConfig unpenalized_config() {
  FitConfig cfg;
  cfg.lambda_cv = false;
  cfg.lambda = 0.0;
  cfg.A = 0.0;
  cfg.allow_unpenalized = true;
  cfg.tau = 1e-8;
  return cfg;
}

}  // namespace

TEST_CASE("objective_Q matches a naive evaluator") {
  GridShape shape(3, 3);
  const int n = 12, d = 2;
  Rng rng(51);
  Matrix l = testutil::random_matrix(3, 3, rng, 0.5);
  Matrix s(9, 8);
  s(0, 1) = 0.4;
  s(5, 3) = -0.2;
  SyntheticPanel panel = make_panel(shape, n, d, l, s, 0.7, 52);

  CoefficientSet eval_point;
  eval_point.beta = testutil::random_matrix(9, d, rng);
  eval_point.L = testutil::random_matrix(3, 3, rng);
  eval_point.S = testutil::random_matrix(9, 8, rng, 0.1);
  Matrix lambda_rc(3, 3);
  for (double& v : lambda_rc.storage()) v = 0.05 + 0.1 * rng.uniform();
  const double lambda = 0.37;

  NeighborOrder order(shape);
  const double got = objective_Q(panel.data, eval_point, lambda, lambda_rc, order);

  // Naive term-by-term evaluation.
  double rss = 0.0;
  for (int u = 0; u < 9; ++u) {
    auto [r, c] = shape.unit_coords(u);
    for (int i = 0; i < n; ++i) {
      double fit = panel.data.m_at(i, u) * eval_point.L(r, c);
      for (int k = 0; k < d; ++k) fit += panel.data.x_at(i, u, k) * eval_point.beta(u, k);
      for (int j = 0; j < 8; ++j) {
        const int v = order.neighbors_of(u)[j];
        fit += panel.data.m_at(i, v) * eval_point.S(u, j);
      }
      const double e = panel.data.y_at(i, u) - fit;
      rss += e * e;
    }
  }
  double l1 = 0.0;
  for (int u = 0; u < 9; ++u) {
    auto [r, c] = shape.unit_coords(u);
    for (int j = 0; j < 8; ++j) l1 += lambda_rc(r, c) * std::abs(eval_point.S(u, j));
  }
  double nuc = 0.0;
  for (double sv : svd(eval_point.L).singular_values) nuc += sv;
  const double expect = rss / n + lambda * nuc + l1;
  CHECK(got == doctest::Approx(expect).epsilon(1e-10));

  // Trivial cases.
  CoefficientSet zero;
  zero.beta = Matrix(9, d);
  zero.L = Matrix(3, 3);
  zero.S = Matrix(9, 8);
  PanelData zero_y = panel.data;
  for (double& v : zero_y.y) v = 0.0;
  CHECK(objective_Q(zero_y, zero, 0.5, lambda_rc, order) == 0.0);

  SyntheticPanel clean = make_panel(shape, n, d, l, s, 0.0, 53);
  Matrix zero_lrc(3, 3);
  CHECK(objective_Q(clean.data, clean.truth, 0.0, zero_lrc, order) ==
        doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("noise levels on noiseless data are near zero") {
  GridShape shape(3, 3);
  SyntheticPanel panel = make_panel(shape, 60, 2, Matrix(3, 3), Matrix(9, 8), 0.0, 54);
  NeighborOrder order(shape);
  Matrix sigma = estimate_noise_levels(panel.data, order);
  double sd_y = 0.0, mean_y = 0.0;
  for (double v : panel.data.y) mean_y += v;
  mean_y /= panel.data.y.size();
  for (double v : panel.data.y) sd_y += (v - mean_y) * (v - mean_y);
  sd_y = std::sqrt(sd_y / panel.data.y.size());
  for (double v : sigma.storage()) CHECK(v <= 0.05 * sd_y);
}

TEST_CASE("noise levels are consistent under a null model") {
  // eps ~ N(0, 4 I), 3x3 grid, n = 200: mean sigma_hat/2 within [0.8, 1.2]
  // over replications.
  GridShape shape(3, 3);
  NeighborOrder order(shape);
  double ratio_sum = 0.0;
  const int reps = 50;
  for (int rep = 0; rep < reps; ++rep) {
    SyntheticPanel panel = make_panel(shape, 200, 2, Matrix(3, 3), Matrix(9, 8), 2.0,
                                      100 + static_cast<std::uint64_t>(rep));
    Matrix sigma = estimate_noise_levels(panel.data, order);
    double mean = 0.0;
    for (double v : sigma.storage()) mean += v;
    ratio_sum += mean / 9.0 / 2.0;
  }
  const double mean_ratio = ratio_sum / reps;
  CHECK(mean_ratio > 0.8);
  CHECK(mean_ratio < 1.2);
}

TEST_CASE("noise levels scale with the data") {
  GridShape shape(3, 3);
  SyntheticPanel panel = make_panel(shape, 80, 2, Matrix(3, 3), Matrix(9, 8), 1.0, 55);
  NeighborOrder order(shape);
  Matrix sigma1 = estimate_noise_levels(panel.data, order);
  PanelData doubled = panel.data;
  for (double& v : doubled.y) v *= 2.0;
  for (double& v : doubled.x) v *= 2.0;
  Matrix sigma2 = estimate_noise_levels(doubled, order);
  for (std::size_t i = 0; i < sigma1.storage().size(); ++i) {
    const double ratio = sigma2.storage()[i] / sigma1.storage()[i];
    CHECK(ratio > 1.9);
    CHECK(ratio < 2.1);
  }
}

TEST_CASE("noise estimation requires enough observations") {
  GridShape shape(3, 3);
  SyntheticPanel panel = make_panel(shape, 4, 2, Matrix(3, 3), Matrix(9, 8), 1.0, 56);
  NeighborOrder order(shape);
  CHECK_THROWS_AS(estimate_noise_levels(panel.data, order), InvalidInput);
}

TEST_CASE("profiling recovers exact coefficients on clean linear data") {
  GridShape shape(3, 3);
  SyntheticPanel panel = make_panel(shape, 40, 2, Matrix(3, 3), Matrix(9, 8), 0.0, 57);
  FitResult fit = fit_profiling(panel.data, unpenalized_config());
  CHECK(fit.converged);
  CHECK(testutil::max_abs_diff(fit.coeffs.beta, panel.truth.beta) < 1e-6);
  for (double v : fit.coeffs.L.storage()) CHECK(std::abs(v) < 1e-6);
  for (double v : fit.coeffs.S.storage()) CHECK(std::abs(v) < 1e-6);
  CHECK(fit.final_delta < 1e-8);
}

TEST_CASE("profiling recovers a rank-1 direct effect") {
  GridShape shape(3, 3);
  Matrix l(3, 3);
  Vector a{1.0, 0.6, -0.8};
  Vector b{0.9, -0.5, 0.7};
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) l(i, j) = 2.0 * a[i] * b[j];
  }
  SyntheticPanel panel = make_panel(shape, 80, 2, l, Matrix(9, 8), 0.0, 58);
  FitConfig cfg = unpenalized_config();
  cfg.lambda = 0.02;  // small nuclear penalty
  FitResult fit = fit_profiling(panel.data, cfg);
  const double rel = testutil::max_abs_diff(fit.coeffs.L, l) / frobenius_norm(l);
  CHECK(rel <= 0.05);
}

TEST_CASE("profiling invariants hold on noisy data") {
  GridShape shape(4, 4);
  Matrix s(16, 15);
  s(3, 2) = 0.8;
  s(10, 7) = 0.5;
  Matrix l(4, 4);
  for (std::size_t i = 0; i < l.storage().size(); ++i) l.storage()[i] = 0.1 * (i % 3);
  SyntheticPanel panel = make_panel(shape, 60, 3, l, s, 0.5, 59);

  FitConfig cfg;
  cfg.lambda_cv = false;
  cfg.lambda = 0.05;
  FitResult fit = fit_profiling(panel.data, cfg);

  // Penalty formula invariant, exact.
  const double level = std::sqrt(std::log(16.0) / panel.data.n);
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) {
      CHECK(fit.lambda_rc_used(r, c) == cfg.A * fit.sigma_hat(r, c) * level);
    }
  }

  // Objective never above the initializer's.
  REQUIRE(fit.objective_trace.size() >= 2);
  CHECK(fit.objective_trace.back() <= fit.objective_trace.front() + 1e-9);
  for (double v : fit.objective_trace) CHECK(std::isfinite(v));
  if (fit.converged) CHECK(fit.final_delta < cfg.tau);

  // With (L, S) fixed at the solution, beta solves its least-squares stage,
  // and each unit's interference row satisfies its lasso KKT conditions on
  // the residual it was fitted to.
  NeighborOrder order(shape);
  for (int u = 0; u < 16; ++u) {
    auto [r, c] = shape.unit_coords(u);
    Vector ybar = panel.data.y_col(u);
    Vector m_u = panel.data.m_col(u);
    Matrix nb = build_neighbor_design(panel.data, u, order);
    for (int i = 0; i < panel.data.n; ++i) {
      ybar[i] -= m_u[i] * fit.coeffs.L(r, c);
      for (int j = 0; j < 15; ++j) ybar[i] -= nb(i, j) * fit.coeffs.S(u, j);
    }
    Matrix x_u = panel.data.x_block(u);
    Vector fitted(panel.data.n, 0.0);
    for (int i = 0; i < panel.data.n; ++i) {
      for (int k = 0; k < 3; ++k) fitted[i] += x_u(i, k) * fit.coeffs.beta(u, k);
    }
    for (int i = 0; i < panel.data.n; ++i) ybar[i] -= fitted[i];
    Vector grad = transpose_matvec(x_u, ybar);
    for (double g : grad) CHECK(std::abs(g) < 1e-8 * panel.data.n);

    // ybar now holds the full residual E_u; the S-stage KKT conditions are
    // checked against the residual with the beta stage's last update folded
    // in, i.e. directly on E_u.
    const double lam = fit.lambda_rc_used(r, c);
    for (int j = 0; j < 15; ++j) {
      double g = 0.0;
      for (int i = 0; i < panel.data.n; ++i) g += nb(i, j) * ybar[i];
      g *= 2.0 / panel.data.n;
      const double s_j = fit.coeffs.S(u, j);
      if (s_j == 0.0) {
        CHECK(std::abs(g) <= lam + 2e-4);
      } else {
        CHECK(std::abs(g - lam * (s_j > 0 ? 1.0 : -1.0)) <= 2e-4);
      }
    }
  }
}

TEST_CASE("profiling reports non-convergence when capped") {
  GridShape shape(3, 3);
  SyntheticPanel panel = make_panel(shape, 50, 2, Matrix(3, 3), Matrix(9, 8), 1.0, 60);
  FitConfig cfg;
  cfg.lambda_cv = false;
  cfg.lambda = 0.05;
  cfg.max_outer_iter = 1;
  cfg.tau = 1e-12;
  FitResult fit = fit_profiling(panel.data, cfg);
  CHECK_FALSE(fit.converged);
  CHECK(fit.outer_iters == 1);
}

TEST_CASE("fit config validation") {
  GridShape shape(3, 3);
  SyntheticPanel panel = make_panel(shape, 30, 2, Matrix(3, 3), Matrix(9, 8), 1.0, 61);
  FitConfig cfg;
  cfg.lambda_cv = false;
  cfg.lambda = 0.1;
  cfg.A = 2.0;  // below 2*sqrt(2)
  CHECK_THROWS_AS(fit_profiling(panel.data, cfg), InvalidInput);
  cfg.A = 2.9;
  cfg.tau = -1.0;
  CHECK_THROWS_AS(fit_profiling(panel.data, cfg), InvalidInput);
}

TEST_CASE("cross validation prefers small penalties on clean low-rank data") {
  GridShape shape(4, 4);
  Matrix l(4, 4);
  Vector a{1.0, 0.6, -0.8, 0.3};
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) l(i, j) = 3.0 * a[i] * a[j];
  }
  SyntheticPanel panel = make_panel(shape, 50, 2, l, Matrix(16, 15), 0.0, 62);
  FitConfig cfg;
  cfg.cv_folds = 5;
  CvResult cv = select_lambda_cv(panel.data, cfg);
  REQUIRE(cv.grid.size() == 20);
  // Chosen penalty in the lower half of the grid.
  int chosen_idx = -1;
  for (int g = 0; g < 20; ++g) {
    if (cv.grid[g] == cv.chosen) chosen_idx = g;
  }
  REQUIRE(chosen_idx >= 0);
  CHECK(chosen_idx < 10);
}

TEST_CASE("cross validation prefers large penalties on pure noise") {
  GridShape shape(4, 4);
  SyntheticPanel panel = make_panel(shape, 50, 2, Matrix(4, 4), Matrix(16, 15), 1.0, 63);
  FitConfig cfg;
  CvResult cv = select_lambda_cv(panel.data, cfg);
  int chosen_idx = -1;
  for (int g = 0; g < 20; ++g) {
    if (cv.grid[g] == cv.chosen) chosen_idx = g;
  }
  REQUIRE(chosen_idx >= 0);
  CHECK(chosen_idx >= 10);
}

TEST_CASE("cross validation mean scores are fold averages") {
  GridShape shape(3, 3);
  SyntheticPanel panel = make_panel(shape, 30, 2, Matrix(3, 3), Matrix(9, 8), 1.0, 64);
  FitConfig cfg;
  cfg.cv_folds = 3;
  CvResult cv = select_lambda_cv(panel.data, cfg);
  for (std::size_t g = 0; g < cv.grid.size(); ++g) {
    double mean = 0.0;
    for (int f = 0; f < 3; ++f) mean += cv.fold_scores(g, f);
    mean /= 3.0;
    CHECK(cv.mean_scores[g] == doctest::Approx(mean).epsilon(1e-12));
  }
}

TEST_CASE("cross validation rejects undersized inputs") {
  GridShape shape(3, 3);
  SyntheticPanel panel = make_panel(shape, 30, 2, Matrix(3, 3), Matrix(9, 8), 1.0, 65);
  FitConfig cfg;
  cfg.cv_folds = 40;  // folds > n
  CHECK_THROWS_AS(select_lambda_cv(panel.data, cfg), InvalidInput);
}
