#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>

#include "spidet/inference.hpp"
#include "spidet/simgen.hpp"
#include "test_util.hpp"

using namespace spidet;

namespace {

PanelData small_panel(GridShape shape, int n, int d, double noise_sd, std::uint64_t seed) {
  Rng rng(seed);
  const int p = shape.units();
  GroundTruth truth;
  truth.coeffs.beta = Matrix(p, d);
  for (double& v : truth.coeffs.beta.storage()) v = rng.normal();
  truth.coeffs.L = Matrix(shape.rows, shape.cols);
  truth.coeffs.S = Matrix(p, shape.neighbor_count());

  Vector x(static_cast<std::size_t>(n) * p * d);
  for (double& v : x) v = rng.normal();
  Vector m(static_cast<std::size_t>(n) * p);
  for (double& v : m) v = rng.sign();
  NeighborOrder order(shape);
  return gen_outcomes(truth, m, x, noise_sd, rng, shape, n, d, order);
}

BootstrapEnsemble constant_ensemble(int n_reps, long p, double value) {
  BootstrapEnsemble ens;
  ens.N = n_reps;
  ens.p = p;
  ens.u.assign(static_cast<std::size_t>(n_reps) * p, value);
  return ens;
}

}  // namespace

TEST_CASE("zero noise levels give an all-zero ensemble") {
  GridShape shape(2, 2);
  PanelData data = small_panel(shape, 30, 2, 1.0, 71);
  Matrix sigma(2, 2);  // all zeros
  Matrix lambda_rc(2, 2, 0.1);
  BootstrapEnsemble ens = bootstrap_null_ensemble(data, sigma, lambda_rc, 50, 7);
  for (double v : ens.u) CHECK(v == 0.0);
}

TEST_CASE("ensemble generation is deterministic and thread-invariant") {
  GridShape shape(3, 3);
  PanelData data = small_panel(shape, 40, 2, 1.0, 72);
  Matrix sigma(3, 3, 1.3);
  Matrix lambda_rc(3, 3, 0.2);
  BootstrapEnsemble a = bootstrap_null_ensemble(data, sigma, lambda_rc, 40, 99, 1);
  BootstrapEnsemble b = bootstrap_null_ensemble(data, sigma, lambda_rc, 40, 99, 1);
  BootstrapEnsemble c = bootstrap_null_ensemble(data, sigma, lambda_rc, 40, 99, 4);
  CHECK(a.u == b.u);
  CHECK(a.u == c.u);
  BootstrapEnsemble d = bootstrap_null_ensemble(data, sigma, lambda_rc, 40, 100, 1);
  CHECK(a.u != d.u);
}

TEST_CASE("unpenalized bootstrap magnitudes match the OLS variance oracle") {
  // With lambda_rc = 0 the per-unit fit is least squares; the sampling SD of
  // sqrt(n) * S^e has the closed form sigma^2 n A^{-1} B A^{-1} with
  // A = Mnb^T Mnb and B = Mnb^T (I - P_X) Mnb.
  GridShape shape(2, 2);
  const int n = 200;
  PanelData data = small_panel(shape, n, 2, 1.0, 73);
  Matrix sigma(2, 2, 1.0);
  Matrix lambda_rc(2, 2, 0.0);
  const int reps = 500;
  BootstrapEnsemble ens = bootstrap_null_ensemble(data, sigma, lambda_rc, reps, 5);

  NeighborOrder order(shape);
  std::vector<UnitWorkspace> ws = build_unit_workspaces(data, order);
  for (int u = 0; u < 4; ++u) {
    const Matrix& nb = ws[u].neighbors;
    Matrix a = testutil::matmul_naive(transpose(nb), nb);
    // B = Mnb^T Mnb - (X^T Mnb)^T (X^T X)^{-1} (X^T Mnb)
    Matrix xtnb = testutil::matmul_naive(transpose(ws[u].x), nb);
    Matrix b = a;
    for (std::size_t i = 0; i < b.rows(); ++i) {
      Vector col(xtnb.rows());
      for (std::size_t k = 0; k < xtnb.rows(); ++k) col[k] = xtnb(k, i);
      Vector solved = ws[u].xtx_chol.solve(col);
      for (std::size_t j = 0; j < b.cols(); ++j) {
        double corr = 0.0;
        for (std::size_t k = 0; k < xtnb.rows(); ++k) corr += xtnb(k, j) * solved[k];
        b(i, j) -= corr;
      }
    }
    // cov = A^{-1} B A^{-1} (sigma = 1), scaled by n for the sqrt(n) stats.
    Matrix ainv_b(3, 3);
    for (int col = 0; col < 3; ++col) {
      Vector rhs(3);
      for (int k = 0; k < 3; ++k) rhs[k] = b(k, col);
      Vector solved = testutil::solve_gauss(a, rhs);
      for (int k = 0; k < 3; ++k) ainv_b(k, col) = solved[k];
    }
    Matrix cov(3, 3);
    for (int row = 0; row < 3; ++row) {
      Vector rhs(3);
      for (int k = 0; k < 3; ++k) rhs[k] = ainv_b(row, k);
      Vector solved = testutil::solve_gauss(a, rhs);
      for (int k = 0; k < 3; ++k) cov(row, k) = solved[k];
    }
    for (int j = 0; j < 3; ++j) {
      const double oracle_sd = std::sqrt(static_cast<double>(n) * cov(j, j));
      // |Z| for Z ~ N(0, sd): E|Z| = sd sqrt(2/pi), E Z^2 = sd^2.
      double sum_sq = 0.0;
      for (int rep = 0; rep < reps; ++rep) {
        const double v = ens.at(rep, flat_index(u, j, shape));
        sum_sq += v * v;
      }
      const double emp_sd = std::sqrt(sum_sq / reps);
      CHECK(std::abs(emp_sd - oracle_sd) <= 0.15 * oracle_sd);
    }
  }
}

TEST_CASE("critical value is the quantile of subset maxima") {
  BootstrapEnsemble ens = constant_ensemble(100, 3, 0.0);
  for (int b = 0; b < 100; ++b) ens.u[static_cast<std::size_t>(b) * 3 + 1] = b + 1.0;
  CHECK(critical_value(ens, 0.05, {1}) == 95.0);
  CHECK(critical_value(ens, 0.5, {1}) == 50.0);
  CHECK_THROWS_AS(critical_value(ens, 0.05, {}), InvalidInput);
  CHECK_THROWS_AS(critical_value(ens, 0.05, {99}), InvalidInput);
}

TEST_CASE("critical value grows with the subset") {
  Rng rng(74);
  BootstrapEnsemble ens;
  ens.N = 200;
  ens.p = 10;
  ens.u.resize(2000);
  for (double& v : ens.u) v = std::abs(rng.normal());
  const double small = critical_value(ens, 0.1, {2, 5});
  const double big = critical_value(ens, 0.1, {0, 1, 2, 3, 4, 5, 6, 7, 8, 9});
  CHECK(big >= small);
  // Non-increasing in alpha.
  CHECK(critical_value(ens, 0.01, {2, 5}) >= critical_value(ens, 0.2, {2, 5}));
}

TEST_CASE("all-zero ensemble gives a zero critical value") {
  BootstrapEnsemble ens = constant_ensemble(60, 5, 0.0);
  CHECK(critical_value(ens, 0.05, {0, 1, 2, 3, 4}) == 0.0);
}

TEST_CASE("global test statistic and decision") {
  FitResult fit;
  fit.shape = GridShape(2, 2);
  fit.n = 4;
  fit.d = 1;
  fit.coeffs.S = Matrix(4, 3);
  fit.coeffs.S(2, 1) = -0.5;  // max |S| entry 0.5, n = 4 -> T_n = 1.0
  BootstrapEnsemble ens = constant_ensemble(50, 12, 0.3);
  GlobalTestResult res = global_test(fit, ens, 0.05);
  CHECK(res.T_n == doctest::Approx(1.0));
  CHECK(res.c_B == doctest::Approx(0.3));
  CHECK(res.reject);

  // Zero fit never rejects.
  fit.coeffs.S = Matrix(4, 3);
  GlobalTestResult null_res = global_test(fit, ens, 0.05);
  CHECK(null_res.T_n == 0.0);
  CHECK_FALSE(null_res.reject);

  // reject <=> T_n > c_B, ties accept.
  fit.coeffs.S(0, 0) = 0.15;  // T_n = 0.3 exactly
  GlobalTestResult tie = global_test(fit, ens, 0.05);
  CHECK(tie.T_n == doctest::Approx(0.3));
  CHECK_FALSE(tie.reject);

  BootstrapEnsemble wrong = constant_ensemble(50, 20, 0.3);
  CHECK_THROWS_AS(global_test(fit, wrong, 0.05), InvalidInput);
}

TEST_CASE("ensemble round-trips through its binary file") {
  GridShape shape(2, 2);
  PanelData data = small_panel(shape, 25, 2, 1.0, 75);
  Matrix sigma(2, 2, 0.8);
  Matrix lambda_rc(2, 2, 0.15);
  BootstrapEnsemble ens = bootstrap_null_ensemble(data, sigma, lambda_rc, 30, 11);
  const std::string path = "/tmp/spidet_test_ensemble.bin";
  save_ensemble(path, ens);
  BootstrapEnsemble back = load_ensemble(path);
  CHECK(back.N == ens.N);
  CHECK(back.p == ens.p);
  CHECK(back.seed == ens.seed);
  CHECK(back.u == ens.u);
  std::remove(path.c_str());
  CHECK_THROWS_AS(load_ensemble(path), InvalidInput);
}

TEST_CASE("bootstrap validates its inputs") {
  GridShape shape(2, 2);
  PanelData data = small_panel(shape, 20, 2, 1.0, 76);
  Matrix sigma(2, 2, 1.0);
  Matrix bad_sigma(3, 3, 1.0);
  Matrix lambda_rc(2, 2, 0.1);
  CHECK_THROWS_AS(bootstrap_null_ensemble(data, bad_sigma, lambda_rc, 10, 0), InvalidInput);
  CHECK_THROWS_AS(bootstrap_null_ensemble(data, sigma, lambda_rc, 0, 0), InvalidInput);

  // Rank-deficient state design is reported with the unit name.
  PanelData degenerate = data;
  for (int i = 0; i < degenerate.n; ++i) {
    // duplicate covariate 0 into covariate 1 at unit 0
    degenerate.x[(static_cast<std::size_t>(i) * 4 + 0) * 2 + 1] =
        degenerate.x[(static_cast<std::size_t>(i) * 4 + 0) * 2 + 0];
  }
  try {
    bootstrap_null_ensemble(degenerate, sigma, lambda_rc, 5, 0);
    CHECK(false);
  } catch (const NumericalFailure& e) {
    CHECK(std::string(e.what()).find("(1,1)") != std::string::npos);
  }
}
