#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>

#include "spidet/numerics.hpp"
#include "test_util.hpp"

using namespace spidet;

namespace {

const double kInf = std::numeric_limits<double>::infinity();

Matrix diag2(double a, double b) {
  Matrix m(2, 2);
  m(0, 0) = a;
  m(1, 1) = b;
  return m;
}

double reconstruction_error(const Matrix& a, const SvdFactors& f) {
  Matrix s(f.singular_values.size(), f.singular_values.size());
  for (std::size_t i = 0; i < f.singular_values.size(); ++i) s(i, i) = f.singular_values[i];
  Matrix rec = testutil::matmul_naive(testutil::matmul_naive(f.u, s), transpose(f.v));
  double err = 0.0;
  for (std::size_t i = 0; i < a.storage().size(); ++i) {
    const double d = a.storage()[i] - rec.storage()[i];
    err += d * d;
  }
  return std::sqrt(err);
}

double orthonormality_error(const Matrix& m) {
  Matrix g = testutil::matmul_naive(transpose(m), m);
  double worst = 0.0;
  for (std::size_t i = 0; i < g.rows(); ++i) {
    for (std::size_t j = 0; j < g.cols(); ++j) {
      worst = std::max(worst, std::abs(g(i, j) - (i == j ? 1.0 : 0.0)));
    }
  }
  return worst;
}

}  // namespace

TEST_CASE("svd of a diagonal matrix") {
  SvdFactors f = svd(diag2(3.0, 1.0));
  CHECK(f.singular_values[0] == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(f.singular_values[1] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(testutil::max_abs_diff(f.u, Matrix::identity(2)) < 1e-12);
  CHECK(testutil::max_abs_diff(f.v, Matrix::identity(2)) < 1e-12);
}

TEST_CASE("svd of the zero matrix") {
  SvdFactors f = svd(Matrix(2, 3));
  CHECK(f.singular_values.size() == 2);
  CHECK(f.singular_values[0] == 0.0);
  CHECK(f.singular_values[1] == 0.0);
  CHECK(orthonormality_error(f.u) < 1e-12);
  CHECK(orthonormality_error(f.v) < 1e-12);
}

TEST_CASE("svd reconstruction and orthonormality on random matrices") {
  Rng rng(11);
  for (auto [m, n] : {std::pair<int, int>{5, 4}, {4, 5}, {16, 16}, {64, 64}, {64, 12}}) {
    Matrix a = testutil::random_matrix(m, n, rng);
    SvdFactors f = svd(a);
    const double rel = reconstruction_error(a, f) / frobenius_norm(a);
    CHECK(rel <= 1e-8);
    CHECK(orthonormality_error(f.u) < 1e-8);
    CHECK(orthonormality_error(f.v) < 1e-8);
    for (std::size_t i = 0; i + 1 < f.singular_values.size(); ++i) {
      CHECK(f.singular_values[i] >= f.singular_values[i + 1]);
    }
  }
}

TEST_CASE("svd singular values match an independent symmetric eigen-solver") {
  Rng rng(12);
  for (int trial = 0; trial < 5; ++trial) {
    const int m = 6 + 3 * trial;
    const int n = 4 + 2 * trial;
    Matrix a = testutil::random_matrix(m, n, rng);
    SvdFactors f = svd(a);
    Matrix ata = testutil::matmul_naive(transpose(a), a);
    auto ev = testutil::symmetric_eigenvalues(ata);
    for (std::size_t i = 0; i < f.singular_values.size(); ++i) {
      const double ref = std::sqrt(std::max(ev[i], 0.0));
      CHECK(f.singular_values[i] == doctest::Approx(ref).epsilon(1e-6));
    }
  }
}

TEST_CASE("svd rejects bad input") {
  Matrix bad(2, 2);
  bad(0, 0) = std::nan("");
  CHECK_THROWS_AS(svd(bad), InvalidInput);
  CHECK_THROWS_AS(svd(Matrix()), InvalidInput);
}

TEST_CASE("soft threshold on diagonal singular values") {
  Matrix out = soft_threshold_matrix(diag2(3.0, 1.0), 2.0);
  CHECK(out(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(std::abs(out(1, 1)) < 1e-12);
  CHECK(std::abs(out(0, 1)) < 1e-12);
}

TEST_CASE("soft threshold with zero delta is the identity") {
  Rng rng(13);
  Matrix a = testutil::random_matrix(6, 4, rng);
  Matrix out = soft_threshold_matrix(a, 0.0);
  CHECK(testutil::max_abs_diff(a, out) < 1e-8 * frobenius_norm(a));
}

TEST_CASE("soft threshold rejects negative delta") {
  CHECK_THROWS_AS(soft_threshold_matrix(diag2(1, 1), -0.1), InvalidInput);
}

// Subgradient optimality of X = prox_{delta ||.||_*}(D): on the support
// U_X^T (D - X) V_X = delta I, the cross blocks vanish, and the orthogonal
// complement block has operator norm at most delta.
static void check_prox_optimality(const Matrix& d, double delta) {
  Matrix x = soft_threshold_matrix(d, delta);
  Matrix g(d.rows(), d.cols());
  for (std::size_t i = 0; i < g.storage().size(); ++i) {
    g.storage()[i] = d.storage()[i] - x.storage()[i];
  }
  SvdFactors fx = svd(x);
  const double smax = fx.singular_values.empty() ? 0.0 : fx.singular_values[0];
  std::size_t rank = 0;
  while (rank < fx.singular_values.size() && fx.singular_values[rank] > 1e-10 * (smax + 1.0)) {
    ++rank;
  }
  Matrix utgv = testutil::matmul_naive(transpose(fx.u), testutil::matmul_naive(g, fx.v));
  for (std::size_t i = 0; i < rank; ++i) {
    for (std::size_t j = 0; j < rank; ++j) {
      CHECK(std::abs(utgv(i, j) - (i == j ? delta : 0.0)) < 1e-7 * (delta + 1.0));
    }
  }
  // Residual after removing the support directions must have small norm.
  Matrix proj = g;
  for (std::size_t r = 0; r < rank; ++r) {
    // proj <- (I - u_r u_r^T) proj (I - v_r v_r^T), one direction at a time
    for (std::size_t j = 0; j < proj.cols(); ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < proj.rows(); ++i) s += fx.u(i, r) * proj(i, j);
      for (std::size_t i = 0; i < proj.rows(); ++i) proj(i, j) -= fx.u(i, r) * s;
    }
    for (std::size_t i = 0; i < proj.rows(); ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < proj.cols(); ++j) s += proj(i, j) * fx.v(j, r);
      for (std::size_t j = 0; j < proj.cols(); ++j) proj(i, j) -= s * fx.v(j, r);
    }
  }
  const double op = svd(proj).singular_values[0];
  CHECK(op <= delta * (1.0 + 1e-7) + 1e-9);
}

TEST_CASE("soft threshold satisfies prox subgradient optimality") {
  Rng rng(14);
  Matrix d = testutil::random_matrix(3, 3, rng);
  check_prox_optimality(d, 0.5);
  for (int t = 0; t < 20; ++t) {
    const int m = 2 + static_cast<int>(rng.uniform() * 7);
    const int n = 2 + static_cast<int>(rng.uniform() * 7);
    check_prox_optimality(testutil::random_matrix(m, n, rng), 0.3 + rng.uniform());
  }
}

TEST_CASE("cholesky basics") {
  CHECK(testutil::max_abs_diff(cholesky(Matrix::identity(3)), Matrix::identity(3)) < 1e-14);
  Matrix g = cholesky(diag2(4.0, 9.0));
  CHECK(g(0, 0) == doctest::Approx(2.0));
  CHECK(g(1, 1) == doctest::Approx(3.0));
  CHECK(g(1, 0) == 0.0);
}

TEST_CASE("cholesky round trip on an AR(1) covariance") {
  Matrix sigma(4, 4);
  for (int i = 0; i < 4; ++i) {
    for (int j = 0; j < 4; ++j) sigma(i, j) = std::pow(0.5, std::abs(i - j));
  }
  Matrix g = cholesky(sigma);
  Matrix back = testutil::matmul_naive(g, transpose(g));
  CHECK(testutil::max_abs_diff(back, sigma) < 1e-10 * frobenius_norm(sigma));
}

TEST_CASE("cholesky rejects non-SPD input") {
  Matrix neg = diag2(1.0, -1.0);
  CHECK_THROWS_AS(cholesky(neg), NumericalFailure);
  Matrix asym(2, 2);
  asym(0, 0) = 1;
  asym(0, 1) = 0.5;
  asym(1, 0) = -0.5;
  asym(1, 1) = 1;
  CHECK_THROWS_AS(cholesky(asym), NumericalFailure);
}

TEST_CASE("empirical quantile order statistic") {
  Vector v(100);
  for (int i = 0; i < 100; ++i) v[i] = i + 1;
  CHECK(empirical_quantile(v, 0.95) == 95.0);
  CHECK(empirical_quantile({7.0}, 0.3) == 7.0);
  CHECK(empirical_quantile({7.0}, 0.9) == 7.0);
  CHECK(empirical_quantile(Vector(50, 0.0), 0.95) == 0.0);
  CHECK_THROWS_AS(empirical_quantile({}, 0.5), InvalidInput);
  CHECK_THROWS_AS(empirical_quantile({1.0}, 0.0), InvalidInput);
  CHECK_THROWS_AS(empirical_quantile({1.0}, 1.0), InvalidInput);
}

TEST_CASE("empirical quantile is monotone in the level") {
  Rng rng(15);
  for (int t = 0; t < 20; ++t) {
    const int n = 1 + static_cast<int>(rng.uniform() * 40);
    Vector v = testutil::random_vector(n, rng);
    double prev = -kInf;
    for (double level = 0.05; level < 1.0; level += 0.05) {
      const double q = empirical_quantile(v, level);
      CHECK(q >= prev);
      prev = q;
    }
  }
}

TEST_CASE("truncated normal respects its support") {
  Rng rng(16);
  for (int i = 0; i < 2000; ++i) {
    CHECK(truncated_normal_sample(0.0, kInf, 0.0, 1.0, rng) > 0.0);
    CHECK(truncated_normal_sample(-kInf, 0.0, 1.0, 2.0, rng) < 0.0);
    const double z = truncated_normal_sample(5.0, 6.0, 0.0, 1.0, rng);  // deep tail
    CHECK(z > 5.0);
    CHECK(z < 6.0);
  }
  CHECK_THROWS_AS(truncated_normal_sample(1.0, 1.0, 0.0, 1.0, rng), InvalidInput);
  CHECK_THROWS_AS(truncated_normal_sample(0.0, 1.0, 0.0, 0.0, rng), InvalidInput);
}

TEST_CASE("truncated normal mean matches closed forms and quadrature") {
  Rng rng(17);
  const int draws = 100000;

  // Half-normal: mean sqrt(2/pi).
  double mean0 = 0.0;
  for (int i = 0; i < draws; ++i) mean0 += truncated_normal_sample(0.0, kInf, 0.0, 1.0, rng);
  mean0 /= draws;
  CHECK(std::abs(mean0 - std::sqrt(2.0 / 3.14159265358979323846)) < 0.01);

  // Far-from-boundary case: truncation negligible.
  double mean5 = 0.0;
  for (int i = 0; i < draws; ++i) mean5 += truncated_normal_sample(0.0, kInf, 5.0, 1.0, rng);
  mean5 /= draws;
  CHECK(std::abs(mean5 - 5.0) < 0.02);

  // Quadrature oracle for the truncated mean on (0, inf) with mu = 5:
  // integrate x phi(x-5) on (0, 40) by Simpson and normalize.
  auto phi = [](double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * 3.14159265358979323846); };
  const int steps = 20000;
  const double hi = 40.0;
  const double h = hi / steps;
  double num = 0.0, den = 0.0;
  for (int i = 0; i <= steps; ++i) {
    const double x = i * h;
    const double w = (i == 0 || i == steps) ? 1.0 : (i % 2 ? 4.0 : 2.0);
    num += w * x * phi(x - 5.0);
    den += w * phi(x - 5.0);
  }
  const double oracle = num / den;
  CHECK(std::abs(mean5 - oracle) < 0.02);
}

TEST_CASE("truncated normal empirical CDF passes a KS check") {
  Rng rng(18);
  const int draws = 100000;
  Vector sample(draws);
  for (int i = 0; i < draws; ++i) sample[i] = truncated_normal_sample(0.0, kInf, 1.0, 1.0, rng);
  std::sort(sample.begin(), sample.end());
  const double mass = 1.0 - normal_cdf(-1.0);
  double ks = 0.0;
  for (int i = 0; i < draws; ++i) {
    const double cdf = (normal_cdf(sample[i] - 1.0) - normal_cdf(-1.0)) / mass;
    const double emp_hi = static_cast<double>(i + 1) / draws;
    const double emp_lo = static_cast<double>(i) / draws;
    ks = std::max(ks, std::max(std::abs(cdf - emp_hi), std::abs(cdf - emp_lo)));
  }
  // 1% critical value 1.628 / sqrt(n).
  CHECK(ks < 1.628 / std::sqrt(static_cast<double>(draws)));
}

TEST_CASE("rng substreams are deterministic and tag-sensitive") {
  Rng a = Rng::substream(42, {1, 2, 3});
  Rng b = Rng::substream(42, {1, 2, 3});
  Rng c = Rng::substream(42, {1, 2, 4});
  bool all_equal = true;
  bool any_diff = false;
  for (int i = 0; i < 100; ++i) {
    const double va = a.uniform();
    if (va != b.uniform()) all_equal = false;
    if (va != c.uniform()) any_diff = true;
  }
  CHECK(all_equal);
  CHECK(any_diff);
}
