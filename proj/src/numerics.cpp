#include "spidet/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace spidet {

namespace {

// One-sided Jacobi: orthogonalizes the columns of w (m x n, m >= n) by plane
// rotations, accumulating the same rotations into v. On exit the nonzero
// columns of w are mutually orthogonal and w = A * v.
void jacobi_orthogonalize(Matrix& w, Matrix& v) {
  const std::size_t m = w.rows();
  const std::size_t n = w.cols();
  const double tol = 1e-15;
  const int max_sweeps = 64;
  for (int sweep = 0; sweep < max_sweeps; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        double app = 0.0, aqq = 0.0, apq = 0.0;
        for (std::size_t i = 0; i < m; ++i) {
          const double wp = w(i, p);
          const double wq = w(i, q);
          app += wp * wp;
          aqq += wq * wq;
          apq += wp * wq;
        }
        if (std::abs(apq) <= tol * std::sqrt(app * aqq)) continue;
        rotated = true;
        const double zeta = (aqq - app) / (2.0 * apq);
        const double t =
            (zeta >= 0.0 ? 1.0 : -1.0) / (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t i = 0; i < m; ++i) {
          const double wp = w(i, p);
          const double wq = w(i, q);
          w(i, p) = c * wp - s * wq;
          w(i, q) = s * wp + c * wq;
        }
        for (std::size_t i = 0; i < v.rows(); ++i) {
          const double vp = v(i, p);
          const double vq = v(i, q);
          v(i, p) = c * vp - s * vq;
          v(i, q) = s * vp + c * vq;
        }
      }
    }
    if (!rotated) break;
  }
}

// Fills column j of u with a unit vector orthogonal to columns [0, j).
// Candidates are the canonical basis vectors; the one with the largest
// residual is kept, which is deterministic and well-conditioned.
void complete_basis_column(Matrix& u, std::size_t j) {
  const std::size_t m = u.rows();
  Vector best;
  double best_norm = -1.0;
  for (std::size_t cand = 0; cand < m; ++cand) {
    Vector r(m, 0.0);
    r[cand] = 1.0;
    for (std::size_t k = 0; k < j; ++k) {
      double proj = 0.0;
      for (std::size_t i = 0; i < m; ++i) proj += u(i, k) * r[i];
      for (std::size_t i = 0; i < m; ++i) r[i] -= proj * u(i, k);
    }
    double nrm = 0.0;
    for (double x : r) nrm += x * x;
    nrm = std::sqrt(nrm);
    if (nrm > best_norm) {
      best_norm = nrm;
      best = std::move(r);
    }
  }
  for (std::size_t i = 0; i < m; ++i) u(i, j) = best[i] / best_norm;
}

}  // namespace

SvdFactors svd(const Matrix& a) {
  if (a.rows() == 0 || a.cols() == 0) throw InvalidInput("svd: empty matrix");
  for (double x : a.storage()) {
    if (!std::isfinite(x)) throw InvalidInput("svd: non-finite entry");
  }
  if (a.rows() < a.cols()) {
    SvdFactors f = svd(transpose(a));
    return SvdFactors{std::move(f.v), std::move(f.singular_values), std::move(f.u)};
  }

  const std::size_t m = a.rows();
  const std::size_t n = a.cols();
  Matrix w = a;
  Matrix v = Matrix::identity(n);
  jacobi_orthogonalize(w, v);

  Vector norms(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < m; ++i) s += w(i, j) * w(i, j);
    norms[j] = std::sqrt(s);
  }
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t p, std::size_t q) {
    if (norms[p] != norms[q]) return norms[p] > norms[q];
    return p < q;
  });

  SvdFactors f;
  f.u = Matrix(m, n);
  f.v = Matrix(n, n);
  f.singular_values.assign(n, 0.0);
  const double smax = norms[idx[0]];
  std::vector<std::size_t> degenerate;
  for (std::size_t jj = 0; jj < n; ++jj) {
    const std::size_t j = idx[jj];
    f.singular_values[jj] = norms[j];
    for (std::size_t i = 0; i < n; ++i) f.v(i, jj) = v(i, j);
    if (norms[j] > smax * 1e-13 && norms[j] > 0.0) {
      for (std::size_t i = 0; i < m; ++i) f.u(i, jj) = w(i, j) / norms[j];
    } else {
      degenerate.push_back(jj);
    }
  }
  for (std::size_t jj : degenerate) complete_basis_column(f.u, jj);
  return f;
}

Matrix soft_threshold_matrix(const Matrix& d, double delta) {
  if (delta < 0.0) throw InvalidInput("soft_threshold_matrix: negative threshold");
  SvdFactors f = svd(d);
  const std::size_t m = d.rows();
  const std::size_t n = d.cols();
  const std::size_t k = f.singular_values.size();
  Matrix out(m, n);
  for (std::size_t r = 0; r < k; ++r) {
    const double s = f.singular_values[r] - delta;
    if (s <= 0.0) continue;
    for (std::size_t i = 0; i < m; ++i) {
      const double ui = s * f.u(i, r);
      if (ui == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) out(i, j) += ui * f.v(j, r);
    }
  }
  return out;
}

Matrix cholesky(const Matrix& sigma) {
  const std::size_t n = sigma.rows();
  if (n == 0 || sigma.cols() != n) throw InvalidInput("cholesky: matrix not square");
  double max_diag = 0.0;
  double max_abs = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    max_diag = std::max(max_diag, std::abs(sigma(i, i)));
    for (std::size_t j = 0; j < n; ++j) max_abs = std::max(max_abs, std::abs(sigma(i, j)));
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) {
      if (std::abs(sigma(i, j) - sigma(j, i)) > 1e-8 * std::max(max_abs, 1.0)) {
        throw NumericalFailure("cholesky: matrix not symmetric");
      }
    }
  }
  Matrix g(n, n);
  for (std::size_t j = 0; j < n; ++j) {
    double diag = sigma(j, j);
    for (std::size_t k = 0; k < j; ++k) diag -= g(j, k) * g(j, k);
    if (!(diag > 1e-14 * std::max(max_diag, 1e-300))) {
      throw NumericalFailure("cholesky: matrix not positive definite");
    }
    g(j, j) = std::sqrt(diag);
    for (std::size_t i = j + 1; i < n; ++i) {
      double sum = sigma(i, j);
      for (std::size_t k = 0; k < j; ++k) sum -= g(i, k) * g(j, k);
      g(i, j) = sum / g(j, j);
    }
  }
  return g;
}

double empirical_quantile(const Vector& values, double level) {
  if (values.empty()) throw InvalidInput("empirical_quantile: empty sample");
  if (!(level > 0.0 && level < 1.0)) {
    throw InvalidInput("empirical_quantile: level outside (0,1)");
  }
  const std::size_t n = values.size();
  // Guard against 0.95*100 style rounding up to 96.
  auto k = static_cast<std::size_t>(std::ceil(level * static_cast<double>(n) - 1e-9));
  k = std::clamp<std::size_t>(k, 1, n);
  Vector tmp = values;
  std::nth_element(tmp.begin(), tmp.begin() + static_cast<std::ptrdiff_t>(k - 1), tmp.end());
  return tmp[k - 1];
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

namespace {

// Robert's exponential-proposal rejection for the standard normal restricted
// to (a, b) with a >= 0.
double tail_sample(double a, double b, Rng& rng) {
  const double lambda = 0.5 * (a + std::sqrt(a * a + 4.0));
  for (;;) {
    const double z = a + rng.exponential() / lambda;
    if (!(z > a && z < b)) continue;
    const double rho = std::exp(-0.5 * (z - lambda) * (z - lambda));
    if (rng.uniform() <= rho) return z;
  }
}

}  // namespace

double truncated_normal_sample(double lo, double hi, double mu, double sigma, Rng& rng) {
  if (!(lo < hi)) throw InvalidInput("truncated_normal_sample: requires lo < hi");
  if (!(sigma > 0.0)) throw InvalidInput("truncated_normal_sample: requires sigma > 0");
  const double a = (lo - mu) / sigma;
  const double b = (hi - mu) / sigma;
  const double mass = normal_cdf(b) - normal_cdf(a);
  double z;
  if (mass >= 0.1) {
    do {
      z = rng.normal();
    } while (!(z > a && z < b));
  } else if (a >= 0.0) {
    z = tail_sample(a, b, rng);
  } else if (b <= 0.0) {
    z = -tail_sample(-b, -a, rng);
  } else {
    // Narrow window straddling zero; the density maximum inside is at 0.
    do {
      z = a + (b - a) * rng.uniform();
    } while (rng.uniform() > std::exp(-0.5 * z * z));
  }
  return mu + sigma * z;
}

Matrix multiply(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw InvalidInput("multiply: inner dimensions differ");
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      const double* brow = b.row(k);
      double* orow = out.row(i);
      for (std::size_t j = 0; j < b.cols(); ++j) orow[j] += aik * brow[j];
    }
  }
  return out;
}

Matrix transpose(const Matrix& a) {
  Matrix out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  }
  return out;
}

Vector matvec(const Matrix& a, const Vector& x) {
  if (x.size() != a.cols()) throw InvalidInput("matvec: dimension mismatch");
  Vector out(a.rows(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double* arow = a.row(i);
    double s = 0.0;
    for (std::size_t j = 0; j < a.cols(); ++j) s += arow[j] * x[j];
    out[i] = s;
  }
  return out;
}

Vector transpose_matvec(const Matrix& a, const Vector& x) {
  if (x.size() != a.rows()) throw InvalidInput("transpose_matvec: dimension mismatch");
  Vector out(a.cols(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double xi = x[i];
    if (xi == 0.0) continue;
    const double* arow = a.row(i);
    for (std::size_t j = 0; j < a.cols(); ++j) out[j] += xi * arow[j];
  }
  return out;
}

double frobenius_norm(const Matrix& a) {
  double s = 0.0;
  for (double x : a.storage()) s += x * x;
  return std::sqrt(s);
}

double nuclear_norm(const Matrix& a) {
  SvdFactors f = svd(a);
  double s = 0.0;
  for (double x : f.singular_values) s += x;
  return s;
}

double dot(const Vector& a, const Vector& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm2(const Vector& a) { return std::sqrt(dot(a, a)); }

Vector CholFactor::solve(const Vector& rhs) const {
  const std::size_t n = g_.rows();
  if (rhs.size() != n) throw InvalidInput("CholFactor::solve: dimension mismatch");
  Vector y(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = rhs[i];
    for (std::size_t k = 0; k < i; ++k) s -= g_(i, k) * y[k];
    y[i] = s / g_(i, i);
  }
  Vector x(n);
  for (std::size_t ii = n; ii-- > 0;) {
    double s = y[ii];
    for (std::size_t k = ii + 1; k < n; ++k) s -= g_(k, ii) * x[k];
    x[ii] = s / g_(ii, ii);
  }
  return x;
}

}  // namespace spidet
