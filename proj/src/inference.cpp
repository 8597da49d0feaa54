#include "spidet/inference.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

#include "spidet/parallel.hpp"

namespace spidet {

static_assert(std::endian::native == std::endian::little,
              "ensemble files are written in little-endian layout");

BootstrapEnsemble bootstrap_null_ensemble(const PanelData& data, const Matrix& sigma_hat,
                                          const Matrix& lambda_rc, int N, std::uint64_t seed,
                                          int threads) {
  data.validate();
  if (N < 1) throw InvalidInput("bootstrap_null_ensemble: N must be >= 1");
  const GridShape shape = data.shape;
  if (sigma_hat.rows() != static_cast<std::size_t>(shape.rows) ||
      sigma_hat.cols() != static_cast<std::size_t>(shape.cols) ||
      lambda_rc.rows() != static_cast<std::size_t>(shape.rows) ||
      lambda_rc.cols() != static_cast<std::size_t>(shape.cols)) {
    throw InvalidInput("bootstrap_null_ensemble: sigma/lambda shape mismatch");
  }

  NeighborOrder order(shape);
  std::vector<UnitWorkspace> ws = build_unit_workspaces(data, order);

  const int p = shape.units();
  const int q = shape.neighbor_count();
  const int n = data.n;
  const double sqrt_n = std::sqrt(static_cast<double>(n));

  BootstrapEnsemble ens;
  ens.N = N;
  ens.p = shape.interference_len();
  ens.seed = seed;
  ens.lambda_rc = lambda_rc;
  ens.u.assign(static_cast<std::size_t>(N) * ens.p, 0.0);

  parallel_for(N, threads, [&](std::size_t b) {
    double* row = ens.u.data() + b * ens.p;
    Vector e(n), resid(n), coef(q);
    for (int u = 0; u < p; ++u) {
      auto [r, c] = shape.unit_coords(u);
      const double sd = sigma_hat(r, c);
      Rng rng = Rng::substream(seed, {static_cast<std::uint64_t>(b), static_cast<std::uint64_t>(r),
                                      static_cast<std::uint64_t>(c)});
      for (int i = 0; i < n; ++i) e[i] = sd * rng.normal();
      // Project out the state design: e - X (X^T X)^{-1} X^T e.
      Vector proj_coef = ws[u].xtx_chol.solve(transpose_matvec(ws[u].x, e));
      for (int i = 0; i < n; ++i) {
        const double* xrow = ws[u].x.row(i);
        double fit = 0.0;
        for (int k = 0; k < data.d; ++k) fit += xrow[k] * proj_coef[k];
        resid[i] = e[i] - fit;
      }
      std::fill(coef.begin(), coef.end(), 0.0);
      lasso_cd_pm1(ws[u].neighbors_t, &ws[u].excluded, lambda_rc(r, c), 1e-7, 5000, coef.data(),
                   resid.data());
      const long base = static_cast<long>(u) * q;
      for (int j = 0; j < q; ++j) row[base + j] = std::abs(sqrt_n * coef[j]);
    }
  });
  return ens;
}

double critical_value(const BootstrapEnsemble& ensemble, double alpha,
                      const std::vector<long>& subset) {
  if (subset.empty()) throw InvalidInput("critical_value: empty coordinate subset");
  if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidInput("critical_value: alpha outside (0,1)");
  for (long j : subset) {
    if (j < 0 || j >= ensemble.p) throw InvalidInput("critical_value: coordinate out of range");
  }
  Vector maxima(ensemble.N, 0.0);
  for (int b = 0; b < ensemble.N; ++b) {
    const double* row = ensemble.u.data() + static_cast<std::size_t>(b) * ensemble.p;
    double best = 0.0;
    for (long j : subset) best = std::max(best, row[j]);
    maxima[b] = best;
  }
  return empirical_quantile(maxima, 1.0 - alpha);
}

Vector scaled_interference_magnitudes(const CoefficientSet& coeffs, int n) {
  const double sqrt_n = std::sqrt(static_cast<double>(n));
  const Vector& s = coeffs.interference_vec();
  Vector out(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) out[i] = std::abs(sqrt_n * s[i]);
  return out;
}

GlobalTestResult global_test(const FitResult& fit, const BootstrapEnsemble& ensemble,
                             double alpha) {
  const long p = static_cast<long>(fit.coeffs.S.rows() * fit.coeffs.S.cols());
  if (p != ensemble.p) throw InvalidInput("global_test: fit and ensemble dimensions differ");
  if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidInput("global_test: alpha outside (0,1)");

  GlobalTestResult res;
  res.alpha = alpha;
  Vector u = scaled_interference_magnitudes(fit.coeffs, fit.n);
  for (double v : u) res.T_n = std::max(res.T_n, v);
  std::vector<long> all(p);
  for (long j = 0; j < p; ++j) all[j] = j;
  res.c_B = critical_value(ensemble, alpha, all);
  res.reject = res.T_n > res.c_B;
  return res;
}

void save_ensemble(const std::string& path, const BootstrapEnsemble& ensemble) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw InvalidInput("save_ensemble: cannot open " + path);
  const char magic[8] = {'S', 'P', 'I', 'D', 'E', 'T', 'E', 'B'};
  out.write(magic, 8);
  const std::uint32_t version = 1;
  out.write(reinterpret_cast<const char*>(&version), sizeof(version));
  const std::uint64_t n64 = static_cast<std::uint64_t>(ensemble.N);
  const std::uint64_t p64 = static_cast<std::uint64_t>(ensemble.p);
  out.write(reinterpret_cast<const char*>(&n64), sizeof(n64));
  out.write(reinterpret_cast<const char*>(&p64), sizeof(p64));
  out.write(reinterpret_cast<const char*>(&ensemble.seed), sizeof(ensemble.seed));
  out.write(reinterpret_cast<const char*>(ensemble.u.data()),
            static_cast<std::streamsize>(ensemble.u.size() * sizeof(double)));
  if (!out) throw InvalidInput("save_ensemble: write failed for " + path);
}

BootstrapEnsemble load_ensemble(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("load_ensemble: cannot open " + path);
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, "SPIDETEB", 8) != 0) {
    throw InvalidInput("load_ensemble: bad magic in " + path);
  }
  std::uint32_t version = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  if (!in || version != 1) throw InvalidInput("load_ensemble: unsupported version");
  std::uint64_t n64 = 0, p64 = 0, seed = 0;
  in.read(reinterpret_cast<char*>(&n64), sizeof(n64));
  in.read(reinterpret_cast<char*>(&p64), sizeof(p64));
  in.read(reinterpret_cast<char*>(&seed), sizeof(seed));
  if (!in || n64 == 0 || p64 == 0) throw InvalidInput("load_ensemble: bad header");
  BootstrapEnsemble ens;
  ens.N = static_cast<int>(n64);
  ens.p = static_cast<long>(p64);
  ens.seed = seed;
  ens.u.assign(n64 * p64, 0.0);
  in.read(reinterpret_cast<char*>(ens.u.data()),
          static_cast<std::streamsize>(ens.u.size() * sizeof(double)));
  if (!in) throw InvalidInput("load_ensemble: truncated payload in " + path);
  return ens;
}

}  // namespace spidet
