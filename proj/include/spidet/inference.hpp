#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "spidet/estimation.hpp"

namespace spidet {

// Null-distribution ensemble: N replicates of |sqrt(n) vec(S_hat^e)| produced
// by the conditional bootstrap, all with the same designs and penalties.
struct BootstrapEnsemble {
  int N = 0;
  long p = 0;      // RC(RC-1)
  Vector u;        // N x p, row-major by replicate
  std::uint64_t seed = 0;
  Matrix lambda_rc;  // penalties the replicates were fitted with (empty when loaded)

  double at(int b, long j) const { return u[static_cast<std::size_t>(b) * p + j]; }
};

// Conditional bootstrap under the null: per replicate and unit, draw
// e ~ N(0, sigma_rc^2 I), project out the state design, re-fit the lasso at
// the same lambda_rc as the main fit, and record the scaled magnitudes.
// Replicate/unit RNG substreams are derived from (seed, b, r, c).
BootstrapEnsemble bootstrap_null_ensemble(const PanelData& data, const Matrix& sigma_hat,
                                          const Matrix& lambda_rc, int N, std::uint64_t seed,
                                          int threads = 1);

// Empirical 1-alpha quantile of max_{j in subset} U^{(b)}_j over replicates.
double critical_value(const BootstrapEnsemble& ensemble, double alpha,
                      const std::vector<long>& subset);

struct GlobalTestResult {
  double T_n = 0.0;
  double c_B = 0.0;
  double alpha = 0.0;
  bool reject = false;
};

// |sqrt(n) vec(S_hat)| in the canonical flat order.
Vector scaled_interference_magnitudes(const CoefficientSet& coeffs, int n);

// Test of no interference: T_n = ||sqrt(n) S_hat||_inf against the bootstrap
// critical value over all coordinates; rejects when T_n > c_B.
GlobalTestResult global_test(const FitResult& fit, const BootstrapEnsemble& ensemble,
                             double alpha);

// Binary persistence: header (magic, version, N, p, seed), then N*p
// little-endian doubles row-major by replicate.
void save_ensemble(const std::string& path, const BootstrapEnsemble& ensemble);
BootstrapEnsemble load_ensemble(const std::string& path);

}  // namespace spidet
