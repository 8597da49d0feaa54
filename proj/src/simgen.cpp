#include "spidet/simgen.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>

#include "spidet/parallel.hpp"

namespace spidet {

namespace {

// Substream tags for the per-replication generators.
enum : std::uint64_t {
  kTagState = 1,
  kTagCoefficients = 2,
  kTagTreatments = 3,
  kTagNoise = 4,
  kTagBootstrap = 5,
};

}  // namespace

std::string to_string(TreatmentDesign d) {
  return d == TreatmentDesign::independent ? "independent" : "correlated";
}

std::string to_string(TruthStructure t) {
  switch (t) {
    case TruthStructure::clusters: return "clusters";
    case TruthStructure::distant_clusters: return "distant_clusters";
    default: return "mean_field";
  }
}

TreatmentDesign design_from_string(const std::string& s) {
  if (s == "independent") return TreatmentDesign::independent;
  if (s == "correlated") return TreatmentDesign::correlated;
  throw InvalidInput("unknown treatment design: " + s);
}

TruthStructure truth_from_string(const std::string& s) {
  if (s == "clusters") return TruthStructure::clusters;
  if (s == "distant_clusters") return TruthStructure::distant_clusters;
  if (s == "mean_field") return TruthStructure::mean_field;
  throw InvalidInput("unknown truth structure: " + s);
}

const std::vector<double>& default_state_means() {
  // One covariate carries a large level, as raw (unscaled) meteorological
  // records do; the remaining columns are centered anomalies, which keeps the
  // state design well conditioned. The level makes the per-unit mean state
  // effects, and with them the interference magnitudes, dominate the unit
  // noise floor.
  static const std::vector<double> v{0.0, 2000.0, 0.0, 0.0};
  return v;
}

const std::vector<double>& default_state_sds() {
  static const std::vector<double> v{8.0, 8.0, 3.0, 1.5};
  return v;
}

Vector gen_treatments_independent(const GridShape& shape, int n, Rng& rng) {
  const int p = shape.units();
  Vector m(static_cast<std::size_t>(n) * p);
  for (double& v : m) v = rng.sign();
  return m;
}

Vector gen_treatments_correlated(const GridShape& shape, int n, Rng& rng) {
  const int p = shape.units();
  Matrix cov(p, p);
  for (int j = 0; j < p; ++j) {
    for (int k = 0; k < p; ++k) cov(j, k) = std::pow(0.5, std::abs(j - k));
  }
  Matrix g = cholesky(cov);
  Vector m(static_cast<std::size_t>(n) * p);
  Vector z(p);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < p; ++j) z[j] = rng.normal();
    for (int j = 0; j < p; ++j) {
      double v = 0.0;
      const double* grow = g.row(j);
      for (int k = 0; k <= j; ++k) v += grow[k] * z[k];
      m[static_cast<std::size_t>(i) * p + j] = v >= 0.0 ? 1.0 : -1.0;
    }
  }
  return m;
}

double interference_magnitude(double delta, double f_abs, Rng& rng) {
  return delta * truncated_normal_sample(0.0, std::numeric_limits<double>::infinity(), f_abs,
                                         1.0, rng);
}

GroundTruth gen_coefficients(const GridShape& shape, int d, double delta, int clusters_max,
                             const Matrix& state_means, Rng& rng, TruthStructure truth) {
  if (std::min(shape.rows, shape.cols) < 4) {
    throw InvalidInput("gen_coefficients: grid too small for a rank-4 direct effect");
  }
  if (delta < 0.0) throw InvalidInput("gen_coefficients: negative delta");
  const int p = shape.units();
  if (state_means.rows() != static_cast<std::size_t>(p) ||
      state_means.cols() != static_cast<std::size_t>(d)) {
    throw InvalidInput("gen_coefficients: state_means must be P x d");
  }

  GroundTruth out;
  out.coeffs.beta = Matrix(p, d);
  for (int u = 0; u < p; ++u) {
    for (int k = 0; k < d; ++k) out.coeffs.beta(u, k) = rng.normal();
  }

  // Mean state effect per unit drives both the direct effect and the
  // interference magnitudes.
  Matrix f(shape.rows, shape.cols);
  for (int u = 0; u < p; ++u) {
    auto [r, c] = shape.unit_coords(u);
    double s = 0.0;
    for (int k = 0; k < d; ++k) s += state_means(u, k) * out.coeffs.beta(u, k);
    f(r, c) = s;
  }

  // Rank-4 truncation of F, scaled to a ~1% effect.
  SvdFactors fs = svd(f);
  out.coeffs.L = Matrix(shape.rows, shape.cols);
  const std::size_t keep = std::min<std::size_t>(4, fs.singular_values.size());
  for (std::size_t t = 0; t < keep; ++t) {
    const double s = 0.01 * fs.singular_values[t];
    if (s == 0.0) continue;
    for (int i = 0; i < shape.rows; ++i) {
      const double ui = s * fs.u(i, t);
      for (int j = 0; j < shape.cols; ++j) out.coeffs.L(i, j) += ui * fs.v(j, t);
    }
  }

  NeighborOrder order(shape);
  out.coeffs.S = Matrix(p, shape.neighbor_count());
  if (delta > 0.0) {
    for (int u = 0; u < p; ++u) {
      auto [r0, c0] = shape.unit_coords(u);
      const auto& nb = order.neighbors_of(u);
      // Distinct squared distances realized from this unit, each one cluster.
      std::vector<long> dist2(nb.size());
      std::vector<long> distinct;
      for (std::size_t j = 0; j < nb.size(); ++j) {
        auto [r, c] = shape.unit_coords(nb[j]);
        dist2[j] = static_cast<long>(r - r0) * (r - r0) + static_cast<long>(c - c0) * (c - c0);
        distinct.push_back(dist2[j]);
      }
      std::sort(distinct.begin(), distinct.end());
      distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());

      std::vector<long> chosen;
      if (truth == TruthStructure::mean_field) {
        chosen.push_back(1);  // edge-sharing neighbors only
      } else {
        std::vector<long> pool = distinct;
        if (truth == TruthStructure::distant_clusters) {
          pool.erase(std::remove_if(pool.begin(), pool.end(), [](long v) { return v <= 2; }),
                     pool.end());
        }
        const int want = std::min<int>(
            static_cast<int>(rng.uniform() * (clusters_max + 1)), clusters_max);
        for (int t = 0; t < want && !pool.empty(); ++t) {
          const std::size_t pick = std::min<std::size_t>(
              static_cast<std::size_t>(rng.uniform() * pool.size()), pool.size() - 1);
          chosen.push_back(pool[pick]);
          pool.erase(pool.begin() + pick);
        }
      }
      if (chosen.empty()) continue;
      std::sort(chosen.begin(), chosen.end());
      const double f_abs = std::abs(f(r0, c0));
      for (std::size_t j = 0; j < nb.size(); ++j) {
        if (!std::binary_search(chosen.begin(), chosen.end(), dist2[j])) continue;
        out.coeffs.S(u, j) = interference_magnitude(delta, f_abs, rng);
      }
    }
  }

  const Vector& svec = out.coeffs.interference_vec();
  for (std::size_t j = 0; j < svec.size(); ++j) {
    if (svec[j] != 0.0) out.J1.push_back(static_cast<long>(j));
  }

  double ate = 0.0;
  for (int u = 0; u < p; ++u) {
    auto [r, c] = shape.unit_coords(u);
    double s = out.coeffs.L(r, c);
    const double* srow = out.coeffs.S.row(u);
    for (int j = 0; j < shape.neighbor_count(); ++j) s += srow[j];
    ate += s;
  }
  out.true_ate = ate / p;
  return out;
}

PanelData gen_outcomes(const GroundTruth& truth, const Vector& m, const Vector& x,
                       double noise_sd, Rng& rng, const GridShape& shape, int n, int d,
                       const NeighborOrder& order) {
  const int p = shape.units();
  if (noise_sd < 0.0) throw InvalidInput("gen_outcomes: negative noise level");
  if (m.size() != static_cast<std::size_t>(n) * p ||
      x.size() != static_cast<std::size_t>(n) * p * d) {
    throw InvalidInput("gen_outcomes: tensor sizes inconsistent with shape");
  }
  if (truth.coeffs.beta.rows() != static_cast<std::size_t>(p) ||
      truth.coeffs.beta.cols() != static_cast<std::size_t>(d)) {
    throw InvalidInput("gen_outcomes: coefficient shape mismatch");
  }

  PanelData data;
  data.shape = shape;
  data.n = n;
  data.d = d;
  data.m = m;
  data.x = x;
  data.y.assign(static_cast<std::size_t>(n) * p, 0.0);
  for (int i = 0; i < n; ++i) {
    const std::size_t base = static_cast<std::size_t>(i) * p;
    for (int u = 0; u < p; ++u) {
      auto [r, c] = shape.unit_coords(u);
      double v = m[base + u] * truth.coeffs.L(r, c);
      const double* beta = truth.coeffs.beta.row(u);
      const std::size_t xbase = (base + u) * d;
      for (int k = 0; k < d; ++k) v += x[xbase + k] * beta[k];
      const double* srow = truth.coeffs.S.row(u);
      const auto& nb = order.neighbors_of(u);
      for (std::size_t j = 0; j < nb.size(); ++j) {
        if (srow[j] != 0.0) v += m[base + nb[j]] * srow[j];
      }
      if (noise_sd > 0.0) v += noise_sd * rng.normal();
      data.y[base + u] = v;
    }
  }
  return data;
}

double set_fdr(const std::vector<long>& detected, const std::vector<long>& truth) {
  std::size_t a = 0, b = 0, both = 0;
  while (a < detected.size() && b < truth.size()) {
    if (detected[a] == truth[b]) {
      ++both;
      ++a;
      ++b;
    } else if (detected[a] < truth[b]) {
      ++a;
    } else {
      ++b;
    }
  }
  const double falses = static_cast<double>(detected.size() - both);
  return falses / std::max<double>(detected.size(), 1.0);
}

double set_tpr(const std::vector<long>& detected, const std::vector<long>& truth) {
  std::size_t a = 0, b = 0, both = 0;
  while (a < detected.size() && b < truth.size()) {
    if (detected[a] == truth[b]) {
      ++both;
      ++a;
      ++b;
    } else if (detected[a] < truth[b]) {
      ++a;
    } else {
      ++b;
    }
  }
  return static_cast<double>(both) / std::max<double>(truth.size(), 1.0);
}

namespace {

Vector gen_state_tensor(const SimConfig& cfg, Rng& rng) {
  const int p = cfg.shape.units();
  std::vector<double> means = cfg.state_means.empty() ? default_state_means() : cfg.state_means;
  std::vector<double> sds = cfg.state_sds.empty() ? default_state_sds() : cfg.state_sds;
  Vector x(static_cast<std::size_t>(cfg.n) * p * cfg.d);
  std::size_t idx = 0;
  for (int i = 0; i < cfg.n; ++i) {
    for (int u = 0; u < p; ++u) {
      for (int k = 0; k < cfg.d; ++k) {
        x[idx++] = means[k % means.size()] + sds[k % sds.size()] * rng.normal();
      }
    }
  }
  return x;
}

Matrix state_means_of(const Vector& x, const GridShape& shape, int n, int d) {
  const int p = shape.units();
  Matrix out(p, d);
  for (int i = 0; i < n; ++i) {
    for (int u = 0; u < p; ++u) {
      const std::size_t base = (static_cast<std::size_t>(i) * p + u) * d;
      for (int k = 0; k < d; ++k) out(u, k) += x[base + k];
    }
  }
  for (double& v : out.storage()) v /= n;
  return out;
}

struct RepOutcome {
  bool ok = false;
  std::string error;
  bool reject = false;
  double truth_ate = 0.0;
  double fdr[2] = {0.0, 0.0};
  double tpr[2] = {0.0, 0.0};
  double jac[2] = {0.0, 0.0};
  double ate_post[2] = {0.0, 0.0};
  double ate_mf = 0.0;
};

}  // namespace

PanelData generate_panel(const SimConfig& cfg, int replication, GroundTruth* truth_out) {
  const auto rep = static_cast<std::uint64_t>(replication);
  Rng rng_x = Rng::substream(cfg.seed, {rep, kTagState});
  Rng rng_coef = Rng::substream(cfg.seed, {rep, kTagCoefficients});
  Rng rng_m = Rng::substream(cfg.seed, {rep, kTagTreatments});
  Rng rng_eps = Rng::substream(cfg.seed, {rep, kTagNoise});

  Vector x = gen_state_tensor(cfg, rng_x);
  Matrix means = state_means_of(x, cfg.shape, cfg.n, cfg.d);
  GroundTruth truth = gen_coefficients(cfg.shape, cfg.d, cfg.delta, cfg.clusters_max, means,
                                       rng_coef, cfg.truth);
  Vector m = cfg.design == TreatmentDesign::independent
                 ? gen_treatments_independent(cfg.shape, cfg.n, rng_m)
                 : gen_treatments_correlated(cfg.shape, cfg.n, rng_m);
  NeighborOrder order(cfg.shape);
  PanelData data =
      gen_outcomes(truth, m, x, cfg.noise_sd, rng_eps, cfg.shape, cfg.n, cfg.d, order);
  if (truth_out) *truth_out = std::move(truth);
  return data;
}

MonteCarloResult run_monte_carlo(const SimConfig& cfg, int threads) {
  if (cfg.replications < 1) throw InvalidInput("run_monte_carlo: replications must be >= 1");
  if (!(cfg.alpha > 0.0 && cfg.alpha < 1.0)) throw InvalidInput("run_monte_carlo: bad alpha");
  if (cfg.boot_n < 1) throw InvalidInput("run_monte_carlo: boot_n must be >= 1");

  std::vector<RepOutcome> reps(cfg.replications);
  parallel_for(cfg.replications, threads, [&](std::size_t rep) {
    RepOutcome& out = reps[rep];
    try {
      GroundTruth truth;
      PanelData data = generate_panel(cfg, static_cast<int>(rep), &truth);
      out.truth_ate = truth.true_ate;

      FitConfig fit_cfg = cfg.fit;
      fit_cfg.threads = 1;
      FitResult fit = fit_profiling(data, fit_cfg);

      const std::uint64_t boot_seed =
          Rng::substream(cfg.seed, {static_cast<std::uint64_t>(rep), kTagBootstrap}).next_u64();
      BootstrapEnsemble ens = bootstrap_null_ensemble(data, fit.sigma_hat, fit.lambda_rc_used,
                                                      cfg.boot_n, boot_seed);
      GlobalTestResult gt = global_test(fit, ens, cfg.alpha);
      out.reject = gt.reject;

      Vector u = scaled_interference_magnitudes(fit.coeffs, data.n);
      NeighborOrder order(cfg.shape);
      DetectionResult dets[2] = {stepdown_detect(u, ens, cfg.alpha),
                                 birs_detect(u, ens, cfg.alpha)};
      AteEstimate mf = mean_field_ate(data, order);
      out.ate_mf = mf.value;
      for (int m = 0; m < 2; ++m) {
        out.fdr[m] = set_fdr(dets[m].rejected, truth.J1);
        out.tpr[m] = set_tpr(dets[m].rejected, truth.J1);
        out.jac[m] = jaccard(truth.J1, dets[m].rejected);
        out.ate_post[m] = post_detection_ate(data, dets[m], order).value;
      }
      out.ok = true;
    } catch (const std::exception& e) {
      out.ok = false;
      out.error = e.what();
    }
  });

  MonteCarloResult result;
  int ok_count = 0;
  for (const auto& r : reps) {
    if (r.ok) {
      ++ok_count;
    } else {
      ++result.failures;
      if (result.failure_messages.size() < 20) result.failure_messages.push_back(r.error);
    }
  }

  const char* method_names[2] = {"stepdown", "birs"};
  for (int m = 0; m < 2; ++m) {
    MetricsRow row;
    row.design = to_string(cfg.design);
    row.rows = cfg.shape.rows;
    row.cols = cfg.shape.cols;
    row.n = cfg.n;
    row.delta = cfg.delta;
    row.method = method_names[m];
    row.reps = ok_count;
    row.failures = result.failures;
    if (ok_count > 0) {
      double sum_rej = 0, sum_fdr = 0, sum_tpr = 0, sum_jac = 0;
      double se_post = 0, se_mf = 0, truth_sq = 0;
      for (const auto& r : reps) {
        if (!r.ok) continue;
        sum_rej += r.reject ? 1.0 : 0.0;
        sum_fdr += r.fdr[m];
        sum_tpr += r.tpr[m];
        sum_jac += r.jac[m];
        se_post += (r.ate_post[m] - r.truth_ate) * (r.ate_post[m] - r.truth_ate);
        se_mf += (r.ate_mf - r.truth_ate) * (r.ate_mf - r.truth_ate);
        truth_sq += r.truth_ate * r.truth_ate;
      }
      row.size = sum_rej / ok_count;
      row.fdr = sum_fdr / ok_count;
      row.tpr = sum_tpr / ok_count;
      row.jaccard = sum_jac / ok_count;
      // Relative RMSE, normalized by the root mean square of the per-rep
      // ground-truth values.
      const double denom = std::sqrt(truth_sq / ok_count);
      const double scale = denom > 1e-12 ? denom : 1.0;
      row.ate_rmse_post = std::sqrt(se_post / ok_count) / scale;
      row.ate_rmse_meanfield = std::sqrt(se_mf / ok_count) / scale;
    }
    result.rows.push_back(std::move(row));
  }
  return result;
}

std::string metrics_csv_header() {
  return "design,R,C,n,delta,method,size,fdr,tpr,jaccard,ate_rmse_post,ate_rmse_meanfield,reps,"
         "failures";
}

std::string metrics_csv_row(const MetricsRow& row) {
  std::ostringstream os;
  os << std::setprecision(10);
  os << row.design << ',' << row.rows << ',' << row.cols << ',' << row.n << ',' << row.delta
     << ',' << row.method << ',' << row.size << ',' << row.fdr << ',' << row.tpr << ','
     << row.jaccard << ',' << row.ate_rmse_post << ',' << row.ate_rmse_meanfield << ','
     << row.reps << ',' << row.failures;
  return os.str();
}

}  // namespace spidet
