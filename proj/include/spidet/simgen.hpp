#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "spidet/detection.hpp"
#include "spidet/estimation.hpp"

namespace spidet {

enum class TreatmentDesign { independent, correlated };
enum class TruthStructure { clusters, distant_clusters, mean_field };

std::string to_string(TreatmentDesign d);
std::string to_string(TruthStructure t);
TreatmentDesign design_from_string(const std::string& s);
TruthStructure truth_from_string(const std::string& s);

struct SimConfig {
  GridShape shape{8, 8};
  int n = 100;
  int d = 4;
  TreatmentDesign design = TreatmentDesign::independent;
  double delta = 0.0;       // interference strength
  int clusters_max = 2;     // per-unit cluster count drawn uniformly from {0..clusters_max}
  double noise_sd = 1.0;
  int replications = 1;
  std::uint64_t seed = 0;
  TruthStructure truth = TruthStructure::clusters;
  // Per-covariate sampling scales for the synthetic state variables; empty
  // selects the built-in defaults (cycled when d differs from their length).
  std::vector<double> state_means;
  std::vector<double> state_sds;
  // Harness knobs.
  double alpha = 0.05;
  int boot_n = 500;
  FitConfig fit;
};

// Built-in synthetic state scales (means, sds) patterned on gridded
// meteorological covariates.
const std::vector<double>& default_state_means();
const std::vector<double>& default_state_sds();

struct GroundTruth {
  CoefficientSet coeffs;
  std::vector<long> J1;  // sorted flat support of vec(S)
  double true_ate = 0.0;
};

// Treatments: i.i.d. +-1 with probability 1/2 each.
Vector gen_treatments_independent(const GridShape& shape, int n, Rng& rng);

// Treatments: signs of a multivariate normal with covariance 0.5^|j-k| over
// the row-major flat unit order.
Vector gen_treatments_correlated(const GridShape& shape, int n, Rng& rng);

// Magnitude of one nonzero interference coefficient.
double interference_magnitude(double delta, double f_abs, Rng& rng);

// Coefficients: per-unit standard-normal state effects, a rank-4 direct
// effect built from the state-mean matrix, and clustered truncated-normal
// interference at strength delta. state_means is P x d.
GroundTruth gen_coefficients(const GridShape& shape, int d, double delta, int clusters_max,
                             const Matrix& state_means, Rng& rng,
                             TruthStructure truth = TruthStructure::clusters);

// Outcomes from the linear model with i.i.d. normal noise.
PanelData gen_outcomes(const GroundTruth& truth, const Vector& m, const Vector& x,
                       double noise_sd, Rng& rng, const GridShape& shape, int n, int d,
                       const NeighborOrder& order);

// Detection accuracy helpers with the max(|.|, 1) guards.
double set_fdr(const std::vector<long>& detected, const std::vector<long>& truth);
double set_tpr(const std::vector<long>& detected, const std::vector<long>& truth);

struct MetricsRow {
  std::string design;
  int rows = 0, cols = 0, n = 0;
  double delta = 0.0;
  std::string method;
  double size = 0.0;
  double fdr = 0.0;
  double tpr = 0.0;
  double jaccard = 0.0;
  double ate_rmse_post = 0.0;
  double ate_rmse_meanfield = 0.0;
  int reps = 0;
  int failures = 0;
};

struct MonteCarloResult {
  std::vector<MetricsRow> rows;  // one per detection method
  int failures = 0;
  std::vector<std::string> failure_messages;
};

// Full pipeline per replication: generate, fit, test, detect with both
// algorithms, estimate the post-detection and mean-field ATEs; aggregates
// rejection rate, FDR/TPR/Jaccard and relative ATE RMSEs.
MonteCarloResult run_monte_carlo(const SimConfig& cfg, int threads = 1);

std::string metrics_csv_header();
std::string metrics_csv_row(const MetricsRow& row);

// Materializes one replication's panel (the same panel the harness would see
// for that replication index).
PanelData generate_panel(const SimConfig& cfg, int replication, GroundTruth* truth = nullptr);

}  // namespace spidet
