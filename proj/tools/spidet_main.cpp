#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "spidet/artifacts.hpp"
#include "spidet/panel_io.hpp"
#include "spidet/parallel.hpp"
#include "spidet/simgen.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommonOpts {
  std::string data_path;
  std::string meta_path;
  std::string out_path;
  int threads = 0;  // 0 = auto
};

spidet::FitConfig fit_config_from_flags(const std::string& lambda, double a, double tau,
                                        int max_outer, int cv_folds, std::uint64_t seed,
                                        bool unpenalized, int threads) {
  spidet::FitConfig cfg;
  if (lambda == "cv") {
    cfg.lambda_cv = true;
  } else {
    cfg.lambda_cv = false;
    try {
      std::size_t used = 0;
      cfg.lambda = std::stod(lambda, &used);
      if (used != lambda.size()) throw std::invalid_argument(lambda);
    } catch (const std::exception&) {
      throw spidet::InvalidInput("--lambda must be 'cv' or a number, got '" + lambda + "'");
    }
  }
  cfg.A = a;
  cfg.tau = tau;
  cfg.max_outer_iter = max_outer;
  cfg.cv_folds = cv_folds;
  cfg.seed = seed;
  cfg.allow_unpenalized = unpenalized;
  cfg.threads = spidet::resolve_threads(threads);
  return cfg;
}

spidet::BootstrapEnsemble obtain_ensemble(const spidet::PanelData& data,
                                          const spidet::FitResult& fit, int boot_n,
                                          std::uint64_t seed, int threads,
                                          const std::string& ensemble_path,
                                          const std::string& default_save_path) {
  const long want_p = data.shape.interference_len();
  if (!ensemble_path.empty() && fs::exists(ensemble_path)) {
    spidet::BootstrapEnsemble ens = spidet::load_ensemble(ensemble_path);
    if (ens.p != want_p) {
      throw spidet::InvalidInput("ensemble " + ensemble_path + " does not match the panel grid");
    }
    std::cout << "loaded ensemble " << ensemble_path << " (N=" << ens.N << ")\n";
    return ens;
  }
  spidet::BootstrapEnsemble ens = spidet::bootstrap_null_ensemble(
      data, fit.sigma_hat, fit.lambda_rc_used, boot_n, seed, spidet::resolve_threads(threads));
  const std::string save_to = !ensemble_path.empty() ? ensemble_path : default_save_path;
  if (!save_to.empty()) {
    spidet::save_ensemble(save_to, ens);
    std::cout << "saved ensemble " << save_to << " (N=" << ens.N << ")\n";
  }
  return ens;
}

void check_fit_matches(const spidet::PanelData& data, const spidet::FitResult& fit) {
  if (!(fit.shape == data.shape) || fit.n != data.n || fit.d != data.d) {
    throw spidet::InvalidInput("fit artifact dimensions do not match the panel");
  }
}

int run_simulate(const std::string& config_path, const std::string& out_dir,
                 const std::string& emit_panel, int threads) {
  json cfg_json;
  {
    std::ifstream in(config_path);
    if (!in) throw spidet::InvalidInput("cannot open config " + config_path);
    try {
      in >> cfg_json;
    } catch (const json::exception& e) {
      throw spidet::InvalidInput(config_path + ": " + e.what());
    }
  }

  spidet::SimConfig base;
  base.shape = spidet::GridShape(cfg_json.value("R", 8), cfg_json.value("C", 8));
  base.n = cfg_json.value("n", 100);
  base.d = cfg_json.value("d", 4);
  base.design = spidet::design_from_string(cfg_json.value("design", "independent"));
  base.clusters_max = cfg_json.value("clusters_max", 2);
  base.noise_sd = cfg_json.value("noise_sd", 1.0);
  base.replications = cfg_json.value("replications", 1);
  base.seed = cfg_json.value("seed", 0ULL);
  base.truth = spidet::truth_from_string(cfg_json.value("truth", "clusters"));
  base.alpha = cfg_json.value("alpha", 0.05);
  base.boot_n = cfg_json.value("boot", 500);
  if (cfg_json.contains("state_means")) {
    base.state_means = cfg_json["state_means"].get<std::vector<double>>();
  }
  if (cfg_json.contains("state_sds")) {
    base.state_sds = cfg_json["state_sds"].get<std::vector<double>>();
  }
  if (cfg_json.contains("lambda")) {
    if (cfg_json["lambda"].is_string()) {
      if (cfg_json["lambda"].get<std::string>() != "cv") {
        throw spidet::InvalidInput("config lambda must be 'cv' or a number");
      }
      base.fit.lambda_cv = true;
    } else {
      base.fit.lambda_cv = false;
      base.fit.lambda = cfg_json["lambda"].get<double>();
    }
  }
  base.fit.A = cfg_json.value("A", base.fit.A);
  base.fit.tau = cfg_json.value("tau", base.fit.tau);
  base.fit.max_outer_iter = cfg_json.value("max_outer_iter", base.fit.max_outer_iter);
  base.fit.cv_folds = cfg_json.value("cv_folds", base.fit.cv_folds);

  std::vector<double> deltas;
  if (cfg_json.contains("delta") && cfg_json["delta"].is_array()) {
    deltas = cfg_json["delta"].get<std::vector<double>>();
  } else {
    deltas.push_back(cfg_json.value("delta", 0.0));
  }
  if (deltas.empty()) throw spidet::InvalidInput("config delta list is empty");

  fs::create_directories(out_dir);

  if (!emit_panel.empty()) {
    spidet::SimConfig panel_cfg = base;
    panel_cfg.delta = deltas.front();
    spidet::PanelData panel = spidet::generate_panel(panel_cfg, 0);
    spidet::write_panel_csv(panel, emit_panel + ".csv", emit_panel + ".meta.json");
    std::cout << "wrote panel " << emit_panel << ".csv\n";
  }

  std::ostringstream csv;
  csv << spidet::metrics_csv_header() << '\n';
  long total_reps = 0;
  long total_failures = 0;
  for (double delta : deltas) {
    spidet::SimConfig cfg = base;
    cfg.delta = delta;
    spidet::MonteCarloResult mc = spidet::run_monte_carlo(cfg, spidet::resolve_threads(threads));
    for (const auto& row : mc.rows) csv << spidet::metrics_csv_row(row) << '\n';
    total_reps += cfg.replications;
    total_failures += mc.failures;
    for (const auto& msg : mc.failure_messages) {
      std::cerr << "replication failure (delta=" << delta << "): " << msg << '\n';
    }
    std::cout << "delta=" << delta << " done (" << cfg.replications - mc.failures << "/"
              << cfg.replications << " replications)\n";
  }
  spidet::write_text_file((fs::path(out_dir) / "metrics.csv").string(), csv.str());

  json prov;
  prov["tool"] = "spidet";
  prov["version"] = spidet::kToolVersion;
  prov["command"] = "simulate";
  prov["config"] = cfg_json;
  prov["seed"] = base.seed;
  spidet::write_text_file((fs::path(out_dir) / "provenance.json").string(), prov.dump(2) + "\n");

  std::cout << "metrics written to " << (fs::path(out_dir) / "metrics.csv").string() << '\n';
  if (total_failures * 10 > total_reps) {
    std::cerr << "more than 10% of replications failed (" << total_failures << "/" << total_reps
              << ")\n";
    return 1;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"low-rank plus sparse spatial interference modeling"};
  app.require_subcommand(1);

  // simulate
  auto* sim = app.add_subcommand("simulate", "run the Monte-Carlo harness");
  std::string sim_config, sim_out, sim_emit_panel;
  int sim_threads = 0;
  sim->add_option("--config", sim_config, "simulation config JSON")->required();
  sim->add_option("--out", sim_out, "output directory")->required();
  sim->add_option("--emit-panel", sim_emit_panel,
                  "also write replication 0's panel CSV under this path prefix");
  sim->add_option("--threads", sim_threads, "worker threads (0 = auto)");

  // fit
  auto* fit_cmd = app.add_subcommand("fit", "estimate the model from a panel CSV");
  CommonOpts fit_opts;
  std::string fit_lambda = "cv";
  double fit_a = 2.0 * std::sqrt(3.0);
  double fit_tau = 1e-4;
  int fit_max_outer = 500;
  int fit_cv_folds = 5;
  std::uint64_t fit_seed = 0;
  bool fit_unpenalized = false;
  fit_cmd->add_option("--data", fit_opts.data_path, "panel CSV")->required();
  fit_cmd->add_option("--meta", fit_opts.meta_path, "panel sidecar JSON")->required();
  fit_cmd->add_option("--out", fit_opts.out_path, "fit artifact path")->required();
  fit_cmd->add_option("--lambda", fit_lambda, "nuclear penalty: 'cv' or a number");
  fit_cmd->add_option("--A", fit_a, "sparse-penalty multiplier (must exceed 2*sqrt(2))");
  fit_cmd->add_option("--tau", fit_tau, "outer convergence tolerance");
  fit_cmd->add_option("--max-outer", fit_max_outer, "outer iteration cap");
  fit_cmd->add_option("--cv-folds", fit_cv_folds, "cross-validation folds");
  fit_cmd->add_option("--seed", fit_seed, "random seed");
  fit_cmd->add_flag("--unpenalized", fit_unpenalized,
                    "debug: bypass the A > 2*sqrt(2) requirement");
  fit_cmd->add_option("--threads", fit_opts.threads, "worker threads (0 = auto)");

  // test
  auto* test_cmd = app.add_subcommand("test", "global test of no interference");
  CommonOpts test_opts;
  std::string test_fit_path, test_ensemble;
  double test_alpha = 0.05;
  int test_boot = 500;
  std::uint64_t test_seed = 0;
  test_cmd->add_option("--data", test_opts.data_path, "panel CSV")->required();
  test_cmd->add_option("--meta", test_opts.meta_path, "panel sidecar JSON")->required();
  test_cmd->add_option("--fit", test_fit_path, "fit artifact")->required();
  test_cmd->add_option("--out", test_opts.out_path, "test artifact path")->required();
  test_cmd->add_option("--alpha", test_alpha, "significance level");
  test_cmd->add_option("--boot", test_boot, "bootstrap replicates");
  test_cmd->add_option("--seed", test_seed, "bootstrap seed");
  test_cmd->add_option("--ensemble", test_ensemble, "ensemble file to reuse or create");
  test_cmd->add_option("--threads", test_opts.threads, "worker threads (0 = auto)");

  // detect
  auto* det_cmd = app.add_subcommand("detect", "locate interference neighbors");
  CommonOpts det_opts;
  std::string det_fit_path, det_ensemble, det_method = "birs";
  double det_alpha = 0.05;
  int det_boot = 500;
  std::uint64_t det_seed = 0;
  det_cmd->add_option("--data", det_opts.data_path, "panel CSV")->required();
  det_cmd->add_option("--meta", det_opts.meta_path, "panel sidecar JSON")->required();
  det_cmd->add_option("--fit", det_fit_path, "fit artifact")->required();
  det_cmd->add_option("--out", det_opts.out_path, "detection artifact path")->required();
  det_cmd->add_option("--method", det_method, "birs or stepdown")
      ->check(CLI::IsMember({"birs", "stepdown"}));
  det_cmd->add_option("--alpha", det_alpha, "significance level");
  det_cmd->add_option("--boot", det_boot, "bootstrap replicates");
  det_cmd->add_option("--seed", det_seed, "bootstrap seed");
  det_cmd->add_option("--ensemble", det_ensemble, "ensemble file to reuse or create");
  det_cmd->add_option("--threads", det_opts.threads, "worker threads (0 = auto)");

  // ate
  auto* ate_cmd = app.add_subcommand("ate", "post-detection treatment-effect estimate");
  CommonOpts ate_opts;
  std::string ate_detected;
  ate_cmd->add_option("--data", ate_opts.data_path, "panel CSV")->required();
  ate_cmd->add_option("--meta", ate_opts.meta_path, "panel sidecar JSON")->required();
  ate_cmd->add_option("--detected", ate_detected, "detection artifact")->required();
  ate_cmd->add_option("--out", ate_opts.out_path, "ATE artifact path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (sim->parsed()) {
      return run_simulate(sim_config, sim_out, sim_emit_panel, sim_threads);
    }

    if (fit_cmd->parsed()) {
      spidet::PanelData data = spidet::read_panel_csv(fit_opts.data_path, fit_opts.meta_path);
      spidet::FitConfig cfg =
          fit_config_from_flags(fit_lambda, fit_a, fit_tau, fit_max_outer, fit_cv_folds,
                                fit_seed, fit_unpenalized, fit_opts.threads);
      spidet::FitResult fit = spidet::fit_profiling(data, cfg);
      spidet::write_text_file(fit_opts.out_path, spidet::fit_to_json(fit));
      std::cout << "fit: lambda=" << fit.lambda_used << " outer_iters=" << fit.outer_iters
                << " converged=" << (fit.converged ? "true" : "false") << '\n';
      for (const auto& w : fit.warnings) std::cerr << "warning: " << w << '\n';
      return 0;
    }

    if (test_cmd->parsed()) {
      spidet::PanelData data = spidet::read_panel_csv(test_opts.data_path, test_opts.meta_path);
      spidet::FitResult fit = spidet::fit_from_json(spidet::read_text_file(test_fit_path));
      check_fit_matches(data, fit);
      spidet::BootstrapEnsemble ens = obtain_ensemble(data, fit, test_boot, test_seed,
                                                      test_opts.threads, test_ensemble, "");
      spidet::GlobalTestResult res = spidet::global_test(fit, ens, test_alpha);
      spidet::write_text_file(test_opts.out_path, spidet::test_to_json(res, ens.N, test_seed));
      std::cout << "test: T_n=" << res.T_n << " c_B=" << res.c_B
                << " reject=" << (res.reject ? "true" : "false") << '\n';
      return 0;
    }

    if (det_cmd->parsed()) {
      spidet::PanelData data = spidet::read_panel_csv(det_opts.data_path, det_opts.meta_path);
      spidet::FitResult fit = spidet::fit_from_json(spidet::read_text_file(det_fit_path));
      check_fit_matches(data, fit);
      spidet::BootstrapEnsemble ens =
          obtain_ensemble(data, fit, det_boot, det_seed, det_opts.threads, det_ensemble,
                          det_opts.out_path + ".ensemble.bin");
      spidet::Vector u = spidet::scaled_interference_magnitudes(fit.coeffs, fit.n);
      spidet::DetectionResult det = det_method == "birs"
                                        ? spidet::birs_detect(u, ens, det_alpha)
                                        : spidet::stepdown_detect(u, ens, det_alpha);
      spidet::NeighborOrder order(data.shape);
      spidet::write_text_file(det_opts.out_path,
                              spidet::detection_to_json(det, data.shape, order));
      std::cout << "detect: method=" << det.method << " detected=" << det.rejected.size()
                << " rounds=" << det.rounds << '\n';
      return 0;
    }

    if (ate_cmd->parsed()) {
      spidet::PanelData data = spidet::read_panel_csv(ate_opts.data_path, ate_opts.meta_path);
      spidet::GridShape det_shape(2, 2);
      spidet::DetectionResult det =
          spidet::detection_from_json(spidet::read_text_file(ate_detected), &det_shape);
      if (!(det_shape == data.shape)) {
        throw spidet::InvalidInput("detection artifact grid does not match the panel");
      }
      spidet::NeighborOrder order(data.shape);
      spidet::AteEstimate post = spidet::post_detection_ate(data, det, order);
      spidet::AteEstimate mf = spidet::mean_field_ate(data, order);
      spidet::write_text_file(ate_opts.out_path, spidet::ate_to_json(post, mf, data.shape));
      std::cout << "ate: post=" << post.value << " mean_field=" << mf.value << '\n';
      return 0;
    }
  } catch (const spidet::InvalidInput& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
