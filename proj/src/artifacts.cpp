#include "spidet/artifacts.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

namespace spidet {

namespace {

using nlohmann::json;

void check_schema(const json& doc, const std::string& what) {
  if (!doc.contains("schema_version") || !doc["schema_version"].is_string()) {
    throw InvalidInput(what + ": missing schema_version");
  }
  const std::string v = doc["schema_version"].get<std::string>();
  const std::string major = v.substr(0, v.find('.'));
  const std::string want(kSchemaVersion);
  if (major != want.substr(0, want.find('.'))) {
    throw InvalidInput(what + ": unsupported schema_version " + v);
  }
}

json matrix_to_json(const Matrix& m) { return json(m.storage()); }

Matrix matrix_from_json(const json& arr, std::size_t rows, std::size_t cols,
                        const std::string& what) {
  if (!arr.is_array() || arr.size() != rows * cols) {
    throw InvalidInput(what + ": expected " + std::to_string(rows * cols) + " values");
  }
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < arr.size(); ++i) m.storage()[i] = arr[i].get<double>();
  return m;
}

}  // namespace

std::string fit_to_json(const FitResult& fit) {
  json doc;
  doc["schema_version"] = kSchemaVersion;
  doc["R"] = fit.shape.rows;
  doc["C"] = fit.shape.cols;
  doc["n"] = fit.n;
  doc["d"] = fit.d;
  // Flattened row-major: beta by (unit, covariate), S by (unit, neighbor rank).
  doc["beta"] = matrix_to_json(fit.coeffs.beta);
  doc["L"] = matrix_to_json(fit.coeffs.L);
  doc["S"] = matrix_to_json(fit.coeffs.S);
  doc["sigma_hat"] = matrix_to_json(fit.sigma_hat);
  doc["lambda_used"] = fit.lambda_used;
  doc["lambda_rc_used"] = matrix_to_json(fit.lambda_rc_used);
  doc["outer_iters"] = fit.outer_iters;
  doc["converged"] = fit.converged;
  doc["final_delta"] = fit.final_delta;
  doc["objective_trace"] = fit.objective_trace;
  doc["warnings"] = fit.warnings;
  return doc.dump(2) + "\n";
}

FitResult fit_from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw InvalidInput(std::string("fit artifact: ") + e.what());
  }
  check_schema(doc, "fit artifact");
  FitResult fit;
  fit.shape = GridShape(doc.at("R").get<int>(), doc.at("C").get<int>());
  fit.n = doc.at("n").get<int>();
  fit.d = doc.at("d").get<int>();
  const std::size_t p = fit.shape.units();
  fit.coeffs.beta = matrix_from_json(doc.at("beta"), p, fit.d, "fit artifact beta");
  fit.coeffs.L =
      matrix_from_json(doc.at("L"), fit.shape.rows, fit.shape.cols, "fit artifact L");
  fit.coeffs.S =
      matrix_from_json(doc.at("S"), p, fit.shape.neighbor_count(), "fit artifact S");
  fit.sigma_hat =
      matrix_from_json(doc.at("sigma_hat"), fit.shape.rows, fit.shape.cols, "fit sigma_hat");
  fit.lambda_used = doc.at("lambda_used").get<double>();
  fit.lambda_rc_used = matrix_from_json(doc.at("lambda_rc_used"), fit.shape.rows,
                                        fit.shape.cols, "fit lambda_rc_used");
  fit.outer_iters = doc.at("outer_iters").get<int>();
  fit.converged = doc.at("converged").get<bool>();
  fit.final_delta = doc.at("final_delta").get<double>();
  fit.objective_trace = doc.at("objective_trace").get<std::vector<double>>();
  if (doc.contains("warnings")) {
    fit.warnings = doc["warnings"].get<std::vector<std::string>>();
  }
  return fit;
}

std::string test_to_json(const GlobalTestResult& res, int boot_n, std::uint64_t seed) {
  json doc;
  doc["schema_version"] = kSchemaVersion;
  doc["T_n"] = res.T_n;
  doc["c_B"] = res.c_B;
  doc["alpha"] = res.alpha;
  doc["reject"] = res.reject;
  doc["boot_N"] = boot_n;
  doc["seed"] = seed;
  return doc.dump(2) + "\n";
}

std::string detection_to_json(const DetectionResult& det, const GridShape& shape,
                              const NeighborOrder& order) {
  json doc;
  doc["schema_version"] = kSchemaVersion;
  doc["method"] = det.method;
  doc["alpha"] = det.alpha;
  doc["rounds"] = det.rounds;
  doc["R"] = shape.rows;
  doc["C"] = shape.cols;
  doc["rejected"] = det.rejected;  // 0-based flat indices, lexicographic (r,c,rank)
  json units = json::array();
  for (int u = 0; u < shape.units(); ++u) {
    const auto& ranks = det.per_unit[u];
    if (ranks.empty()) continue;
    auto [r, c] = shape.unit_coords(u);
    json entry;
    entry["row"] = r + 1;
    entry["col"] = c + 1;
    json neighbors = json::array();
    for (int rank : ranks) {
      auto [nr, nc] = shape.unit_coords(order.neighbors_of(u)[rank]);
      neighbors.push_back(json::array({nr + 1, nc + 1}));
    }
    entry["neighbors"] = neighbors;
    units.push_back(entry);
  }
  doc["per_unit"] = units;
  return doc.dump(2) + "\n";
}

DetectionResult detection_from_json(const std::string& text, GridShape* shape_out) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw InvalidInput(std::string("detection artifact: ") + e.what());
  }
  check_schema(doc, "detection artifact");
  GridShape shape(doc.at("R").get<int>(), doc.at("C").get<int>());
  DetectionResult det;
  det.method = doc.at("method").get<std::string>();
  det.alpha = doc.at("alpha").get<double>();
  det.rounds = doc.at("rounds").get<int>();
  det.rejected = doc.at("rejected").get<std::vector<long>>();
  for (long j : det.rejected) {
    if (j < 0 || j >= shape.interference_len()) {
      throw InvalidInput("detection artifact: rejected index out of range");
    }
  }
  det.per_unit = per_unit_from_flat(det.rejected, shape);
  if (shape_out) *shape_out = shape;
  return det;
}

std::string ate_to_json(const AteEstimate& post, const AteEstimate& mean_field,
                        const GridShape& shape) {
  json doc;
  doc["schema_version"] = kSchemaVersion;
  doc["R"] = shape.rows;
  doc["C"] = shape.cols;
  doc["ate"] = post.value;
  doc["per_unit_contributions"] = matrix_to_json(post.per_unit_contributions);
  doc["detected_sizes"] = post.detected_sizes;
  json mf;
  mf["ate"] = mean_field.value;
  mf["per_unit_contributions"] = matrix_to_json(mean_field.per_unit_contributions);
  mf["detected_sizes"] = mean_field.detected_sizes;
  doc["mean_field"] = mf;
  return doc.dump(2) + "\n";
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc | std::ios::binary);
  if (!out) throw InvalidInput("cannot write " + path);
  out << text;
  if (!out) throw InvalidInput("write failed for " + path);
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot open " + path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

}  // namespace spidet
