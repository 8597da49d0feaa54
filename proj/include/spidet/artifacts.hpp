#pragma once

#include <string>

#include "spidet/detection.hpp"
#include "spidet/estimation.hpp"
#include "spidet/inference.hpp"

namespace spidet {

// JSON artifacts written by the CLI. Every document carries a
// "schema_version" whose major component must match for loading.
inline constexpr const char* kSchemaVersion = "1.0";
inline constexpr const char* kToolVersion = "1.0.0";

std::string fit_to_json(const FitResult& fit);
FitResult fit_from_json(const std::string& text);

std::string test_to_json(const GlobalTestResult& res, int boot_n, std::uint64_t seed);

// Detection serialization needs the grid to resolve neighbor ranks into
// 1-based grid coordinates.
std::string detection_to_json(const DetectionResult& det, const GridShape& shape,
                              const NeighborOrder& order);
DetectionResult detection_from_json(const std::string& text, GridShape* shape_out = nullptr);

std::string ate_to_json(const AteEstimate& post, const AteEstimate& mean_field,
                        const GridShape& shape);

void write_text_file(const std::string& path, const std::string& text);
std::string read_text_file(const std::string& path);

}  // namespace spidet
