#pragma once

#include <string>

#include "spidet/data_model.hpp"

namespace spidet {

// Long-format panel CSV with header "obs,row,col,y,x1,...,xd,m", one line per
// (observation, row, col); obs/row/col are 1-based. A JSON sidecar carries
// {"R": .., "C": .., "n": .., "d": ..}. Values are 64-bit floats; parse
// errors report the offending line number.
PanelData read_panel_csv(const std::string& csv_path, const std::string& meta_path);
void write_panel_csv(const PanelData& data, const std::string& csv_path,
                     const std::string& meta_path);

}  // namespace spidet
