#include "spidet/panel_io.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <vector>

#include <json.hpp>

namespace spidet {

namespace {

using nlohmann::json;

[[noreturn]] void fail_line(const std::string& path, long line, const std::string& what) {
  throw InvalidInput(path + ": line " + std::to_string(line) + ": " + what);
}

double parse_double(const std::string& path, long line, const std::string& tok) {
  double v = 0.0;
  const char* begin = tok.data();
  const char* end = begin + tok.size();
  auto [ptr, ec] = std::from_chars(begin, end, v);
  if (ec != std::errc() || ptr != end) fail_line(path, line, "bad number '" + tok + "'");
  return v;
}

long parse_long(const std::string& path, long line, const std::string& tok) {
  long v = 0;
  const char* begin = tok.data();
  const char* end = begin + tok.size();
  auto [ptr, ec] = std::from_chars(begin, end, v);
  if (ec != std::errc() || ptr != end) fail_line(path, line, "bad integer '" + tok + "'");
  return v;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

PanelData read_panel_csv(const std::string& csv_path, const std::string& meta_path) {
  json meta;
  {
    std::ifstream in(meta_path);
    if (!in) throw InvalidInput("cannot open sidecar " + meta_path);
    try {
      in >> meta;
    } catch (const json::exception& e) {
      throw InvalidInput(meta_path + ": " + e.what());
    }
  }
  for (const char* key : {"R", "C", "n", "d"}) {
    if (!meta.contains(key) || !meta[key].is_number_integer()) {
      throw InvalidInput(meta_path + ": missing integer field '" + std::string(key) + "'");
    }
  }
  PanelData data;
  data.shape = GridShape(meta["R"].get<int>(), meta["C"].get<int>());
  data.n = meta["n"].get<int>();
  data.d = meta["d"].get<int>();
  if (data.n < 1 || data.d < 1) throw InvalidInput(meta_path + ": n and d must be positive");

  const int p = data.shape.units();
  const std::size_t cells = static_cast<std::size_t>(data.n) * p;
  data.y.assign(cells, 0.0);
  data.m.assign(cells, 0.0);
  data.x.assign(cells * data.d, 0.0);
  std::vector<char> seen(cells, 0);

  std::ifstream in(csv_path);
  if (!in) throw InvalidInput("cannot open panel " + csv_path);
  std::string line;
  long line_no = 0;
  if (!std::getline(in, line)) fail_line(csv_path, 1, "missing header");
  ++line_no;
  {
    std::ostringstream expect;
    expect << "obs,row,col,y";
    for (int k = 1; k <= data.d; ++k) expect << ",x" << k;
    expect << ",m";
    std::string got = line;
    if (!got.empty() && got.back() == '\r') got.pop_back();
    if (got != expect.str()) {
      fail_line(csv_path, 1, "header must be '" + expect.str() + "'");
    }
  }

  const std::size_t want_fields = 4 + data.d + 1;
  std::size_t filled = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || (line.size() == 1 && line[0] == '\r')) continue;
    const auto fields = split_csv(line);
    if (fields.size() != want_fields) {
      fail_line(csv_path, line_no,
                "expected " + std::to_string(want_fields) + " fields, got " +
                    std::to_string(fields.size()));
    }
    const long obs = parse_long(csv_path, line_no, fields[0]);
    const long row = parse_long(csv_path, line_no, fields[1]);
    const long col = parse_long(csv_path, line_no, fields[2]);
    if (obs < 1 || obs > data.n) fail_line(csv_path, line_no, "obs out of range");
    if (row < 1 || row > data.shape.rows) fail_line(csv_path, line_no, "row out of range");
    if (col < 1 || col > data.shape.cols) fail_line(csv_path, line_no, "col out of range");
    const int u = data.shape.unit_id(static_cast<int>(row - 1), static_cast<int>(col - 1));
    const std::size_t cell = static_cast<std::size_t>(obs - 1) * p + u;
    if (seen[cell]) fail_line(csv_path, line_no, "duplicate (obs,row,col) entry");
    seen[cell] = 1;
    ++filled;
    data.y[cell] = parse_double(csv_path, line_no, fields[3]);
    for (int k = 0; k < data.d; ++k) {
      data.x[cell * data.d + k] = parse_double(csv_path, line_no, fields[4 + k]);
    }
    const double m = parse_double(csv_path, line_no, fields[4 + data.d]);
    if (m != 1.0 && m != -1.0) fail_line(csv_path, line_no, "treatment must be -1 or 1");
    data.m[cell] = m;
  }
  if (filled != cells) {
    throw InvalidInput(csv_path + ": expected " + std::to_string(cells) + " data lines, got " +
                       std::to_string(filled));
  }
  data.validate();
  return data;
}

void write_panel_csv(const PanelData& data, const std::string& csv_path,
                     const std::string& meta_path) {
  data.validate();
  {
    json meta;
    meta["R"] = data.shape.rows;
    meta["C"] = data.shape.cols;
    meta["n"] = data.n;
    meta["d"] = data.d;
    std::ofstream out(meta_path, std::ios::trunc);
    if (!out) throw InvalidInput("cannot write sidecar " + meta_path);
    out << meta.dump(2) << '\n';
  }
  std::ofstream out(csv_path, std::ios::trunc);
  if (!out) throw InvalidInput("cannot write panel " + csv_path);
  out << "obs,row,col,y";
  for (int k = 1; k <= data.d; ++k) out << ",x" << k;
  out << ",m\n";
  char buf[64];
  const int p = data.shape.units();
  for (int i = 0; i < data.n; ++i) {
    for (int r = 0; r < data.shape.rows; ++r) {
      for (int c = 0; c < data.shape.cols; ++c) {
        const int u = r * data.shape.cols + c;
        const std::size_t cell = static_cast<std::size_t>(i) * p + u;
        out << (i + 1) << ',' << (r + 1) << ',' << (c + 1);
        std::snprintf(buf, sizeof(buf), ",%.17g", data.y[cell]);
        out << buf;
        for (int k = 0; k < data.d; ++k) {
          std::snprintf(buf, sizeof(buf), ",%.17g", data.x[cell * data.d + k]);
          out << buf;
        }
        out << ',' << (data.m[cell] > 0 ? 1 : -1) << '\n';
      }
    }
  }
  if (!out) throw InvalidInput("write failed for " + csv_path);
}

}  // namespace spidet
