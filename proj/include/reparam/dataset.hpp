#pragma once

// CSV datasets for the benchmark models.
//
// Files are UTF-8, comma-separated, '.' decimal point, one header line of
// column names.  load_dataset validates the schema for the requested model
// and reports the offending row/column on failure.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "reparam/errors.hpp"

namespace reparam {

struct DatasetBundle {
  std::string name;                          // schema name, e.g. "radon"
  std::vector<std::string> columns;          // header order
  std::vector<std::vector<double>> values;   // per column, row-major within

  size_t rows() const { return values.empty() ? 0 : values[0].size(); }

  bool has(const std::string& col) const {
    for (const auto& c : columns)
      if (c == col) return true;
    return false;
  }

  const std::vector<double>& col(const std::string& name_) const {
    for (size_t i = 0; i < columns.size(); ++i)
      if (columns[i] == name_) return values[i];
    throw SchemaError("missing column '" + name_ + "'");
  }

  // Columns after the named prefix columns, in header order (feature block).
  std::vector<const std::vector<double>*> feature_cols(size_t skip) const {
    std::vector<const std::vector<double>*> out;
    for (size_t i = skip; i < columns.size(); ++i) out.push_back(&values[i]);
    return out;
  }
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  out.push_back(cur);
  return out;
}

inline double parse_cell(const std::string& cell, size_t row, const std::string& col) {
  if (cell.empty())
    throw SchemaError("empty cell at row " + std::to_string(row) + ", column '" + col + "'");
  size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(cell, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos != cell.size() || !std::isfinite(v))
    throw SchemaError("cannot parse '" + cell + "' at row " + std::to_string(row) +
                      ", column '" + col + "'");
  return v;
}

inline void require_index_column(const DatasetBundle& d, const std::string& col) {
  const auto& v = d.col(col);
  for (size_t r = 0; r < v.size(); ++r)
    if (v[r] < 0.0 || v[r] != std::floor(v[r]))
      throw SchemaError("column '" + col + "' must hold non-negative integers (row " +
                        std::to_string(r + 1) + ")");
}

inline void require_binary_column(const DatasetBundle& d, const std::string& col) {
  const auto& v = d.col(col);
  for (size_t r = 0; r < v.size(); ++r)
    if (v[r] != 0.0 && v[r] != 1.0)
      throw SchemaError("column '" + col + "' must be 0/1 (row " + std::to_string(r + 1) + ")");
}

// Standardise a column to zero mean and unit variance in place.  Constant
// columns are only centred, to avoid dividing by zero.
inline void standardise(std::vector<double>& v) {
  if (v.empty()) return;
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  var /= static_cast<double>(v.size());
  const double sd = std::sqrt(var);
  for (double& x : v) x = (sd > 0.0) ? (x - mean) / sd : (x - mean);
}

}  // namespace detail

inline DatasetBundle read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw SchemaError("cannot open '" + path + "'");
  DatasetBundle d;
  std::string line;
  if (!std::getline(in, line) || line.empty())
    throw SchemaError("'" + path + "': missing header line");
  d.columns = detail::split_csv_line(line);
  d.values.assign(d.columns.size(), {});
  size_t row = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    ++row;
    const auto cells = detail::split_csv_line(line);
    if (cells.size() != d.columns.size())
      throw SchemaError("'" + path + "' row " + std::to_string(row) + ": expected " +
                        std::to_string(d.columns.size()) + " cells, got " +
                        std::to_string(cells.size()));
    for (size_t c = 0; c < cells.size(); ++c)
      d.values[c].push_back(detail::parse_cell(cells[c], row, d.columns[c]));
  }
  if (row == 0) throw SchemaError("'" + path + "': no data rows");
  return d;
}

// Loads and validates a dataset for one of the benchmark models.  Known
// schema names: eight_schools, radon, german_credit, election88, electric.
inline DatasetBundle load_dataset(const std::string& schema, const std::string& path) {
  if (schema == "funnel") {
    // No data: the model is its own prior.  An empty bundle is valid.
    DatasetBundle empty;
    empty.name = schema;
    return empty;
  }
  DatasetBundle d = read_csv(path);
  d.name = schema;
  auto require = [&](const std::string& col) {
    if (!d.has(col)) throw SchemaError("'" + path + "': schema '" + schema +
                                       "' requires column '" + col + "'");
  };
  if (schema == "eight_schools") {
    require("y");
    require("sigma");
    for (size_t r = 0; r < d.rows(); ++r)
      if (!(d.col("sigma")[r] > 0.0))
        throw SchemaError("column 'sigma' must be positive (row " + std::to_string(r + 1) + ")");
  } else if (schema == "radon") {
    require("county_idx");
    require("floor");
    require("log_radon");
    require("uranium");
    detail::require_index_column(d, "county_idx");
  } else if (schema == "german_credit") {
    require("label");
    if (d.columns[0] != "label")
      throw SchemaError("'" + path + "': first column must be 'label'");
    if (d.columns.size() < 2)
      throw SchemaError("'" + path + "': german_credit needs at least one feature column");
    detail::require_binary_column(d, "label");
    // The logistic-regression prior is scale-sensitive, so the feature block
    // is standardised column-wise (zero mean, unit variance) at load time.
    for (size_t c = 1; c < d.values.size(); ++c) detail::standardise(d.values[c]);
  } else if (schema == "election88") {
    require("state_idx");
    require("outcome");
    if (d.columns.size() < 3 || d.columns[0] != "state_idx" || d.columns[1] != "outcome")
      throw SchemaError("'" + path +
                        "': election88 needs columns state_idx, outcome, then features");
    detail::require_index_column(d, "state_idx");
    detail::require_binary_column(d, "outcome");
  } else if (schema == "electric") {
    require("pair_idx");
    require("grade_idx");
    require("treated");
    require("score");
    detail::require_index_column(d, "pair_idx");
    detail::require_index_column(d, "grade_idx");
    detail::require_binary_column(d, "treated");
  } else {
    throw SchemaError("unknown dataset schema '" + schema + "'");
  }
  return d;
}

}  // namespace reparam
