#pragma once

// Tabular regression data: CSV loading, cleaning, min-max scaling and
// seeded train/test splitting.

#include <Eigen/Dense>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <limits>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "bnt/error.hpp"
#include "bnt/random.hpp"

namespace bnt {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;

/// A design matrix with its response. Rows are contiguous so a row can be
/// handed to predictors as a span.
struct Dataset {
  std::vector<std::string> feature_names;
  std::string response_name;
  Matrix features;
  Vector response;

  std::size_t n() const { return static_cast<std::size_t>(features.rows()); }
  std::size_t d() const { return static_cast<std::size_t>(features.cols()); }

  std::span<const double> row(std::size_t i) const {
    return {features.data() + i * d(), d()};
  }

  Dataset subset(std::span<const std::size_t> rows) const {
    Dataset out{feature_names, response_name, Matrix(rows.size(), d()), Vector(rows.size())};
    for (std::size_t r = 0; r < rows.size(); ++r) {
      out.features.row(static_cast<Eigen::Index>(r)) = features.row(static_cast<Eigen::Index>(rows[r]));
      out.response[static_cast<Eigen::Index>(r)] = response[static_cast<Eigen::Index>(rows[r])];
    }
    return out;
  }

  Dataset with_response(Vector y) const {
    if (static_cast<std::size_t>(y.size()) != n()) throw DataError("response length mismatch");
    Dataset out = *this;
    out.response = std::move(y);
    return out;
  }
};

/// Parsed CSV before cleaning. Missing and non-numeric cells are NaN; the
/// per-column counters say which kind they were.
struct RawTable {
  std::vector<std::string> columns;
  Matrix values;
  std::vector<std::size_t> non_numeric;
  std::vector<std::size_t> missing;

  std::size_t rows() const { return static_cast<std::size_t>(values.rows()); }
  std::size_t cols() const { return columns.size(); }
  bool is_numeric(std::size_t c) const { return non_numeric[c] == 0; }

  std::size_t column_index(std::string_view name) const {
    auto it = std::find(columns.begin(), columns.end(), name);
    if (it == columns.end()) throw DataError("no column named '" + std::string(name) + "'");
    return static_cast<std::size_t>(it - columns.begin());
  }
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

// Splits one CSV record. Handles double-quoted fields with "" escapes;
// embedded newlines are not supported.
inline std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  fields.push_back(std::move(cur));
  return fields;
}

inline bool is_missing_marker(std::string_view cell) {
  return cell.empty() || cell == "NA" || cell == "?";
}

enum class CellKind { number, missing, text };

inline CellKind parse_cell(std::string_view raw, double& out) {
  const std::string_view cell = trim(raw);
  if (is_missing_marker(cell)) return CellKind::missing;
  const char* first = cell.data();
  const char* last = cell.data() + cell.size();
  if (*first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, out);
  if (ec != std::errc{} || ptr != last) return CellKind::text;
  return std::isfinite(out) ? CellKind::number : CellKind::missing;
}

}  // namespace detail

/// Parses comma-separated text with a header row.
inline RawTable parse_csv(std::istream& in, const std::string& source = "<stream>") {
  std::string line;
  if (!std::getline(in, line) || detail::trim(line).empty()) {
    throw DataError(source + ": empty file");
  }
  RawTable table;
  for (auto& name : detail::split_csv_line(line)) table.columns.emplace_back(detail::trim(name));
  const std::size_t cols = table.columns.size();
  table.non_numeric.assign(cols, 0);
  table.missing.assign(cols, 0);

  std::vector<std::vector<double>> rows;
  std::vector<std::size_t> ragged;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    auto fields = detail::split_csv_line(line);
    if (fields.size() != cols) {
      ragged.push_back(line_no);
      continue;
    }
    std::vector<double> values(cols, std::numeric_limits<double>::quiet_NaN());
    for (std::size_t c = 0; c < cols; ++c) {
      double v = 0.0;
      switch (detail::parse_cell(fields[c], v)) {
        case detail::CellKind::number: values[c] = v; break;
        case detail::CellKind::missing: ++table.missing[c]; break;
        case detail::CellKind::text: ++table.non_numeric[c]; break;
      }
    }
    rows.push_back(std::move(values));
  }
  if (!ragged.empty()) {
    std::ostringstream msg;
    msg << source << ": ragged rows (expected " << cols << " fields) at line";
    if (ragged.size() > 1) msg << 's';
    for (std::size_t i = 0; i < ragged.size(); ++i) msg << (i ? ", " : " ") << ragged[i];
    throw DataError(msg.str());
  }
  if (rows.empty()) throw DataError(source + ": no data rows");

  table.values.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      table.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = rows[r][c];
    }
  }
  return table;
}

inline RawTable load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError(path + ": file not found or unreadable");
  return parse_csv(in, path);
}

/// Drops every column holding a non-numeric cell, then every row holding a
/// missing cell. The response column has to survive both steps.
inline RawTable clean(const RawTable& raw, std::string_view response) {
  const std::size_t resp = raw.column_index(response);
  if (!raw.is_numeric(resp)) throw DataError("response column '" + std::string(response) + "' is non-numeric");
  if (raw.missing[resp] == raw.rows()) throw DataError("response column '" + std::string(response) + "' is fully missing");

  std::vector<std::size_t> keep_cols;
  for (std::size_t c = 0; c < raw.cols(); ++c) {
    if (raw.is_numeric(c)) keep_cols.push_back(c);
  }
  std::vector<std::size_t> keep_rows;
  for (std::size_t r = 0; r < raw.rows(); ++r) {
    const bool complete = std::all_of(keep_cols.begin(), keep_cols.end(), [&](std::size_t c) {
      return !std::isnan(raw.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)));
    });
    if (complete) keep_rows.push_back(r);
  }
  if (keep_rows.size() < 2) throw DataError("fewer than 2 rows remain after cleaning");

  RawTable out;
  out.values.resize(static_cast<Eigen::Index>(keep_rows.size()), static_cast<Eigen::Index>(keep_cols.size()));
  for (std::size_t c = 0; c < keep_cols.size(); ++c) {
    out.columns.push_back(raw.columns[keep_cols[c]]);
    for (std::size_t r = 0; r < keep_rows.size(); ++r) {
      out.values(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
          raw.values(static_cast<Eigen::Index>(keep_rows[r]), static_cast<Eigen::Index>(keep_cols[c]));
    }
  }
  out.non_numeric.assign(keep_cols.size(), 0);
  out.missing.assign(keep_cols.size(), 0);
  return out;
}

/// Splits a cleaned table into features and response.
inline Dataset to_dataset(const RawTable& table, std::string_view response) {
  for (std::size_t c = 0; c < table.cols(); ++c) {
    if (!table.is_numeric(c) || table.missing[c] != 0) {
      throw DataError("table must be cleaned before conversion (column '" + table.columns[c] + "')");
    }
  }
  const std::size_t resp = table.column_index(response);
  if (table.cols() < 2) throw DataError("no feature columns remain");
  if (table.rows() < 2) throw DataError("fewer than 2 rows");

  Dataset ds;
  ds.response_name = std::string(response);
  ds.features.resize(table.values.rows(), static_cast<Eigen::Index>(table.cols() - 1));
  ds.response = table.values.col(static_cast<Eigen::Index>(resp));
  Eigen::Index out_c = 0;
  for (std::size_t c = 0; c < table.cols(); ++c) {
    if (c == resp) continue;
    ds.feature_names.push_back(table.columns[c]);
    ds.features.col(out_c++) = table.values.col(static_cast<Eigen::Index>(c));
  }
  return ds;
}

inline Dataset load_dataset(const std::string& path, std::string_view response) {
  return to_dataset(clean(load_csv(path), response), response);
}

// ---------------------------------------------------------------------------
// Min-max scaling

struct ColumnRange {
  double min = 0.0;
  double max = 0.0;

  double scale(double v) const { return max > min ? (v - min) / (max - min) : 0.0; }
  double invert(double s) const { return max > min ? min + s * (max - min) : min; }
};

/// Per-column ranges fitted on training data. Constant columns map to 0;
/// values outside the fitted range extrapolate linearly.
struct ScalingSpec {
  std::vector<ColumnRange> features;
  ColumnRange response;

  std::vector<double> scale_row(std::span<const double> x) const {
    if (x.size() != features.size()) throw DataError("scaling spec dimension mismatch");
    std::vector<double> out(x.size());
    for (std::size_t j = 0; j < x.size(); ++j) out[j] = features[j].scale(x[j]);
    return out;
  }
};

inline ColumnRange fit_range(const Eigen::Ref<const Vector>& v) {
  return {v.minCoeff(), v.maxCoeff()};
}

inline ScalingSpec fit_scaler(const Dataset& ds) {
  if (ds.n() == 0) throw DataError("cannot fit a scaler on an empty dataset");
  ScalingSpec spec;
  for (std::size_t j = 0; j < ds.d(); ++j) {
    const Vector col = ds.features.col(static_cast<Eigen::Index>(j));
    spec.features.push_back(fit_range(col));
  }
  spec.response = fit_range(ds.response);
  return spec;
}

inline Dataset apply_scaler(const Dataset& ds, const ScalingSpec& spec) {
  if (spec.features.size() != ds.d()) throw DataError("scaling spec dimension mismatch");
  Dataset out = ds;
  for (Eigen::Index i = 0; i < out.features.rows(); ++i) {
    for (std::size_t j = 0; j < ds.d(); ++j) {
      auto& v = out.features(i, static_cast<Eigen::Index>(j));
      v = spec.features[j].scale(v);
    }
    out.response[i] = spec.response.scale(out.response[i]);
  }
  return out;
}

inline Vector invert_response(const ScalingSpec& spec, const Vector& yhat) {
  return yhat.unaryExpr([&](double s) { return spec.response.invert(s); });
}

/// Inverse of apply_scaler on the feature matrix. Constant columns come back
/// as their fitted value.
inline Matrix invert_features(const ScalingSpec& spec, const Matrix& scaled) {
  if (spec.features.size() != static_cast<std::size_t>(scaled.cols())) {
    throw DataError("scaling spec dimension mismatch");
  }
  Matrix out = scaled;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    for (Eigen::Index j = 0; j < out.cols(); ++j) {
      out(i, j) = spec.features[static_cast<std::size_t>(j)].invert(out(i, j));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Train/test splitting

struct SplitPair {
  Dataset train;
  Dataset test;
  std::uint64_t seed = 0;
  double train_fraction = 0.0;
  std::vector<std::size_t> train_rows;
  std::vector<std::size_t> test_rows;
};

/// Shuffles rows with the given seed and cuts at round(fraction * n).
inline SplitPair shuffle_split(const Dataset& ds, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ConfigError("train_fraction must lie in (0, 1)");
  }
  const std::size_t n = ds.n();
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
  if (n_train == 0 || n_train >= n) throw DataError("split would leave the train or test set empty");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  rng.shuffle(order);

  SplitPair split;
  split.seed = seed;
  split.train_fraction = train_fraction;
  split.train_rows.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  split.test_rows.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  split.train = ds.subset(split.train_rows);
  split.test = ds.subset(split.test_rows);
  return split;
}

}  // namespace bnt
