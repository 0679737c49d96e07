#pragma once

#include <cmath>
#include <optional>

#include "bnt/dataset.hpp"
#include "bnt/error.hpp"

namespace bnt {

struct MetricsReport {
  double mae = 0.0;
  double mape = 0.0;
  double rmse = 0.0;
  std::optional<double> r2;      // undefined when every y_i is equal
  std::optional<double> adj_r2;  // additionally undefined when n <= d_used + 1
  std::size_t n = 0;
  std::size_t d_used = 0;
  std::size_t mape_skipped = 0;  // terms with y_i == 0
};

/// MAE, MAPE, RMSE, R^2 and adjusted R^2 in the units of `y`.
/// MAPE averages over the terms with y_i != 0.
inline MetricsReport compute_metrics(const Vector& y, const Vector& yhat, std::size_t d_used) {
  if (y.size() != yhat.size()) throw DataError("metric inputs differ in length");
  if (y.size() < 2) throw DataError("metrics need at least two observations");
  MetricsReport m;
  m.n = static_cast<std::size_t>(y.size());
  m.d_used = d_used;
  const double n = static_cast<double>(m.n);
  const double mean = y.mean();

  double abs_sum = 0.0, sq_sum = 0.0, pct_sum = 0.0, tot_sum = 0.0;
  std::size_t pct_terms = 0;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    const double e = y[i] - yhat[i];
    abs_sum += std::abs(e);
    sq_sum += e * e;
    tot_sum += (y[i] - mean) * (y[i] - mean);
    if (y[i] != 0.0) {
      pct_sum += std::abs(e / y[i]);
      ++pct_terms;
    } else {
      ++m.mape_skipped;
    }
  }
  m.mae = abs_sum / n;
  m.rmse = std::sqrt(sq_sum / n);
  m.mape = pct_terms ? pct_sum / static_cast<double>(pct_terms) : 0.0;
  if (tot_sum > 0.0) {
    m.r2 = 1.0 - sq_sum / tot_sum;
    if (n > static_cast<double>(d_used) + 1.0) {
      m.adj_r2 = 1.0 - (1.0 - *m.r2) * (n - 1.0) / (n - static_cast<double>(d_used) - 1.0);
    }
  }
  return m;
}

}  // namespace bnt
