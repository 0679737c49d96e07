#pragma once

// Greedy least-squares regression tree with minsplit stopping.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "bnt/dataset.hpp"
#include "bnt/error.hpp"
#include "bnt/tree.hpp"

namespace bnt {

/// Best least-squares split of the given rows. Candidate thresholds are
/// midpoints between consecutive distinct values; ties go to the lowest
/// feature index, then the lowest threshold. Returns nothing when no split
/// strictly lowers the within-node sum of squares.
inline std::optional<SplitRule> best_split(const Dataset& ds, std::span<const std::size_t> rows) {
  const std::size_t n = rows.size();
  if (n < 2) return std::nullopt;

  double mean = 0.0;
  for (auto r : rows) mean += ds.response[static_cast<Eigen::Index>(r)];
  mean /= static_cast<double>(n);
  double ss_total = 0.0;
  for (auto r : rows) {
    const double e = ds.response[static_cast<Eigen::Index>(r)] - mean;
    ss_total += e * e;
  }
  if (!(ss_total > 0.0)) return std::nullopt;

  // With centred responses the right-hand sum is -left_sum, so the SSE
  // reduction of a split is left_sum^2 * n / (n_left * n_right). Gains
  // within tol of the incumbent count as ties, so accumulated rounding
  // cannot override the feature/threshold order.
  const double tol = 1e-12 * ss_total;
  double best_gain = 0.0;
  std::optional<SplitRule> best;
  std::vector<std::pair<double, double>> column(n);
  for (std::size_t j = 0; j < ds.d(); ++j) {
    for (std::size_t i = 0; i < n; ++i) {
      const auto r = static_cast<Eigen::Index>(rows[i]);
      column[i] = {ds.features(r, static_cast<Eigen::Index>(j)), ds.response[r] - mean};
    }
    std::sort(column.begin(), column.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    if (column.front().first == column.back().first) continue;

    double left_sum = 0.0;
    for (std::size_t i = 0; i + 1 < n; ++i) {
      left_sum += column[i].second;
      const double lo = column[i].first;
      const double hi = column[i + 1].first;
      if (!(lo < hi)) continue;
      const auto nl = static_cast<double>(i + 1);
      const auto nr = static_cast<double>(n - i - 1);
      const double gain = left_sum * left_sum * static_cast<double>(n) / (nl * nr);
      if (gain > best_gain + tol) {
        double mid = lo + 0.5 * (hi - lo);
        if (!(mid < hi)) mid = lo;
        best_gain = gain;
        best = SplitRule{j, mid};
      }
    }
  }
  return best;
}

/// minsplit as a fraction of the training size: rounded, at least 2.
inline std::size_t minsplit_from_fraction(std::size_t n, double fraction) {
  const auto m = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  return std::max<std::size_t>(2, m);
}

/// Recursive partitioning: a node is split when it holds at least
/// `minsplit` rows and best_split finds an improving rule. Leaves carry the
/// mean response of their rows.
inline RegressionTree fit_cart(const Dataset& train, std::size_t minsplit) {
  if (train.n() == 0) throw DataError("cannot fit CART on an empty training set");
  if (minsplit < 2) throw ConfigError("minsplit must be at least 2");

  RegressionTree tree(train.d());
  std::vector<std::size_t> all(train.n());
  std::iota(all.begin(), all.end(), std::size_t{0});
  std::vector<std::pair<int, std::vector<std::size_t>>> work;
  work.emplace_back(0, std::move(all));

  while (!work.empty()) {
    auto [id, rows] = std::move(work.back());
    work.pop_back();

    std::optional<SplitRule> rule;
    if (rows.size() >= minsplit) rule = best_split(train, rows);
    if (!rule) {
      double sum = 0.0;
      for (auto r : rows) sum += train.response[static_cast<Eigen::Index>(r)];
      TreeNode& leaf = tree.node(id);
      leaf.leaf_count = rows.size();
      leaf.leaf_mean = sum / static_cast<double>(rows.size());
      continue;
    }
    std::vector<std::size_t> left, right;
    for (auto r : rows) (rule->goes_left(train.row(r)) ? left : right).push_back(r);
    auto [l, rgt] = tree.split(id, *rule);
    work.emplace_back(rgt, std::move(right));
    work.emplace_back(l, std::move(left));
  }
  return tree;
}

}  // namespace bnt
