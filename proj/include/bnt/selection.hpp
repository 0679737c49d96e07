#pragma once

// Local-threshold feature selection on variable inclusion proportions.
// Proportions come either from the single-tree chain or from a
// sum-of-trees sampler; the sum-of-trees engine is the default.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "bnt/bcart.hpp"
#include "bnt/dataset.hpp"
#include "bnt/error.hpp"
#include "bnt/random.hpp"
#include "bnt/sum_of_trees.hpp"

namespace bnt {

/// Linear-interpolation sample quantile (R's default, type 7).
inline double quantile_type7(std::vector<double> values, double q) {
  if (values.empty()) throw ConfigError("quantile of an empty sample");
  std::sort(values.begin(), values.end());
  const double h = (static_cast<double>(values.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  if (lo + 1 >= values.size()) return values.back();
  return values[lo] + (h - static_cast<double>(lo)) * (values[lo + 1] - values[lo]);
}

enum class SelectionEngine { single_tree, sum_of_trees };

inline const char* to_string(SelectionEngine e) {
  return e == SelectionEngine::single_tree ? "single_tree" : "sum_of_trees";
}

struct SelectionConfig {
  std::size_t permutations = 50;
  double level = 0.05;
  ChainConfig chain{};  // single_tree engine
  SelectionEngine engine = SelectionEngine::sum_of_trees;
  SumOfTreesConfig ensemble{};  // sum_of_trees engine
  std::size_t observed_runs = 10;  // sum_of_trees runs averaged on the real data

  void validate() const {
    if (permutations == 0) throw ConfigError("permutations must be at least 1");
    if (!(level > 0.0 && level < 1.0)) throw ConfigError("selection level must lie in (0, 1)");
    if (observed_runs == 0) throw ConfigError("observed_runs must be at least 1");
    chain.validate();
    ensemble.validate();
  }
};

struct SelectionResult {
  std::vector<std::size_t> selected;
  InclusionProportions observed;
  std::vector<InclusionProportions> null;
  std::vector<double> thresholds;
};

namespace detail {

inline InclusionProportions engine_proportions(const Dataset& data, const TreePrior& tree_prior, const LeafPrior& leaf_prior,
                                               const SelectionConfig& cfg, std::uint64_t seed) {
  if (cfg.engine == SelectionEngine::single_tree) {
    ChainConfig chain = cfg.chain;
    chain.trace = nullptr;
    return inclusion_proportions(run_chain(data, tree_prior, leaf_prior, chain, seed).samples, data.d());
  }
  return sum_of_trees_inclusion(data, tree_prior, cfg.ensemble, seed).inclusion;
}

}  // namespace detail

/// Permutation-null selection on inclusion proportions: feature j is kept
/// when its observed proportion exceeds the (1 - level) quantile of its own
/// null proportions, obtained from fits to response-permuted copies of the
/// data. Replicate r uses seeds derived from (seed, r), so the result does
/// not depend on evaluation order.
inline SelectionResult local_threshold_select(const Dataset& train, const TreePrior& tree_prior, const LeafPrior& leaf_prior,
                                              const SelectionConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  SelectionResult out;
  const std::size_t runs = cfg.engine == SelectionEngine::single_tree ? 1 : cfg.observed_runs;
  out.observed.proportions.assign(train.d(), 0.0);
  for (std::size_t r = 0; r < runs; ++r) {
    const std::uint64_t s = cfg.engine == SelectionEngine::single_tree ? seed : derive_seed(derive_seed(seed, 0), r);
    const auto p = detail::engine_proportions(train, tree_prior, leaf_prior, cfg, s);
    for (std::size_t j = 0; j < train.d(); ++j) out.observed.proportions[j] += p.proportions[j] / static_cast<double>(runs);
  }

  for (std::size_t r = 0; r < cfg.permutations; ++r) {
    Rng perm_rng(derive_seed(seed, 2 * r + 1));
    std::vector<Eigen::Index> idx(train.n());
    std::iota(idx.begin(), idx.end(), Eigen::Index{0});
    perm_rng.shuffle(idx);
    Vector y(static_cast<Eigen::Index>(train.n()));
    for (std::size_t i = 0; i < train.n(); ++i) y[static_cast<Eigen::Index>(i)] = train.response[idx[i]];
    const Dataset permuted = train.with_response(std::move(y));
    out.null.push_back(detail::engine_proportions(permuted, tree_prior, leaf_prior, cfg, derive_seed(seed, 2 * r + 2)));
  }

  for (std::size_t j = 0; j < train.d(); ++j) {
    std::vector<double> null_j;
    for (const auto& p : out.null) null_j.push_back(p.proportions[j]);
    const double thr = quantile_type7(std::move(null_j), 1.0 - cfg.level);
    out.thresholds.push_back(thr);
    if (out.observed.proportions[j] > thr) out.selected.push_back(j);
  }
  return out;
}

}  // namespace bnt
