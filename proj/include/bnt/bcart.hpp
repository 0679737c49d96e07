#pragma once

// Bayesian CART: depth-dependent split prior, uniform rule prior over
// observed values, Normal-Inverse-Gamma leaf model with the leaf parameters
// integrated out, and a Metropolis-Hastings search over tree structures.
//
// Leaf model, per terminal node with responses y_1..y_n:
//   y_i | mu, s2 ~ N(mu, s2),  mu | s2 ~ N(mu0, s2 / a),  s2 ~ IG(nu, lambda)
// with IG(shape, scale).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "bnt/dataset.hpp"
#include "bnt/error.hpp"
#include "bnt/random.hpp"
#include "bnt/tree.hpp"

namespace bnt {

struct TreePrior {
  double alpha = 0.95;
  double beta = 2.0;

  void validate() const {
    if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("tree prior alpha must lie in (0, 1)");
    if (!(beta >= 0.0)) throw ConfigError("tree prior beta must be non-negative");
  }
};

struct LeafPrior {
  double mu0 = 0.0;
  double a = 1.0;
  double nu = 3.0;
  double lambda = 1.0;

  void validate() const {
    if (!(a > 0.0) || !(nu > 0.0) || !(lambda > 0.0) || !std::isfinite(mu0)) {
      throw ConfigError("leaf prior requires a, nu, lambda > 0 and finite mu0");
    }
  }

  /// Data-located default: mu0 at the response mean and the inverse-gamma
  /// mode at the sample variance.
  static LeafPrior from_response(const Vector& y, double nu = 3.0, double a = 1.0) {
    const double mean = y.mean();
    double var = y.size() > 1 ? (y.array() - mean).square().sum() / static_cast<double>(y.size() - 1) : 0.0;
    if (!(var > 0.0)) var = 1e-6;
    return {mean, a, nu, var * (nu + 1.0)};
  }
};

/// log P(node at `depth` splits) = log(alpha * (1 + depth)^-beta).
inline double log_p_split(int depth, const TreePrior& prior) {
  if (depth < 0) throw ConfigError("depth must be non-negative");
  return std::log(prior.alpha) - prior.beta * std::log1p(static_cast<double>(depth));
}

inline double log_p_stop(int depth, const TreePrior& prior) {
  return std::log1p(-std::exp(log_p_split(depth, prior)));
}

/// Log marginal likelihood of one leaf from its sufficient statistics
/// (count, mean, centred sum of squares).
inline double leaf_log_marginal(std::size_t count, double mean, double centred_ss, const LeafPrior& p) {
  if (count == 0) throw DataError("empty leaf");
  const double n = static_cast<double>(count);
  const double a_n = p.a + n;
  const double nu_n = p.nu + 0.5 * n;
  const double dev = mean - p.mu0;
  const double lambda_n = p.lambda + 0.5 * centred_ss + 0.5 * p.a * n * dev * dev / a_n;
  return -0.5 * n * std::log(2.0 * M_PI) + 0.5 * (std::log(p.a) - std::log(a_n)) + std::lgamma(nu_n) -
         std::lgamma(p.nu) + p.nu * std::log(p.lambda) - nu_n * std::log(lambda_n);
}

inline double leaf_log_marginal(std::span<const double> y, const LeafPrior& p) {
  if (y.empty()) throw DataError("empty leaf");
  const double mean = std::accumulate(y.begin(), y.end(), 0.0) / static_cast<double>(y.size());
  double ss = 0.0;
  for (double v : y) ss += (v - mean) * (v - mean);
  return leaf_log_marginal(y.size(), mean, ss, p);
}

// ---------------------------------------------------------------------------

enum class MoveType { grow, prune, change, swap };

inline const char* to_string(MoveType m) {
  switch (m) {
    case MoveType::grow: return "grow";
    case MoveType::prune: return "prune";
    case MoveType::change: return "change";
    case MoveType::swap: return "swap";
  }
  return "?";
}

struct MoveProbabilities {
  double grow = 0.4;
  double prune = 0.4;
  double change = 0.1;
  double swap = 0.1;
};

struct Proposal {
  RegressionTree tree;
  double log_ratio = 0.0;  // log q(T'->T) - log q(T->T')
  MoveType move = MoveType::grow;
  bool feasible = false;
};

struct ChainConfig {
  std::size_t iterations = 7000;
  std::size_t burn_in = 2000;
  std::size_t thin = 5;
  MoveProbabilities moves{};
  std::ostream* trace = nullptr;  // CSV diagnostics when set

  void validate() const {
    if (iterations <= burn_in) throw ConfigError("chain iterations must exceed burn_in");
    if (thin == 0) throw ConfigError("chain thinning must be at least 1");
  }
};

struct ChainState {
  RegressionTree tree;
  double log_posterior = 0.0;
  std::size_t iteration = 0;
  Rng rng;
};

struct ChainResult {
  std::vector<RegressionTree> samples;
  RegressionTree best;
  double best_log_posterior = -std::numeric_limits<double>::infinity();
  std::size_t accepted = 0;
  std::size_t iterations = 0;
};

/// Scores trees against one training set and runs the Metropolis-Hastings
/// search. Holds scratch buffers, so a sampler must not be shared between
/// threads; build one per chain.
class BcartSampler {
 public:
  BcartSampler(const Dataset& train, TreePrior tree_prior, LeafPrior leaf_prior)
      : data_(train), tree_prior_(tree_prior), leaf_prior_(leaf_prior) {
    tree_prior_.validate();
    leaf_prior_.validate();
    if (train.n() == 0) throw DataError("BCART needs a nonempty training set");
    const std::size_t n = train.n(), d = train.d();
    levels_.resize(d);
    codes_.resize(d * n);
    offsets_.resize(d + 1, 0);
    for (std::size_t j = 0; j < d; ++j) {
      std::vector<double> vals(n);
      for (std::size_t i = 0; i < n; ++i) vals[i] = train.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
      std::sort(vals.begin(), vals.end());
      vals.erase(std::unique(vals.begin(), vals.end()), vals.end());
      for (std::size_t i = 0; i < n; ++i) {
        const double v = train.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
        codes_[j * n + i] = static_cast<std::uint32_t>(std::lower_bound(vals.begin(), vals.end(), v) - vals.begin());
      }
      offsets_[j + 1] = offsets_[j] + vals.size();
      levels_[j] = std::move(vals);
    }
    stamp_.assign(offsets_[d], 0);
  }

  const Dataset& data() const { return data_; }
  const TreePrior& tree_prior() const { return tree_prior_; }
  const LeafPrior& leaf_prior() const { return leaf_prior_; }

  // ----- scoring ---------------------------------------------------------

  struct Score {
    double log_prior = 0.0;
    double log_likelihood = 0.0;
    bool valid = true;
    std::string reason;

    double log_posterior() const {
      return valid ? log_prior + log_likelihood : -std::numeric_limits<double>::infinity();
    }
  };

  /// Prior and marginal likelihood. A tree with an empty node, or a split
  /// whose threshold is not an observed value of its feature within the
  /// node, has zero prior mass and is reported invalid.
  Score score(const RegressionTree& tree) {
    if (tree.input_dim() != data_.d()) throw DataError("tree input dimension mismatch");
    partition(tree);
    Score s;
    for (std::size_t i = 0; i < tree.size(); ++i) {
      const TreeNode& node = tree.node(static_cast<int>(i));
      const auto rows = node_rows(static_cast<int>(i));
      if (rows.empty()) {
        s.valid = false;
        s.reason = "empty node";
        return s;
      }
      if (node.is_leaf()) {
        s.log_prior += log_p_stop(node.depth, tree_prior_);
        s.log_likelihood += leaf_term(rows);
        continue;
      }
      const std::size_t j = node.rule->feature;
      const auto code = level_code(j, node.rule->threshold);
      if (!code || !observed_in(rows, j, *code)) {
        s.valid = false;
        s.reason = "threshold is not an observed value in its node";
        return s;
      }
      s.log_prior += log_p_split(node.depth, tree_prior_) - std::log(static_cast<double>(available_features(rows).size())) -
                     std::log(static_cast<double>(distinct_count(rows, j)));
    }
    return s;
  }

  double log_posterior(const RegressionTree& tree) { return score(tree).log_posterior(); }

  /// Sets each leaf's mean and variance to their conjugate posterior means.
  void refresh_leaves(RegressionTree& tree) {
    partition(tree);
    for (int leaf : tree.leaves()) {
      const auto rows = node_rows(leaf);
      TreeNode& node = tree.node(leaf);
      node.leaf_count = rows.size();
      if (rows.empty()) continue;
      auto [mean, ss] = moments(rows);
      const double n = static_cast<double>(rows.size());
      const double a_n = leaf_prior_.a + n;
      const double nu_n = leaf_prior_.nu + 0.5 * n;
      const double dev = mean - leaf_prior_.mu0;
      const double lambda_n = leaf_prior_.lambda + 0.5 * ss + 0.5 * leaf_prior_.a * n * dev * dev / a_n;
      node.leaf_mean = (leaf_prior_.a * leaf_prior_.mu0 + n * mean) / a_n;
      node.leaf_sigma2 = nu_n > 1.0 ? lambda_n / (nu_n - 1.0) : lambda_n / (nu_n + 1.0);
    }
  }

  // ----- node-level helpers (valid after partition) -----------------------

  /// Routes every training row through the tree; node_rows() then returns
  /// the rows reaching each node.
  void partition(const RegressionTree& tree) {
    const std::size_t n = data_.n();
    order_.resize(n);
    std::iota(order_.begin(), order_.end(), std::uint32_t{0});
    ranges_.assign(tree.size(), {0, 0});
    ranges_[0] = {0, static_cast<std::uint32_t>(n)};
    for (std::size_t i = 0; i < tree.size(); ++i) {
      const TreeNode& node = tree.node(static_cast<int>(i));
      if (node.is_leaf()) continue;
      auto [b, e] = ranges_[i];
      const std::size_t j = node.rule->feature;
      const double thr = node.rule->threshold;
      auto mid = std::partition(order_.begin() + b, order_.begin() + e, [&](std::uint32_t r) {
        return data_.features(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) <= thr;
      });
      const auto m = static_cast<std::uint32_t>(mid - order_.begin());
      ranges_[static_cast<std::size_t>(node.left)] = {b, m};
      ranges_[static_cast<std::size_t>(node.right)] = {m, e};
    }
  }

  std::span<const std::uint32_t> node_rows(int node) const {
    auto [b, e] = ranges_[static_cast<std::size_t>(node)];
    return {order_.data() + b, e - b};
  }

  /// Features with at least two distinct values among `rows`.
  std::vector<std::size_t> available_features(std::span<const std::uint32_t> rows) const {
    std::vector<std::size_t> out;
    if (rows.size() < 2) return out;
    const std::size_t n = data_.n();
    for (std::size_t j = 0; j < data_.d(); ++j) {
      const std::uint32_t* codes = codes_.data() + j * n;
      const std::uint32_t first = codes[rows[0]];
      for (std::size_t k = 1; k < rows.size(); ++k) {
        if (codes[rows[k]] != first) {
          out.push_back(j);
          break;
        }
      }
    }
    return out;
  }

  /// Sorted distinct level codes of feature j among `rows`.
  std::vector<std::uint32_t> distinct_levels(std::span<const std::uint32_t> rows, std::size_t j) {
    const std::uint32_t epoch = next_epoch();
    const std::uint32_t* codes = codes_.data() + j * data_.n();
    std::uint32_t* stamp = stamp_.data() + offsets_[j];
    std::vector<std::uint32_t> out;
    for (auto r : rows) {
      const auto c = codes[r];
      if (stamp[c] != epoch) {
        stamp[c] = epoch;
        out.push_back(c);
      }
    }
    std::sort(out.begin(), out.end());
    return out;
  }

  std::size_t distinct_count(std::span<const std::uint32_t> rows, std::size_t j) {
    const std::uint32_t epoch = next_epoch();
    const std::uint32_t* codes = codes_.data() + j * data_.n();
    std::uint32_t* stamp = stamp_.data() + offsets_[j];
    std::size_t count = 0;
    for (auto r : rows) {
      const auto c = codes[r];
      if (stamp[c] != epoch) {
        stamp[c] = epoch;
        ++count;
      }
    }
    return count;
  }

  double level_value(std::size_t j, std::uint32_t code) const { return levels_[j][code]; }

  /// log P_rule of `rule` at a node holding `rows`; -inf if the rule is not
  /// drawable there.
  double log_rule_prior(std::span<const std::uint32_t> rows, const SplitRule& rule) {
    const auto avail = available_features(rows);
    if (std::find(avail.begin(), avail.end(), rule.feature) == avail.end()) {
      return -std::numeric_limits<double>::infinity();
    }
    const auto code = level_code(rule.feature, rule.threshold);
    if (!code || !observed_in(rows, rule.feature, *code)) return -std::numeric_limits<double>::infinity();
    return -std::log(static_cast<double>(avail.size())) - std::log(static_cast<double>(distinct_count(rows, rule.feature)));
  }

  // ----- proposals --------------------------------------------------------

  /// Draws one GROW / PRUNE / CHANGE / SWAP candidate from `tree`.
  /// Infeasible draws come back with feasible == false and the tree
  /// unchanged; the caller rejects them.
  Proposal propose(const RegressionTree& tree, Rng& rng, const MoveProbabilities& mp = {}) {
    const double total = mp.grow + mp.prune + mp.change + mp.swap;
    const double u = rng.uniform() * total;
    MoveType move = MoveType::swap;
    if (u < mp.grow) move = MoveType::grow;
    else if (u < mp.grow + mp.prune) move = MoveType::prune;
    else if (u < mp.grow + mp.prune + mp.change) move = MoveType::change;
    return propose(tree, rng, move, mp);
  }

  Proposal propose(const RegressionTree& tree, Rng& rng, MoveType move, const MoveProbabilities& mp = {}) {
    Proposal p{tree, 0.0, move, false};
    partition(tree);
    switch (move) {
      case MoveType::grow: {
        const auto leaves = tree.leaves();
        const int leaf = leaves[rng.index(leaves.size())];
        const auto rows = node_rows(leaf);
        const auto avail = available_features(rows);
        if (avail.empty()) return p;
        const std::size_t j = avail[rng.index(avail.size())];
        const auto levels = distinct_levels(rows, j);
        const std::uint32_t code = levels[rng.index(levels.size())];
        p.tree.split(leaf, SplitRule{j, level_value(j, code)});
        const double w_after = static_cast<double>(p.tree.prunable_nodes().size());
        p.log_ratio = std::log(mp.prune / w_after) - std::log(mp.grow) + std::log(static_cast<double>(leaves.size())) +
                      std::log(static_cast<double>(avail.size())) + std::log(static_cast<double>(levels.size()));
        p.feasible = true;
        return p;
      }
      case MoveType::prune: {
        const auto prunable = tree.prunable_nodes();
        if (prunable.empty()) return p;
        const int target = prunable[rng.index(prunable.size())];
        const double log_rule = log_rule_prior(node_rows(target), *tree.node(target).rule);
        p.tree.prune(target);
        const double leaves_after = static_cast<double>(p.tree.leaf_count());
        p.log_ratio = std::log(mp.grow) - std::log(leaves_after) + log_rule - std::log(mp.prune) +
                      std::log(static_cast<double>(prunable.size()));
        p.feasible = std::isfinite(log_rule);
        return p;
      }
      case MoveType::change: {
        // New rule drawn uniformly over every (available feature, observed
        // value) pair at the node, which makes the move symmetric.
        const auto internal = tree.internal_nodes();
        if (internal.empty()) return p;
        const int target = internal[rng.index(internal.size())];
        const auto rows = node_rows(target);
        const auto avail = available_features(rows);
        std::vector<std::size_t> counts;
        std::size_t total = 0;
        for (auto j : avail) {
          counts.push_back(distinct_count(rows, j));
          total += counts.back();
        }
        if (total == 0) return p;
        std::size_t pick = rng.index(total);
        std::size_t k = 0;
        while (pick >= counts[k]) pick -= counts[k++];
        const auto levels = distinct_levels(rows, avail[k]);
        p.tree.node(target).rule = SplitRule{avail[k], level_value(avail[k], levels[pick])};
        p.feasible = true;
        return p;
      }
      case MoveType::swap: {
        std::vector<std::pair<int, int>> pairs;
        for (int i : tree.internal_nodes()) {
          const TreeNode& n = tree.node(i);
          if (!tree.node(n.left).is_leaf()) pairs.emplace_back(i, n.left);
          if (!tree.node(n.right).is_leaf()) pairs.emplace_back(i, n.right);
        }
        if (pairs.empty()) return p;
        auto [parent, child] = pairs[rng.index(pairs.size())];
        std::swap(p.tree.node(parent).rule, p.tree.node(child).rule);
        p.feasible = true;
        return p;
      }
    }
    return p;
  }

  // ----- chain ------------------------------------------------------------

  ChainState initial_state(std::uint64_t seed) {
    ChainState s{RegressionTree(data_.d()), 0.0, 0, Rng(seed)};
    refresh_leaves(s.tree);
    s.log_posterior = log_posterior(s.tree);
    return s;
  }

  /// One Metropolis-Hastings transition. Returns whether the move was
  /// accepted.
  bool step(ChainState& s, const MoveProbabilities& mp = {}) {
    Proposal p = propose(s.tree, s.rng, mp);
    ++s.iteration;
    if (!p.feasible) return false;
    const double lp = log_posterior(p.tree);
    if (!std::isfinite(lp)) return false;
    const double log_accept = lp - s.log_posterior + p.log_ratio;
    if (log_accept < 0.0 && std::log(s.rng.uniform()) >= log_accept) return false;
    refresh_leaves(p.tree);
    s.tree = std::move(p.tree);
    s.log_posterior = lp;
    return true;
  }

  ChainResult run(const ChainConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    ChainState s = initial_state(seed);
    ChainResult out;
    out.best = s.tree;
    out.best_log_posterior = s.log_posterior;
    out.samples.reserve((cfg.iterations - cfg.burn_in + cfg.thin - 1) / cfg.thin);
    if (cfg.trace) *cfg.trace << "iteration,log_posterior,leaves,accepted\n";
    for (std::size_t it = 0; it < cfg.iterations; ++it) {
      const bool accepted = step(s, cfg.moves);
      if (accepted) {
        ++out.accepted;
        if (s.log_posterior > out.best_log_posterior) {
          out.best_log_posterior = s.log_posterior;
          out.best = s.tree;
        }
      }
      if (cfg.trace) {
        *cfg.trace << it << ',' << s.log_posterior << ',' << s.tree.leaf_count() << ',' << (accepted ? 1 : 0) << '\n';
      }
      if (it >= cfg.burn_in && (it - cfg.burn_in) % cfg.thin == 0) out.samples.push_back(s.tree);
    }
    out.iterations = cfg.iterations;
    return out;
  }

 private:
  std::uint32_t next_epoch() {
    if (++epoch_ == 0) {
      std::fill(stamp_.begin(), stamp_.end(), 0);
      epoch_ = 1;
    }
    return epoch_;
  }

  std::optional<std::uint32_t> level_code(std::size_t j, double value) const {
    const auto& lv = levels_[j];
    auto it = std::lower_bound(lv.begin(), lv.end(), value);
    if (it == lv.end() || *it != value) return std::nullopt;
    return static_cast<std::uint32_t>(it - lv.begin());
  }

  bool observed_in(std::span<const std::uint32_t> rows, std::size_t j, std::uint32_t code) const {
    const std::uint32_t* codes = codes_.data() + j * data_.n();
    return std::any_of(rows.begin(), rows.end(), [&](std::uint32_t r) { return codes[r] == code; });
  }

  std::pair<double, double> moments(std::span<const std::uint32_t> rows) const {
    double sum = 0.0;
    for (auto r : rows) sum += data_.response[r];
    const double mean = sum / static_cast<double>(rows.size());
    double ss = 0.0;
    for (auto r : rows) {
      const double e = data_.response[r] - mean;
      ss += e * e;
    }
    return {mean, ss};
  }

  double leaf_term(std::span<const std::uint32_t> rows) const {
    auto [mean, ss] = moments(rows);
    return leaf_log_marginal(rows.size(), mean, ss, leaf_prior_);
  }

  const Dataset& data_;
  TreePrior tree_prior_;
  LeafPrior leaf_prior_;
  std::vector<std::vector<double>> levels_;
  std::vector<std::uint32_t> codes_;  // feature-major, n per feature
  std::vector<std::size_t> offsets_;
  std::vector<std::uint32_t> stamp_;
  std::uint32_t epoch_ = 0;
  std::vector<std::uint32_t> order_;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> ranges_;
};

// ---------------------------------------------------------------------------
// Free-function surface

inline double log_tree_prior(const RegressionTree& tree, const TreePrior& prior, const Dataset& train) {
  BcartSampler sampler(train, prior, LeafPrior{});
  const auto s = sampler.score(tree);
  if (!s.valid) throw DataError("invalid tree: " + s.reason);
  return s.log_prior;
}

inline double log_marginal_likelihood(const RegressionTree& tree, const Dataset& train, const LeafPrior& leaf_prior) {
  leaf_prior.validate();
  if (tree.input_dim() != train.d()) throw DataError("tree input dimension mismatch");
  std::vector<std::vector<double>> leaf_y(tree.size());
  for (std::size_t i = 0; i < train.n(); ++i) {
    leaf_y[static_cast<std::size_t>(tree.find_leaf(train.row(i)))].push_back(train.response[static_cast<Eigen::Index>(i)]);
  }
  double total = 0.0;
  for (int leaf : tree.leaves()) total += leaf_log_marginal(leaf_y[static_cast<std::size_t>(leaf)], leaf_prior);
  return total;
}

inline ChainResult run_chain(const Dataset& train, const TreePrior& tree_prior, const LeafPrior& leaf_prior,
                             const ChainConfig& cfg, std::uint64_t seed) {
  BcartSampler sampler(train, tree_prior, leaf_prior);
  return sampler.run(cfg, seed);
}

/// Prediction from a single tree with posterior-mean leaves (the MAP tree
/// of a chain).
inline double predict_bcart(const RegressionTree& best, std::span<const double> x) { return best.predict(x); }

/// Posterior-averaged prediction over retained samples.
inline double predict_bcart_average(std::span<const RegressionTree> samples, std::span<const double> x) {
  if (samples.empty()) throw ConfigError("no posterior samples");
  double sum = 0.0;
  for (const auto& t : samples) sum += t.predict(x);
  return sum / static_cast<double>(samples.size());
}

// ---------------------------------------------------------------------------
// Variable inclusion proportions and local-threshold selection

struct InclusionProportions {
  std::vector<double> proportions;
};

/// Per-sample share of splits using each feature, averaged over samples.
/// Single-leaf samples contribute zeros.
inline InclusionProportions inclusion_proportions(std::span<const RegressionTree> samples, std::size_t d) {
  if (samples.empty()) throw ConfigError("inclusion proportions need at least one sample");
  InclusionProportions out{std::vector<double>(d, 0.0)};
  std::vector<double> counts(d);
  for (const auto& tree : samples) {
    if (tree.input_dim() != d) throw DataError("sample dimension mismatch");
    std::fill(counts.begin(), counts.end(), 0.0);
    double splits = 0.0;
    for (const auto& node : tree.nodes()) {
      if (node.is_leaf()) continue;
      counts[node.rule->feature] += 1.0;
      splits += 1.0;
    }
    if (splits == 0.0) continue;
    for (std::size_t j = 0; j < d; ++j) out.proportions[j] += counts[j] / splits;
  }
  for (auto& p : out.proportions) p /= static_cast<double>(samples.size());
  return out;
}

}  // namespace bnt
