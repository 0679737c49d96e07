#pragma once

// Sum-of-trees regression sampler used to score variable inclusion for
// feature selection. Backfitting MCMC over m trees with GROW/PRUNE/CHANGE
// moves (probabilities 2.5/9, 2.5/9, 4/9; a bare root always grows),
// Normal leaf values integrated out in each move, then drawn:
//
//   y = sum_t g(x; T_t, M_t) + e,   e ~ N(0, s2)
//   mu ~ N(0, tau),  tau = (0.5 / (k sqrt(m)))^2 on a response mapped to [-0.5, 0.5]
//   s2 ~ IG(nu / 2, nu lambda / 2),  P(s2 < s2_hat) = q
//
// s2_hat is the least-squares residual variance when n > d + 1, else the
// response variance.

#include <boost/math/distributions/chi_squared.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "bnt/bcart.hpp"
#include "bnt/dataset.hpp"
#include "bnt/error.hpp"
#include "bnt/random.hpp"

namespace bnt {

struct SumOfTreesConfig {
  std::size_t trees = 20;
  std::size_t iterations = 1250;
  std::size_t burn_in = 250;
  double k = 2.0;
  double nu = 3.0;
  double q = 0.9;

  void validate() const {
    if (trees < 1) throw ConfigError("sum of trees needs at least one tree");
    if (burn_in >= iterations) throw ConfigError("burn_in must be below iterations");
    if (!(k > 0.0) || !(nu > 0.0)) throw ConfigError("k and nu must be positive");
    if (!(q > 0.0 && q < 1.0)) throw ConfigError("q must lie in (0, 1)");
  }
};

struct SumOfTreesResult {
  InclusionProportions inclusion;
  double mean_splits = 0.0;  // splits per kept sample, all trees
  double mean_sigma2 = 0.0;  // on the [-0.5, 0.5] response scale
  std::size_t accepted = 0;
  std::size_t proposed = 0;
};

namespace detail {

struct EnsembleNode {
  int feature = -1;
  double threshold = 0.0;
  int left = -1, right = -1, parent = -1;
  int depth = 0;
  double mu = 0.0;
  bool live = true;

  bool is_leaf() const { return left < 0; }
};

class EnsembleTree {
 public:
  explicit EnsembleTree(std::size_t n) : leaf_of_(n, 0) { nodes_.push_back({}); }

  const std::vector<EnsembleNode>& nodes() const { return nodes_; }
  const std::vector<int>& leaf_of() const { return leaf_of_; }
  double value(std::size_t i) const { return nodes_[static_cast<std::size_t>(leaf_of_[i])].mu; }

  std::vector<int> leaves() const {
    std::vector<int> out;
    for (std::size_t k = 0; k < nodes_.size(); ++k) {
      if (nodes_[k].live && nodes_[k].is_leaf()) out.push_back(static_cast<int>(k));
    }
    return out;
  }

  // Internal nodes whose children are both leaves.
  std::vector<int> prunable() const {
    std::vector<int> out;
    for (std::size_t k = 0; k < nodes_.size(); ++k) {
      const auto& nd = nodes_[k];
      if (nd.live && !nd.is_leaf() && node(nd.left).is_leaf() && node(nd.right).is_leaf()) {
        out.push_back(static_cast<int>(k));
      }
    }
    return out;
  }

  const EnsembleNode& node(int k) const { return nodes_[static_cast<std::size_t>(k)]; }
  EnsembleNode& node(int k) { return nodes_[static_cast<std::size_t>(k)]; }

  void grow(int leaf, int feature, double threshold, const Matrix& x) {
    const int l = add_node(leaf), r = add_node(leaf);
    auto& nd = node(leaf);
    nd.feature = feature;
    nd.threshold = threshold;
    nd.left = l;
    nd.right = r;
    for (std::size_t i = 0; i < leaf_of_.size(); ++i) {
      if (leaf_of_[i] != leaf) continue;
      leaf_of_[i] = x(static_cast<Eigen::Index>(i), feature) <= threshold ? l : r;
    }
  }

  // Replaces the rule of an internal node whose children are both leaves.
  void change(int k, int feature, double threshold, const Matrix& x) {
    auto& nd = node(k);
    nd.feature = feature;
    nd.threshold = threshold;
    for (std::size_t i = 0; i < leaf_of_.size(); ++i) {
      if (leaf_of_[i] != nd.left && leaf_of_[i] != nd.right) continue;
      leaf_of_[i] = x(static_cast<Eigen::Index>(i), feature) <= threshold ? nd.left : nd.right;
    }
  }

  void prune(int k) {
    auto& nd = node(k);
    for (auto& v : leaf_of_) {
      if (v == nd.left || v == nd.right) v = k;
    }
    node(nd.left).live = false;
    node(nd.right).live = false;
    free_.push_back(nd.left);
    free_.push_back(nd.right);
    nd.left = nd.right = -1;
    nd.feature = -1;
  }

 private:
  int add_node(int parent) {
    EnsembleNode nd;
    nd.parent = parent;
    nd.depth = node(parent).depth + 1;
    if (!free_.empty()) {
      const int k = free_.back();
      free_.pop_back();
      node(k) = nd;
      return k;
    }
    nodes_.push_back(nd);
    return static_cast<int>(nodes_.size() - 1);
  }

  std::vector<EnsembleNode> nodes_;
  std::vector<int> leaf_of_;
  std::vector<int> free_;
};

// Log marginal of a leaf's residuals with mu integrated out, dropping terms
// that do not depend on the partition.
inline double ensemble_leaf_term(double count, double sum, double s2, double tau) {
  const double denom = s2 + count * tau;
  return 0.5 * std::log(s2 / denom) + tau * sum * sum / (2.0 * s2 * denom);
}

inline double least_squares_sigma2(const Matrix& x, const Vector& y) {
  const auto n = x.rows(), d = x.cols();
  auto variance = [&] { return (y.array() - y.mean()).square().sum() / static_cast<double>(std::max<Eigen::Index>(n - 1, 1)); };
  if (n <= d + 1) return variance();
  Matrix design(n, d + 1);
  design.col(0).setOnes();
  design.rightCols(d) = x;
  const Vector beta = design.colPivHouseholderQr().solve(y);
  const double s2 = (y - design * beta).squaredNorm() / static_cast<double>(n - d - 1);
  return s2 > 0.0 ? s2 : variance();
}

}  // namespace detail

/// Runs the sampler on `train` and returns per-sample inclusion proportions
/// pooled over all trees of each kept sample, averaged over kept samples.
inline SumOfTreesResult sum_of_trees_inclusion(const Dataset& train, const TreePrior& prior, const SumOfTreesConfig& cfg,
                                               std::uint64_t seed) {
  prior.validate();
  cfg.validate();
  const std::size_t n = train.n(), d = train.d();
  if (n < 2) throw DataError("sum of trees needs at least 2 rows");
  const Matrix& x = train.features;

  const double lo = train.response.minCoeff(), hi = train.response.maxCoeff();
  const double span = hi > lo ? hi - lo : 1.0;
  const Vector y = ((train.response.array() - lo) / span - 0.5).matrix();

  const double m = static_cast<double>(cfg.trees);
  const double tau = std::pow(0.5 / (cfg.k * std::sqrt(m)), 2.0);
  const double s2_hat = detail::least_squares_sigma2(x, y);
  const double chi = boost::math::quantile(boost::math::chi_squared(cfg.nu), 1.0 - cfg.q);
  const double lambda = s2_hat * chi / cfg.nu;
  double s2 = s2_hat;

  Rng rng(seed);
  std::vector<detail::EnsembleTree> trees(cfg.trees, detail::EnsembleTree(n));
  Vector fit = Vector::Zero(static_cast<Eigen::Index>(n));
  Vector resid(static_cast<Eigen::Index>(n));

  constexpr double p_grow = 2.5 / 9.0, p_prune = 2.5 / 9.0;
  auto log_split = [&](int depth) { return std::log(prior.alpha) - prior.beta * std::log1p(static_cast<double>(depth)); };
  auto log_stop = [&](int depth) { return std::log1p(-std::exp(log_split(depth))); };

  std::vector<std::size_t> rows;
  std::vector<double> vals;
  // Features with at least two distinct values among `rows`.
  auto available = [&](std::vector<int>& out) {
    out.clear();
    for (std::size_t j = 0; j < d; ++j) {
      const double first = x(static_cast<Eigen::Index>(rows[0]), static_cast<Eigen::Index>(j));
      for (auto i : rows) {
        if (x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) != first) {
          out.push_back(static_cast<int>(j));
          break;
        }
      }
    }
  };
  auto stats = [&](const detail::EnsembleTree& t, int leaf, double& count, double& sum) {
    count = 0.0;
    sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (t.leaf_of()[i] != leaf) continue;
      count += 1.0;
      sum += resid[static_cast<Eigen::Index>(i)];
    }
  };

  SumOfTreesResult out;
  out.inclusion.proportions.assign(d, 0.0);
  std::vector<double> counts(d);
  std::vector<int> feats;
  std::size_t kept = 0;

  for (std::size_t iter = 0; iter < cfg.iterations; ++iter) {
    for (auto& t : trees) {
      for (std::size_t i = 0; i < n; ++i) resid[static_cast<Eigen::Index>(i)] = y[static_cast<Eigen::Index>(i)] - fit[static_cast<Eigen::Index>(i)] + t.value(i);

      const auto leaves = t.leaves();
      const bool root_only = leaves.size() == 1;
      ++out.proposed;
      const double move = root_only ? 0.0 : rng.uniform();
      if (move < p_grow) {
        // GROW
        const int leaf = leaves[rng.index(leaves.size())];
        rows.clear();
        for (std::size_t i = 0; i < n; ++i) {
          if (t.leaf_of()[i] == leaf) rows.push_back(i);
        }
        available(feats);
        if (!feats.empty()) {
          const int j = feats[rng.index(feats.size())];
          vals.clear();
          for (auto i : rows) vals.push_back(x(static_cast<Eigen::Index>(i), j));
          std::sort(vals.begin(), vals.end());
          vals.erase(std::unique(vals.begin(), vals.end()), vals.end());
          const double thr = vals[rng.index(vals.size() - 1)];
          double nl = 0, sl = 0, nr = 0, sr = 0;
          for (auto i : rows) {
            const double r = resid[static_cast<Eigen::Index>(i)];
            if (x(static_cast<Eigen::Index>(i), j) <= thr) {
              nl += 1.0;
              sl += r;
            } else {
              nr += 1.0;
              sr += r;
            }
          }
          const int depth = t.node(leaf).depth;
          const int parent = t.node(leaf).parent;
          std::size_t nog_after = t.prunable().size() + 1;
          if (parent >= 0) {
            const auto& p = t.node(parent);
            const int sib = p.left == leaf ? p.right : p.left;
            if (t.node(sib).is_leaf()) --nog_after;
          }
          const double p_grow_now = root_only ? 1.0 : p_grow;
          const double log_ratio = std::log(p_prune / static_cast<double>(nog_after)) -
                                   std::log(p_grow_now / static_cast<double>(leaves.size())) + log_split(depth) +
                                   2.0 * log_stop(depth + 1) - log_stop(depth) +
                                   detail::ensemble_leaf_term(nl, sl, s2, tau) +
                                   detail::ensemble_leaf_term(nr, sr, s2, tau) -
                                   detail::ensemble_leaf_term(nl + nr, sl + sr, s2, tau);
          if (std::log(rng.uniform_open()) < log_ratio) {
            t.grow(leaf, j, thr, x);
            ++out.accepted;
          }
        }
      } else if (move < p_grow + p_prune) {
        // PRUNE
        const auto nog = t.prunable();
        const int k = nog[rng.index(nog.size())];
        const auto& nd = t.node(k);
        double nl, sl, nr, sr;
        stats(t, nd.left, nl, sl);
        stats(t, nd.right, nr, sr);
        const double p_grow_after = nd.parent < 0 ? 1.0 : p_grow;
        const double log_ratio = std::log(p_grow_after / static_cast<double>(leaves.size() - 1)) -
                                 std::log(p_prune / static_cast<double>(nog.size())) - log_split(nd.depth) -
                                 2.0 * log_stop(nd.depth + 1) + log_stop(nd.depth) +
                                 detail::ensemble_leaf_term(nl + nr, sl + sr, s2, tau) -
                                 detail::ensemble_leaf_term(nl, sl, s2, tau) -
                                 detail::ensemble_leaf_term(nr, sr, s2, tau);
        if (std::log(rng.uniform_open()) < log_ratio) {
          t.prune(k);
          ++out.accepted;
        }
      } else {
        // CHANGE: rule prior and proposal cancel, leaving the likelihood ratio.
        const auto nog = t.prunable();
        const int k = nog[rng.index(nog.size())];
        const int left = t.node(k).left, right = t.node(k).right;
        rows.clear();
        for (std::size_t i = 0; i < n; ++i) {
          if (t.leaf_of()[i] == left || t.leaf_of()[i] == right) rows.push_back(i);
        }
        available(feats);
        const int j = feats[rng.index(feats.size())];
        vals.clear();
        for (auto i : rows) vals.push_back(x(static_cast<Eigen::Index>(i), j));
        std::sort(vals.begin(), vals.end());
        vals.erase(std::unique(vals.begin(), vals.end()), vals.end());
        const double thr = vals[rng.index(vals.size() - 1)];
        double ol, osl, orr, osr;
        stats(t, left, ol, osl);
        stats(t, right, orr, osr);
        double nl = 0, sl = 0, nr = 0, sr = 0;
        for (auto i : rows) {
          const double r = resid[static_cast<Eigen::Index>(i)];
          if (x(static_cast<Eigen::Index>(i), j) <= thr) {
            nl += 1.0;
            sl += r;
          } else {
            nr += 1.0;
            sr += r;
          }
        }
        const double log_ratio = detail::ensemble_leaf_term(nl, sl, s2, tau) + detail::ensemble_leaf_term(nr, sr, s2, tau) -
                                 detail::ensemble_leaf_term(ol, osl, s2, tau) - detail::ensemble_leaf_term(orr, osr, s2, tau);
        if (std::log(rng.uniform_open()) < log_ratio) {
          t.change(k, j, thr, x);
          ++out.accepted;
        }
      }

      // Draw leaf values given the (possibly new) structure.
      for (int leaf : t.leaves()) {
        double c, s;
        stats(t, leaf, c, s);
        const double denom = s2 + c * tau;
        t.node(leaf).mu = tau * s / denom + std::sqrt(s2 * tau / denom) * rng.normal();
      }
      for (std::size_t i = 0; i < n; ++i) {
        fit[static_cast<Eigen::Index>(i)] = y[static_cast<Eigen::Index>(i)] - resid[static_cast<Eigen::Index>(i)] + t.value(i);
      }
    }

    const double sse = (y - fit).squaredNorm();
    s2 = 0.5 * (cfg.nu * lambda + sse) / rng.gamma(0.5 * (cfg.nu + static_cast<double>(n)));

    if (iter < cfg.burn_in) continue;
    ++kept;
    out.mean_sigma2 += s2;
    std::fill(counts.begin(), counts.end(), 0.0);
    double splits = 0.0;
    for (const auto& t : trees) {
      for (const auto& nd : t.nodes()) {
        if (!nd.live || nd.is_leaf()) continue;
        counts[static_cast<std::size_t>(nd.feature)] += 1.0;
        splits += 1.0;
      }
    }
    out.mean_splits += splits;
    if (splits == 0.0) continue;
    for (std::size_t j = 0; j < d; ++j) out.inclusion.proportions[j] += counts[j] / splits;
  }
  for (auto& p : out.inclusion.proportions) p /= static_cast<double>(kept);
  out.mean_splits /= static_cast<double>(kept);
  out.mean_sigma2 /= static_cast<double>(kept);
  return out;
}

}  // namespace bnt
