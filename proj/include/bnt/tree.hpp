#pragma once

// Binary regression tree shared by the greedy (CART) and Bayesian (BCART)
// fitters. Nodes live in a flat vector; index 0 is always the root.

#include <algorithm>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "bnt/dataset.hpp"
#include "bnt/error.hpp"

namespace bnt {

/// x[feature] <= threshold routes left.
struct SplitRule {
  std::size_t feature = 0;
  double threshold = 0.0;

  bool goes_left(std::span<const double> x) const { return x[feature] <= threshold; }
  friend bool operator==(const SplitRule&, const SplitRule&) = default;
};

struct TreeNode {
  std::optional<SplitRule> rule;
  int left = -1;
  int right = -1;
  int parent = -1;
  int depth = 0;
  double leaf_mean = 0.0;
  std::size_t leaf_count = 0;
  std::optional<double> leaf_sigma2;

  bool is_leaf() const { return !rule.has_value(); }
};

class RegressionTree {
 public:
  RegressionTree() : RegressionTree(0) {}

  explicit RegressionTree(std::size_t input_dim, double root_mean = 0.0, std::size_t root_count = 0)
      : input_dim_(input_dim) {
    TreeNode root;
    root.leaf_mean = root_mean;
    root.leaf_count = root_count;
    nodes_.push_back(root);
  }

  std::size_t input_dim() const { return input_dim_; }
  const std::vector<TreeNode>& nodes() const { return nodes_; }
  const TreeNode& node(int i) const { return nodes_[static_cast<std::size_t>(i)]; }
  TreeNode& node(int i) { return nodes_[static_cast<std::size_t>(i)]; }
  std::size_t size() const { return nodes_.size(); }

  std::vector<int> leaves() const {
    std::vector<int> out;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      if (nodes_[i].is_leaf()) out.push_back(static_cast<int>(i));
    }
    return out;
  }

  std::vector<int> internal_nodes() const {
    std::vector<int> out;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      if (!nodes_[i].is_leaf()) out.push_back(static_cast<int>(i));
    }
    return out;
  }

  std::size_t leaf_count() const {
    return static_cast<std::size_t>(std::count_if(nodes_.begin(), nodes_.end(), [](const TreeNode& n) { return n.is_leaf(); }));
  }

  std::size_t split_count() const { return nodes_.size() - leaf_count(); }

  int max_depth() const {
    int depth = 0;
    for (const auto& n : nodes_) depth = std::max(depth, n.depth);
    return depth;
  }

  int find_leaf(std::span<const double> x) const {
    int cur = 0;
    while (!node(cur).is_leaf()) {
      const TreeNode& n = node(cur);
      cur = n.rule->goes_left(x) ? n.left : n.right;
    }
    return cur;
  }

  double predict(std::span<const double> x) const {
    if (x.size() != input_dim_) throw DataError("tree input dimension mismatch");
    return node(find_leaf(x)).leaf_mean;
  }

  /// Turns a leaf into an internal node with two fresh leaf children.
  std::pair<int, int> split(int leaf, SplitRule rule) {
    if (!node(leaf).is_leaf()) throw Error("split() requires a leaf");
    if (rule.feature >= input_dim_) throw Error("split feature out of range");
    const int depth = node(leaf).depth + 1;
    TreeNode child;
    child.parent = leaf;
    child.depth = depth;
    const int l = static_cast<int>(nodes_.size());
    nodes_.push_back(child);
    nodes_.push_back(child);
    TreeNode& n = node(leaf);
    n.rule = rule;
    n.left = l;
    n.right = l + 1;
    n.leaf_sigma2.reset();
    return {l, l + 1};
  }

  /// Collapses the subtree under `target` so that it becomes a leaf. Node
  /// indices are renumbered in preorder.
  void prune(int target) {
    node(target).rule.reset();
    node(target).leaf_sigma2.reset();
    std::vector<TreeNode> kept;
    kept.reserve(nodes_.size());
    // (old index, new parent index)
    std::vector<std::pair<int, int>> stack{{0, -1}};
    while (!stack.empty()) {
      auto [old, parent] = stack.back();
      stack.pop_back();
      TreeNode n = node(old);
      const int idx = static_cast<int>(kept.size());
      n.parent = parent;
      if (parent >= 0) {
        TreeNode& p = kept[static_cast<std::size_t>(parent)];
        if (p.left == -2) p.left = idx; else p.right = idx;
      }
      if (n.is_leaf()) {
        n.left = n.right = -1;
        kept.push_back(n);
      } else {
        const int l = n.left, r = n.right;
        n.left = -2;
        n.right = -2;
        kept.push_back(n);
        stack.emplace_back(r, idx);
        stack.emplace_back(l, idx);
      }
    }
    nodes_ = std::move(kept);
  }

  /// Internal nodes whose two children are both leaves.
  std::vector<int> prunable_nodes() const {
    std::vector<int> out;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      const TreeNode& n = nodes_[i];
      if (!n.is_leaf() && node(n.left).is_leaf() && node(n.right).is_leaf()) out.push_back(static_cast<int>(i));
    }
    return out;
  }

  /// Canonical preorder description of the partition (rules only, no leaf
  /// values). Two trees with equal keys route every input identically.
  std::string structure_key() const {
    std::ostringstream os;
    os.precision(17);
    write_key(os, 0);
    return os.str();
  }

 private:
  void write_key(std::ostringstream& os, int i) const {
    const TreeNode& n = node(i);
    if (n.is_leaf()) {
      os << '.';
      return;
    }
    os << '(' << n.rule->feature << ':' << n.rule->threshold << ' ';
    write_key(os, n.left);
    os << ' ';
    write_key(os, n.right);
    os << ')';
  }

  std::size_t input_dim_ = 0;
  std::vector<TreeNode> nodes_;
};

inline double predict_tree(const RegressionTree& tree, std::span<const double> x) { return tree.predict(x); }

inline Vector predict_tree(const RegressionTree& tree, const Dataset& ds) {
  if (ds.d() != tree.input_dim()) throw DataError("tree input dimension mismatch");
  Vector out(static_cast<Eigen::Index>(ds.n()));
  for (std::size_t i = 0; i < ds.n(); ++i) out[static_cast<Eigen::Index>(i)] = tree.predict(ds.row(i));
  return out;
}

/// Feature indices used by at least one split, ascending.
inline std::vector<std::size_t> used_features(const RegressionTree& tree) {
  std::set<std::size_t> used;
  for (const auto& n : tree.nodes()) {
    if (!n.is_leaf()) used.insert(n.rule->feature);
  }
  return {used.begin(), used.end()};
}

/// Indented human-readable dump, stable for a given tree.
inline std::string to_text(const RegressionTree& tree, std::span<const std::string> names = {}) {
  std::ostringstream os;
  os.precision(10);
  std::vector<std::pair<int, int>> stack{{0, 0}};
  while (!stack.empty()) {
    auto [i, indent] = stack.back();
    stack.pop_back();
    const TreeNode& n = tree.node(i);
    os << std::string(static_cast<std::size_t>(indent) * 2, ' ');
    if (n.is_leaf()) {
      os << "leaf mean=" << n.leaf_mean << " count=" << n.leaf_count;
      if (n.leaf_sigma2) os << " sigma2=" << *n.leaf_sigma2;
      os << '\n';
    } else {
      os << "split ";
      if (n.rule->feature < names.size()) os << names[n.rule->feature];
      else os << 'x' << n.rule->feature;
      os << " <= " << n.rule->threshold << '\n';
      stack.emplace_back(n.right, indent + 1);
      stack.emplace_back(n.left, indent + 1);
    }
  }
  return os.str();
}

}  // namespace bnt
