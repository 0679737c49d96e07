#pragma once

// Two-stage tree -> network regressors.
//
//   BNT-1: greedy CART picks features and supplies its fitted values; a
//          MAP-trained Bayesian network with Geometric-prior hidden size
//          predicts from [selected features, tree output].
//   BNT-2: Bayesian CART with permutation-null feature selection; a plain
//          network with sqrt(n / (d_m ln n)) hidden units predicts from
//          [selected features, tree output].
//
// Both take training data in original units, fit a min-max scaler on it,
// and predict in original units.

#include <nlohmann/json.hpp>

#include <cstdint>
#include <fstream>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "bnt/bcart.hpp"
#include "bnt/bnn.hpp"
#include "bnt/cart.hpp"
#include "bnt/dataset.hpp"
#include "bnt/error.hpp"
#include "bnt/mlp.hpp"
#include "bnt/selection.hpp"
#include "bnt/tree.hpp"

namespace bnt {

enum class BntVariant { bnt1, bnt2 };

inline const char* to_string(BntVariant v) { return v == BntVariant::bnt1 ? "BNT-1" : "BNT-2"; }

/// Column layout of the stage-2 input: selected original features in
/// ascending order, then the tree output rescaled by its training range.
struct AugmentedFeatureSpec {
  std::vector<std::size_t> selected;
  bool includes_tree_output = true;
  ColumnRange tree_output_range;
  bool fallback = false;  // stage 1 selected nothing; all features were used

  std::size_t d_m() const { return selected.size() + 1; }
};

struct BntModel {
  BntVariant variant = BntVariant::bnt1;
  RegressionTree stage1;
  AugmentedFeatureSpec feature_spec;
  Mlp stage2;
  std::optional<BnnModel> bnn;  // BNT-1 only
  ScalingSpec scaler;
  std::vector<std::string> feature_names;
  double stage2_objective = 0.0;
  std::size_t stage1_accepted = 0;  // BNT-2 chain acceptances

  std::size_t input_dim() const { return scaler.features.size(); }
  std::size_t hidden() const { return stage2.hidden(); }
};

struct Bnt1Config {
  std::size_t minsplit = 2;
  double geo_p = 0.6;
  std::optional<std::size_t> k_max;  // default_k_max(n, d_m) when unset
  BnnHyper hyper{};
  TrainConfig train{};
};

struct Bnt2Config {
  TreePrior tree_prior{};
  std::optional<LeafPrior> leaf_prior;  // LeafPrior::from_response on scaled y when unset
  SelectionConfig selection{};
  TrainConfig train{};
  std::uint64_t chain_seed = 0;
};

namespace detail {

inline Matrix assemble_inputs(const Dataset& scaled, const AugmentedFeatureSpec& spec, const Vector& tree_out) {
  Matrix z(static_cast<Eigen::Index>(scaled.n()), static_cast<Eigen::Index>(spec.d_m()));
  for (std::size_t i = 0; i < scaled.n(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    for (std::size_t c = 0; c < spec.selected.size(); ++c) {
      z(r, static_cast<Eigen::Index>(c)) = scaled.features(r, static_cast<Eigen::Index>(spec.selected[c]));
    }
    z(r, static_cast<Eigen::Index>(spec.selected.size())) = spec.tree_output_range.scale(tree_out[r]);
  }
  return z;
}

inline AugmentedFeatureSpec make_spec(std::vector<std::size_t> selected, std::size_t d, const Vector& tree_out) {
  AugmentedFeatureSpec spec;
  if (selected.empty()) {
    spec.fallback = true;
    selected.resize(d);
    for (std::size_t j = 0; j < d; ++j) selected[j] = j;
  }
  spec.selected = std::move(selected);
  spec.tree_output_range = fit_range(tree_out);
  return spec;
}

}  // namespace detail

/// Stage-2 input vector for one already-scaled row.
inline std::vector<double> augmented_row(const BntModel& model, std::span<const double> scaled_x) {
  const auto& spec = model.feature_spec;
  std::vector<double> z;
  z.reserve(spec.d_m());
  for (auto j : spec.selected) z.push_back(scaled_x[j]);
  z.push_back(spec.tree_output_range.scale(model.stage1.predict(scaled_x)));
  return z;
}

inline BntModel fit_bnt1(const Dataset& train, const Bnt1Config& cfg) {
  if (train.n() < 3) throw DataError("BNT-1 needs at least 3 training rows");
  BntModel model;
  model.variant = BntVariant::bnt1;
  model.feature_names = train.feature_names;
  model.scaler = fit_scaler(train);
  const Dataset scaled = apply_scaler(train, model.scaler);

  model.stage1 = fit_cart(scaled, cfg.minsplit);
  const Vector tree_out = predict_tree(model.stage1, scaled);
  model.feature_spec = detail::make_spec(used_features(model.stage1), scaled.d(), tree_out);
  const Matrix z = detail::assemble_inputs(scaled, model.feature_spec, tree_out);

  GeometricPrior prior{cfg.geo_p, cfg.k_max.value_or(default_k_max(scaled.n(), model.feature_spec.d_m()))};
  BnnModel bnn = select_k_geometric(z, scaled.response, prior, cfg.hyper, cfg.train);
  model.stage2 = bnn.net;
  model.stage2_objective = bnn.objective_at_map;
  model.bnn = std::move(bnn);
  return model;
}

inline BntModel fit_bnt2(const Dataset& train, const Bnt2Config& cfg) {
  if (train.n() < 3) throw DataError("BNT-2 needs at least 3 training rows");
  BntModel model;
  model.variant = BntVariant::bnt2;
  model.feature_names = train.feature_names;
  model.scaler = fit_scaler(train);
  const Dataset scaled = apply_scaler(train, model.scaler);

  const LeafPrior leaf_prior = cfg.leaf_prior.value_or(LeafPrior::from_response(scaled.response));
  ChainResult chain = run_chain(scaled, cfg.tree_prior, leaf_prior, cfg.selection.chain, cfg.chain_seed);
  model.stage1 = std::move(chain.best);
  model.stage1_accepted = chain.accepted;
  SelectionResult sel =
      local_threshold_select(scaled, cfg.tree_prior, leaf_prior, cfg.selection, derive_seed(cfg.chain_seed, 1));
  const Vector tree_out = predict_tree(model.stage1, scaled);
  model.feature_spec = detail::make_spec(std::move(sel.selected), scaled.d(), tree_out);
  const Matrix z = detail::assemble_inputs(scaled, model.feature_spec, tree_out);

  const std::size_t k = optimal_hidden_neurons(scaled.n(), model.feature_spec.d_m());
  const TrainResult fit = train_ann_detailed(z, scaled.response, k, cfg.train);
  model.stage2 = fit.net;
  model.stage2_objective = fit.best_risk;
  return model;
}

/// Prediction in original response units from an original-unit feature row.
inline double predict_bnt(const BntModel& model, std::span<const double> x) {
  if (x.size() != model.input_dim()) throw DataError("BNT input dimension mismatch");
  const auto scaled = model.scaler.scale_row(x);
  return model.scaler.response.invert(forward(model.stage2, augmented_row(model, scaled)));
}

inline Vector predict_bnt(const BntModel& model, const Dataset& ds) {
  Vector out(static_cast<Eigen::Index>(ds.n()));
  for (std::size_t i = 0; i < ds.n(); ++i) out[static_cast<Eigen::Index>(i)] = predict_bnt(model, ds.row(i));
  return out;
}

/// Structured text summary: variant, selected features, d_m, k, objective.
inline std::string summary(const BntModel& model) {
  std::ostringstream os;
  os.precision(10);
  os << "variant: " << to_string(model.variant) << '\n';
  os << "selected_count: " << model.feature_spec.selected.size() << '\n';
  os << "selected:";
  for (auto j : model.feature_spec.selected) {
    os << ' ' << (j < model.feature_names.size() ? model.feature_names[j] : "x" + std::to_string(j));
  }
  os << '\n';
  os << "fallback: " << (model.feature_spec.fallback ? "yes" : "no") << '\n';
  os << "d_m: " << model.feature_spec.d_m() << '\n';
  os << "hidden_k: " << model.hidden() << '\n';
  os << "stage2_objective: " << model.stage2_objective << '\n';
  os << "stage1_leaves: " << model.stage1.leaf_count() << '\n';
  return os.str();
}

// ---------------------------------------------------------------------------
// JSON persistence. Doubles are written in shortest round-trip form, so a
// reloaded model predicts bit-for-bit identically.

inline nlohmann::json to_json(const RegressionTree& tree) {
  nlohmann::json nodes = nlohmann::json::array();
  for (const auto& n : tree.nodes()) {
    nlohmann::json j;
    if (n.is_leaf()) {
      j["mean"] = n.leaf_mean;
      j["count"] = n.leaf_count;
      if (n.leaf_sigma2) j["sigma2"] = *n.leaf_sigma2;
    } else {
      j["feature"] = n.rule->feature;
      j["threshold"] = n.rule->threshold;
      j["left"] = n.left;
      j["right"] = n.right;
    }
    nodes.push_back(std::move(j));
  }
  return {{"input_dim", tree.input_dim()}, {"nodes", std::move(nodes)}};
}

inline RegressionTree tree_from_json(const nlohmann::json& j) {
  const auto& nodes = j.at("nodes");
  RegressionTree tree(j.at("input_dim").get<std::size_t>());
  // Rebuild by replaying splits in preorder so parent/depth links are derived.
  std::vector<std::pair<std::size_t, int>> stack{{0, 0}};
  while (!stack.empty()) {
    auto [src, dst] = stack.back();
    stack.pop_back();
    const auto& n = nodes.at(src);
    if (n.contains("feature")) {
      auto [l, r] = tree.split(dst, SplitRule{n.at("feature").get<std::size_t>(), n.at("threshold").get<double>()});
      stack.emplace_back(n.at("right").get<std::size_t>(), r);
      stack.emplace_back(n.at("left").get<std::size_t>(), l);
    } else {
      TreeNode& leaf = tree.node(dst);
      leaf.leaf_mean = n.at("mean").get<double>();
      leaf.leaf_count = n.at("count").get<std::size_t>();
      if (n.contains("sigma2")) leaf.leaf_sigma2 = n.at("sigma2").get<double>();
    }
  }
  return tree;
}

inline nlohmann::json to_json(const BntModel& m) {
  nlohmann::json scaler = nlohmann::json::array();
  for (const auto& r : m.scaler.features) scaler.push_back({r.min, r.max});
  return {
      {"variant", to_string(m.variant)},
      {"feature_names", m.feature_names},
      {"scaler", {{"features", scaler}, {"response", {m.scaler.response.min, m.scaler.response.max}}}},
      {"stage1", to_json(m.stage1)},
      {"feature_spec",
       {{"selected", m.feature_spec.selected},
        {"fallback", m.feature_spec.fallback},
        {"tree_output_range", {m.feature_spec.tree_output_range.min, m.feature_spec.tree_output_range.max}}}},
      {"stage2", {{"input_dim", m.stage2.input_dim()}, {"hidden", m.stage2.hidden()}, {"params", m.stage2.flatten()}}},
      {"stage2_objective", m.stage2_objective},
  };
}

inline BntModel bnt_model_from_json(const nlohmann::json& j) {
  BntModel m;
  const auto variant = j.at("variant").get<std::string>();
  if (variant == "BNT-1") m.variant = BntVariant::bnt1;
  else if (variant == "BNT-2") m.variant = BntVariant::bnt2;
  else throw DataError("unknown model variant '" + variant + "'");
  m.feature_names = j.at("feature_names").get<std::vector<std::string>>();
  for (const auto& r : j.at("scaler").at("features")) m.scaler.features.push_back({r.at(0).get<double>(), r.at(1).get<double>()});
  const auto& resp = j.at("scaler").at("response");
  m.scaler.response = {resp.at(0).get<double>(), resp.at(1).get<double>()};
  m.stage1 = tree_from_json(j.at("stage1"));
  const auto& spec = j.at("feature_spec");
  m.feature_spec.selected = spec.at("selected").get<std::vector<std::size_t>>();
  m.feature_spec.fallback = spec.at("fallback").get<bool>();
  m.feature_spec.tree_output_range = {spec.at("tree_output_range").at(0).get<double>(),
                                      spec.at("tree_output_range").at(1).get<double>()};
  const auto& net = j.at("stage2");
  m.stage2 = Mlp::unflatten(net.at("input_dim").get<std::size_t>(), net.at("hidden").get<std::size_t>(),
                            net.at("params").get<std::vector<double>>());
  m.stage2_objective = j.at("stage2_objective").get<double>();
  if (m.stage2.input_dim() != m.feature_spec.d_m()) throw DataError("stage-2 input dimension disagrees with feature spec");
  return m;
}

inline void save_model(const BntModel& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError(path + ": cannot open for writing");
  out << to_json(m).dump(2) << '\n';
}

inline BntModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError(path + ": file not found or unreadable");
  return bnt_model_from_json(nlohmann::json::parse(in));
}

}  // namespace bnt
