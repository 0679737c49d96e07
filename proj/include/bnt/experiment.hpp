#pragma once

// Benchmark protocol: seeded 70:30 splits per dataset, every requested
// model fit on each split, metrics in original units averaged over repeats.
//
// Config files are `key = value` lines; '#' starts a comment.
//
//   dataset.<name>.path       CSV path, relative to the config file
//   dataset.<name>.response   response column
//   models                    comma list of CART BCART ANN BNN BNT1@<p> BNT2
//   n_repeats                 10
//   train_fraction            0.7
//   minsplit_fraction         0.1
//   base_seed                 0
//   chain.iterations / chain.burn_in / chain.thin
//   tree.alpha / tree.beta / leaf.nu / leaf.a
//   selection.permutations / selection.level / selection.engine (sum_of_trees|single_tree)
//   selection.trees / selection.iterations / selection.burn_in / selection.observed_runs
//   ann.epochs / ann.learning_rate / ann.optimizer (rprop|gd) / ann.hidden
//   bnn.epochs / bnn.learning_rate / bnn.optimizer / bnn.hidden
//   bnn.sigma_p / bnn.sigma_l / bnn.evidence_updates / bnn.k_max

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "bnt/bcart.hpp"
#include "bnt/bnn.hpp"
#include "bnt/cart.hpp"
#include "bnt/dataset.hpp"
#include "bnt/error.hpp"
#include "bnt/metrics.hpp"
#include "bnt/mlp.hpp"
#include "bnt/pipeline.hpp"
#include "bnt/selection.hpp"
#include "bnt/random.hpp"

namespace bnt {

struct DatasetSource {
  std::string name;
  std::string path;
  std::string response;
};

struct ModelSettings {
  ChainConfig chain{};
  TreePrior tree_prior{};
  double leaf_nu = 3.0;
  double leaf_a = 1.0;
  SelectionConfig selection{};
  TrainConfig ann{};
  std::size_t ann_hidden = 2;
  TrainConfig bnn{};
  std::size_t bnn_hidden = 2;
  BnnHyper hyper{};
  std::optional<std::size_t> k_max;
};

struct ExperimentConfig {
  std::vector<DatasetSource> datasets;
  std::vector<std::string> models;
  std::size_t n_repeats = 10;
  double train_fraction = 0.7;
  double minsplit_fraction = 0.1;
  std::uint64_t base_seed = 0;
  ModelSettings settings{};

  void validate() const {
    if (datasets.empty()) throw ConfigError("config names no dataset");
    if (models.empty()) throw ConfigError("config names no model");
    if (n_repeats < 1) throw ConfigError("n_repeats must be at least 1");
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) throw ConfigError("train_fraction must lie in (0, 1)");
    if (!(minsplit_fraction > 0.0 && minsplit_fraction < 1.0)) throw ConfigError("minsplit_fraction must lie in (0, 1)");
    for (const auto& m : models) parse_model_name(m);
    for (const auto& d : datasets) {
      if (d.path.empty()) throw ConfigError("dataset '" + d.name + "' has no path");
      if (d.response.empty()) throw ConfigError("dataset '" + d.name + "' has no response");
    }
    settings.chain.validate();
    settings.selection.validate();
    settings.ann.validate();
    settings.bnn.validate();
    settings.hyper.validate();
    settings.tree_prior.validate();
  }

  struct ModelId {
    std::string kind;  // CART, BCART, ANN, BNN, BNT1, BNT2
    double p = 0.0;    // BNT1 only
  };

  static ModelId parse_model_name(const std::string& name) {
    static const char* plain[] = {"CART", "BCART", "ANN", "BNN", "BNT2"};
    for (const char* k : plain) {
      if (name == k) return {k, 0.0};
    }
    if (name.rfind("BNT1@", 0) == 0) {
      const std::string rest = name.substr(5);
      double p = 0.0;
      auto [ptr, ec] = std::from_chars(rest.data(), rest.data() + rest.size(), p);
      if (ec == std::errc{} && ptr == rest.data() + rest.size() && p > 0.0 && p < 1.0) return {"BNT1", p};
    }
    throw ConfigError("unknown model '" + name + "'");
  }
};

namespace detail {

template <class T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc{} || ptr != value.data() + value.size()) {
    throw ConfigError("bad value '" + value + "' for " + key);
  }
  return out;
}

inline Optimizer parse_optimizer(const std::string& key, const std::string& value) {
  if (value == "rprop") return Optimizer::rprop;
  if (value == "gd") return Optimizer::gd;
  throw ConfigError("bad value '" + value + "' for " + key);
}

inline SelectionEngine parse_engine(const std::string& key, const std::string& value) {
  if (value == "sum_of_trees") return SelectionEngine::sum_of_trees;
  if (value == "single_tree") return SelectionEngine::single_tree;
  throw ConfigError("bad value '" + value + "' for " + key);
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, ',')) {
    auto t = std::string(trim(cur));
    if (!t.empty()) out.push_back(t);
  }
  return out;
}

}  // namespace detail

/// Parses the key=value format. Relative dataset paths resolve against
/// `base_dir`.
inline ExperimentConfig parse_config(std::istream& in, const std::filesystem::path& base_dir = {}) {
  ExperimentConfig cfg;
  auto& s = cfg.settings;
  std::map<std::string, DatasetSource> sets;
  std::vector<std::string> order;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    const auto body = detail::trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string_view::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    const std::string key(detail::trim(body.substr(0, eq)));
    const std::string value(detail::trim(body.substr(eq + 1)));
    using detail::parse_engine;
    using detail::parse_number;
    using detail::parse_optimizer;

    if (key.rfind("dataset.", 0) == 0) {
      const auto dot = key.rfind('.');
      const std::string name = key.substr(8, dot - 8);
      const std::string field = key.substr(dot + 1);
      if (name.empty() || dot <= 8) throw ConfigError("line " + std::to_string(lineno) + ": malformed dataset key");
      if (!sets.count(name)) order.push_back(name);
      auto& ds = sets[name];
      ds.name = name;
      if (field == "path") {
        std::filesystem::path p(value);
        ds.path = (p.is_relative() && !base_dir.empty() ? base_dir / p : p).string();
      } else if (field == "response") {
        ds.response = value;
      } else {
        throw ConfigError("line " + std::to_string(lineno) + ": unknown dataset field '" + field + "'");
      }
    } else if (key == "models") {
      cfg.models = detail::split_list(value);
    } else if (key == "n_repeats") {
      cfg.n_repeats = parse_number<std::size_t>(key, value);
    } else if (key == "train_fraction") {
      cfg.train_fraction = parse_number<double>(key, value);
    } else if (key == "minsplit_fraction") {
      cfg.minsplit_fraction = parse_number<double>(key, value);
    } else if (key == "base_seed") {
      cfg.base_seed = parse_number<std::uint64_t>(key, value);
    } else if (key == "chain.iterations") {
      s.chain.iterations = parse_number<std::size_t>(key, value);
    } else if (key == "chain.burn_in") {
      s.chain.burn_in = parse_number<std::size_t>(key, value);
    } else if (key == "chain.thin") {
      s.chain.thin = parse_number<std::size_t>(key, value);
    } else if (key == "tree.alpha") {
      s.tree_prior.alpha = parse_number<double>(key, value);
    } else if (key == "tree.beta") {
      s.tree_prior.beta = parse_number<double>(key, value);
    } else if (key == "leaf.nu") {
      s.leaf_nu = parse_number<double>(key, value);
    } else if (key == "leaf.a") {
      s.leaf_a = parse_number<double>(key, value);
    } else if (key == "selection.permutations") {
      s.selection.permutations = parse_number<std::size_t>(key, value);
    } else if (key == "selection.level") {
      s.selection.level = parse_number<double>(key, value);
    } else if (key == "selection.engine") {
      s.selection.engine = parse_engine(key, value);
    } else if (key == "selection.trees") {
      s.selection.ensemble.trees = parse_number<std::size_t>(key, value);
    } else if (key == "selection.iterations") {
      s.selection.ensemble.iterations = parse_number<std::size_t>(key, value);
    } else if (key == "selection.burn_in") {
      s.selection.ensemble.burn_in = parse_number<std::size_t>(key, value);
    } else if (key == "selection.observed_runs") {
      s.selection.observed_runs = parse_number<std::size_t>(key, value);
    } else if (key == "ann.epochs") {
      s.ann.epochs = parse_number<std::size_t>(key, value);
    } else if (key == "ann.learning_rate") {
      s.ann.learning_rate = parse_number<double>(key, value);
    } else if (key == "ann.optimizer") {
      s.ann.optimizer = parse_optimizer(key, value);
    } else if (key == "ann.hidden") {
      s.ann_hidden = parse_number<std::size_t>(key, value);
    } else if (key == "bnn.epochs") {
      s.bnn.epochs = parse_number<std::size_t>(key, value);
    } else if (key == "bnn.learning_rate") {
      s.bnn.learning_rate = parse_number<double>(key, value);
    } else if (key == "bnn.optimizer") {
      s.bnn.optimizer = parse_optimizer(key, value);
    } else if (key == "bnn.hidden") {
      s.bnn_hidden = parse_number<std::size_t>(key, value);
    } else if (key == "bnn.sigma_p") {
      s.hyper.sigma_p = parse_number<double>(key, value);
    } else if (key == "bnn.sigma_l") {
      s.hyper.sigma_l = parse_number<double>(key, value);
    } else if (key == "bnn.evidence_updates") {
      s.hyper.evidence_updates = parse_number<std::size_t>(key, value);
    } else if (key == "bnn.k_max") {
      s.k_max = parse_number<std::size_t>(key, value);
    } else {
      throw ConfigError("line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    }
  }
  for (const auto& name : order) cfg.datasets.push_back(sets[name]);
  cfg.validate();
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path + ": cannot open config");
  return parse_config(in, std::filesystem::path(path).parent_path());
}

// ---------------------------------------------------------------------------

struct RepeatResult {
  std::string dataset;
  std::string model;
  std::size_t repeat = 0;
  bool ok = false;
  std::string error;
  double features_used = 0.0;
  MetricsReport metrics;
};

struct ResultRow {
  std::string dataset;
  std::string model;
  double features_used = 0.0;
  double mae = 0.0, mape = 0.0, rmse = 0.0;
  std::optional<double> r2, adj_r2;
  std::size_t succeeded = 0;
  std::size_t failed = 0;
  std::vector<RepeatResult> repeats;
};

/// Seed for one model on one repeat; independent of which other models run.
inline std::uint64_t model_seed(std::uint64_t base_seed, std::size_t repeat, const std::string& model) {
  return derive_seed(derive_seed(base_seed, repeat), stable_hash(model));
}

/// Fits one model on one split and scores it on the test side.
inline RepeatResult run_cell(const SplitPair& split, const std::string& model, const ExperimentConfig& cfg,
                             std::uint64_t seed) {
  RepeatResult out;
  out.model = model;
  const auto id = ExperimentConfig::parse_model_name(model);
  const auto& s = cfg.settings;
  const Dataset& train = split.train;
  const Dataset& test = split.test;
  const std::size_t d = train.d();
  Vector yhat(static_cast<Eigen::Index>(test.n()));
  std::size_t d_used = d;

  if (id.kind == "BNT1" || id.kind == "BNT2") {
    BntModel m;
    if (id.kind == "BNT1") {
      Bnt1Config bc;
      bc.minsplit = minsplit_from_fraction(train.n(), cfg.minsplit_fraction);
      bc.geo_p = id.p;
      bc.k_max = s.k_max;
      bc.hyper = s.hyper;
      bc.train = s.bnn;
      bc.train.seed = seed;
      m = fit_bnt1(train, bc);
    } else {
      Bnt2Config bc;
      bc.tree_prior = s.tree_prior;
      bc.selection = s.selection;
      bc.selection.chain = s.chain;
      bc.train = s.ann;
      bc.train.seed = derive_seed(seed, 1);
      bc.chain_seed = derive_seed(seed, 2);
      Vector ys = apply_scaler(train, fit_scaler(train)).response;
      bc.leaf_prior = LeafPrior::from_response(ys, s.leaf_nu, s.leaf_a);
      m = fit_bnt2(train, bc);
    }
    yhat = predict_bnt(m, test);
    d_used = m.feature_spec.d_m();
    out.features_used = static_cast<double>(d_used);
  } else {
    const ScalingSpec scaler = fit_scaler(train);
    const Dataset tr = apply_scaler(train, scaler);
    const Dataset te = apply_scaler(test, scaler);
    Vector scaled_hat(static_cast<Eigen::Index>(te.n()));
    if (id.kind == "CART" || id.kind == "BCART") {
      RegressionTree tree;
      if (id.kind == "CART") {
        tree = fit_cart(tr, minsplit_from_fraction(tr.n(), cfg.minsplit_fraction));
      } else {
        const LeafPrior lp = LeafPrior::from_response(tr.response, s.leaf_nu, s.leaf_a);
        tree = run_chain(tr, s.tree_prior, lp, s.chain, seed).best;
      }
      scaled_hat = predict_tree(tree, te);
      out.features_used = static_cast<double>(used_features(tree).size());
    } else {
      Mlp net;
      if (id.kind == "ANN") {
        TrainConfig tc = s.ann;
        tc.seed = seed;
        net = train_ann(tr, s.ann_hidden, tc);
      } else {
        TrainConfig tc = s.bnn;
        tc.seed = seed;
        net = train_bnn_fixed_k(tr, s.bnn_hidden, s.hyper, tc).net;
      }
      scaled_hat = forward(net, te.features);
      out.features_used = static_cast<double>(d);
    }
    yhat = invert_response(scaler, scaled_hat);
  }
  out.metrics = compute_metrics(test.response, yhat, d_used);
  out.ok = true;
  return out;
}

namespace detail {

inline ResultRow aggregate(std::vector<RepeatResult> repeats) {
  ResultRow row;
  row.dataset = repeats.front().dataset;
  row.model = repeats.front().model;
  double r2_sum = 0.0, adj_sum = 0.0;
  std::size_t r2_n = 0, adj_n = 0;
  for (const auto& r : repeats) {
    if (!r.ok) {
      ++row.failed;
      continue;
    }
    ++row.succeeded;
    row.features_used += r.features_used;
    row.mae += r.metrics.mae;
    row.mape += r.metrics.mape;
    row.rmse += r.metrics.rmse;
    if (r.metrics.r2) r2_sum += *r.metrics.r2, ++r2_n;
    if (r.metrics.adj_r2) adj_sum += *r.metrics.adj_r2, ++adj_n;
  }
  if (row.succeeded) {
    const double k = static_cast<double>(row.succeeded);
    row.features_used /= k;
    row.mae /= k;
    row.mape /= k;
    row.rmse /= k;
  }
  if (r2_n) row.r2 = r2_sum / static_cast<double>(r2_n);
  if (adj_n) row.adj_r2 = adj_sum / static_cast<double>(adj_n);
  row.repeats = std::move(repeats);
  return row;
}

}  // namespace detail

/// Runs every (dataset, repeat, model) cell, up to `jobs` at a time. Rows
/// come back in config order whatever the completion order. Model failures
/// are recorded per repeat; dataset load failures throw.
inline std::vector<ResultRow> run_experiment(const ExperimentConfig& cfg, std::size_t jobs = 1) {
  cfg.validate();
  struct Cell {
    std::size_t dataset, repeat, model;
  };
  std::vector<std::vector<SplitPair>> splits;
  std::vector<Cell> cells;
  for (std::size_t di = 0; di < cfg.datasets.size(); ++di) {
    const auto& src = cfg.datasets[di];
    Dataset ds;
    try {
      ds = load_dataset(src.path, src.response);
    } catch (const DataError& e) {
      throw ConfigError("dataset '" + src.name + "': " + e.what());
    }
    auto& per = splits.emplace_back();
    for (std::size_t r = 0; r < cfg.n_repeats; ++r) {
      per.push_back(shuffle_split(ds, cfg.train_fraction, cfg.base_seed + r));
      for (std::size_t m = 0; m < cfg.models.size(); ++m) cells.push_back({di, r, m});
    }
  }

  std::vector<RepeatResult> results(cells.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      const auto& c = cells[i];
      const auto& model = cfg.models[c.model];
      RepeatResult r;
      try {
        r = run_cell(splits[c.dataset][c.repeat], model, cfg, model_seed(cfg.base_seed, c.repeat, model));
      } catch (const std::exception& e) {
        r.ok = false;
        r.error = e.what();
      }
      r.model = model;
      r.dataset = cfg.datasets[c.dataset].name;
      r.repeat = c.repeat;
      results[i] = std::move(r);
    }
  };
  jobs = std::clamp<std::size_t>(jobs, 1, std::max<std::size_t>(1, cells.size()));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < jobs; ++t) pool.emplace_back(worker);
  }

  std::vector<ResultRow> rows;
  for (std::size_t di = 0; di < cfg.datasets.size(); ++di) {
    for (std::size_t m = 0; m < cfg.models.size(); ++m) {
      std::vector<RepeatResult> reps;
      for (std::size_t i = 0; i < cells.size(); ++i) {
        if (cells[i].dataset == di && cells[i].model == m) reps.push_back(results[i]);
      }
      rows.push_back(detail::aggregate(std::move(reps)));
    }
  }
  return rows;
}

inline std::size_t failure_count(const std::vector<ResultRow>& rows) {
  std::size_t n = 0;
  for (const auto& r : rows) n += r.failed;
  return n;
}

// ---------------------------------------------------------------------------
// Reports

enum class ReportFormat { table, csv };

namespace detail {

inline std::string fmt_exact(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string fmt_exact(const std::optional<double>& v) { return v ? fmt_exact(*v) : "NA"; }

inline std::string fmt_fixed(const std::optional<double>& v, int digits) {
  if (!v) return "NA";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", digits, *v);
  return buf;
}

inline std::string csv_quote(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + '"';
}

}  // namespace detail

/// Tables-2/3 layout: dataset, model, features used, MAE, MAPE, RMSE, R2,
/// adjusted R2.
inline void write_table(std::ostream& os, const std::vector<ResultRow>& rows) {
  os << std::left << std::setw(12) << "Dataset" << std::setw(12) << "Model" << std::right << std::setw(10) << "Features"
     << std::setw(10) << "MAE" << std::setw(10) << "MAPE" << std::setw(10) << "RMSE" << std::setw(10) << "R2"
     << std::setw(10) << "AdjR2" << '\n';
  for (const auto& r : rows) {
    os << std::left << std::setw(12) << r.dataset << std::setw(12) << r.model << std::right << std::setw(10)
       << detail::fmt_fixed(r.features_used, 1) << std::setw(10) << detail::fmt_fixed(r.mae, 3) << std::setw(10)
       << detail::fmt_fixed(r.mape, 3) << std::setw(10) << detail::fmt_fixed(r.rmse, 3) << std::setw(10)
       << detail::fmt_fixed(r.r2, 3) << std::setw(10) << detail::fmt_fixed(r.adj_r2, 3);
    if (r.failed) os << "  (" << r.failed << " failed)";
    os << '\n';
  }
}

inline void write_summary_csv(std::ostream& os, const std::vector<ResultRow>& rows) {
  os << "dataset,model,features_used,mae,mape,rmse,r2,adj_r2,succeeded,failed\n";
  for (const auto& r : rows) {
    os << detail::csv_quote(r.dataset) << ',' << detail::csv_quote(r.model) << ',' << detail::fmt_exact(r.features_used)
       << ',' << detail::fmt_exact(r.mae) << ',' << detail::fmt_exact(r.mape) << ',' << detail::fmt_exact(r.rmse) << ','
       << detail::fmt_exact(r.r2) << ',' << detail::fmt_exact(r.adj_r2) << ',' << r.succeeded << ',' << r.failed
       << '\n';
  }
}

inline void write_repeats_csv(std::ostream& os, const std::vector<ResultRow>& rows) {
  os << "dataset,model,repeat,status,features_used,d_used,mae,mape,rmse,r2,adj_r2,mape_skipped,error\n";
  for (const auto& row : rows) {
    for (const auto& r : row.repeats) {
      os << detail::csv_quote(r.dataset) << ',' << detail::csv_quote(r.model) << ',' << r.repeat << ','
         << (r.ok ? "ok" : "failed") << ',';
      if (r.ok) {
        const auto& m = r.metrics;
        os << detail::fmt_exact(r.features_used) << ',' << m.d_used << ',' << detail::fmt_exact(m.mae) << ','
           << detail::fmt_exact(m.mape) << ',' << detail::fmt_exact(m.rmse) << ',' << detail::fmt_exact(m.r2) << ','
           << detail::fmt_exact(m.adj_r2) << ',' << m.mape_skipped << ',';
      } else {
        os << "NA,NA,NA,NA,NA,NA,NA,NA,";
      }
      os << detail::csv_quote(r.error) << '\n';
    }
  }
}

/// Writes the report into `dir`: results.txt for table format, or
/// summary.csv plus repeats.csv for csv format. The per-repeat file is
/// written in both cases.
inline void emit_report(const std::vector<ResultRow>& rows, ReportFormat format, const std::filesystem::path& dir) {
  if (rows.empty()) throw DataError("nothing to report");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  auto open = [&](const char* name) {
    std::ofstream f(dir / name);
    if (!f) throw DataError((dir / name).string() + ": cannot open for writing");
    return f;
  };
  if (format == ReportFormat::table) {
    auto f = open("results.txt");
    write_table(f, rows);
  } else {
    auto f = open("summary.csv");
    write_summary_csv(f, rows);
  }
  auto f = open("repeats.csv");
  write_repeats_csv(f, rows);
}

}  // namespace bnt
