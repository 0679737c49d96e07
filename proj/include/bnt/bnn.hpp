#pragma once

// MAP-trained Bayesian neural network. Gaussian prior with precision
// sigma_p on all parameters, Gaussian likelihood with precision sigma_l:
//
//   E(theta) = sigma_l / 2 * sum_i (yhat_i - y_i)^2 + sigma_p / 2 * |theta|^2
//
// The hidden-layer size carries a Geometric prior and is chosen jointly
// with the weights.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "bnt/dataset.hpp"
#include "bnt/error.hpp"
#include "bnt/mlp.hpp"
#include "bnt/random.hpp"

namespace bnt {

struct BnnHyper {
  double sigma_p = 1.0;
  double sigma_l = 1.0;
  std::size_t evidence_updates = 3;
  bool penalize_biases = true;

  void validate() const {
    if (!(sigma_p > 0.0) || !std::isfinite(sigma_p)) throw ConfigError("sigma_p must be positive");
    if (!(sigma_l > 0.0) || !std::isfinite(sigma_l)) throw ConfigError("sigma_l must be positive");
  }
};

/// P(k = i) = p (1 - p)^i, restricted to 1..k_max when used for selection.
struct GeometricPrior {
  double p = 0.6;
  std::size_t k_max = 5;

  void validate() const {
    if (!(p > 0.0 && p < 1.0)) throw ConfigError("geometric p must lie in (0, 1)");
    if (k_max < 1) throw ConfigError("k_max must be at least 1");
  }

  double pmf(std::size_t i) const { return p * std::pow(1.0 - p, static_cast<double>(i)); }

  /// sum_{i=0}^{K} pmf(i) in closed form.
  double cdf(std::size_t K) const { return 1.0 - std::pow(1.0 - p, static_cast<double>(K + 1)); }

  /// log pmf renormalized over the support 1..k_max.
  double log_weight(std::size_t k) const {
    if (k < 1 || k > k_max) return -std::numeric_limits<double>::infinity();
    const double mass = cdf(k_max) - pmf(0);
    return std::log(pmf(k)) - std::log(mass);
  }
};

/// Grid cap for the hidden-layer search.
inline std::size_t default_k_max(std::size_t n, std::size_t d_m) { return 2 * optimal_hidden_neurons(n, d_m) + 3; }

struct BnnModel {
  Mlp net;
  std::size_t chosen_k = 0;
  BnnHyper hyper;
  double objective_at_map = 0.0;
  double selection_score = 0.0;
  double final_gradient_norm = 0.0;
  bool converged = false;
  std::vector<double> k_scores;  // selection score per k (index k - 1)
};

inline double bnn_objective(const Mlp& net, const Matrix& inputs, const Vector& y, const BnnHyper& hyper) {
  const double sse = (forward(net, inputs) - y).squaredNorm();
  return 0.5 * hyper.sigma_l * sse + 0.5 * hyper.sigma_p * net.squared_norm(hyper.penalize_biases);
}

inline double bnn_objective(const Mlp& net, const Dataset& train, const BnnHyper& hyper) {
  return bnn_objective(net, train.features, train.response, hyper);
}

/// Exact gradient of bnn_objective.
inline MlpGradient bnn_objective_gradient(const Mlp& net, const Matrix& inputs, const Vector& y, const BnnHyper& hyper) {
  MlpGradient g = gradient(net, inputs, y);
  g *= 0.5 * hyper.sigma_l * static_cast<double>(y.size());
  MlpGradient decay = net;
  if (!hyper.penalize_biases) {
    decay.hidden_bias.setZero();
    decay.output_bias = 0.0;
  }
  g.axpy(hyper.sigma_p, decay);
  return g;
}

/// Log joint density log P(y | theta) + log P(theta) with all Gaussian
/// normalizing constants kept.
inline double bnn_log_joint(const Mlp& net, const Matrix& inputs, const Vector& y, const BnnHyper& hyper) {
  const double n = static_cast<double>(y.size());
  const double l = static_cast<double>(hyper.penalize_biases ? net.parameter_count() : net.hidden() * (net.input_dim() + 1));
  return 0.5 * n * std::log(hyper.sigma_l / (2.0 * M_PI)) + 0.5 * l * std::log(hyper.sigma_p / (2.0 * M_PI)) -
         bnn_objective(net, inputs, y, hyper);
}

namespace detail {

struct MapFit {
  Mlp net;
  double gradient_norm = 0.0;
  bool converged = false;
};

// Minimizes E / (sigma_l n / 2) = risk + sigma_p / (sigma_l n) |theta|^2,
// which has the same minimizer as E. A gradient-descent step is a step on
// the risk followed by the exact proximal map of the penalty, so large prior
// precisions shrink the weights instead of overshooting; Rprop steps on the
// full gradient. Keeps the lowest-objective iterate.
inline MapFit minimize_objective(Mlp net, const Matrix& inputs, const Vector& y, const BnnHyper& hyper,
                                 const TrainConfig& cfg, double tolerance) {
  const double n = static_cast<double>(y.size());
  const double decay = 2.0 * hyper.sigma_p / (hyper.sigma_l * n);
  const double shrink = 1.0 / (1.0 + cfg.learning_rate * decay);
  MlpGradient grad = Mlp::zeros(net.input_dim(), net.hidden());
  Rprop rprop(net.parameter_count(), cfg.learning_rate);
  MapFit best{net, std::numeric_limits<double>::infinity(), false};
  double best_obj = std::numeric_limits<double>::infinity();
  for (std::size_t epoch = 0; epoch <= cfg.epochs; ++epoch) {
    const double risk = risk_and_gradient(net, inputs, y, grad);
    const double obj = risk + 0.5 * decay * net.squared_norm(hyper.penalize_biases);
    if (!std::isfinite(obj)) throw NumericError("non-finite objective at epoch " + std::to_string(epoch));
    MlpGradient full = grad;
    MlpGradient penalized = net;
    if (!hyper.penalize_biases) {
      penalized.hidden_bias.setZero();
      penalized.output_bias = 0.0;
    }
    full.axpy(decay, penalized);
    const double gnorm = std::sqrt(full.squared_norm());
    if (obj < best_obj) {
      best_obj = obj;
      best.net = net;
      best.gradient_norm = gnorm;
    }
    if (gnorm < tolerance) {
      best.net = net;
      best.gradient_norm = gnorm;
      best.converged = true;
      break;
    }
    if (epoch == cfg.epochs) break;
    if (cfg.optimizer == Optimizer::rprop) {
      rprop.update(net, full, obj);
      continue;
    }
    net.axpy(-cfg.learning_rate, grad);
    net.hidden_weights *= shrink;
    net.output_weights *= shrink;
    if (hyper.penalize_biases) {
      net.hidden_bias *= shrink;
      net.output_bias *= shrink;
    }
  }
  return best;
}

}  // namespace detail

/// Output derivative with respect to every parameter, one row per input,
/// in flatten() order.
inline Matrix output_jacobian(const Mlp& net, const Matrix& inputs) {
  const Eigen::Index n = inputs.rows(), d = inputs.cols(), k = static_cast<Eigen::Index>(net.hidden());
  Matrix jac(n, 1 + 2 * k + k * d);
  const Matrix act = detail::hidden_activations(net, inputs);
  for (Eigen::Index i = 0; i < n; ++i) {
    jac(i, 0) = 1.0;
    for (Eigen::Index j = 0; j < k; ++j) {
      const double slope = net.output_weights[j] * act(i, j) * (1.0 - act(i, j));
      jac(i, 1 + j) = act(i, j);
      jac(i, 1 + k + j) = slope;
      for (Eigen::Index q = 0; q < d; ++q) jac(i, 1 + 2 * k + j * d + q) = slope * inputs(i, q);
    }
  }
  return jac;
}

/// Number of parameters the data determine:
///   gamma = sum_i lambda_i / (lambda_i + sigma_p)
/// over eigenvalues of the Gauss-Newton data Hessian sigma_l J'J, restricted
/// to the penalized parameters.
inline double effective_parameters(const Mlp& net, const Matrix& inputs, const BnnHyper& hyper) {
  Matrix jac = output_jacobian(net, inputs);
  if (!hyper.penalize_biases) {
    const Eigen::Index k = static_cast<Eigen::Index>(net.hidden()), d = inputs.cols();
    Matrix keep(jac.rows(), k + k * d);
    keep << jac.middleCols(1, k), jac.rightCols(k * d);
    jac = std::move(keep);
  }
  const Matrix h = hyper.sigma_l * (jac.transpose() * jac);
  const Eigen::SelfAdjointEigenSolver<Matrix> eig(h, Eigen::EigenvaluesOnly);
  double gamma = 0.0;
  for (Eigen::Index i = 0; i < eig.eigenvalues().size(); ++i) {
    const double lam = std::max(0.0, eig.eigenvalues()[i]);
    gamma += lam / (lam + hyper.sigma_p);
  }
  return gamma;
}

/// MAP fit at a fixed hidden size. With evidence_updates > 0 the
/// precisions are re-estimated between minimizations:
///   sigma_l <- (n - gamma) / sum r^2,   sigma_p <- gamma / |theta|^2.
inline BnnModel train_bnn_fixed_k(const Matrix& inputs, const Vector& y, std::size_t k, const BnnHyper& hyper,
                                  const TrainConfig& cfg) {
  hyper.validate();
  cfg.validate();
  if (k < 1) throw ConfigError("hidden layer needs at least one unit");
  if (y.size() == 0) throw DataError("cannot train on an empty dataset");
  constexpr double tolerance = 1e-3;
  Rng rng(cfg.seed);
  Mlp net = Mlp::random(static_cast<std::size_t>(inputs.cols()), k, cfg.init_scale, rng);

  BnnHyper h = hyper;
  auto fit = detail::minimize_objective(net, inputs, y, h, cfg, tolerance);
  const double n = static_cast<double>(y.size());
  for (std::size_t round = 0; round < hyper.evidence_updates; ++round) {
    constexpr double eps = 1e-12;
    const double sse = (forward(fit.net, inputs) - y).squaredNorm();
    const double wsq = fit.net.squared_norm(h.penalize_biases);
    const double gamma = std::clamp(effective_parameters(fit.net, inputs, h), eps, n - 1.0);
    h.sigma_l = (n - gamma) / (sse + eps);
    h.sigma_p = gamma / (wsq + eps);
    fit = detail::minimize_objective(fit.net, inputs, y, h, cfg, tolerance);
  }

  BnnModel model;
  model.net = std::move(fit.net);
  model.chosen_k = k;
  model.hyper = h;
  model.objective_at_map = bnn_objective(model.net, inputs, y, h);
  model.final_gradient_norm = fit.gradient_norm;
  model.converged = fit.converged;
  return model;
}

inline BnnModel train_bnn_fixed_k(const Dataset& train, std::size_t k, const BnnHyper& hyper, const TrainConfig& cfg) {
  return train_bnn_fixed_k(train.features, train.response, k, hyper, cfg);
}

/// Searches k = 1..k_max, scoring each MAP fit by
///   log lambda_k + log P(y | theta_k) + log P(theta_k)
/// and returning the best; ties go to the smaller k. Hidden size k trains
/// from a seed derived from (cfg.seed, k).
inline BnnModel select_k_geometric(const Matrix& inputs, const Vector& y, const GeometricPrior& prior, const BnnHyper& hyper,
                                   const TrainConfig& cfg) {
  prior.validate();
  BnnModel best;
  double best_score = -std::numeric_limits<double>::infinity();
  std::vector<double> scores;
  for (std::size_t k = 1; k <= prior.k_max; ++k) {
    TrainConfig kcfg = cfg;
    kcfg.seed = derive_seed(cfg.seed, k);
    BnnModel m = train_bnn_fixed_k(inputs, y, k, hyper, kcfg);
    m.selection_score = prior.log_weight(k) + bnn_log_joint(m.net, inputs, y, m.hyper);
    scores.push_back(m.selection_score);
    if (m.selection_score > best_score) {
      best_score = m.selection_score;
      best = std::move(m);
    }
  }
  best.k_scores = std::move(scores);
  return best;
}

inline BnnModel select_k_geometric(const Dataset& train, const GeometricPrior& prior, const BnnHyper& hyper,
                                   const TrainConfig& cfg) {
  return select_k_geometric(train.features, train.response, prior, hyper, cfg);
}

inline double predict_bnn(const BnnModel& model, std::span<const double> z) { return forward(model.net, z); }

}  // namespace bnt
