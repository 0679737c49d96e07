#pragma once

// Single-hidden-layer regressor with logistic hidden units and a linear
// output:  y = b0 + sum_j beta_j * sigmoid(a_j0 + sum_h a_jh z_h).

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "bnt/dataset.hpp"
#include "bnt/error.hpp"
#include "bnt/random.hpp"

namespace bnt {

inline double sigmoid(double t) {
  if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

struct Mlp {
  Matrix hidden_weights;  // k x d_m
  Vector hidden_bias;     // k
  Vector output_weights;  // k
  double output_bias = 0.0;

  std::size_t input_dim() const { return static_cast<std::size_t>(hidden_weights.cols()); }
  std::size_t hidden() const { return static_cast<std::size_t>(hidden_weights.rows()); }
  std::size_t parameter_count() const { return hidden() * (input_dim() + 2) + 1; }

  static Mlp zeros(std::size_t input_dim, std::size_t k) {
    const auto kk = static_cast<Eigen::Index>(k);
    return {Matrix::Zero(kk, static_cast<Eigen::Index>(input_dim)), Vector::Zero(kk), Vector::Zero(kk), 0.0};
  }

  /// Every parameter uniform on [-scale, scale].
  static Mlp random(std::size_t input_dim, std::size_t k, double scale, Rng& rng) {
    Mlp net = zeros(input_dim, k);
    for (Eigen::Index j = 0; j < net.hidden_weights.rows(); ++j) {
      for (Eigen::Index h = 0; h < net.hidden_weights.cols(); ++h) net.hidden_weights(j, h) = rng.uniform(-scale, scale);
      net.hidden_bias[j] = rng.uniform(-scale, scale);
      net.output_weights[j] = rng.uniform(-scale, scale);
    }
    net.output_bias = rng.uniform(-scale, scale);
    return net;
  }

  /// Sum of squared parameters; biases optional.
  double squared_norm(bool include_biases = true) const {
    double s = hidden_weights.squaredNorm() + output_weights.squaredNorm();
    if (include_biases) s += hidden_bias.squaredNorm() + output_bias * output_bias;
    return s;
  }

  /// Flat parameter vector: output bias, output weights, hidden biases,
  /// hidden weights row by row.
  std::vector<double> flatten() const {
    std::vector<double> out;
    out.reserve(parameter_count());
    out.push_back(output_bias);
    for (Eigen::Index j = 0; j < output_weights.size(); ++j) out.push_back(output_weights[j]);
    for (Eigen::Index j = 0; j < hidden_bias.size(); ++j) out.push_back(hidden_bias[j]);
    for (Eigen::Index j = 0; j < hidden_weights.rows(); ++j) {
      for (Eigen::Index h = 0; h < hidden_weights.cols(); ++h) out.push_back(hidden_weights(j, h));
    }
    return out;
  }

  static Mlp unflatten(std::size_t input_dim, std::size_t k, std::span<const double> flat) {
    Mlp net = zeros(input_dim, k);
    if (flat.size() != net.parameter_count()) throw DataError("parameter vector has the wrong length");
    std::size_t p = 0;
    net.output_bias = flat[p++];
    for (Eigen::Index j = 0; j < net.output_weights.size(); ++j) net.output_weights[j] = flat[p++];
    for (Eigen::Index j = 0; j < net.hidden_bias.size(); ++j) net.hidden_bias[j] = flat[p++];
    for (Eigen::Index j = 0; j < net.hidden_weights.rows(); ++j) {
      for (Eigen::Index h = 0; h < net.hidden_weights.cols(); ++h) net.hidden_weights(j, h) = flat[p++];
    }
    return net;
  }

  Mlp& operator+=(const Mlp& o) {
    hidden_weights += o.hidden_weights;
    hidden_bias += o.hidden_bias;
    output_weights += o.output_weights;
    output_bias += o.output_bias;
    return *this;
  }

  Mlp& operator*=(double s) {
    hidden_weights *= s;
    hidden_bias *= s;
    output_weights *= s;
    output_bias *= s;
    return *this;
  }

  /// Gradient-shaped value: adds s * other.
  void axpy(double s, const Mlp& o) {
    hidden_weights += s * o.hidden_weights;
    hidden_bias += s * o.hidden_bias;
    output_weights += s * o.output_weights;
    output_bias += s * o.output_bias;
  }
};

/// Gradients share the parameter layout.
using MlpGradient = Mlp;

inline double forward(const Mlp& net, std::span<const double> z) {
  if (z.size() != net.input_dim()) throw DataError("network input dimension mismatch");
  double out = net.output_bias;
  for (Eigen::Index j = 0; j < net.hidden_weights.rows(); ++j) {
    double t = net.hidden_bias[j];
    for (std::size_t h = 0; h < z.size(); ++h) t += net.hidden_weights(j, static_cast<Eigen::Index>(h)) * z[h];
    out += net.output_weights[j] * sigmoid(t);
  }
  return out;
}

namespace detail {

inline Matrix hidden_activations(const Mlp& net, const Matrix& inputs) {
  Matrix act = inputs * net.hidden_weights.transpose();
  act.rowwise() += net.hidden_bias.transpose();
  return act.unaryExpr([](double t) { return sigmoid(t); });
}

}  // namespace detail

inline Vector forward(const Mlp& net, const Matrix& inputs) {
  if (static_cast<std::size_t>(inputs.cols()) != net.input_dim()) throw DataError("network input dimension mismatch");
  Vector out = detail::hidden_activations(net, inputs) * net.output_weights;
  out.array() += net.output_bias;
  return out;
}

/// (1/n) * sum of squared residuals.
inline double empirical_risk(const Mlp& net, const Matrix& inputs, const Vector& y) {
  return (forward(net, inputs) - y).squaredNorm() / static_cast<double>(y.size());
}

/// Risk and its analytic gradient from one forward/backward pass.
inline double risk_and_gradient(const Mlp& net, const Matrix& inputs, const Vector& y, MlpGradient& grad) {
  const auto n = static_cast<double>(y.size());
  if (y.size() == 0) throw DataError("gradient needs a nonempty batch");
  if (inputs.rows() != y.size()) throw DataError("batch inputs and responses differ in length");
  const Matrix act = detail::hidden_activations(net, inputs);
  Vector resid = act * net.output_weights;
  resid.array() += net.output_bias - y.array();

  const Vector dout = (2.0 / n) * resid;
  grad.output_bias = dout.sum();
  grad.output_weights = act.transpose() * dout;
  Matrix dpre = act.array() * (1.0 - act.array());
  dpre.array().colwise() *= dout.array();
  dpre.array().rowwise() *= net.output_weights.transpose().array();
  grad.hidden_bias = dpre.colwise().sum().transpose();
  grad.hidden_weights = dpre.transpose() * inputs;
  return resid.squaredNorm() / n;
}

/// Gradient of the empirical L2 risk with respect to every parameter.
inline MlpGradient gradient(const Mlp& net, const Matrix& inputs, const Vector& y) {
  MlpGradient g = Mlp::zeros(net.input_dim(), net.hidden());
  risk_and_gradient(net, inputs, y, g);
  return g;
}

/// Hidden-layer size balancing approximation and estimation error:
/// max(1, round(sqrt(n / (d_m ln n)))).
inline std::size_t optimal_hidden_neurons(std::size_t n, std::size_t d_m) {
  if (n < 3 || d_m < 1) throw ConfigError("optimal_hidden_neurons needs n >= 3 and d_m >= 1");
  const double nn = static_cast<double>(n);
  const double k = std::sqrt(nn / (static_cast<double>(d_m) * std::log(nn)));
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(k + 0.5)));
}

enum class Optimizer { gd, rprop };

inline const char* to_string(Optimizer o) { return o == Optimizer::gd ? "gd" : "rprop"; }

struct TrainConfig {
  std::size_t epochs = 5000;
  double learning_rate = 0.1;  // gd step size; rprop initial step
  std::uint64_t seed = 0;
  double init_scale = 0.5;
  Optimizer optimizer = Optimizer::rprop;

  void validate() const {
    if (epochs < 1) throw ConfigError("epochs must be at least 1");
    if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be positive");
    if (!(init_scale > 0.0)) throw ConfigError("init_scale must be positive");
  }
};

namespace detail {

// Resilient backpropagation with weight backtracking (iRprop+): each
// parameter keeps its own step, grown while the gradient sign holds and
// shrunk when it flips; a flip after an objective increase undoes the
// previous move.
class Rprop {
 public:
  Rprop(std::size_t count, double initial_step)
      : step_(Eigen::VectorXd::Constant(static_cast<Eigen::Index>(count), initial_step)),
        prev_grad_(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(count))),
        last_move_(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(count))) {}

  void update(Mlp& net, const MlpGradient& grad, double objective) {
    constexpr double grow = 1.2, shrink = 0.5, max_step = 50.0, min_step = 1e-8;
    auto theta = net.flatten();
    const auto g = grad.flatten();
    const bool worse = objective > prev_objective_;
    for (Eigen::Index i = 0; i < step_.size(); ++i) {
      const auto u = static_cast<std::size_t>(i);
      const double agree = prev_grad_[i] * g[u];
      if (agree > 0.0) {
        step_[i] = std::min(step_[i] * grow, max_step);
        last_move_[i] = -sign(g[u]) * step_[i];
        theta[u] += last_move_[i];
        prev_grad_[i] = g[u];
      } else if (agree < 0.0) {
        step_[i] = std::max(step_[i] * shrink, min_step);
        if (worse) theta[u] -= last_move_[i];
        last_move_[i] = 0.0;
        prev_grad_[i] = 0.0;
      } else {
        last_move_[i] = -sign(g[u]) * step_[i];
        theta[u] += last_move_[i];
        prev_grad_[i] = g[u];
      }
    }
    prev_objective_ = objective;
    net = Mlp::unflatten(net.input_dim(), net.hidden(), theta);
  }

 private:
  static double sign(double v) { return (v > 0.0) - (v < 0.0); }

  Eigen::VectorXd step_, prev_grad_, last_move_;
  double prev_objective_ = std::numeric_limits<double>::infinity();
};

}  // namespace detail

struct TrainResult {
  Mlp net;
  double initial_risk = 0.0;
  double best_risk = 0.0;
  std::size_t best_epoch = 0;
};

/// Full-batch training from a seeded uniform initialization, by plain
/// gradient descent or Rprop. Keeps the parameters with the lowest training
/// risk seen.
inline TrainResult train_ann_detailed(const Matrix& inputs, const Vector& y, std::size_t k, const TrainConfig& cfg) {
  cfg.validate();
  if (k < 1) throw ConfigError("hidden layer needs at least one unit");
  if (y.size() == 0) throw DataError("cannot train on an empty dataset");
  Rng rng(cfg.seed);
  Mlp net = Mlp::random(static_cast<std::size_t>(inputs.cols()), k, cfg.init_scale, rng);
  MlpGradient grad = Mlp::zeros(net.input_dim(), k);
  detail::Rprop rprop(net.parameter_count(), cfg.learning_rate);

  TrainResult out{net, 0.0, std::numeric_limits<double>::infinity(), 0};
  for (std::size_t epoch = 0; epoch <= cfg.epochs; ++epoch) {
    const double risk = risk_and_gradient(net, inputs, y, grad);
    if (!std::isfinite(risk)) {
      throw NumericError("non-finite training loss at epoch " + std::to_string(epoch));
    }
    if (epoch == 0) out.initial_risk = risk;
    if (risk < out.best_risk) {
      out.best_risk = risk;
      out.net = net;
      out.best_epoch = epoch;
    }
    if (epoch == cfg.epochs) break;
    if (cfg.optimizer == Optimizer::gd) {
      net.axpy(-cfg.learning_rate, grad);
    } else {
      rprop.update(net, grad, risk);
    }
  }
  return out;
}

inline Mlp train_ann(const Dataset& train, std::size_t k, const TrainConfig& cfg) {
  return train_ann_detailed(train.features, train.response, k, cfg).net;
}

}  // namespace bnt
