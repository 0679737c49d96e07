#pragma once

// Reference implementations used only by tests. Each one computes the
// quantity a different way from the library code it checks.

#include <boost/math/quadrature/sinh_sinh.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <vector>

#include "bnt/bnt.hpp"

namespace oracle {

// ----- CART -----------------------------------------------------------------

struct BruteSplit {
  std::size_t feature = 0;
  double threshold = 0.0;
  double sse = std::numeric_limits<double>::infinity();
};

// Tries every midpoint of every feature, recomputing both child SSEs from
// scratch with two-pass sums.
inline std::optional<BruteSplit> best_split(const bnt::Dataset& ds, const std::vector<std::size_t>& rows) {
  std::optional<BruteSplit> best;
  auto sse_of = [&](const std::vector<double>& v) {
    long double m = 0;
    for (double x : v) m += x;
    m /= v.size();
    long double s = 0;
    for (double x : v) s += (x - m) * (x - m);
    return static_cast<double>(s);
  };
  for (std::size_t j = 0; j < ds.d(); ++j) {
    std::vector<double> vals;
    for (auto r : rows) vals.push_back(ds.features(r, j));
    std::sort(vals.begin(), vals.end());
    vals.erase(std::unique(vals.begin(), vals.end()), vals.end());
    for (std::size_t k = 0; k + 1 < vals.size(); ++k) {
      const double thr = 0.5 * (vals[k] + vals[k + 1]);
      std::vector<double> l, r;
      for (auto i : rows) (ds.features(i, j) <= thr ? l : r).push_back(ds.response[i]);
      const double s = sse_of(l) + sse_of(r);
      if (!best || s < best->sse - 1e-9 * (1.0 + std::abs(s))) best = BruteSplit{j, thr, s};
    }
  }
  return best;
}

// ----- Leaf marginal likelihood ---------------------------------------------

// Product of one-step-ahead Student-t predictive densities.
inline double nig_log_marginal_sequential(const std::vector<double>& y, const bnt::LeafPrior& p) {
  double mu = p.mu0, a = p.a, nu = p.nu, lam = p.lambda, total = 0.0;
  for (double v : y) {
    const double dof = 2.0 * nu;
    const double scale2 = lam * (a + 1.0) / (nu * a);
    const double z2 = (v - mu) * (v - mu) / scale2;
    total += std::lgamma(0.5 * (dof + 1.0)) - std::lgamma(0.5 * dof) - 0.5 * std::log(dof * M_PI * scale2) -
             0.5 * (dof + 1.0) * std::log1p(z2 / dof);
    lam += a * (v - mu) * (v - mu) / (2.0 * (a + 1.0));
    mu = (a * mu + v) / (a + 1.0);
    a += 1.0;
    nu += 0.5;
  }
  return total;
}

// Double integral over (mu, log s2) of likelihood x prior.
inline double nig_log_marginal_quadrature(const std::vector<double>& y, const bnt::LeafPrior& p) {
  auto log_joint = [&](double mu, double t) {
    const double s2 = std::exp(t);
    double ll = 0.0;
    for (double v : y) ll += -0.5 * std::log(2.0 * M_PI * s2) - 0.5 * (v - mu) * (v - mu) / s2;
    const double prior_mu = -0.5 * std::log(2.0 * M_PI * s2 / p.a) - 0.5 * p.a * (mu - p.mu0) * (mu - p.mu0) / s2;
    // IG(nu, lambda) density in s2, times the Jacobian ds2/dt = s2.
    const double prior_s2 = p.nu * std::log(p.lambda) - std::lgamma(p.nu) - (p.nu + 1.0) * t - p.lambda / s2 + t;
    return ll + prior_mu + prior_s2;
  };
  double ybar = 0.0;
  for (double v : y) ybar += v;
  ybar /= static_cast<double>(y.size());
  // Offset near the mode keeps the integrand in floating-point range.
  double shift = -std::numeric_limits<double>::infinity();
  for (double t = -12.0; t <= 12.0; t += 0.05) shift = std::max(shift, log_joint(ybar, t));
  boost::math::quadrature::sinh_sinh<double> integrator(12);
  auto inner = [&](double t) {
    auto f = [&](double mu) {
      const double v = std::exp(log_joint(mu, t) - shift);
      return std::isfinite(v) ? v : 0.0;  // far tails underflow to 0 or produce inf - inf
    };
    return integrator.integrate(f, 1e-12);
  };
  auto outer = [&](double t) {
    if (std::abs(t) > 600.0) return 0.0;
    const double v = inner(t);
    return std::isfinite(v) ? v : 0.0;
  };
  return shift + std::log(integrator.integrate(outer, 1e-10));
}

// ----- Exact tree posterior on a tiny problem --------------------------------

// Density of one tree, evaluated from explicit per-node statistics.
struct EnumeratedTree {
  bnt::RegressionTree tree;
  double log_density = 0.0;
};

// Scores a tree from first principles: walks rows into nodes, applies the
// split prior per depth, uniform rule prior over available features and
// distinct node values, and the sequential leaf marginal.
inline double log_tree_density(const bnt::RegressionTree& tree, const bnt::Dataset& ds, const bnt::TreePrior& tp,
                               const bnt::LeafPrior& lp) {
  std::vector<std::vector<std::size_t>> members(tree.size());
  for (std::size_t i = 0; i < ds.n(); ++i) {
    int cur = 0;
    members[0].push_back(i);
    while (!tree.node(cur).is_leaf()) {
      cur = tree.node(cur).rule->goes_left(ds.row(i)) ? tree.node(cur).left : tree.node(cur).right;
      members[static_cast<std::size_t>(cur)].push_back(i);
    }
  }
  double total = 0.0;
  for (std::size_t k = 0; k < tree.size(); ++k) {
    const auto& node = tree.node(static_cast<int>(k));
    const auto& rows = members[k];
    if (rows.empty()) return -std::numeric_limits<double>::infinity();
    const double ps = tp.alpha * std::pow(1.0 + node.depth, -tp.beta);
    if (node.is_leaf()) {
      std::vector<double> y;
      for (auto r : rows) y.push_back(ds.response[r]);
      total += std::log(1.0 - ps) + nig_log_marginal_sequential(y, lp);
      continue;
    }
    std::size_t avail = 0, distinct = 0;
    bool observed = false;
    for (std::size_t j = 0; j < ds.d(); ++j) {
      std::vector<double> v;
      for (auto r : rows) v.push_back(ds.features(r, j));
      std::sort(v.begin(), v.end());
      v.erase(std::unique(v.begin(), v.end()), v.end());
      if (v.size() > 1) ++avail;
      if (j == node.rule->feature) {
        distinct = v.size();
        observed = std::binary_search(v.begin(), v.end(), node.rule->threshold);
      }
    }
    if (!observed || distinct < 2) return -std::numeric_limits<double>::infinity();
    total += std::log(ps) - std::log(static_cast<double>(avail)) - std::log(static_cast<double>(distinct));
  }
  return total;
}

// ----- Metrics ----------------------------------------------------------------

struct BruteMetrics {
  double mae, mape, rmse, r2, adj_r2;
};

inline BruteMetrics metrics(const std::vector<double>& y, const std::vector<double>& yhat, std::size_t d) {
  const std::size_t n = y.size();
  long double ybar = 0;
  for (std::size_t i = 0; i < n; ++i) ybar += y[i];
  ybar /= n;
  long double abs_e = 0, pct = 0, sq = 0, tot = 0;
  std::size_t pct_n = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const long double e = static_cast<long double>(yhat[i]) - y[i];
    abs_e += e < 0 ? -e : e;
    sq += e * e;
    tot += (y[i] - ybar) * (y[i] - ybar);
    if (y[i] != 0.0) {
      const long double q = e / y[i];
      pct += q < 0 ? -q : q;
      ++pct_n;
    }
  }
  const long double r2 = 1.0L - sq / tot;
  return {static_cast<double>(abs_e / n), static_cast<double>(pct / pct_n), static_cast<double>(std::sqrt(sq / n)),
          static_cast<double>(r2), static_cast<double>(1.0L - (1.0L - r2) * (n - 1.0L) / (n - d - 1.0L))};
}

// ----- Gradients --------------------------------------------------------------

// Central differences over the flattened parameter vector.
inline std::vector<double> central_difference(const std::function<double(const bnt::Mlp&)>& f, const bnt::Mlp& net,
                                              double h = 1e-5) {
  auto theta = net.flatten();
  std::vector<double> g(theta.size());
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double keep = theta[i];
    theta[i] = keep + h;
    const double up = f(bnt::Mlp::unflatten(net.input_dim(), net.hidden(), theta));
    theta[i] = keep - h;
    const double down = f(bnt::Mlp::unflatten(net.input_dim(), net.hidden(), theta));
    theta[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

// max_i |a_i - b_i| / max(1, |b|_inf)
inline double relative_gap(const std::vector<double>& a, const std::vector<double>& b) {
  double gap = 0.0, scale = 1.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    gap = std::max(gap, std::abs(a[i] - b[i]));
    scale = std::max(scale, std::abs(b[i]));
  }
  return gap / scale;
}

// ----- Rank correlation -------------------------------------------------------

inline double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  auto ranks = [](const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](auto i, auto j) { return v[i] < v[j]; });
    std::vector<double> r(v.size());
    for (std::size_t k = 0; k < idx.size();) {
      std::size_t e = k;
      while (e + 1 < idx.size() && v[idx[e + 1]] == v[idx[k]]) ++e;
      for (std::size_t t = k; t <= e; ++t) r[idx[t]] = 0.5 * static_cast<double>(k + e) + 1.0;
      k = e + 1;
    }
    return r;
  };
  const auto ra = ranks(a), rb = ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double num = 0, da = 0, db = 0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    num += (ra[i] - ma) * (rb[i] - mb);
    da += (ra[i] - ma) * (ra[i] - ma);
    db += (rb[i] - mb) * (rb[i] - mb);
  }
  return num / std::sqrt(da * db);
}

}  // namespace oracle
