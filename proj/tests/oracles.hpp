#pragma once

// Independent reference implementations used by the unit tests and the
// acceptance binary. Nothing here calls into the library code it checks.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <vector>

#include <boost/math/quadrature/exp_sinh.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "vqalab/autodiff/graph.hpp"

namespace oracle {

/// |a - b| <= rel * max(|a|, |b|), or <= abs near zero.
inline bool close(double a, double b, double rel, double abs = 1e-6) {
  const double diff = std::abs(a - b);
  return diff <= abs || diff <= rel * std::max(std::abs(a), std::abs(b));
}

inline double central_difference(const std::function<double(double)>& f, double x, double h) {
  return (f(x + h) - f(x - h)) / (2.0 * h);
}

// ---------------------------------------------------------------------------
// Student t: two-tailed p by adaptive Gauss-Kronrod quadrature of the density.

inline double t_density(double t, double dof) {
  const double log_c = std::lgamma(0.5 * (dof + 1.0)) - std::lgamma(0.5 * dof) -
                       0.5 * std::log(dof * std::numbers::pi);
  return std::exp(log_c - 0.5 * (dof + 1.0) * std::log1p(t * t / dof));
}

inline double t_two_tailed_quadrature(double t, double dof) {
  using boost::math::quadrature::gauss_kronrod;
  const double a = std::abs(t);
  if (a == 0.0) return 1.0;
  auto f = [dof](double x) { return t_density(x, dof); };
  // Integrate whichever side is smaller to keep the absolute error tiny.
  if (a < 1.0) {
    const double inner = gauss_kronrod<double, 61>::integrate(f, 0.0, a, 8, 1e-12);
    return 1.0 - 2.0 * inner;
  }
  // Tail over [a, inf). exp_sinh copes with the slow polynomial decay at
  // small dof, where a finite-interval substitution leaves an endpoint kink.
  boost::math::quadrature::exp_sinh<double> tail;
  return 2.0 * tail.integrate(f, a, std::numeric_limits<double>::infinity());
}

inline double welch_p(const std::vector<double>& xs, const std::vector<double>& ys, double* t_out = nullptr,
                      double* dof_out = nullptr) {
  auto mv = [](const std::vector<double>& v) {
    double m = 0.0;
    for (double x : v) m += x;
    m /= static_cast<double>(v.size());
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::pair{m, s / static_cast<double>(v.size() - 1)};
  };
  const auto [mx, vx] = mv(xs);
  const auto [my, vy] = mv(ys);
  const double qx = vx / static_cast<double>(xs.size()), qy = vy / static_cast<double>(ys.size());
  const double t = (mx - my) / std::sqrt(qx + qy);
  const double dof = (qx + qy) * (qx + qy) /
                     (qx * qx / static_cast<double>(xs.size() - 1) + qy * qy / static_cast<double>(ys.size() - 1));
  if (t_out) *t_out = t;
  if (dof_out) *dof_out = dof;
  return t_two_tailed_quadrature(t, dof);
}

// ---------------------------------------------------------------------------
// Spearman by brute force: rank r_i = 1 + #{x_j < x_i} + (#{x_j == x_i} - 1) / 2.

inline std::vector<double> brute_ranks(const std::vector<double>& xs) {
  std::vector<double> r(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) {
    double less = 0.0, equal = 0.0;
    for (double y : xs) {
      less += y < xs[i];
      equal += y == xs[i];
    }
    r[i] = 1.0 + less + (equal - 1.0) / 2.0;
  }
  return r;
}

inline double brute_pearson(const std::vector<double>& a, const std::vector<double>& b) {
  const double n = static_cast<double>(a.size());
  double sa = 0, sb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    sa += a[i];
    sb += b[i];
  }
  const double ma = sa / n, mb = sb / n;
  double cov = 0, va = 0, vb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    cov += (a[i] - ma) * (b[i] - mb);
    va += (a[i] - ma) * (a[i] - ma);
    vb += (b[i] - mb) * (b[i] - mb);
  }
  return cov / std::sqrt(va * vb);
}

inline double brute_spearman(const std::vector<double>& xs, const std::vector<double>& ys) {
  return brute_pearson(brute_ranks(xs), brute_ranks(ys));
}

// ---------------------------------------------------------------------------
// Random micro-graphs for finite-difference checks.

struct MicroGraph {
  vqalab::ad::Graph g;
  vqalab::ad::NodeId x = 0;     // input vector, requires_grad
  vqalab::ad::NodeId out = 0;   // scalar
  std::size_t n = 0;
  std::vector<double> x0;
  std::vector<std::string> ops;
};

/// A scalar function of one input vector x built from at most `max_ops`
/// smooth operators, then summed. Smooth only: no kinks, so central
/// differences are valid everywhere.
inline MicroGraph random_micro_graph(std::mt19937_64& rng, std::size_t max_ops = 5) {
  namespace ad = vqalab::ad;
  std::uniform_int_distribution<std::size_t> size_dist(1, 8);
  std::uniform_int_distribution<std::size_t> ops_dist(1, max_ops);
  std::uniform_real_distribution<double> val(-1.5, 1.5);
  MicroGraph m;
  m.n = size_dist(rng);
  for (std::size_t i = 0; i < m.n; ++i) m.x0.push_back(val(rng));
  m.x = m.g.input(ad::Shape(m.n), true);
  auto random_vec = [&] {
    std::vector<double> v(m.n);
    for (double& e : v) e = val(rng);
    return ad::Tensor::vector(std::move(v));
  };
  ad::NodeId cur = m.x;
  bool is_vector = true;
  const std::size_t n_ops = ops_dist(rng);
  for (std::size_t k = 0; k < n_ops && is_vector; ++k) {
    const std::size_t pick = std::uniform_int_distribution<std::size_t>(0, 8)(rng);
    switch (pick) {
      case 0: cur = m.g.sigmoid(cur); m.ops.push_back("sigmoid"); break;
      case 1: cur = m.g.softplus(cur); m.ops.push_back("softplus"); break;
      case 2: cur = m.g.mul(cur, m.g.parameter(random_vec())); m.ops.push_back("mul_w"); break;
      case 3: cur = m.g.add(cur, m.g.constant(random_vec())); m.ops.push_back("add_c"); break;
      case 4: cur = m.g.mul(cur, cur); m.ops.push_back("square"); break;
      case 5: cur = m.g.softmax(cur); m.ops.push_back("softmax"); break;
      case 6: cur = m.g.log(m.g.softplus(cur)); m.ops.push_back("log_softplus"); break;
      case 7: {
        std::vector<double> w(m.n * m.n);
        for (double& e : w) e = val(rng);
        const ad::NodeId col = m.g.reshape(cur, ad::Shape(m.n, 1));
        cur = m.g.reshape(m.g.matmul(m.g.constant(ad::Tensor::matrix(m.n, m.n, std::move(w))), col), ad::Shape(m.n));
        m.ops.push_back("matmul");
        break;
      }
      default: {
        const ad::NodeId s = m.g.sum(m.g.mul(cur, m.g.constant(random_vec())));
        cur = m.g.broadcast(m.g.sigmoid(s), ad::Shape(m.n));
        m.ops.push_back("sum_sigmoid_broadcast");
        break;
      }
    }
  }
  // Weighted sum so the scalar is sensitive to every coordinate.
  m.out = m.g.sum(m.g.mul(cur, m.g.constant(random_vec())));
  return m;
}

inline vqalab::ad::Bindings bind(const MicroGraph& m, const std::vector<double>& x) {
  return {{m.x, vqalab::ad::Tensor::vector(x)}};
}

inline double eval_scalar(MicroGraph& m, vqalab::ad::NodeId node, const std::vector<double>& x) {
  const vqalab::ad::NodeId req[] = {node};
  return m.g.evaluate(oracle::bind(m, x), req)[0].item();
}

struct FdReport {
  double worst = 0.0;  // worst |a - b| / max(|a|, |b|) among entries above the abs floor
  bool ok = true;
};

/// First-order check: detached gradient of m.out vs central differences.
inline FdReport check_first_order(MicroGraph& m, double h, double rel, double abs) {
  FdReport rep;
  const vqalab::ad::NodeId wrt[] = {m.x};
  eval_scalar(m, m.out, m.x0);
  const auto grad = m.g.gradient(m.out, wrt, false)[0].tensor;
  for (std::size_t i = 0; i < m.n; ++i) {
    auto f = [&](double xi) {
      auto x = m.x0;
      x[i] = xi;
      return eval_scalar(m, m.out, x);
    };
    const double fd = central_difference(f, m.x0[i], h);
    if (!close(grad[i], fd, rel, abs)) rep.ok = false;
    const double scale = std::max(std::abs(grad[i]), std::abs(fd));
    if (std::abs(grad[i] - fd) > abs && scale > 0) rep.worst = std::max(rep.worst, std::abs(grad[i] - fd) / scale);
  }
  return rep;
}

/// Second-order check: gradient of <grad f, c> (a Hessian-vector product)
/// vs central differences of the attached first-order gradient.
inline FdReport check_second_order(MicroGraph& m, double h, double rel, double abs, std::mt19937_64& rng) {
  namespace ad = vqalab::ad;
  FdReport rep;
  std::uniform_real_distribution<double> val(-1.0, 1.0);
  std::vector<double> c(m.n);
  for (double& e : c) e = val(rng);
  const ad::NodeId wrt[] = {m.x};
  eval_scalar(m, m.out, m.x0);
  const ad::NodeId g1 = m.g.gradient(m.out, wrt, true)[0].node;
  const ad::NodeId gc = m.g.sum(m.g.mul(g1, m.g.constant(ad::Tensor::vector(c))));
  eval_scalar(m, gc, m.x0);
  const auto hv = m.g.gradient(gc, wrt, false)[0].tensor;
  for (std::size_t i = 0; i < m.n; ++i) {
    auto f = [&](double xi) {
      auto x = m.x0;
      x[i] = xi;
      return eval_scalar(m, gc, x);
    };
    const double fd = central_difference(f, m.x0[i], h);
    if (!close(hv[i], fd, rel, abs)) rep.ok = false;
    const double scale = std::max(std::abs(hv[i]), std::abs(fd));
    if (std::abs(hv[i] - fd) > abs && scale > 0) rep.worst = std::max(rep.worst, std::abs(hv[i] - fd) / scale);
  }
  return rep;
}

}  // namespace oracle
