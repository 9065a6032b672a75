#pragma once

// Gauss-Jacobi rules (Golub-Welsch) and the geometrically graded vertical grid
// used for integrals  int_0^Z g(z) z^b dz  with b in (-1, 1).

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "sqg/errors.hpp"

namespace sqg {

struct QuadratureRule {
  std::vector<double> nodes;
  std::vector<double> weights;
};

/// n-point Gauss rule on [-1, 1] for the weight (1 - x)^a (1 + x)^b.
inline QuadratureRule gauss_jacobi(int n, double a, double b) {
  if (n < 1) {
    throw ParameterError("gauss_jacobi: need at least one node");
  }
  if (!(a > -1.0) || !(b > -1.0)) {
    throw ParameterError("gauss_jacobi: exponents must exceed -1");
  }
  const double ab = a + b;
  Eigen::VectorXd diag(n);
  Eigen::VectorXd off(std::max(n - 1, 0));
  diag(0) = (b - a) / (ab + 2.0);
  for (int k = 1; k < n; ++k) {
    const double s = 2.0 * k + ab;
    diag(k) = (b * b - a * a) / (s * (s + 2.0));
    const double num = 4.0 * k * (k + a) * (k + b) * (k + ab);
    const double den = s * s * (s + 1.0) * (s - 1.0);
    off(k - 1) = std::sqrt(num / den);
  }
  const double mu0 = std::exp((ab + 1.0) * std::log(2.0) + std::lgamma(a + 1.0) + std::lgamma(b + 1.0) -
                              std::lgamma(ab + 2.0));
  QuadratureRule rule;
  rule.nodes.resize(n);
  rule.weights.resize(n);
  if (n == 1) {
    rule.nodes[0] = diag(0);
    rule.weights[0] = mu0;
    return rule;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es;
  es.computeFromTridiagonal(diag, off, Eigen::ComputeEigenvectors);
  const auto& vals = es.eigenvalues();
  const auto& vecs = es.eigenvectors();
  for (int k = 0; k < n; ++k) {
    rule.nodes[k] = vals(k);
    rule.weights[k] = mu0 * vecs(0, k) * vecs(0, k);
  }
  return rule;
}

inline QuadratureRule gauss_legendre(int n) { return gauss_jacobi(n, 0.0, 0.0); }

/// Interpolatory weights at fixed nodes y_k in [0, 1] for int_0^1 h(y) y^c dy.
inline std::vector<double> product_weights(const std::vector<double>& y, double c) {
  const int n = static_cast<int>(y.size());
  using Mat = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;
  using Vec = Eigen::Matrix<long double, Eigen::Dynamic, 1>;
  Mat V(n, n);
  Vec m(n);
  for (int p = 0; p < n; ++p) {
    // moments of the shifted monomials (2y - 1)^p keep the system well conditioned
    long double mom = 0.0L;
    long double binom = 1.0L;
    for (int q = 0; q <= p; ++q) {
      // (2y - 1)^p = sum_q C(p, q) 2^q y^q (-1)^{p-q}
      const long double sign = ((p - q) % 2 == 0) ? 1.0L : -1.0L;
      mom += binom * std::pow(2.0L, q) * sign / (q + 1.0L + c);
      binom = binom * (p - q) / (q + 1);
    }
    m(p) = mom;
    for (int k = 0; k < n; ++k) {
      V(p, k) = std::pow(2.0L * y[k] - 1.0L, p);
    }
  }
  const Vec w = V.colPivHouseholderQr().solve(m);
  std::vector<double> out(n);
  for (int k = 0; k < n; ++k) {
    out[k] = static_cast<double>(w(k));
  }
  return out;
}

/// Composite rule for int_0^Z g(z) z^b dz.  Panels shrink geometrically toward
/// z = 0 from R* down to z_min; the first panel [0, e_1] carries the z^b weight
/// exactly (Gauss-Jacobi), the others fold z^b into Gauss-Legendre weights.  The
/// cutoff ramp [R*, Z] is split into uniform panels.
struct ZGrid {
  double Z = 0.0;
  double R_star = 0.0;
  double b = 0.0;
  double z_min = 0.0;
  double ratio = 0.5;
  int points_per_panel = 0;
  int ramp_panels = 0;
  std::vector<double> edges;
  std::vector<double> nodes;
  std::vector<double> weights;
  /// Weights for integrands z^{-2b} h(z) z^b with h regular at 0, e.g. |d_z theta*|^2 z^b,
  /// whose flux factor z^b d_z theta* stays bounded while d_z theta* itself does not.
  std::vector<double> flux_weights;

  std::size_t size() const { return nodes.size(); }
};

struct ZGridSpec {
  /// Vertical cutoff scale R*; the grid spans [0, R* + ramp_length].
  double R_star = 1.0;
  double ramp_length = 1.0;
  /// Right edge of the innermost panel.
  double z_min = 1e-3;
  double ratio = 0.5;
  int points_per_panel = 10;
  int ramp_panels = 4;
};

inline ZGrid make_zgrid(double b, const ZGridSpec& spec) {
  if (!(b > -1.0 && b < 1.0)) {
    throw ParameterError("make_zgrid: weight exponent b must lie in (-1, 1), got " + std::to_string(b));
  }
  if (!(spec.R_star > 0.0) || !(spec.ramp_length >= 0.0) || !(spec.z_min > 0.0) || spec.z_min >= spec.R_star) {
    throw ParameterError("make_zgrid: need 0 < z_min < R_star and ramp_length >= 0");
  }
  if (!(spec.ratio > 0.0 && spec.ratio < 1.0) || spec.points_per_panel < 2 || spec.ramp_panels < 1) {
    throw ParameterError("make_zgrid: invalid panel parameters");
  }
  ZGrid g;
  g.R_star = spec.R_star;
  g.Z = spec.R_star + spec.ramp_length;
  g.b = b;
  g.z_min = spec.z_min;
  g.ratio = spec.ratio;
  g.points_per_panel = spec.points_per_panel;
  g.ramp_panels = spec.ramp_panels;

  std::vector<double> inner;
  for (double e = spec.R_star; e > spec.z_min * (1.0 + 1e-12); e *= spec.ratio) {
    inner.push_back(e);
  }
  inner.push_back(inner.back() * spec.ratio);
  std::reverse(inner.begin(), inner.end());
  g.edges.push_back(0.0);
  g.edges.insert(g.edges.end(), inner.begin(), inner.end());
  if (spec.ramp_length > 0.0) {
    for (int k = 1; k <= spec.ramp_panels; ++k) {
      g.edges.push_back(spec.R_star + spec.ramp_length * k / spec.ramp_panels);
    }
  }

  const int q = spec.points_per_panel;
  const QuadratureRule jac = gauss_jacobi(q, 0.0, b);
  const QuadratureRule leg = gauss_legendre(q);
  std::vector<double> jac_y(q);
  for (int k = 0; k < q; ++k) {
    jac_y[k] = 0.5 * (1.0 + jac.nodes[k]);
  }
  const std::vector<double> inner_flux = product_weights(jac_y, -b);
  for (std::size_t p = 0; p + 1 < g.edges.size(); ++p) {
    const double lo = g.edges[p];
    const double hi = g.edges[p + 1];
    const double half = 0.5 * (hi - lo);
    if (p == 0) {
      // z = half (1 + x):  z^b dz = half^{1+b} (1 + x)^b dx
      const double scale = std::pow(half, 1.0 + b);
      const double width = hi - lo;
      for (int k = 0; k < q; ++k) {
        const double z = half * (1.0 + jac.nodes[k]);
        g.nodes.push_back(z);
        g.weights.push_back(scale * jac.weights[k]);
        // int_0^w h z^{-b} dz = w^{1-b} int_0^1 h(w y) y^{-b} dy, then multiply back z^{2b}
        g.flux_weights.push_back(std::pow(width, 1.0 - b) * inner_flux[k] * std::pow(z, 2.0 * b));
      }
    } else {
      for (int k = 0; k < q; ++k) {
        const double z = lo + half * (1.0 + leg.nodes[k]);
        g.nodes.push_back(z);
        g.weights.push_back(half * leg.weights[k] * std::pow(z, b));
        g.flux_weights.push_back(g.weights.back());
      }
    }
  }
  return g;
}

/// sum_j w_j g(z_j)  ~  int_0^Z g(z) z^b dz.
inline double weighted_z_integral(std::span<const double> samples, const ZGrid& grid) {
  if (samples.size() != grid.size()) {
    throw ParameterError("weighted_z_integral: sample count does not match the vertical grid");
  }
  double s = 0.0;
  for (std::size_t j = 0; j < samples.size(); ++j) {
    s += grid.weights[j] * samples[j];
  }
  return s;
}

template <class F>
double weighted_z_integral(F&& g, const ZGrid& grid) {
  double s = 0.0;
  for (std::size_t j = 0; j < grid.size(); ++j) {
    s += grid.weights[j] * g(grid.nodes[j]);
  }
  return s;
}

}  // namespace sqg
