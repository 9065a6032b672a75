#pragma once

// Macro domain, (K1, K2)-covers, refined space-time-vertical cutoffs and their
// certificates, and ensemble averages over a cover.
//
// Every spatial cutoff is built from the quintic smoothstep ramp raised to the
// power m = ceil(1 / (1 - delta)).  Derivatives are carried exactly through a
// second-order jet (value, gradient, Hessian).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "sqg/errors.hpp"
#include "sqg/fields.hpp"

namespace sqg {

// ---------------------------------------------------------------- jets

/// f together with its gradient and Hessian in (x1, x2).
struct Jet {
  double v = 0.0;
  double g1 = 0.0;
  double g2 = 0.0;
  double h11 = 0.0;
  double h12 = 0.0;
  double h22 = 0.0;

  static Jet constant(double c) { return Jet{c}; }
  static Jet x1(double x) { return Jet{x, 1.0, 0.0}; }
  static Jet x2(double x) { return Jet{x, 0.0, 1.0}; }
};

inline Jet operator+(const Jet& a, const Jet& b) {
  return {a.v + b.v, a.g1 + b.g1, a.g2 + b.g2, a.h11 + b.h11, a.h12 + b.h12, a.h22 + b.h22};
}
inline Jet operator-(const Jet& a, const Jet& b) {
  return {a.v - b.v, a.g1 - b.g1, a.g2 - b.g2, a.h11 - b.h11, a.h12 - b.h12, a.h22 - b.h22};
}
inline Jet operator+(const Jet& a, double c) { return {a.v + c, a.g1, a.g2, a.h11, a.h12, a.h22}; }
inline Jet operator-(const Jet& a, double c) { return {a.v - c, a.g1, a.g2, a.h11, a.h12, a.h22}; }
inline Jet operator*(double c, const Jet& a) {
  return {c * a.v, c * a.g1, c * a.g2, c * a.h11, c * a.h12, c * a.h22};
}
inline Jet operator*(const Jet& a, const Jet& b) {
  return {a.v * b.v,
          a.v * b.g1 + b.v * a.g1,
          a.v * b.g2 + b.v * a.g2,
          a.v * b.h11 + b.v * a.h11 + 2.0 * a.g1 * b.g1,
          a.v * b.h12 + b.v * a.h12 + a.g1 * b.g2 + a.g2 * b.g1,
          a.v * b.h22 + b.v * a.h22 + 2.0 * a.g2 * b.g2};
}

/// f(a) given f, f', f'' at a.v.
inline Jet chain(const Jet& a, double f, double f1, double f2) {
  return {f,
          f1 * a.g1,
          f1 * a.g2,
          f1 * a.h11 + f2 * a.g1 * a.g1,
          f1 * a.h12 + f2 * a.g1 * a.g2,
          f1 * a.h22 + f2 * a.g2 * a.g2};
}

inline Jet sqrt(const Jet& a) {
  const double s = std::sqrt(a.v);
  return chain(a, s, 0.5 / s, -0.25 / (s * a.v));
}

inline Jet reciprocal(const Jet& a) { return chain(a, 1.0 / a.v, -1.0 / (a.v * a.v), 2.0 / (a.v * a.v * a.v)); }

inline Jet power(const Jet& a, int m) {
  if (m == 1) {
    return a;
  }
  const double p2 = std::pow(a.v, m - 2);
  return chain(a, p2 * a.v * a.v, m * p2 * a.v, m * (m - 1.0) * p2);
}

// ---------------------------------------------------------------- ramps

/// Value and first two derivatives of a scalar profile.
struct Profile3 {
  double f = 0.0;
  double f1 = 0.0;
  double f2 = 0.0;
};

/// S(x) = 6x^5 - 15x^4 + 10x^3 on [0, 1], clamped outside.
inline Profile3 smoothstep(double x) {
  if (x <= 0.0) {
    return {0.0, 0.0, 0.0};
  }
  if (x >= 1.0) {
    return {1.0, 0.0, 0.0};
  }
  const double y = 1.0 - x;
  return {x * x * x * (10.0 - 15.0 * x + 6.0 * x * x), 30.0 * x * x * y * y, 60.0 * x * y * (1.0 - 2.0 * x)};
}

/// 1 on (-inf, a], 0 on [b, inf), smoothstep in between.  Uses 1 - S(x) = S(1 - x)
/// so the value keeps full relative precision near b.
inline Profile3 ramp_down(double r, double a, double b) {
  const double w = b - a;
  const Profile3 s = smoothstep((b - r) / w);
  return {s.f, -s.f1 / w, s.f2 / (w * w)};
}

inline Profile3 profile_power(const Profile3& p, int m) {
  if (p.f <= 0.0) {
    return {0.0, 0.0, 0.0};
  }
  const double q = std::pow(p.f, m - 2);
  return {q * p.f * p.f, m * q * p.f * p.f1, m * q * (p.f * p.f2 + (m - 1.0) * p.f1 * p.f1)};
}

inline int default_power(double delta) { return static_cast<int>(std::ceil(1.0 / (1.0 - delta) - 1e-12)); }

inline void check_delta(double delta) {
  if (!(delta > 0.5 && delta < 1.0)) {
    throw ParameterError("delta must lie in (1/2, 1), got " + std::to_string(delta));
  }
}

// ---------------------------------------------------------------- macro domain

struct MacroDomain {
  double x1 = 0.0;
  double x2 = 0.0;
  double R0 = 1.0;
  double T = 1.0;
  double alpha = 1.0;

  /// Torus fit with a margin of R0 around B(x0, 2 R0), and 2T >= R0^alpha.
  void validate(const Grid& g) const {
    if (!(R0 > 0.0) || !(T > 0.0)) {
      throw ParameterError("macro domain needs R0 > 0 and T > 0");
    }
    check_alpha(alpha);
    if (2.0 * T < std::pow(R0, alpha) * (1.0 - 1e-12)) {
      throw ParameterError("macro domain violates 2T >= R0^alpha (2T = " + std::to_string(2.0 * T) +
                           ", R0^alpha = " + std::to_string(std::pow(R0, alpha)) + ")");
    }
    const double reach = 3.0 * R0;
    if (x1 - reach < 0.0 || x2 - reach < 0.0 || x1 + reach > g.L || x2 + reach > g.L) {
      throw ParameterError("B(x0, 2 R0) plus a margin of R0 must fit inside the periodic box [0, L)^2");
    }
  }
};

// ---------------------------------------------------------------- covers

struct Point {
  double x1 = 0.0;
  double x2 = 0.0;
};

struct Cover {
  MacroDomain macro;
  double R = 1.0;
  std::vector<Point> centers;
  int K1 = 8;
  int K2 = 8;

  std::size_t size() const { return centers.size(); }
};

struct CoverCert {
  std::size_t n = 0;
  double R = 0.0;
  double K1_eff = 0.0;
  /// max number of open balls B(x_i, R) containing a sample of the macro ball
  int K2_ball = 0;
  int samples_per_R = 0;
  std::size_t samples = 0;
};

namespace detail {

/// Dense samples of the closed ball: a square lattice of spacing R / samples_per_R
/// plus points on the bounding circle.
inline std::vector<Point> ball_samples(const MacroDomain& m, double R, int samples_per_R) {
  const double h = R / samples_per_R;
  const int k = static_cast<int>(std::ceil(m.R0 / h));
  std::vector<Point> pts;
  for (int j = -k; j <= k; ++j) {
    for (int i = -k; i <= k; ++i) {
      const double a = i * h, b = j * h;
      if (a * a + b * b <= m.R0 * m.R0) {
        pts.push_back({m.x1 + a, m.x2 + b});
      }
    }
  }
  const int ring = std::max(16, static_cast<int>(std::ceil(2.0 * std::numbers::pi * m.R0 / h)));
  for (int q = 0; q < ring; ++q) {
    const double t = 2.0 * std::numbers::pi * q / ring;
    pts.push_back({m.x1 + m.R0 * std::cos(t), m.x2 + m.R0 * std::sin(t)});
  }
  return pts;
}

inline double dist2(const Point& a, const Point& b) {
  const double d1 = a.x1 - b.x1, d2 = a.x2 - b.x2;
  return d1 * d1 + d2 * d2;
}

// closed-ball membership with a relative tolerance for boundary samples
inline bool in_closed_ball(const Point& p, const Point& c, double R) { return dist2(p, c) <= R * R * (1.0 + 1e-12); }

}  // namespace detail

/// Counts, multiplicity census and coverage of B(x0, R0) on a dense sample.
inline CoverCert validate_cover(const Cover& cover, int samples_per_R = 16) {
  if (cover.centers.empty() || !(cover.R > 0.0)) {
    throw ParameterError("validate_cover: empty cover or nonpositive scale");
  }
  const MacroDomain& m = cover.macro;
  CoverCert cert;
  cert.n = cover.size();
  cert.R = cover.R;
  cert.samples_per_R = samples_per_R;
  cert.K1_eff = static_cast<double>(cert.n) * cover.R * cover.R / (m.R0 * m.R0);
  const auto pts = detail::ball_samples(m, cover.R, samples_per_R);
  cert.samples = pts.size();
  const double R2 = cover.R * cover.R;
  for (const Point& p : pts) {
    bool covered = false;
    int open = 0;
    for (const Point& c : cover.centers) {
      const double d2 = detail::dist2(p, c);
      covered = covered || d2 <= R2 * (1.0 + 1e-12);
      open += d2 < R2 ? 1 : 0;
    }
    if (!covered) {
      throw InvalidCoverError("invalid cover at R = " + std::to_string(cover.R) + ": sample point (" +
                                  std::to_string(p.x1) + ", " + std::to_string(p.x2) + ") is not covered",
                              p.x1, p.x2);
    }
    cert.K2_ball = std::max(cert.K2_ball, open);
  }
  return cert;
}

/// Square lattice of spacing R sqrt(2) (1 - 0.03 - jitter) through x0, restricted
/// to the closed macro ball, optionally jittered, then completed greedily on a
/// sample four times denser than `samples_per_R`.  A sample counts as covered only
/// within R - 1.5 h (h the dense spacing); every point of the ball lies within 1.5 h
/// of a sample, so the cover is exact, not just exact on the sample.  R = R0 gives
/// the single ball B(x0, R0).
inline Cover generate_cover(const MacroDomain& macro, double R, int K1 = 8, int K2 = 8, std::uint64_t seed = 0,
                            double jitter = 0.0, int samples_per_R = 16) {
  if (!(R > 0.0) || R > macro.R0 * (1.0 + 1e-12)) {
    throw ParameterError("generate_cover: need 0 < R <= R0");
  }
  if (!(jitter >= 0.0 && jitter <= 0.05)) {
    throw ParameterError("generate_cover: jitter must lie in [0, 0.05] (fraction of R)");
  }
  Cover cover{macro, R, {}, K1, K2};
  if (R >= macro.R0 * (1.0 - 1e-12)) {
    cover.centers.push_back({macro.x1, macro.x2});
    return cover;
  }
  const double h = R * std::numbers::sqrt2 * (1.0 - 0.03 - jitter);
  const int k = static_cast<int>(std::ceil(macro.R0 / h));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  const Point x0{macro.x1, macro.x2};
  for (int j = -k; j <= k; ++j) {
    for (int i = -k; i <= k; ++i) {
      Point c{macro.x1 + i * h, macro.x2 + j * h};
      if (!detail::in_closed_ball(c, x0, macro.R0)) {
        continue;
      }
      if (jitter > 0.0) {
        double a, b;
        do {
          a = unit(rng);
          b = unit(rng);
        } while (a * a + b * b > 1.0);
        c.x1 += jitter * R * a;
        c.x2 += jitter * R * b;
        const double d = std::sqrt(detail::dist2(c, x0));
        if (d > macro.R0) {
          c.x1 = macro.x1 + (c.x1 - macro.x1) * macro.R0 / d;
          c.x2 = macro.x2 + (c.x2 - macro.x2) * macro.R0 / d;
        }
      }
      cover.centers.push_back(c);
    }
  }
  const int dense = 4 * samples_per_R;
  const double reach = R - 1.5 * R / dense;
  for (const Point& p : detail::ball_samples(macro, R, dense)) {
    const bool covered = std::any_of(cover.centers.begin(), cover.centers.end(),
                                     [&](const Point& c) { return detail::dist2(p, c) <= reach * reach; });
    if (!covered) {
      cover.centers.push_back(p);
    }
  }
  const double q = (macro.R0 / R) * (macro.R0 / R);
  const double n = static_cast<double>(cover.size());
  if (n < q * (1.0 - 1e-12)) {
    throw ParameterError("cover infeasible: n = " + std::to_string(cover.size()) + " violates (R0/R)^2 <= n");
  }
  if (n > K1 * q * (1.0 + 1e-12)) {
    throw ParameterError("cover infeasible: n = " + std::to_string(cover.size()) +
                         " violates n <= K1 (R0/R)^2 = " + std::to_string(K1 * q));
  }
  const CoverCert cert = validate_cover(cover, samples_per_R);
  if (cert.K2_ball > K2) {
    throw ParameterError("cover infeasible: sampled multiplicity " + std::to_string(cert.K2_ball) +
                         " exceeds K2 = " + std::to_string(K2));
  }
  return cover;
}

// ---------------------------------------------------------------- cutoffs

struct CutoffParams {
  double delta = 0.75;
  /// 0 selects ceil(1 / (1 - delta))
  int m = 0;
  /// width of the retraction band, as a fraction of R
  double lambda = 0.5;
  /// vertical plateau [0, R*]; the ramp to zero has length R0
  double R_star = 0.0;

  int power() const { return m > 0 ? m : default_power(delta); }
};

/// eta(t) = h(t)^m, h = 0 on [0, T/3], 1 on [2T/3, 4T/3], 0 from 5T/3.
struct TimeProfile {
  double T = 1.0;
  int m = 4;

  Profile3 operator()(double t) const {
    const double w = T / 3.0;
    Profile3 h;
    if (t < 2.0 * w) {
      const Profile3 s = smoothstep((t - w) / w);
      h = {s.f, s.f1 / w, s.f2 / (w * w)};
    } else {
      h = ramp_down(t, 4.0 * w, 5.0 * w);
    }
    return profile_power(h, m);
  }
};

/// psi*(z) = g(z)^m, g = 1 on [0, R*], 0 from R* + length.
struct VerticalProfile {
  double R_star = 1.0;
  double length = 1.0;
  int m = 4;

  Profile3 operator()(double z) const { return profile_power(ramp_down(z, R_star, R_star + length), m); }
};

enum class CutoffKind { interior, boundary, macro };

inline const char* to_string(CutoffKind k) {
  switch (k) {
    case CutoffKind::interior:
      return "interior";
    case CutoffKind::boundary:
      return "boundary";
    case CutoffKind::macro:
      return "macro";
  }
  return "?";
}

/// Spatial factor psi of one cutoff.
///   macro:    g(|x - x0|)^m with ramp [R0, 2 R0]
///   interior: g(|x - x_i|)^m with ramp [R, 2R], used when B(x_i, R) lies in B(x0, R0 - lambda R)
///   boundary: g_b(|r(x) - x_i|)^m psi0(x), g_b ramping on [R (1 + lambda/5), 2R], where r is a
///             C^2 radial retraction onto the closed macro ball that is the identity on
///             B(x0, R0 - lambda R)
struct SpatialCutoff {
  CutoffKind kind = CutoffKind::interior;
  Point center;
  double R = 1.0;
  MacroDomain macro;
  int m = 4;
  double lambda = 0.5;

  Jet eval(double y1, double y2) const {
    const Jet x1 = Jet::x1(y1), x2 = Jet::x2(y2);
    switch (kind) {
      case CutoffKind::macro:
        return macro_factor(x1, x2);
      case CutoffKind::interior:
        return radial(x1, x2, center, R, 2.0 * R);
      case CutoffKind::boundary: {
        const Jet pm = macro_factor(x1, x2);
        if (pm.v == 0.0) {
          return Jet{};
        }
        Jet r1, r2;
        retract(x1, x2, r1, r2);
        return radial(r1, r2, center, R * (1.0 + 0.2 * lambda), 2.0 * R) * pm;
      }
    }
    return Jet{};
  }

  double value(double y1, double y2) const { return eval(y1, y2).v; }

  /// Axis-aligned box containing the support.
  void bounding_box(double& lo1, double& hi1, double& lo2, double& hi2) const {
    auto box = [&](const Point& c, double r) {
      lo1 = c.x1 - r;
      hi1 = c.x1 + r;
      lo2 = c.x2 - r;
      hi2 = c.x2 + r;
    };
    const Point x0{macro.x1, macro.x2};
    if (kind == CutoffKind::macro) {
      box(x0, 2.0 * macro.R0);
      return;
    }
    box(center, 2.0 * R);
    if (kind == CutoffKind::interior) {
      return;
    }
    // retracted points reach out along rays through x_i
    const double d = std::sqrt(detail::dist2(center, x0));
    if (d <= 2.0 * R) {
      box(x0, 2.0 * macro.R0);
      return;
    }
    const double half = std::asin(2.0 * R / d);
    const double th = std::atan2(center.x2 - macro.x2, center.x1 - macro.x1);
    const double inner = macro.R0 - lambda * R;
    constexpr int kArc = 64;
    for (int q = 0; q <= kArc; ++q) {
      const double a = th - half + 2.0 * half * q / kArc;
      for (double t : {inner, 2.0 * macro.R0}) {
        const double p1 = macro.x1 + t * std::cos(a), p2 = macro.x2 + t * std::sin(a);
        lo1 = std::min(lo1, p1);
        hi1 = std::max(hi1, p1);
        lo2 = std::min(lo2, p2);
        hi2 = std::max(hi2, p2);
      }
    }
    // chord sagitta of the sampled arcs
    const double pad = 2.0 * macro.R0 * (1.0 - std::cos(half / kArc)) + 1e-9;
    lo1 = std::max(lo1 - pad, x0.x1 - 2.0 * macro.R0);
    hi1 = std::min(hi1 + pad, x0.x1 + 2.0 * macro.R0);
    lo2 = std::max(lo2 - pad, x0.x2 - 2.0 * macro.R0);
    hi2 = std::min(hi2 + pad, x0.x2 + 2.0 * macro.R0);
  }

 private:
  Jet radial(const Jet& x1, const Jet& x2, const Point& c, double a, double b) const {
    const Jet d1 = x1 - c.x1, d2 = x2 - c.x2;
    const Jet r2 = d1 * d1 + d2 * d2;
    if (r2.v <= a * a) {
      return Jet::constant(1.0);
    }
    if (r2.v >= b * b) {
      return Jet{};
    }
    const Jet r = sqrt(r2);
    const Profile3 g = ramp_down(r.v, a, b);
    return power(chain(r, g.f, g.f1, g.f2), m);
  }

  Jet macro_factor(const Jet& x1, const Jet& x2) const {
    return radial(x1, x2, Point{macro.x1, macro.x2}, macro.R0, 2.0 * macro.R0);
  }

  // q(s) = 6s^3 - 8s^4 + 3s^5 joins rho = R0 (s = 0) to rho = r (s = 1) with C^2 contact
  void retract(const Jet& x1, const Jet& x2, Jet& r1, Jet& r2) const {
    const double inner = macro.R0 - lambda * R;
    const Jet d1 = x1 - macro.x1, d2 = x2 - macro.x2;
    const Jet rr = d1 * d1 + d2 * d2;
    if (rr.v <= inner * inner) {
      r1 = x1;
      r2 = x2;
      return;
    }
    const Jet r = sqrt(rr);
    Profile3 rho;
    if (r.v >= macro.R0) {
      rho = {macro.R0, 0.0, 0.0};
    } else {
      const double w = lambda * R;
      const double s = (macro.R0 - r.v) / w;
      const double q = s * s * s * (6.0 - 8.0 * s + 3.0 * s * s);
      const double q1 = s * s * (18.0 - 32.0 * s + 15.0 * s * s);
      const double q2 = s * (36.0 - 96.0 * s + 60.0 * s * s);
      rho = {macro.R0 - w * q, q1, -q2 / w};
    }
    const Jet scale = chain(r, rho.f, rho.f1, rho.f2) * reciprocal(r);
    r1 = scale * d1 + macro.x1;
    r2 = scale * d2 + macro.x2;
  }
};

/// Cutoff values and gradients on the field grid, restricted to the support.
struct Support {
  std::vector<std::uint32_t> idx;
  std::vector<double> psi;
  std::vector<double> d1;
  std::vector<double> d2;

  std::size_t size() const { return idx.size(); }
};

namespace detail {

inline void grid_range(const Grid& g, double lo, double hi, int& a, int& b) {
  const double dx = g.dx();
  a = static_cast<int>(std::ceil(lo / dx - 1e-9));
  b = static_cast<int>(std::floor(hi / dx + 1e-9));
  if (a < 0 || b >= g.N) {
    throw ParameterError("cutoff support leaves the periodic box; enlarge L or move x0");
  }
}

}  // namespace detail

inline Support tabulate(const SpatialCutoff& c, const Grid& g) {
  double lo1, hi1, lo2, hi2;
  c.bounding_box(lo1, hi1, lo2, hi2);
  int i0, i1, j0, j1;
  detail::grid_range(g, lo1, hi1, i0, i1);
  detail::grid_range(g, lo2, hi2, j0, j1);
  Support s;
  const double dx = g.dx();
  for (int j = j0; j <= j1; ++j) {
    for (int i = i0; i <= i1; ++i) {
      const Jet v = c.eval(i * dx, j * dx);
      if (v.v > 0.0) {
        s.idx.push_back(static_cast<std::uint32_t>(j * g.N + i));
        s.psi.push_back(v.v);
        s.d1.push_back(v.g1);
        s.d2.push_back(v.g2);
      }
    }
  }
  return s;
}

/// Refined cutoffs phi_i = eta psi_i for every cover element, the macro cutoff
/// phi_0 = eta psi_0, and the shared vertical factor psi*.
struct CutoffFamily {
  Grid grid;
  MacroDomain macro;
  double R = 1.0;
  double delta = 0.75;
  int m = 4;
  double lambda = 0.5;
  TimeProfile time;
  VerticalProfile vertical;
  SpatialCutoff macro_cutoff;
  std::vector<SpatialCutoff> elements;
  Support macro_support;
  std::vector<Support> supports;

  std::size_t size() const { return elements.size(); }
};

inline SpatialCutoff make_macro_cutoff(const MacroDomain& macro, int m) {
  SpatialCutoff c;
  c.kind = CutoffKind::macro;
  c.center = {macro.x1, macro.x2};
  c.R = macro.R0;
  c.macro = macro;
  c.m = m;
  return c;
}

inline SpatialCutoff build_cutoff(const MacroDomain& macro, const Point& center, double R, const CutoffParams& p) {
  check_delta(p.delta);
  if (!(p.lambda > 0.0 && p.lambda <= 0.5)) {
    throw ParameterError("cutoff band fraction lambda must lie in (0, 1/2]");
  }
  SpatialCutoff c;
  c.center = center;
  c.R = R;
  c.macro = macro;
  c.m = p.power();
  c.lambda = p.lambda;
  const double d = std::sqrt(detail::dist2(center, Point{macro.x1, macro.x2}));
  c.kind = d + R <= macro.R0 - p.lambda * R ? CutoffKind::interior : CutoffKind::boundary;
  return c;
}

inline CutoffFamily build_family(const Grid& g, const Cover& cover, const CutoffParams& p) {
  check_delta(p.delta);
  cover.macro.validate(g);
  CutoffFamily f;
  f.grid = g;
  f.macro = cover.macro;
  f.R = cover.R;
  f.delta = p.delta;
  f.m = p.power();
  f.lambda = p.lambda;
  f.time = TimeProfile{cover.macro.T, f.m};
  f.vertical = VerticalProfile{p.R_star > 0.0 ? p.R_star : cover.macro.R0, cover.macro.R0, f.m};
  f.macro_cutoff = make_macro_cutoff(cover.macro, f.m);
  f.macro_support = tabulate(f.macro_cutoff, g);
  for (const Point& c : cover.centers) {
    f.elements.push_back(build_cutoff(cover.macro, c, cover.R, p));
    f.supports.push_back(tabulate(f.elements.back(), g));
  }
  return f;
}

// ---------------------------------------------------------------- certificates

/// Suprema of the refined ratio conditions for one spatial factor, scaled by its
/// own length R:  R |d psi| / psi^delta,  R^2 |d^2 psi| / psi^{2 delta - 1},
/// R^2 |grad psi|^2 / psi^{2 delta}.
struct RatioSup {
  double grad = 0.0;
  double hess = 0.0;
  double grad_sq = 0.0;

  void merge(const RatioSup& o) {
    grad = std::max(grad, o.grad);
    hess = std::max(hess, o.hess);
    grad_sq = std::max(grad_sq, o.grad_sq);
  }
};

inline void accumulate_ratios(RatioSup& s, const Jet& v, double R, double delta) {
  if (!(v.v > 0.0)) {
    return;
  }
  const double gmax = std::max(std::abs(v.g1), std::abs(v.g2));
  const double hmax = std::max({std::abs(v.h11), std::abs(v.h12), std::abs(v.h22)});
  s.grad = std::max(s.grad, R * gmax / std::pow(v.v, delta));
  s.hess = std::max(s.hess, R * R * hmax / std::pow(v.v, 2.0 * delta - 1.0));
  s.grad_sq = std::max(s.grad_sq, R * R * (v.g1 * v.g1 + v.g2 * v.g2) / std::pow(v.v, 2.0 * delta));
}

/// Sample an evaluator Jet(x1, x2) on a lattice of spacing h over [lo1, hi1] x [lo2, hi2].
template <class Eval>
RatioSup measure_ratios(Eval&& eval, double lo1, double hi1, double lo2, double hi2, double h, double R,
                        double delta) {
  RatioSup s;
  const int n1 = static_cast<int>(std::floor((hi1 - lo1) / h)) + 1;
  const int n2 = static_cast<int>(std::floor((hi2 - lo2) / h)) + 1;
  for (int j = 0; j < n2; ++j) {
    for (int i = 0; i < n1; ++i) {
      accumulate_ratios(s, eval(lo1 + i * h, lo2 + j * h), R, delta);
    }
  }
  return s;
}

/// sup T |eta'| / eta^{2 delta - 1} over n uniform samples of [0, 2T], plus probes
/// at distances (T/3) 2^-j, j = 1..octaves, inside both edges of the support.
inline double time_ratio(const TimeProfile& eta, double delta, int n, int octaves = 0) {
  double sup = 0.0;
  auto at = [&](double t) {
    const Profile3 e = eta(t);
    if (e.f > 0.0) {
      sup = std::max(sup, eta.T * std::abs(e.f1) / std::pow(e.f, 2.0 * delta - 1.0));
    }
  };
  for (int k = 0; k <= n; ++k) {
    at(2.0 * eta.T * k / n);
  }
  const double w = eta.T / 3.0;
  for (int j = 1; j <= octaves; ++j) {
    at(w + w * std::ldexp(1.0, -j));
    at(5.0 * w - w * std::ldexp(1.0, -j));
  }
  return sup;
}

/// sup psi*'^2 / psi*^{2 delta} over n uniform samples of the ramp, plus edge probes.
inline double vertical_ratio(const VerticalProfile& v, double delta, int n, int octaves = 0) {
  double sup = 0.0;
  auto at = [&](double z) {
    const Profile3 p = v(z);
    if (p.f > 0.0) {
      sup = std::max(sup, p.f1 * p.f1 / std::pow(p.f, 2.0 * delta));
    }
  };
  for (int k = 0; k <= n; ++k) {
    at(v.R_star + v.length * k / n);
  }
  for (int j = 1; j <= octaves; ++j) {
    at(v.R_star + v.length - v.length * std::ldexp(1.0, -j));
  }
  return sup;
}

struct CutoffCert {
  double C0_time = 0.0;
  double C0_grad = 0.0;
  double C0_hess = 0.0;
  /// R^2 [sup |grad psi|^2 / psi^{2 delta} + sup psi*'^2 / psi*^{2 delta}], worst element
  double C_A2 = 0.0;
  double C0_eff = 0.0;
  RatioSup interior;
  RatioSup boundary;
  RatioSup macro;
  std::size_t interior_count = 0;
  std::size_t boundary_count = 0;
  /// sample spacing of the spatial suprema
  double spacing = 0.0;
  int refine = 4;
  /// relative change of C0_eff when the sampling is doubled
  double refinement_change = 0.0;
};

namespace detail {

inline constexpr int kEdgeOctaves = 24;

inline CutoffCert measure_family(const CutoffFamily& f, int refine) {
  CutoffCert c;
  c.refine = refine;
  c.spacing = f.grid.dx() / refine;
  const double h = c.spacing;
  auto sample = [&](const SpatialCutoff& s, double scale) {
    double lo1, hi1, lo2, hi2;
    s.bounding_box(lo1, hi1, lo2, hi2);
    return measure_ratios([&](double a, double b) { return s.eval(a, b); }, lo1, hi1, lo2, hi2, h, scale,
                          f.delta);
  };
  // A lattice sample that happens to sit very close to the edge of a support can
  // fix the sampled supremum at every density, so each radial ramp is also probed
  // at geometric distances from its outer edge; one more octave per doubling.
  const int octaves = kEdgeOctaves + static_cast<int>(std::lround(std::log2(static_cast<double>(refine))));
  auto probe = [&](const SpatialCutoff& s, double ramp, RatioSup& into) {
    for (int j = 1; j <= octaves; ++j) {
      accumulate_ratios(into, s.eval(s.center.x1 + 2.0 * s.R - ramp * std::ldexp(1.0, -j), s.center.x2), s.R,
                        f.delta);
    }
  };
  c.macro = sample(f.macro_cutoff, f.macro.R0);
  probe(f.macro_cutoff, f.macro.R0, c.macro);
  for (const SpatialCutoff& s : f.elements) {
    const RatioSup r = sample(s, f.R);
    if (s.kind == CutoffKind::interior) {
      if (c.interior_count == 0) {
        probe(s, s.R, c.interior);
      }
      c.interior.merge(r);
      ++c.interior_count;
    } else {
      c.boundary.merge(r);
      ++c.boundary_count;
    }
  }
  // 1/T scaling of the time ratio sampled at the same relative density as space
  const int nt = std::max(2000, static_cast<int>(std::ceil(2.0 * f.macro.R0 / h)) * 4);
  c.C0_time = time_ratio(f.time, f.delta, nt, octaves);
  const double vz = vertical_ratio(f.vertical, f.delta, nt, octaves);
  RatioSup all = c.interior;
  all.merge(c.boundary);
  c.C0_grad = std::max(all.grad, c.macro.grad);
  c.C0_hess = std::max(all.hess, c.macro.hess);
  c.C_A2 = std::max(all.grad_sq + f.R * f.R * vz, c.macro.grad_sq + f.macro.R0 * f.macro.R0 * vz);
  c.C0_eff = std::max({c.C0_time, c.C0_grad, c.C0_hess, std::sqrt(c.C_A2)});
  return c;
}

}  // namespace detail

/// Measure the ratio constants on a lattice `refine` times finer than the field
/// grid, and again at twice that density; a change above 5% means some ratio is
/// unbounded near the edge of a support.
inline CutoffCert certify_family(const CutoffFamily& f, int refine = 4, double tolerance = 0.05) {
  CutoffCert c = detail::measure_family(f, refine);
  const CutoffCert fine = detail::measure_family(f, 2 * refine);
  auto rel = [](double a, double b) { return std::abs(a - b) / std::max(std::abs(a), 1e-300); };
  c.refinement_change = std::max({rel(c.C0_eff, fine.C0_eff), rel(c.C0_time, fine.C0_time),
                                  rel(c.C0_grad, fine.C0_grad), rel(c.C0_hess, fine.C0_hess)});
  if (!std::isfinite(fine.C0_eff) || c.refinement_change > tolerance) {
    throw CertificationError("cutoff certificate unstable under 2x sampling (relative change " +
                             std::to_string(c.refinement_change) + "): delta = " + std::to_string(f.delta) +
                             " is too large for the power m = " + std::to_string(f.m));
  }
  return c;
}

/// Support multiplicity and the pointwise partition facts on the field grid.
struct FamilyCert {
  CoverCert cover;
  /// max number of supports containing a grid point
  int K2_eff = 0;
  /// sum_i psi_i >= psi0 at every grid point
  bool partition = false;
  double partition_min_ratio = 0.0;
  /// sum_i psi_i^{2 delta - 1} <= K2_eff psi0^{2 delta - 1} at every grid point
  bool domination = false;
  /// psi_i <= psi0 at every grid point
  bool below_macro = false;
};

inline FamilyCert certify_cover_family(const Cover& cover, const CutoffFamily& f, int samples_per_R = 16) {
  FamilyCert fc;
  fc.cover = validate_cover(cover, samples_per_R);
  const std::size_t np = f.grid.points();
  std::vector<int> count(np, 0);
  std::vector<double> sum(np, 0.0), sum_pow(np, 0.0), psi0(np, 0.0);
  const double e = 2.0 * f.delta - 1.0;
  for (std::size_t k = 0; k < f.macro_support.size(); ++k) {
    psi0[f.macro_support.idx[k]] = f.macro_support.psi[k];
  }
  fc.below_macro = true;
  for (const Support& s : f.supports) {
    for (std::size_t k = 0; k < s.size(); ++k) {
      const auto p = s.idx[k];
      ++count[p];
      sum[p] += s.psi[k];
      sum_pow[p] += std::pow(s.psi[k], e);
      if (s.psi[k] > psi0[p] * (1.0 + 1e-12) + 1e-300) {
        fc.below_macro = false;
      }
    }
  }
  fc.K2_eff = *std::max_element(count.begin(), count.end());
  fc.partition = true;
  fc.domination = true;
  fc.partition_min_ratio = std::numeric_limits<double>::infinity();
  for (std::size_t p = 0; p < np; ++p) {
    if (psi0[p] > 0.0) {
      fc.partition_min_ratio = std::min(fc.partition_min_ratio, sum[p] / psi0[p]);
      if (sum[p] < psi0[p] * (1.0 - 1e-12)) {
        fc.partition = false;
      }
      if (sum_pow[p] > fc.K2_eff * std::pow(psi0[p], e) * (1.0 + 1e-12)) {
        fc.domination = false;
      }
    }
  }
  return fc;
}

// ---------------------------------------------------------------- averages

/// Trapezoidal weights for a (possibly nonuniform) increasing time list.
inline std::vector<double> trapezoid_weights(std::span<const double> t) {
  std::vector<double> w(t.size(), 0.0);
  for (std::size_t k = 0; k + 1 < t.size(); ++k) {
    const double h = 0.5 * (t[k + 1] - t[k]);
    w[k] += h;
    w[k + 1] += h;
  }
  return w;
}

/// (1/n) sum_i (1/(T R^2)) int int g phi_i dx dt, trapezoidal in t, grid sum in x.
/// `density(k)` returns the values of g at times[k] on the family's grid.
template <class Density>
double ensemble_average(std::span<const double> times, Density&& density, const CutoffFamily& f) {
  if (f.elements.empty()) {
    throw ParameterError("ensemble_average: empty cutoff family");
  }
  const std::vector<double> w = trapezoid_weights(times);
  const double area = f.grid.dx() * f.grid.dx();
  std::vector<double> per(f.size(), 0.0);
  for (std::size_t k = 0; k < times.size(); ++k) {
    const double eta = f.time(times[k]).f;
    if (eta == 0.0 || w[k] == 0.0) {
      continue;
    }
    const auto& g = density(k);
    for (std::size_t i = 0; i < f.size(); ++i) {
      const Support& s = f.supports[i];
      double acc = 0.0;
      for (std::size_t q = 0; q < s.size(); ++q) {
        acc += g[s.idx[q]] * s.psi[q];
      }
      per[i] += w[k] * eta * acc * area;
    }
  }
  double total = 0.0;
  for (double v : per) {
    total += v;
  }
  return total / (static_cast<double>(f.size()) * f.macro.T * f.R * f.R);
}

}  // namespace sqg
