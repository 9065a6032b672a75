#pragma once

// Localized variance flux and its decomposition
//   F_i = D_i + X_i - P_i
// (dissipation, cross term, time-cutoff term), macro averages, the inequality
// chain behind the cascade bounds, and flux-locality ratios.
//
// Every per-element quantity carries the 1/(T R^2) normalization.  Extension-side
// integrals are multiplied by kappa / d_alpha so they are expressed in the
// solver's kappa Lambda^alpha units.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "sqg/errors.hpp"
#include "sqg/extension.hpp"
#include "sqg/fields.hpp"
#include "sqg/multiscale.hpp"
#include "sqg/quadrature.hpp"
#include "sqg/solver.hpp"

namespace sqg {

/// Random access to stored snapshots; `load` may read from disk.
struct SnapshotSource {
  Grid grid;
  double alpha = 1.0;
  double kappa = 1.0;
  std::vector<double> times;
  std::function<ScalarField(std::size_t)> load;
};

inline SnapshotSource source_of(const Trajectory& traj) {
  SnapshotSource s;
  s.grid = traj.config.grid;
  s.alpha = traj.config.alpha;
  s.kappa = traj.config.kappa;
  s.times = traj.times;
  s.load = [&traj](std::size_t k) { return traj.snapshots[k]; };
  return s;
}

struct FluxTerms {
  /// advective flux  (1/(T R^2)) int int 1/2 theta^2 (grad phi . u)
  double F = 0.0;
  /// the same from  -(1/(T R^2)) int int (u . grad theta) theta phi
  double F_dual = 0.0;
  double D = 0.0;
  double X = 0.0;
  /// (1/(T R^2)) int int 1/2 theta^2 d_t phi
  double P = 0.0;
  /// Young-step remainder: (1/(T R^2)) int int int (|grad phi*|^2 / phi*) 1/2 theta*^2 z^b
  double A2 = 0.0;

  double residual() const { return F - (D + X - P); }
  double relative_residual() const {
    const double s = std::max(std::abs(F), D);
    return s > 0.0 ? std::abs(residual()) / s : 0.0;
  }
};

struct MacroAverages {
  double theta0 = 0.0;
  double theta0_star = 0.0;
  double eps0_star = 0.0;
  double alpha = 1.0;

  bool sigma0_defined() const { return eps0_star > 0.0; }
  double sigma0() const {
    if (!sigma0_defined()) {
      throw PreconditionError("sigma0 is undefined: the macro dissipation eps0* vanishes");
    }
    return std::max(std::pow(theta0 / eps0_star, 1.0 / alpha), std::sqrt(theta0_star / eps0_star));
  }
};

/// min{(8 C0 K1 K2)^{-1/2}, (8 C0 K1 K2)^{-1/alpha}}
inline double beta_declared(double C0, double K1, double K2, double alpha) {
  const double q = 8.0 * C0 * K1 * K2;
  return std::min(std::pow(q, -0.5), std::pow(q, -1.0 / alpha));
}

/// min{(16 C0 K1 K2)^{-1/alpha}, (8 C0^2 K1 K2)^{-1/2}}: the value for which
/// A1 + A2 <= eps0* / (4 K1) follows from the certified bounds.
inline double beta_effective(double C0, double K1, double K2, double alpha) {
  return std::min(std::pow(16.0 * C0 * K1 * K2, -1.0 / alpha), std::pow(8.0 * C0 * C0 * K1 * K2, -0.5));
}

struct EngineOptions {
  /// vertical grid for the extension (R_star and ramp_length are taken from the families)
  ZGridSpec zgrid;
  /// compute D, X, A2 and the starred macro averages
  bool with_extension = true;
};

struct EngineResult {
  MacroAverages macro;
  /// per family, per element
  std::vector<std::vector<FluxTerms>> terms;
  double d_alpha = 1.0;
  std::size_t snapshots_used = 0;
};

namespace detail {

inline void check_same_macro(const CutoffFamily& a, const CutoffFamily& b) {
  const bool same = a.macro.x1 == b.macro.x1 && a.macro.x2 == b.macro.x2 && a.macro.R0 == b.macro.R0 &&
                    a.macro.T == b.macro.T && a.delta == b.delta && a.m == b.m &&
                    a.vertical.R_star == b.vertical.R_star && a.grid == b.grid;
  if (!same) {
    throw ParameterError("all cutoff families in one pass must share the macro domain, delta, m and grid");
  }
}

/// Horizontal fields of one snapshot that the element sums consume.
struct SnapshotDensities {
  std::vector<double> half_sq;  // 1/2 theta^2
  std::vector<double> a1, a2;   // 1/2 theta^2 u
  std::vector<double> dual;     // -(u . grad theta) theta
  std::vector<double> dz;       // int psi* |grad theta*|^2 z^b
  std::vector<double> xh1, xh2; // int psi* theta* grad_x theta* z^b
  std::vector<double> xz;       // int psi*' theta* d_z theta* z^b
  std::vector<double> ta;       // int psi* 1/2 theta*^2 z^b
  std::vector<double> tb;       // int (psi*'^2 / psi*) 1/2 theta*^2 z^b
  std::vector<double> tc;       // int psi*^{2 delta - 1} 1/2 theta*^2 z^b
};

}  // namespace detail

/// One pass over the snapshots accumulating every family's element terms and the
/// macro averages.  Snapshots outside the support of eta are never loaded.
inline EngineResult run_engine(const SnapshotSource& src, const std::vector<const CutoffFamily*>& families,
                               const EngineOptions& opt = {}) {
  if (families.empty()) {
    throw ParameterError("run_engine: no cutoff families");
  }
  const CutoffFamily& f0 = *families.front();
  for (const CutoffFamily* f : families) {
    detail::check_same_macro(f0, *f);
  }
  if (!(src.grid == f0.grid)) {
    throw ParameterError("cutoff/trajectory grid mismatch");
  }
  if (std::abs(src.alpha - f0.macro.alpha) > 1e-12) {
    throw ParameterError("trajectory alpha does not match the macro domain");
  }
  const Grid& g = src.grid;
  const std::size_t np = g.points();
  const bool local = src.alpha == 2.0;
  const bool ext = opt.with_extension;
  const double delta = f0.delta;
  const double e = 2.0 * delta - 1.0;
  const double area = g.dx() * g.dx();

  EngineResult res;
  res.macro.alpha = src.alpha;
  res.terms.resize(families.size());
  for (std::size_t q = 0; q < families.size(); ++q) {
    res.terms[q].resize(families[q]->size());
  }

  std::optional<ExtensionConfig> cfg;
  std::optional<ProfileTable> table;
  std::vector<double> psi_star, dpsi_star;
  if (ext && !local) {
    ZGridSpec zs = opt.zgrid;
    zs.R_star = f0.vertical.R_star;
    zs.ramp_length = f0.vertical.length;
    cfg = make_extension_config(src.alpha, zs);
    table.emplace(g, *cfg);
    for (double z : cfg->zgrid.nodes) {
      const Profile3 p = f0.vertical(z);
      psi_star.push_back(p.f);
      dpsi_star.push_back(p.f1);
    }
    res.d_alpha = cfg->d_alpha;
  }
  const double ext_scale = src.kappa / res.d_alpha;

  const std::vector<double> w = trapezoid_weights(src.times);
  detail::SnapshotDensities s;
  for (auto* v : {&s.half_sq, &s.a1, &s.a2, &s.dual, &s.dz, &s.xh1, &s.xh2, &s.xz, &s.ta, &s.tb, &s.tc}) {
    v->assign(np, 0.0);
  }
  ExtensionSlice slice;

  double th0 = 0.0, th0s = 0.0, eps0 = 0.0;
  for (std::size_t k = 0; k < src.times.size(); ++k) {
    const Profile3 eta = f0.time(src.times[k]);
    if (w[k] == 0.0 || (eta.f == 0.0 && eta.f1 == 0.0)) {
      continue;
    }
    ++res.snapshots_used;
    const ScalarField theta = src.load(k);
    if (!(theta.grid == g)) {
      throw DataError("snapshot " + std::to_string(k) + " has the wrong grid");
    }
    const SpectralField th = transform(theta);
    SpectralField h1, h2;
    velocity_hat(th, h1, h2);
    const ScalarField u1 = inverse(h1), u2 = inverse(h2);
    gradient_hat(th, h1, h2);
    const ScalarField t1 = inverse(h1), t2 = inverse(h2);
    for (std::size_t p = 0; p < np; ++p) {
      const double v = theta.values[p];
      s.half_sq[p] = 0.5 * v * v;
      s.a1[p] = s.half_sq[p] * u1.values[p];
      s.a2[p] = s.half_sq[p] * u2.values[p];
      s.dual[p] = -(u1.values[p] * t1.values[p] + u2.values[p] * t2.values[p]) * v;
    }
    if (ext) {
      if (local) {
        for (std::size_t p = 0; p < np; ++p) {
          const double v = theta.values[p];
          s.dz[p] = t1.values[p] * t1.values[p] + t2.values[p] * t2.values[p];
          s.xh1[p] = v * t1.values[p];
          s.xh2[p] = v * t2.values[p];
          s.xz[p] = 0.0;
          s.ta[p] = s.half_sq[p];
          s.tb[p] = 0.0;
          s.tc[p] = s.half_sq[p];
        }
      } else {
        for (auto* v : {&s.dz, &s.xh1, &s.xh2, &s.xz, &s.ta, &s.tb, &s.tc}) {
          std::fill(v->begin(), v->end(), 0.0);
        }
        ExtensionEvaluator ev(*table, th);
        const ZGrid& zg = cfg->zgrid;
        for (std::size_t j = 0; j < zg.size(); ++j) {
          const double ps = psi_star[j];
          if (ps == 0.0) {
            continue;
          }
          const double pd = dpsi_star[j];
          const double wj = zg.weights[j];
          const double wh = wj * ps;
          const double wv = zg.flux_weights[j] * ps;
          const double wx = wj * pd;
          const double wb = wj * pd * pd / ps;
          const double wc = wj * std::pow(ps, e);
          ev.slice(j, slice, true);
          for (std::size_t p = 0; p < np; ++p) {
            const double v = slice.value[p];
            const double g1 = slice.d1[p], g2 = slice.d2[p], gz = slice.dz[p];
            const double hv = 0.5 * v * v;
            s.dz[p] += wh * (g1 * g1 + g2 * g2) + wv * gz * gz;
            s.xh1[p] += wh * v * g1;
            s.xh2[p] += wh * v * g2;
            s.xz[p] += wx * v * gz;
            s.ta[p] += wh * hv;
            s.tb[p] += wb * hv;
            s.tc[p] += wc * hv;
          }
        }
      }
    }

    const double W = w[k] * area;
    // macro averages
    if (eta.f > 0.0) {
      const Support& m = f0.macro_support;
      const double ee = std::pow(eta.f, e);
      double a = 0.0, b = 0.0, c = 0.0;
      for (std::size_t q = 0; q < m.size(); ++q) {
        const auto p = m.idx[q];
        const double pe = std::pow(m.psi[q], e);
        a += s.half_sq[p] * pe;
        if (ext) {
          b += s.tc[p] * pe;
          c += s.dz[p] * m.psi[q];
        }
      }
      th0 += W * ee * a;
      th0s += W * ee * b;
      eps0 += W * eta.f * c;
    }
    // elements
    for (std::size_t fi = 0; fi < families.size(); ++fi) {
      const CutoffFamily& fam = *families[fi];
      for (std::size_t i = 0; i < fam.size(); ++i) {
        const Support& sp = fam.supports[i];
        double F = 0.0, Fd = 0.0, P = 0.0, D = 0.0, X = 0.0, A2 = 0.0;
        for (std::size_t q = 0; q < sp.size(); ++q) {
          const auto p = sp.idx[q];
          const double ps = sp.psi[q], d1 = sp.d1[q], d2 = sp.d2[q];
          F += s.a1[p] * d1 + s.a2[p] * d2;
          Fd += s.dual[p] * ps;
          P += s.half_sq[p] * ps;
          if (ext) {
            D += s.dz[p] * ps;
            X += s.xh1[p] * d1 + s.xh2[p] * d2 + s.xz[p] * ps;
            A2 += (d1 * d1 + d2 * d2) / ps * s.ta[p] + ps * s.tb[p];
          }
        }
        FluxTerms& t = res.terms[fi][i];
        t.F += W * eta.f * F;
        t.F_dual += W * eta.f * Fd;
        t.P += W * eta.f1 * P;
        t.D += W * eta.f * D;
        t.X += W * eta.f * X;
        t.A2 += W * eta.f * A2;
      }
    }
  }

  for (std::size_t fi = 0; fi < families.size(); ++fi) {
    const CutoffFamily& fam = *families[fi];
    const double norm = 1.0 / (fam.macro.T * fam.R * fam.R);
    for (FluxTerms& t : res.terms[fi]) {
      t.F *= norm;
      t.F_dual *= norm;
      t.P *= norm;
      t.D *= norm * ext_scale;
      t.X *= norm * ext_scale;
      t.A2 *= norm * ext_scale;
    }
  }
  const double norm0 = 1.0 / (f0.macro.T * f0.macro.R0 * f0.macro.R0);
  res.macro.theta0 = th0 * norm0;
  res.macro.theta0_star = th0s * norm0 * ext_scale;
  res.macro.eps0_star = eps0 * norm0 * ext_scale;
  for (const auto& terms : res.terms) {
    for (const FluxTerms& t : terms) {
      if (!std::isfinite(t.F) || !std::isfinite(t.D) || !std::isfinite(t.X) || !std::isfinite(t.A2)) {
        throw Error("diagnostics quadrature produced a non-finite value");
      }
    }
  }
  return res;
}

/// Normalized advective flux into element i.
inline double local_flux(const SnapshotSource& src, const CutoffFamily& fam, std::size_t i) {
  EngineOptions opt;
  opt.with_extension = false;
  return run_engine(src, {&fam}, opt).terms[0].at(i).F;
}

inline FluxTerms local_budget(const SnapshotSource& src, const CutoffFamily& fam, std::size_t i,
                              const EngineOptions& opt = {}) {
  return run_engine(src, {&fam}, opt).terms[0].at(i);
}

inline MacroAverages macro_averages(const SnapshotSource& src, const CutoffFamily& fam,
                                    const EngineOptions& opt = {}) {
  return run_engine(src, {&fam}, opt).macro;
}

// ---------------------------------------------------------------- cascade

struct ScaleInput {
  const Cover* cover = nullptr;
  const CutoffFamily* family = nullptr;
  /// absent: values are reported but nothing is certified
  std::optional<CutoffCert> cutoff_cert;
  std::optional<FamilyCert> family_cert;
};

struct CascadeRow {
  double R = 0.0;
  std::size_t n = 0;
  double K1_eff = 0.0;
  int K2_eff = 0;
  int K2_ball = 0;
  double F = 0.0;
  double F_dual = 0.0;
  double D = 0.0;
  double X = 0.0;
  double P = 0.0;
  double A1 = 0.0;
  double A2 = 0.0;
  double max_relative_residual = 0.0;
  bool young_ok = false;
  double A1_bound = 0.0;
  double A2_bound = 0.0;
  double D_lower = 0.0;
  double D_upper = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  bool certified = false;
  bool check_A1 = false;
  bool check_A2 = false;
  bool check_D = false;
  bool in_range = false;
  /// flux bounds; meaningful only for in-range rows
  bool check_F = false;
  /// every guaranteed inequality holds (all four when in range)
  bool pass = false;
};

struct CascadeReport {
  MacroAverages macro;
  double d_alpha = 1.0;
  double slack = 0.01;
  double C0_eff = 0.0;
  double K1_eff_max = 0.0;
  int K2_eff_max = 0;
  int K1_declared = 8;
  int K2_declared = 8;
  double beta_declared = 0.0;
  double beta_eff = 0.0;
  bool sigma0_defined = false;
  double sigma0 = std::numeric_limits<double>::quiet_NaN();
  bool premise = false;
  bool certified = false;
  std::vector<CascadeRow> rows;
  std::vector<std::vector<FluxTerms>> elements;

  std::size_t in_range_count() const {
    return static_cast<std::size_t>(std::count_if(rows.begin(), rows.end(), [](const CascadeRow& r) { return r.in_range; }));
  }
};

/// Builds the report from engine output whose first scales.size() families are the scales'.
inline CascadeReport assemble_cascade(const EngineResult& er, const std::vector<ScaleInput>& scales, double alpha,
                                      double slack = 0.01) {
  if (scales.empty() || er.terms.size() < scales.size()) {
    throw ParameterError("assemble_cascade: engine output does not match the scales");
  }
  CascadeReport rep;
  rep.macro = er.macro;
  rep.d_alpha = er.d_alpha;
  rep.slack = slack;
  rep.elements.assign(er.terms.begin(), er.terms.begin() + static_cast<std::ptrdiff_t>(scales.size()));
  rep.certified = std::all_of(scales.begin(), scales.end(), [](const ScaleInput& s) {
    return s.cutoff_cert.has_value() && s.family_cert.has_value() && s.family_cert->partition &&
           s.family_cert->domination && s.family_cert->below_macro;
  });
  rep.K1_declared = scales.front().cover->K1;
  rep.K2_declared = scales.front().cover->K2;
  for (const ScaleInput& s : scales) {
    if (s.cutoff_cert) {
      rep.C0_eff = std::max(rep.C0_eff, s.cutoff_cert->C0_eff);
    }
    if (s.family_cert) {
      rep.K1_eff_max = std::max(rep.K1_eff_max, s.family_cert->cover.K1_eff);
      rep.K2_eff_max = std::max(rep.K2_eff_max, s.family_cert->K2_eff);
    }
  }
  const MacroAverages& M = rep.macro;
  rep.sigma0_defined = M.sigma0_defined();
  if (rep.certified) {
    rep.beta_declared = beta_declared(rep.C0_eff, rep.K1_declared, rep.K2_declared, alpha);
    rep.beta_eff = beta_effective(rep.C0_eff, rep.K1_eff_max, rep.K2_eff_max, alpha);
  }
  const double R0 = scales.front().family->macro.R0;
  if (rep.sigma0_defined) {
    rep.sigma0 = M.sigma0();
    rep.premise = rep.certified && rep.sigma0 < rep.beta_eff * R0;
  }
  const double up = 1.0 + slack;
  const double down = 1.0 - slack;
  for (std::size_t q = 0; q < scales.size(); ++q) {
    const ScaleInput& s = scales[q];
    const CutoffFamily& fam = *s.family;
    CascadeRow row;
    row.R = fam.R;
    row.n = fam.size();
    const auto& terms = er.terms[q];
    const double inv_n = 1.0 / static_cast<double>(row.n);
    row.young_ok = true;
    for (const FluxTerms& t : terms) {
      row.F += t.F * inv_n;
      row.F_dual += t.F_dual * inv_n;
      row.D += t.D * inv_n;
      row.X += t.X * inv_n;
      row.P += t.P * inv_n;
      row.A2 += t.A2 * inv_n;
      row.max_relative_residual = std::max(row.max_relative_residual, t.relative_residual());
      if (std::abs(t.X) > (0.5 * t.D + t.A2) * up + 1e-300) {
        row.young_ok = false;
      }
    }
    row.A1 = std::abs(row.P);
    row.certified = s.cutoff_cert.has_value() && s.family_cert.has_value();
    if (s.family_cert) {
      row.K1_eff = s.family_cert->cover.K1_eff;
      row.K2_eff = s.family_cert->K2_eff;
      row.K2_ball = s.family_cert->cover.K2_ball;
    }
    if (row.certified) {
      const double C0 = rep.C0_eff;
      const double K1 = row.K1_eff;
      const double K2 = row.K2_eff;
      row.A1_bound = 2.0 * C0 * K2 * M.theta0 / std::pow(row.R, alpha);
      row.A2_bound = C0 * C0 * K2 * M.theta0_star / (row.R * row.R);
      row.D_lower = M.eps0_star / K1;
      row.D_upper = K2 * M.eps0_star;
      row.lower = M.eps0_star / (4.0 * K1);
      row.upper = 4.0 * K2 * M.eps0_star;
      row.check_A1 = row.A1 <= row.A1_bound * up;
      row.check_A2 = row.A2 <= row.A2_bound * up;
      row.check_D = row.D >= row.D_lower * down && row.D <= row.D_upper * up;
      row.in_range = rep.premise && row.R >= rep.sigma0 / rep.beta_eff * (1.0 - 1e-12);
      row.check_F = row.F >= row.lower * down && row.F <= row.upper * up;
      row.pass = row.check_A1 && row.check_A2 && row.check_D && (!row.in_range || row.check_F);
    }
    rep.rows.push_back(row);
  }
  return rep;
}

inline CascadeReport cascade_check(const SnapshotSource& src, const std::vector<ScaleInput>& scales,
                                   double slack = 0.01, const EngineOptions& opt = {}) {
  if (scales.empty()) {
    throw ParameterError("cascade_check: no scales");
  }
  std::vector<const CutoffFamily*> fams;
  for (const ScaleInput& s : scales) {
    if (s.family == nullptr || s.cover == nullptr) {
      throw ParameterError("cascade_check: every scale needs a cover and a cutoff family");
    }
    fams.push_back(s.family);
  }
  return assemble_cascade(run_engine(src, fams, opt), scales, src.alpha, slack);
}

// ---------------------------------------------------------------- locality

struct LocalityPair {
  double r = 0.0;
  double R = 0.0;
  double ratio = std::numeric_limits<double>::quiet_NaN();
  bool defined = false;
  double lower = 0.0;
  double upper = 0.0;
  bool in_range = false;
  bool within = false;
};

struct DyadicEnvelope {
  int k = 0;
  double lower = 0.0;
  double upper = 0.0;
};

struct LocalityReport {
  double K1_eff = 0.0;
  int K2_eff = 0;
  std::vector<LocalityPair> pairs;
  std::vector<DyadicEnvelope> dyadic;

  std::size_t in_range_count() const {
    return static_cast<std::size_t>(
        std::count_if(pairs.begin(), pairs.end(), [](const LocalityPair& p) { return p.in_range; }));
  }
};

/// <G>_r / <G>_R with G = R^2 F, for every ordered pair of reported scales.
inline LocalityReport locality_check(const CascadeReport& rep, int max_k = 3) {
  LocalityReport out;
  out.K1_eff = rep.K1_eff_max;
  out.K2_eff = rep.K2_eff_max;
  const double c = 16.0 * out.K1_eff * out.K2_eff;
  for (const CascadeRow& a : rep.rows) {
    for (const CascadeRow& b : rep.rows) {
      LocalityPair p;
      p.r = a.R;
      p.R = b.R;
      const double Gr = a.R * a.R * a.F;
      const double GR = b.R * b.R * b.F;
      const double q = (a.R / b.R) * (a.R / b.R);
      p.lower = q / c;
      p.upper = c * q;
      p.defined = GR != 0.0;
      if (p.defined) {
        p.ratio = &a == &b ? 1.0 : Gr / GR;
      }
      p.in_range = a.in_range && b.in_range;
      p.within = p.defined && p.ratio >= p.lower && p.ratio <= p.upper;
      out.pairs.push_back(p);
    }
  }
  for (int k = -max_k; k <= max_k; ++k) {
    const double q = std::pow(2.0, 2 * k);
    out.dyadic.push_back({k, q / c, c * q});
  }
  return out;
}

}  // namespace sqg
