#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <numbers>

#include "sqg/diagnostics.hpp"
#include "support/oracles.hpp"

using namespace sqg;

namespace {

constexpr double kPi = std::numbers::pi;

MacroDomain macro(double L = 2.0 * kPi, double alpha = 1.0) {
  MacroDomain m;
  m.x1 = L / 2;
  m.x2 = L / 2;
  m.R0 = L / 8.0;
  m.T = std::pow(m.R0, alpha);
  m.alpha = alpha;
  return m;
}

std::vector<double> uniform_times(double t_end, int n) {
  std::vector<double> t;
  for (int k = 0; k <= n; ++k) {
    t.push_back(t_end * k / n);
  }
  return t;
}

/// theta = amp e^{-t} cos(k x1): exact for every alpha with kappa |k|^alpha = 1, the
/// velocity is a shear along x2 and the nonlinearity vanishes.
SnapshotSource shear_source(const Grid& g, double alpha, double t_end, int n, double amp = 1.0, int k = 1) {
  SnapshotSource s;
  s.grid = g;
  s.alpha = alpha;
  const double kk = k * g.k0();
  s.kappa = 1.0 / std::pow(kk, alpha);
  s.times = uniform_times(t_end, n);
  s.load = [g, amp, kk, times = s.times](std::size_t j) {
    ScalarField f(g);
    for (int jj = 0; jj < g.N; ++jj) {
      for (int i = 0; i < g.N; ++i) {
        f(i, jj) = amp * std::exp(-times[j]) * std::cos(kk * i * g.dx());
      }
    }
    return f;
  };
  return s;
}

SolverConfig decaying_run(int n, double t_end, double dt, int stride) {
  SolverConfig c;
  c.grid = Grid::make(n, 2.0 * kPi);
  c.alpha = 1.0;
  c.kappa = 0.05;
  c.dt = dt;
  c.t_end = t_end;
  c.snapshot_stride = stride;
  c.ic.kind = InitialKind::band_random;
  c.ic.k_lo = 2;
  c.ic.k_hi = 6;
  c.ic.amplitude = 1.0;
  c.ic.seed = 11;
  return c;
}

/// int_0^inf g(r)^m r dr for the macro ramp on [R0, 2 R0]
double radial_mass(double R0, int m) {
  auto f = [&](double r) { return std::pow(ramp_down(r, R0, 2 * R0).f, m) * r; };
  return 2.0 * kPi * (R0 * R0 / 2.0 + oracle::simpson(f, R0, 2 * R0, 1e-13));
}

}  // namespace

TEST(Diagnostics, BetaFromDeclaredConstants) {
  EXPECT_NEAR(beta_declared(10.0, 8.0, 8.0, 1.0), 1.0 / 5120.0, 1e-15);
  EXPECT_NEAR(beta_declared(10.0, 8.0, 8.0, 2.0), 1.0 / std::sqrt(5120.0), 1e-15);
  // alpha < 1 lets the square-root branch win
  EXPECT_NEAR(beta_declared(1.0, 1.0, 1.0, 0.5), std::pow(8.0, -2.0), 1e-15);
  const double b = beta_effective(10.0, 8.0, 8.0, 1.0);
  EXPECT_NEAR(b, 1.0 / 10240.0, 1e-15);
}

TEST(Diagnostics, ZeroFieldGivesZeroTermsAndUndefinedSigma) {
  const Grid g = Grid::make(64, 2.0 * kPi);
  SnapshotSource s;
  s.grid = g;
  s.times = uniform_times(2.0 * macro().T, 40);
  s.load = [g](std::size_t) { return ScalarField(g); };
  const Cover c = generate_cover(macro(), macro().R0 / 2);
  const CutoffFamily f = build_family(g, c, CutoffParams{});
  const EngineResult r = run_engine(s, {&f});
  for (const FluxTerms& t : r.terms[0]) {
    EXPECT_EQ(t.F, 0.0);
    EXPECT_EQ(t.D, 0.0);
    EXPECT_EQ(t.X, 0.0);
    EXPECT_EQ(t.P, 0.0);
    EXPECT_EQ(t.A2, 0.0);
  }
  EXPECT_FALSE(r.macro.sigma0_defined());
  EXPECT_THROW(r.macro.sigma0(), PreconditionError);
}

TEST(Diagnostics, FluxDualityOnSimulatedTrajectory) {
  // the two forms differ by the grid quadrature of a total derivative of the C^2 cutoff
  SolverConfig c = decaying_run(128, 2.0 * macro().T, 5e-3, 4);
  const Trajectory tr = integrate(c);
  const Cover cv = generate_cover(macro(), macro().R0);
  const CutoffFamily f = build_family(tr.config.grid, cv, CutoffParams{});
  EngineOptions opt;
  opt.with_extension = false;
  const EngineResult r = run_engine(source_of(tr), {&f}, opt);
  double scale = 0.0;
  for (const FluxTerms& t : r.terms[0]) {
    scale = std::max(scale, std::abs(t.F));
  }
  for (const FluxTerms& t : r.terms[0]) {
    EXPECT_LE(std::abs(t.F - t.F_dual), 1e-3 * scale);
  }
}

TEST(Diagnostics, FluxDualityConvergesWithResolution) {
  const MacroDomain m = macro();
  double prev = 0.0;
  for (int n : {128, 256, 512}) {
    const Grid g = Grid::make(n, 2.0 * kPi);
    ScalarField th(g);
    for (int j = 0; j < n; ++j) {
      for (int i = 0; i < n; ++i) {
        const double x = i * g.dx(), y = j * g.dx();
        th(i, j) = std::cos(2 * x + y) + 0.7 * std::sin(3 * y - x) + 0.4 * std::cos(5 * x + 4 * y + 0.3) +
                   0.3 * std::sin(6 * x - 2 * y);
      }
    }
    SnapshotSource s;
    s.grid = g;
    s.times = uniform_times(2 * m.T, 8);
    s.load = [&th](std::size_t) { return th; };
    const Cover cv = generate_cover(m, m.R0 / 4);
    const CutoffFamily f = build_family(g, cv, CutoffParams{});
    EngineOptions opt;
    opt.with_extension = false;
    const EngineResult r = run_engine(s, {&f}, opt);
    double scale = 0.0, diff = 0.0;
    for (const FluxTerms& t : r.terms[0]) {
      scale = std::max(scale, std::abs(t.F));
      diff = std::max(diff, std::abs(t.F - t.F_dual));
    }
    const double rel = diff / scale;
    std::printf("N=%d relative duality gap %.3e\n", n, rel);
    // a C^2 cutoff leaves a jump in the second derivative of grad psi: third order at worst
    if (prev > 0.0) {
      EXPECT_LT(rel, prev / 6.0) << n;
    }
    prev = rel;
  }
  EXPECT_LT(prev, 5e-4);
}

TEST(Diagnostics, MacroAveragesMatchClosedFormForShear) {
  // theta* = e^{-t} cos(x1) e^{-z} at alpha = 1, so |grad theta*|^2 = e^{-2t-2z}
  const Grid g = Grid::make(128, 2.0 * kPi);
  const MacroDomain m = macro();
  const SnapshotSource s = shear_source(g, 1.0, 2.0 * m.T, 300);
  const Cover c = generate_cover(m, m.R0);
  const CutoffFamily f = build_family(g, c, CutoffParams{});
  const MacroAverages a = run_engine(s, {&f}).macro;

  const double e = 2.0 * 0.75 - 1.0;
  const TimeProfile eta{m.T, 4};
  const VerticalProfile vz{m.R0, m.R0, 4};
  auto tint = [&](double p, double rate) {
    return oracle::simpson([&](double t) { return std::pow(eta(t).f, p) * std::exp(-rate * t); }, 0, 2 * m.T, 1e-13);
  };
  auto zint = [&](double p) {
    return oracle::simpson([&](double z) { return std::pow(vz(z).f, p) * std::exp(-2 * z); }, 0, 2 * m.R0, 1e-13);
  };
  // the plateau carries <cos^2> = 1/2 exactly once the weights are radial
  auto xint = [&](double p) {
    auto f = [&](double r) {
      return std::pow(ramp_down(r, m.R0, 2 * m.R0).f, 4 * p) * r *
             oracle::simpson([&](double th) { return std::pow(std::cos(m.x1 + r * std::cos(th)), 2); }, 0,
                             2 * kPi, 1e-12);
    };
    return oracle::simpson(f, 0, 2 * m.R0, 1e-11);
  };
  const double norm = 1.0 / (m.T * m.R0 * m.R0);
  const double eps = norm * tint(1.0, 2.0) * radial_mass(m.R0, 4) * zint(1.0);
  const double th0 = norm * tint(e, 2.0) * 0.5 * xint(e);
  const double th0s = norm * tint(e, 2.0) * 0.5 * xint(e) * zint(e);
  EXPECT_NEAR(a.eps0_star / eps, 1.0, 2e-4);
  EXPECT_NEAR(a.theta0 / th0, 1.0, 2e-4);
  EXPECT_NEAR(a.theta0_star / th0s, 1.0, 2e-4);
}

TEST(Diagnostics, ShearBudgetClosesPerElement) {
  const Grid g = Grid::make(128, 2.0 * kPi);
  const MacroDomain m = macro();
  for (double alpha : {1.0, 0.6, 2.0}) {
    MacroDomain ma = macro(2.0 * kPi, alpha);
    const SnapshotSource s = shear_source(g, alpha, 2.0 * ma.T, 160);
    const Cover c = generate_cover(ma, m.R0 / 2);
    const CutoffFamily f = build_family(g, c, CutoffParams{});
    const EngineResult r = run_engine(s, {&f});
    for (const FluxTerms& t : r.terms[0]) {
      // shear: the advective flux vanishes up to quadrature error, the budget is D + X = P
      EXPECT_LE(std::abs(t.F), 1e-3 * t.D) << alpha;
      EXPECT_LE(t.relative_residual(), 0.01) << alpha;
      EXPECT_LE(std::abs(t.X), 0.5 * t.D + t.A2);
    }
    if (alpha == 2.0) {
      EXPECT_DOUBLE_EQ(r.macro.theta0, r.macro.theta0_star);
    }
  }
}

TEST(Diagnostics, SingleBallDissipationEqualsMacro) {
  const Grid g = Grid::make(64, 2.0 * kPi);
  const MacroDomain m = macro();
  const SnapshotSource s = shear_source(g, 1.0, 2.0 * m.T, 100);
  const Cover c = generate_cover(m, m.R0);
  ASSERT_EQ(c.size(), 1u);
  const CutoffFamily f = build_family(g, c, CutoffParams{});
  const EngineResult r = run_engine(s, {&f});
  EXPECT_NEAR(r.terms[0][0].D, r.macro.eps0_star, 1e-14 * r.macro.eps0_star);
}

TEST(Diagnostics, ResidualShrinksUnderRefinement) {
  const MacroDomain m = macro();
  double prev = 1e300;
  for (int level = 0; level < 3; ++level) {
    const int f = 1 << level;
    SolverConfig c = decaying_run(128, 2.0 * m.T, 2e-2 / f, 2);
    const Trajectory tr = integrate(c);
    const Cover cv = generate_cover(m, m.R0 / 2);
    const CutoffFamily fam = build_family(tr.config.grid, cv, CutoffParams{});
    EngineOptions opt;
    opt.zgrid.points_per_panel = 6 + 2 * level;
    opt.zgrid.z_min = 1e-2 / (1 << (2 * level));
    const EngineResult r = run_engine(source_of(tr), {&fam}, opt);
    double worst = 0.0;
    for (const FluxTerms& t : r.terms[0]) {
      worst = std::max(worst, t.relative_residual());
    }
    EXPECT_LT(worst, prev) << level;
    prev = worst;
  }
  EXPECT_LT(prev, 0.005);
}

TEST(Diagnostics, RescalingExponents) {
  const double l = 2.0;
  for (double alpha : {1.0, 0.7}) {
    const Grid g = Grid::make(64, 2.0 * kPi), gl = Grid::make(64, 2.0 * kPi * l);
    const MacroDomain m = macro(g.L, alpha), ml = macro(gl.L, alpha);
    ASSERT_NEAR(ml.R0, l * m.R0, 1e-15);
    ASSERT_NEAR(ml.T, std::pow(l, alpha) * m.T, 1e-14);
    SnapshotSource s = shear_source(g, alpha, 2 * m.T, 120);
    SnapshotSource sl = shear_source(gl, alpha, 2 * ml.T, 120, std::pow(l, 1.0 - alpha));
    // kappa is scale free in the equation; the shear keeps the original decay rate per unit of its own time
    sl.kappa = s.kappa;
    auto load = s.load;
    sl.load = [load, gl, l, alpha](std::size_t k) {
      ScalarField f = load(k);
      f.grid = gl;
      for (double& v : f.values) {
        v *= std::pow(l, 1.0 - alpha);
      }
      return f;
    };
    const Cover c = generate_cover(m, m.R0), cl = generate_cover(ml, ml.R0);
    const CutoffFamily f = build_family(g, c, CutoffParams{}), fl = build_family(gl, cl, CutoffParams{});
    EngineOptions o, ol;
    ol.zgrid.z_min = l * o.zgrid.z_min;
    const MacroAverages a = run_engine(s, {&f}, o).macro;
    const MacroAverages b = run_engine(sl, {&fl}, ol).macro;
    EXPECT_NEAR(b.theta0 / a.theta0, std::pow(l, 2 - 2 * alpha), 1e-10);
    EXPECT_NEAR(b.eps0_star / a.eps0_star, std::pow(l, 2 - 3 * alpha), 1e-10);
    EXPECT_NEAR(b.theta0_star / a.theta0_star, std::pow(l, 4 - 3 * alpha), 1e-10);
    EXPECT_NEAR(b.sigma0() / a.sigma0(), l, 1e-10);
  }
}

TEST(Diagnostics, CascadeReportGuaranteedChecks) {
  const MacroDomain m = macro();
  SolverConfig c = decaying_run(64, 2.0 * m.T, 1e-2, 2);
  const Trajectory tr = integrate(c);
  std::vector<Cover> covers;
  std::vector<CutoffFamily> fams;
  for (double R : {m.R0, m.R0 / 2}) {
    covers.push_back(generate_cover(m, R));
  }
  for (const Cover& cv : covers) {
    fams.push_back(build_family(tr.config.grid, cv, CutoffParams{}));
  }
  std::vector<ScaleInput> in;
  for (std::size_t q = 0; q < covers.size(); ++q) {
    in.push_back({&covers[q], &fams[q], certify_family(fams[q]), certify_cover_family(covers[q], fams[q])});
  }
  const CascadeReport rep = cascade_check(source_of(tr), in);
  ASSERT_TRUE(rep.certified);
  EXPECT_GT(rep.C0_eff, 0.0);
  EXPECT_TRUE(rep.sigma0_defined);
  for (const CascadeRow& row : rep.rows) {
    EXPECT_TRUE(row.certified);
    EXPECT_TRUE(row.check_A1) << row.R;
    EXPECT_TRUE(row.check_A2) << row.R;
    EXPECT_TRUE(row.check_D) << row.R;
    EXPECT_TRUE(row.young_ok) << row.R;
  }
  const LocalityReport loc = locality_check(rep);
  for (const LocalityPair& p : loc.pairs) {
    if (p.r == p.R) {
      EXPECT_EQ(p.ratio, 1.0);
    }
  }
  ASSERT_EQ(loc.dyadic.size(), 7u);
  EXPECT_NEAR(loc.dyadic[3].upper * loc.dyadic[3].lower, 1.0, 1e-12);

  std::vector<ScaleInput> bare = in;
  bare[1].cutoff_cert.reset();
  const CascadeReport un = cascade_check(source_of(tr), bare);
  EXPECT_FALSE(un.certified);
  EXPECT_FALSE(un.premise);
  EXPECT_FALSE(un.rows[1].in_range);
}

TEST(Diagnostics, RejectsMismatchedInputs) {
  const Grid g = Grid::make(64, 2.0 * kPi);
  const MacroDomain m = macro();
  const SnapshotSource s = shear_source(g, 0.8, 2 * m.T, 10);
  const Cover c = generate_cover(m, m.R0);
  const CutoffFamily f = build_family(g, c, CutoffParams{});
  EXPECT_THROW(run_engine(s, {&f}), ParameterError);
  MacroDomain m2 = m;
  m2.R0 *= 0.9;
  const CutoffFamily f2 = build_family(g, generate_cover(m2, m2.R0), CutoffParams{});
  const SnapshotSource s1 = shear_source(g, 1.0, 2 * m.T, 10);
  EXPECT_THROW(run_engine(s1, {&f, &f2}), ParameterError);
}
