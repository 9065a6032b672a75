// Acceptance gate: one PASS/FAIL line per criterion.
//
//   acceptance [--criterion k] [--configs DIR] [--work DIR]
//
// Exit status 0 when every selected criterion passes, 77 when the only failures
// are criteria whose premise cannot be met by the shipped run (reported as FAIL
// with the reason), 1 otherwise.

#include <CLI11.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "sqg/config.hpp"
#include "sqg/extension.hpp"
#include "sqg/pipeline.hpp"
#include "sqg/report.hpp"
#include "sqg/snapshot_io.hpp"
#include "sqg/trajectory_io.hpp"
#include "support/oracles.hpp"

namespace fs = std::filesystem;
using namespace sqg;

namespace {

constexpr double kPi = std::numbers::pi;

// pinned tolerances
constexpr double kModeTol = 1e-12;
constexpr double kModeSeconds = 1.0;
constexpr double kTraceTol = 1e-8;
constexpr double kClosedFormTol = 1e-10;
constexpr double kTraceSeconds = 10.0;
constexpr double kShootingTol = 1e-8;
constexpr double kCollocationTol = 1e-6;
constexpr double kDriftPerTime = 1e-6;
constexpr double kBudgetTol = 0.01;
constexpr double kFluxResidualTol = 0.05;
constexpr double kCertChangeTol = 0.05;
constexpr double kChainSlack = 0.01;
constexpr double kLocalityConst = 16.0;
constexpr double kScalingTol = 0.02;

struct Outcome {
  bool pass = false;
  /// failure caused by an unattainable premise rather than a violated bound
  bool infeasible = false;
  std::string detail;
};

struct Context {
  fs::path configs;
  fs::path work;
};

std::string fmt(const char* f, double a) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

template <class... A>
std::string fmtn(const char* f, A... a) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, a...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

ZGridSpec unit_zspec() {
  ZGridSpec z;
  z.R_star = 1.0;
  z.ramp_length = 1.0;
  return z;
}

// ------------------------------------------------------------------ 1

Outcome spectral_modes(const Context&) {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  for (const auto& [N, L] : std::vector<std::pair<int, double>>{{64, 2.0 * kPi}, {32, 3.0}}) {
    const Grid g = Grid::make(N, L);
    const double k0 = 2.0 * kPi / L;
    const std::vector<std::pair<int, int>> modes{{1, 0}, {0, 3}, {2, 5}, {7, -4}, {11, 11}, {N / 2 - 2, 1}};
    for (const auto& [kx, ky] : modes) {
      for (double a : {0.5, 1.0, 1.5, 2.0}) {
        const ScalarField f =
            sample(g, [&](double x, double y) { return std::cos(k0 * (kx * x + ky * y)) + 0.5 * std::sin(k0 * (kx * x + ky * y)); });
        const ScalarField got = fractional_laplacian(f, a);
        const double mult = std::pow(k0 * std::hypot(kx, ky), a);
        const double scale = mult * max_abs(f.values);
        for (std::size_t p = 0; p < f.values.size(); ++p) {
          worst = std::max(worst, std::abs(got.values[p] - mult * f.values[p]) / scale);
        }
      }
    }
  }
  const double secs = seconds_since(t0);
  return {worst <= kModeTol && secs < kModeSeconds, false,
          fmtn("max relative error %.2e (tol %.0e), %.3f s", worst, kModeTol, secs)};
}

// ------------------------------------------------------------------ 2

Outcome trace_identity(const Context&) {
  const auto t0 = std::chrono::steady_clock::now();
  const Grid g = Grid::make(64, 2.0 * kPi);
  double worst = 0.0;
  for (unsigned seed : {17u, 23u}) {
    const ScalarField th = oracle::random_band_field(g, 12, seed);
    const SpectralField in = transform(th);
    for (double a : {0.4, 0.8, 1.0, 1.2, 1.8}) {
      const SpectralField got = transform(trace_dissipation(th, make_extension_config(a, unit_zspec())));
      for_each_mode(g, [&](std::size_t idx, int kx, int ky) {
        if (std::abs(in.coeffs[idx]) < 1e-10) {
          return;
        }
        const Complex want = in.coeffs[idx] * std::pow(g.k0() * std::hypot(kx, ky), a);
        worst = std::max(worst, std::abs(got.coeffs[idx] - want) / std::abs(want));
      });
    }
  }
  // alpha = 1: the extension of cos(k x) is e^{-k z} cos(k x)
  double closed = 0.0;
  const auto cfg = make_extension_config(1.0, unit_zspec());
  for (int k : {1, 3}) {
    const ScalarField th = sample(g, [&](double x, double) { return std::cos(k * x); });
    const ExtendedField ext = extend(th, cfg, true);
    for (std::size_t j = 0; j < cfg.zgrid.size(); ++j) {
      const double z = cfg.zgrid.nodes[j];
      for (int i = 0; i < g.N; ++i) {
        const double x = i * g.dx();
        const std::size_t p = 5 * g.N + i;
        closed = std::max(closed, std::abs(ext.values[j][p] - std::exp(-k * z) * std::cos(k * x)));
        closed = std::max(closed, std::abs(ext.dz[j][p] + k * std::exp(-k * z) * std::cos(k * x)));
      }
    }
  }
  const double secs = seconds_since(t0);
  return {worst <= kTraceTol && closed <= kClosedFormTol && secs < kTraceSeconds, false,
          fmtn("per-mode relative error %.2e (tol %.0e), closed form %.2e (tol %.0e), %.2f s", worst, kTraceTol,
               closed, kClosedFormTol, secs)};
}

// ------------------------------------------------------------------ 3

Outcome extension_profile_check(const Context&) {
  std::vector<double> pts;
  for (int k = 1; k <= 20; ++k) {
    pts.push_back(0.1 * std::pow(1.3, k));
  }
  double shoot = 0.0, colloc = 0.0;
  for (double a : {0.6, 1.2, 1.5}) {
    const oracle::ProfileShooting ref(a, pts);
    const double b = 1.0 - a;
    auto flux = [&](double s) { return std::pow(s, b) * extension_profile_derivative(a, s); };
    for (double s : pts) {
      shoot = std::max(shoot, std::abs(extension_profile(a, s) / ref(s) - 1.0));
      const double h = 1e-4 * s;
      const double lhs = (flux(s + h) - flux(s - h)) / (2 * h);
      colloc = std::max(colloc, std::abs(lhs / (std::pow(s, b) * extension_profile(a, s)) - 1.0));
    }
  }
  return {shoot <= kShootingTol && colloc <= kCollocationTol, false,
          fmtn("shooting %.2e (tol %.0e), collocation %.2e (tol %.0e)", shoot, kShootingTol, colloc,
               kCollocationTol)};
}

// ------------------------------------------------------------------ 4

Outcome solver_budget(const Context&) {
  SolverConfig c;
  c.grid = Grid::make(256, 2.0 * kPi);
  c.alpha = 1.0;
  c.ic.kind = InitialKind::band_random;
  c.ic.k_lo = 2;
  c.ic.k_hi = 8;
  c.ic.amplitude = 1.0;
  c.ic.seed = 5;

  SolverConfig inv = c;
  inv.kappa = 0.0;
  inv.dt = 2e-3;
  inv.t_end = 1.0;
  inv.snapshot_stride = 100;
  const Trajectory ti = integrate(inv);
  const double e0 = ti.budget.front().variance;
  double drift = 0.0;
  for (const BudgetSample& b : ti.budget) {
    if (b.t > 0.0) {
      drift = std::max(drift, std::abs(b.variance - e0) / e0 / b.t);
    }
  }

  SolverConfig dis = c;
  dis.kappa = 0.05;
  dis.ic.amplitude = 3.0;
  dis.dt = 5e-4;
  dis.t_end = 0.2;
  dis.snapshot_stride = 2;
  const Trajectory td = integrate(dis);
  const auto b = variance_budget(td);
  const auto r = budget_residuals(b);
  double rel = 0.0;
  for (std::size_t k = 0; k < r.size(); ++k) {
    rel = std::max(rel, std::abs(r[k]) / b[k + 1].dissipation);
  }
  return {drift <= kDriftPerTime && rel <= kBudgetTol, false,
          fmtn("inviscid drift %.2e per unit time (tol %.0e), dissipative residual %.2e (tol %.0e)", drift,
               kDriftPerTime, rel, kBudgetTol)};
}

// ------------------------------------------------------------------ 5

/// Worst per-element relative residual at each scale for one refinement level;
/// level 2 is the configuration as shipped, each lower level doubles dt and
/// coarsens the vertical grid.
std::vector<double> residuals_at_level(const ExperimentConfig& base, int level) {
  ExperimentConfig c = base;
  const int coarsen = 2 - level;
  c.solver.dt *= std::pow(2.0, coarsen);
  c.zgrid.z_min *= std::pow(4.0, coarsen);
  c.zgrid.points_per_panel -= 2 * coarsen;
  const Trajectory tr = integrate(c.solver);
  const MacroDomain m = c.macro_for(c.solver.alpha);
  std::vector<Cover> covers;
  std::vector<CutoffFamily> fams;
  const auto Rs = c.scale_list();
  covers.reserve(Rs.size());
  fams.reserve(Rs.size());
  std::vector<const CutoffFamily*> ptrs;
  for (double R : Rs) {
    covers.push_back(generate_cover(m, R, c.cover.K1, c.cover.K2, c.cover.seed));
    fams.push_back(build_family(c.solver.grid, covers.back(), c.cutoff));
    ptrs.push_back(&fams.back());
  }
  const EngineResult er = run_engine(source_of(tr), ptrs, engine_options(c));
  std::vector<double> worst(Rs.size(), 0.0);
  for (std::size_t q = 0; q < Rs.size(); ++q) {
    for (const FluxTerms& t : er.terms[q]) {
      worst[q] = std::max(worst[q], t.relative_residual());
    }
  }
  return worst;
}

Outcome flux_identity(const Context& ctx) {
  const ExperimentConfig base = load_config(ctx.configs / "decay256.json");
  if (base.solver.grid.N != 256 || base.solver.alpha != 1.0 || base.scale_list().size() != 3) {
    return {false, false, "decay256.json must be N=256, alpha=1 with three scales"};
  }
  std::vector<std::vector<double>> lv;
  for (int level = 0; level <= 2; ++level) {
    lv.push_back(residuals_at_level(base, level));
  }
  bool ok = true;
  std::ostringstream s;
  for (std::size_t q = 0; q < lv[0].size(); ++q) {
    ok = ok && lv[2][q] <= kFluxResidualTol && lv[1][q] < lv[0][q] && lv[2][q] < lv[1][q];
    s << fmtn("R0/%g: %.2e > %.2e > %.2e; ", std::pow(2.0, q), lv[0][q], lv[1][q], lv[2][q]);
  }
  s << fmt("tol %.2f at the shipped resolution", kFluxResidualTol);
  return {ok, false, s.str()};
}

// ------------------------------------------------------------------ 6

Outcome cover_certification(const Context&) {
  const Grid g = Grid::make(128, 2.0 * kPi);
  MacroDomain m;
  m.x1 = m.x2 = kPi;
  m.R0 = kPi / 4;
  m.T = m.R0;
  const int K1 = 8, K2 = 8;
  bool counts = true;
  int worst_mult = 0;
  for (int j = 0; j <= 3; ++j) {
    const double R = m.R0 / (1 << j);
    const double q = std::pow(m.R0 / R, 2);
    for (std::uint64_t seed : {0u, 1u, 2u}) {
      for (double jitter : {0.0, 0.05}) {
        const Cover c = generate_cover(m, R, K1, K2, seed, jitter);
        const double n = static_cast<double>(c.size());
        counts = counts && n >= q * (1.0 - 1e-12) && n <= K1 * q;
        worst_mult = std::max(worst_mult, validate_cover(c, 24).K2_ball);
      }
    }
  }
  double change = 0.0;
  bool finite = true;
  for (int j : {0, 1, 2}) {
    const Cover c = generate_cover(m, m.R0 / (1 << j), K1, K2);
    const CutoffCert cert = certify_family(build_family(g, c, CutoffParams{}));
    finite = finite && std::isfinite(cert.C0_eff) && cert.C0_eff > 0.0;
    change = std::max(change, cert.refinement_change);
  }

  bool deleted = false;
  {
    Cover c = generate_cover(m, m.R0 / 2, K1, K2);
    for (auto it = c.centers.begin(); it != c.centers.end(); ++it) {
      if (std::hypot(it->x1 - m.x1, it->x2 - m.x2) < 1e-12) {
        c.centers.erase(it);
        break;
      }
    }
    try {
      validate_cover(c);
    } catch (const InvalidCoverError& e) {
      deleted = std::string(e.what()).find("not covered") != std::string::npos;
    }
  }
  bool too_large = false;
  {
    CutoffParams p;
    p.delta = 0.99;
    p.m = 4;
    try {
      certify_family(build_family(g, generate_cover(m, m.R0 / 2, K1, K2), p));
    } catch (const CertificationError&) {
      too_large = true;
    }
  }
  const bool ok = counts && worst_mult <= K2 && finite && change <= kCertChangeTol && deleted && too_large;
  return {ok, false,
          fmtn("counts %s, multiplicity %d (K2 %d), certificate change %.2e (tol %.2f), deleted center %s, "
               "delta too large %s",
               counts ? "ok" : "violated", worst_mult, K2, change, kCertChangeTol, deleted ? "rejected" : "accepted",
               too_large ? "rejected" : "accepted")};
}

// ------------------------------------------------------------------ 7, 8

fs::path energetic_dir(const Context& ctx) { return ctx.work / "energetic512"; }

Diagnosis run_energetic(const Context& ctx) {
  ExperimentConfig c = load_config(ctx.configs / "energetic512.json");
  c.slack = kChainSlack;
  const Trajectory tr = integrate(c.solver);
  Diagnosis d = diagnose(source_of(tr), c);
  write_reports(energetic_dir(ctx), d);
  std::printf("  energetic run: N=%d, %zu snapshots, spectral tail %.2e\n", c.solver.grid.N, tr.snapshots.size(),
              tr.spectral_tail);
  return d;
}

Outcome guaranteed_chain(const Context& ctx) {
  const Diagnosis d = run_energetic(ctx);
  const CascadeReport& rep = d.cascade;
  if (!rep.certified || !d.certificate_failures.empty()) {
    return {false, false, "run is not certified"};
  }
  if (!rep.sigma0_defined) {
    return {false, false, "sigma0 undefined on the shipped run"};
  }
  // the four inequalities, recomputed from the raw row quantities
  const MacroAverages& M = rep.macro;
  const double a = d.alpha, C0 = rep.C0_eff, s = 1.0 + kChainSlack;
  std::size_t violations = 0, in_range = 0;
  std::ostringstream rows;
  for (const CascadeRow& r : rep.rows) {
    const double K1 = r.K1_eff, K2 = r.K2_eff;
    const bool i = r.A1 <= s * 2.0 * C0 * K2 * M.theta0 / std::pow(r.R, a);
    const bool ii = r.A2 <= s * C0 * C0 * K2 * M.theta0_star / (r.R * r.R);
    const bool iii = r.D >= M.eps0_star / K1 / s && r.D <= s * K2 * M.eps0_star;
    const bool range = rep.premise && r.R >= rep.sigma0 / rep.beta_eff;
    const bool iv = r.F >= M.eps0_star / (4.0 * K1) / s && r.F <= s * 4.0 * K2 * M.eps0_star;
    in_range += range ? 1 : 0;
    if (!(i && ii && iii) || (range && !iv)) {
      ++violations;
    }
    rows << fmtn("R=%.4g %s%s%s%s; ", r.R, i ? "" : "A1! ", ii ? "" : "A2! ", iii ? "" : "D! ",
                 range ? (iv ? "F in range" : "F! ") : "F out of range");
  }
  const std::string head = fmtn("sigma0 %.4g, beta_eff %.4g, sigma0/beta_eff %.4g vs R0 %.4g, in-range scales %zu; ",
                                rep.sigma0, rep.beta_eff, rep.sigma0 / rep.beta_eff, rep.rows.front().R, in_range);
  if (violations > 0) {
    return {false, false, head + rows.str()};
  }
  if (!rep.premise || in_range < 2) {
    return {false, true, head + "premise sigma0 < beta_eff R0 with two in-range scales not met; " + rows.str()};
  }
  return {true, false, head + rows.str()};
}

Outcome locality_ratios(const Context& ctx) {
  const fs::path dir = energetic_dir(ctx);
  if (!fs::exists(dir / "cascade_report.json")) {
    run_energetic(ctx);
  }
  const Json rep = read_json(dir / "cascade_report.json");
  const double K1 = rep.at("K1_eff").get<double>();
  const double K2 = rep.at("K2_eff").get<double>();
  const double c = kLocalityConst * K1 * K2;
  struct Row {
    double R, F;
    bool in_range;
  };
  std::vector<Row> rows;
  for (const Json& r : rep.at("rows")) {
    rows.push_back({r.at("R").get<double>(), r.at("F").get<double>(), r.at("in_range").get<bool>()});
  }
  const Json loc = read_json(dir / "locality_report.json");
  bool diag_exact = true, within = true;
  std::size_t pairs = 0;
  for (const Json& p : loc.at("pairs")) {
    const double r = p.at("r").get<double>(), R = p.at("R").get<double>();
    if (r == R && p.at("defined").get<bool>()) {
      diag_exact = diag_exact && p.at("ratio").get<double>() == 1.0;
    }
  }
  for (const Row& a : rows) {
    for (const Row& b : rows) {
      if (!(a.in_range && b.in_range)) {
        continue;
      }
      ++pairs;
      const double q = (a.R / b.R) * (a.R / b.R);
      const double ratio = &a == &b ? 1.0 : (a.R * a.R * a.F) / (b.R * b.R * b.F);
      within = within && ratio >= q / c && ratio <= c * q;
    }
  }
  const std::string detail = fmtn("in-range pairs %zu, diagonal ratio exactly 1: %s, envelope 16 K1 K2 = %.4g", pairs,
                                  diag_exact ? "yes" : "no", c);
  if (!diag_exact || !within) {
    return {false, false, detail};
  }
  if (pairs == 0) {
    return {false, true, detail + "; no in-range scales on the shipped run"};
  }
  return {true, false, detail};
}

// ------------------------------------------------------------------ 9

MacroAverages simulated_macro(double alpha, double l) {
  ExperimentConfig c;
  c.solver.grid = Grid::make(128, 2.0 * kPi * l);
  c.solver.alpha = alpha;
  c.solver.kappa = 0.05;
  c.solver.dt = 0.01 * std::pow(l, alpha);
  c.solver.snapshot_stride = 2;
  c.solver.ic.kind = InitialKind::band_random;
  c.solver.ic.k_lo = 2;
  c.solver.ic.k_hi = 5;
  c.solver.ic.amplitude = std::pow(l, 1.0 - alpha);
  c.solver.ic.seed = 9;
  c.macro.x1 = c.macro.x2 = c.solver.grid.L / 2;
  c.macro.R0 = c.solver.grid.L / 8;
  c.macro.T = std::pow(c.macro.R0, alpha);
  c.macro.alpha = alpha;
  c.solver.t_end = 2.0 * c.macro.T;
  c.zgrid.z_min = 1e-3 * l;
  const Trajectory tr = integrate(c.solver);
  const Cover cv = generate_cover(c.macro, c.macro.R0);
  const CutoffFamily f = build_family(c.solver.grid, cv, c.cutoff);
  return run_engine(source_of(tr), {&f}, engine_options(c)).macro;
}

Outcome dimensional_scaling(const Context&) {
  const double l = 2.0;
  double worst = 0.0;
  std::ostringstream s;
  for (double a : {1.0, 0.7}) {
    const MacroAverages m = simulated_macro(a, 1.0);
    const MacroAverages ml = simulated_macro(a, l);
    const double e1 = ml.theta0 / m.theta0 / std::pow(l, 2 - 2 * a) - 1.0;
    const double e2 = ml.theta0_star / m.theta0_star / std::pow(l, 4 - 3 * a) - 1.0;
    const double e3 = ml.eps0_star / m.eps0_star / std::pow(l, 2 - 3 * a) - 1.0;
    const double e4 = ml.sigma0() / m.sigma0() / l - 1.0;
    worst = std::max({worst, std::abs(e1), std::abs(e2), std::abs(e3), std::abs(e4)});
    s << fmtn("alpha %.1f: exponent errors %.1e %.1e %.1e, sigma0 %.1e; ", a, e1, e2, e3, e4);
  }
  s << fmt("tol %.2f", kScalingTol);
  return {worst <= kScalingTol, false, s.str()};
}

// ------------------------------------------------------------------ 10

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

Outcome determinism(const Context& ctx) {
  const ExperimentConfig c = load_config(ctx.configs / "tiny.json");
  std::vector<fs::path> dirs{ctx.work / "determinism_a", ctx.work / "determinism_b"};
  for (const fs::path& d : dirs) {
    fs::remove_all(d);
    const Trajectory tr = integrate(c.solver);
    write_trajectory(d / "trajectory", tr);
    write_reports(d, diagnose(open_trajectory(d / "trajectory"), c));
  }
  std::size_t files = 0, differ = 0;
  for (const auto& e : fs::recursive_directory_iterator(dirs[0])) {
    if (!e.is_regular_file()) {
      continue;
    }
    ++files;
    const fs::path rel = fs::relative(e.path(), dirs[0]);
    if (!fs::exists(dirs[1] / rel) || slurp(e.path()) != slurp(dirs[1] / rel)) {
      ++differ;
      std::printf("  differs: %s\n", rel.string().c_str());
    }
  }
  return {files > 0 && differ == 0, false, fmtn("%zu files compared, %zu differ", files, differ)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance criteria"};
  int only = 0;
  Context ctx;
  std::string configs = SQG_CONFIG_DIR;
  std::string work = "acceptance_work";
  app.add_option("--criterion", only, "run a single criterion (1-10)")->check(CLI::Range(1, 10));
  app.add_option("--configs", configs, "directory of shipped configurations");
  app.add_option("--work", work, "scratch directory for runs and reports");
  CLI11_PARSE(app, argc, argv);
  ctx.configs = configs;
  ctx.work = work;
  fs::create_directories(ctx.work);

  const std::vector<std::pair<const char*, std::function<Outcome(const Context&)>>> criteria{
      {"spectral operator exactness", spectral_modes},
      {"extension trace identity", trace_identity},
      {"extension profile", extension_profile_check},
      {"solver variance budget", solver_budget},
      {"localized flux identity", flux_identity},
      {"cover and cutoff certification", cover_certification},
      {"guaranteed cascade chain", guaranteed_chain},
      {"flux locality ratios", locality_ratios},
      {"dimensional scaling", dimensional_scaling},
      {"determinism", determinism},
  };
  bool hard = false, soft = false;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    if (only != 0 && static_cast<int>(k) + 1 != only) {
      continue;
    }
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[k].second(ctx);
    } catch (const std::exception& e) {
      o = {false, false, std::string("exception: ") + e.what()};
    }
    std::printf("criterion %zu %s: %s  (%s, %.1f s)\n", k + 1, o.pass ? "PASS" : "FAIL", criteria[k].first,
                o.detail.c_str(), seconds_since(t0));
    std::fflush(stdout);
    if (!o.pass) {
      (o.infeasible ? soft : hard) = true;
    }
  }
  return hard ? 1 : (soft ? 77 : 0);
}
