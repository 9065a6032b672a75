#pragma once

// Experiment configuration: one JSON file with flat sections
//
//   grid        N, L
//   solver      alpha, kappa, dt, t_end, snapshot_stride, dealias, cfl_max
//   ic          kind, k_lo, k_hi, amplitude, seed, path
//   macro       x1, x2, R0, T
//   cutoff      delta, m, lambda, R_star
//   cover       K1, K2, seed, jitter, samples_per_R, alternates
//   scales      list | dyadic_depth
//   zgrid       z_min, ratio, points_per_panel, ramp_panels
//   diagnostics slack, refine, refine_tolerance
//   sweep       alpha
//   output      dir
//
// Every section and key is optional; unknown sections or keys are errors.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sqg/errors.hpp"
#include "sqg/fields.hpp"
#include "sqg/multiscale.hpp"
#include "sqg/quadrature.hpp"
#include "sqg/solver.hpp"

namespace sqg {

using Json = nlohmann::ordered_json;

struct CoverSpec {
  int K1 = 8;
  int K2 = 8;
  std::uint64_t seed = 0;
  /// center jitter as a fraction of R (at most 0.05)
  double jitter = 0.0;
  int samples_per_R = 16;
  /// extra jittered covers per scale, reported next to the primary one
  int alternates = 0;
};

struct ExperimentConfig {
  SolverConfig solver;
  MacroDomain macro;
  CutoffParams cutoff;
  CoverSpec cover;
  /// explicit scales; empty means dyadic R0 / 2^j for j = 0..dyadic_depth
  std::vector<double> scales;
  int dyadic_depth = 3;
  ZGridSpec zgrid;
  double slack = 0.01;
  int refine = 4;
  double refine_tolerance = 0.05;
  std::vector<double> sweep_alpha;
  std::string output_dir = "out";

  /// scales actually used, largest first
  std::vector<double> scale_list() const {
    std::vector<double> s = scales;
    if (s.empty()) {
      for (int j = 0; j <= dyadic_depth; ++j) {
        s.push_back(macro.R0 / std::pow(2.0, j));
      }
    }
    std::sort(s.begin(), s.end(), std::greater<>());
    return s;
  }

  MacroDomain macro_for(double alpha) const {
    MacroDomain m = macro;
    m.alpha = alpha;
    return m;
  }
};

namespace detail {

inline void check_keys(const Json& j, const std::string& where, const std::set<std::string>& allowed) {
  if (!j.is_object()) {
    throw ConfigError("config: '" + where + "' must be an object");
  }
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!allowed.count(it.key())) {
      throw ConfigError("config: unknown key '" + it.key() + "' in " + where);
    }
  }
}

template <class T>
void read_key(const Json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) {
    return;
  }
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("config: " + where + "." + key + " has the wrong type");
  }
}

inline InitialKind parse_ic_kind(const std::string& s) {
  if (s == "band_random") {
    return InitialKind::band_random;
  }
  if (s == "dual_vortex") {
    return InitialKind::dual_vortex;
  }
  if (s == "file") {
    return InitialKind::file;
  }
  throw ConfigError("config: ic.kind must be band_random, dual_vortex or file, got '" + s + "'");
}

}  // namespace detail

/// Throws ConfigError on any inconsistency; messages name the violated constraint.
inline void validate(const ExperimentConfig& c) {
  const Grid& g = c.solver.grid;
  if (g.N < 8 || g.N % 2 != 0 || !(g.L > 0.0)) {
    throw ConfigError("config: grid needs even N >= 8 and L > 0");
  }
  try {
    validate(c.solver);
  } catch (const Error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  const MacroDomain& m = c.macro;
  if (!(m.R0 > 0.0) || !(m.T > 0.0)) {
    throw ConfigError("config: macro needs R0 > 0 and T > 0");
  }
  if (g.L < 8.0 * m.R0 * (1.0 - 1e-12)) {
    throw ConfigError("config: the box must satisfy L >= 8 R0");
  }
  std::vector<double> alphas = c.sweep_alpha;
  alphas.push_back(c.solver.alpha);
  for (double a : alphas) {
    if (!(a > 0.0 && a <= 2.0)) {
      throw ConfigError("config: alpha must lie in (0, 2], got " + std::to_string(a));
    }
    if (2.0 * m.T < std::pow(m.R0, a) * (1.0 - 1e-12)) {
      throw ConfigError("config: macro time scale violates 2T >= R0^alpha at alpha = " + std::to_string(a) +
                        " (2T = " + std::to_string(2.0 * m.T) + ", R0^alpha = " + std::to_string(std::pow(m.R0, a)) +
                        ")");
    }
  }
  if (c.solver.t_end < 2.0 * m.T * (1.0 - 1e-12)) {
    throw ConfigError("config: solver.t_end must cover [0, 2T]");
  }
  try {
    m.validate(g);
    check_delta(c.cutoff.delta);
  } catch (const Error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  const double floor = 8.0 * g.dx();
  for (double R : c.scale_list()) {
    if (!(R > 0.0) || R > m.R0 * (1.0 + 1e-12)) {
      throw ConfigError("config: scales must lie in (0, R0]");
    }
    if (R < floor * (1.0 - 1e-9)) {
      throw ConfigError("config: scale R = " + std::to_string(R) + " is below the resolution floor 8 dx = " +
                        std::to_string(floor));
    }
  }
  if (c.cover.K1 < 1 || c.cover.K2 < 1 || c.cover.jitter < 0.0 || c.cover.jitter > 0.05 ||
      c.cover.samples_per_R < 2 || c.cover.alternates < 0) {
    throw ConfigError("config: cover needs K1, K2 >= 1, jitter in [0, 0.05], samples_per_R >= 2, alternates >= 0");
  }
  if (!(c.slack >= 0.0 && c.slack < 1.0)) {
    throw ConfigError("config: diagnostics.slack must lie in [0, 1)");
  }
  if (!(c.zgrid.z_min > 0.0) || !(c.zgrid.ratio > 0.0 && c.zgrid.ratio < 1.0) || c.zgrid.points_per_panel < 2 ||
      c.zgrid.ramp_panels < 1) {
    throw ConfigError("config: zgrid needs z_min > 0, ratio in (0, 1), points_per_panel >= 2, ramp_panels >= 1");
  }
}

/// grid, solver and ic sections only; t_end_given reports whether solver.t_end was set.
inline SolverConfig parse_solver_config(const Json& j, bool* t_end_given = nullptr) {
  using detail::read_key;
  SolverConfig c;
  int N = 128;
  double L = 2.0 * std::numbers::pi;
  if (j.contains("grid")) {
    const Json& s = j["grid"];
    detail::check_keys(s, "grid", {"N", "L"});
    read_key(s, "N", N, "grid");
    read_key(s, "L", L, "grid");
  }
  if (N < 8 || N % 2 != 0 || !(L > 0.0)) {
    throw ConfigError("config: grid needs even N >= 8 and L > 0");
  }
  c.grid = Grid::make(N, L);
  if (t_end_given) {
    *t_end_given = false;
  }
  if (j.contains("solver")) {
    const Json& s = j["solver"];
    detail::check_keys(s, "solver", {"alpha", "kappa", "dt", "t_end", "snapshot_stride", "dealias", "cfl_max"});
    read_key(s, "alpha", c.alpha, "solver");
    read_key(s, "kappa", c.kappa, "solver");
    read_key(s, "dt", c.dt, "solver");
    if (t_end_given) {
      *t_end_given = s.contains("t_end");
    }
    read_key(s, "t_end", c.t_end, "solver");
    read_key(s, "snapshot_stride", c.snapshot_stride, "solver");
    read_key(s, "dealias", c.dealias, "solver");
    read_key(s, "cfl_max", c.cfl_max, "solver");
  }
  if (j.contains("ic")) {
    const Json& s = j["ic"];
    detail::check_keys(s, "ic", {"kind", "k_lo", "k_hi", "amplitude", "seed", "path"});
    std::string kind = to_string(c.ic.kind);
    read_key(s, "kind", kind, "ic");
    c.ic.kind = detail::parse_ic_kind(kind);
    read_key(s, "k_lo", c.ic.k_lo, "ic");
    read_key(s, "k_hi", c.ic.k_hi, "ic");
    read_key(s, "amplitude", c.ic.amplitude, "ic");
    read_key(s, "seed", c.ic.seed, "ic");
    read_key(s, "path", c.ic.path, "ic");
  }
  try {
    validate(c);
  } catch (const Error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return c;
}

inline ExperimentConfig parse_config(const Json& j) {
  using detail::read_key;
  ExperimentConfig c;
  detail::check_keys(j, "config",
                     {"grid", "solver", "ic", "macro", "cutoff", "cover", "scales", "zgrid", "diagnostics", "sweep",
                      "output"});
  bool t_end_given = false;
  c.solver = parse_solver_config(j, &t_end_given);
  const double L = c.solver.grid.L;
  c.macro.x1 = c.macro.x2 = L / 2.0;
  c.macro.R0 = L / 8.0;
  c.macro.T = 1.0;
  if (j.contains("macro")) {
    const Json& s = j["macro"];
    detail::check_keys(s, "macro", {"x1", "x2", "R0", "T"});
    read_key(s, "x1", c.macro.x1, "macro");
    read_key(s, "x2", c.macro.x2, "macro");
    read_key(s, "R0", c.macro.R0, "macro");
    read_key(s, "T", c.macro.T, "macro");
  }
  c.macro.alpha = c.solver.alpha;
  if (!t_end_given) {
    c.solver.t_end = 2.0 * c.macro.T;
  }
  if (j.contains("cutoff")) {
    const Json& s = j["cutoff"];
    detail::check_keys(s, "cutoff", {"delta", "m", "lambda", "R_star"});
    read_key(s, "delta", c.cutoff.delta, "cutoff");
    read_key(s, "m", c.cutoff.m, "cutoff");
    read_key(s, "lambda", c.cutoff.lambda, "cutoff");
    read_key(s, "R_star", c.cutoff.R_star, "cutoff");
  }
  if (j.contains("cover")) {
    const Json& s = j["cover"];
    detail::check_keys(s, "cover", {"K1", "K2", "seed", "jitter", "samples_per_R", "alternates"});
    read_key(s, "K1", c.cover.K1, "cover");
    read_key(s, "K2", c.cover.K2, "cover");
    read_key(s, "seed", c.cover.seed, "cover");
    read_key(s, "jitter", c.cover.jitter, "cover");
    read_key(s, "samples_per_R", c.cover.samples_per_R, "cover");
    read_key(s, "alternates", c.cover.alternates, "cover");
  }
  if (j.contains("scales")) {
    const Json& s = j["scales"];
    detail::check_keys(s, "scales", {"list", "dyadic_depth"});
    read_key(s, "list", c.scales, "scales");
    read_key(s, "dyadic_depth", c.dyadic_depth, "scales");
    if (c.dyadic_depth < 0) {
      throw ConfigError("config: scales.dyadic_depth must be >= 0");
    }
  }
  if (j.contains("zgrid")) {
    const Json& s = j["zgrid"];
    detail::check_keys(s, "zgrid", {"z_min", "ratio", "points_per_panel", "ramp_panels"});
    read_key(s, "z_min", c.zgrid.z_min, "zgrid");
    read_key(s, "ratio", c.zgrid.ratio, "zgrid");
    read_key(s, "points_per_panel", c.zgrid.points_per_panel, "zgrid");
    read_key(s, "ramp_panels", c.zgrid.ramp_panels, "zgrid");
  }
  if (j.contains("diagnostics")) {
    const Json& s = j["diagnostics"];
    detail::check_keys(s, "diagnostics", {"slack", "refine", "refine_tolerance"});
    read_key(s, "slack", c.slack, "diagnostics");
    read_key(s, "refine", c.refine, "diagnostics");
    read_key(s, "refine_tolerance", c.refine_tolerance, "diagnostics");
  }
  if (j.contains("sweep")) {
    const Json& s = j["sweep"];
    detail::check_keys(s, "sweep", {"alpha"});
    read_key(s, "alpha", c.sweep_alpha, "sweep");
  }
  if (j.contains("output")) {
    const Json& s = j["output"];
    detail::check_keys(s, "output", {"dir"});
    read_key(s, "dir", c.output_dir, "output");
  }
  validate(c);
  return c;
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("config: cannot open " + path.string());
  }
  Json j;
  try {
    j = Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config: " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_config(j);
}

inline Json to_json(const SolverConfig& s) {
  Json j;
  j["grid"] = {{"N", s.grid.N}, {"L", s.grid.L}};
  j["solver"] = {{"alpha", s.alpha},
                 {"kappa", s.kappa},
                 {"dt", s.dt},
                 {"t_end", s.t_end},
                 {"snapshot_stride", s.snapshot_stride},
                 {"dealias", s.dealias},
                 {"cfl_max", s.cfl_max}};
  j["ic"] = {{"kind", to_string(s.ic.kind)},
             {"k_lo", s.ic.k_lo},
             {"k_hi", s.ic.k_hi},
             {"amplitude", s.ic.amplitude},
             {"seed", s.ic.seed},
             {"path", s.ic.path}};
  return j;
}

/// Full echo; parse_config(to_json(c)) reproduces c.
inline Json to_json(const ExperimentConfig& c) {
  Json j = to_json(c.solver);
  j["macro"] = {{"x1", c.macro.x1}, {"x2", c.macro.x2}, {"R0", c.macro.R0}, {"T", c.macro.T}};
  j["cutoff"] = {{"delta", c.cutoff.delta}, {"m", c.cutoff.m}, {"lambda", c.cutoff.lambda}, {"R_star", c.cutoff.R_star}};
  j["cover"] = {{"K1", c.cover.K1},
                {"K2", c.cover.K2},
                {"seed", c.cover.seed},
                {"jitter", c.cover.jitter},
                {"samples_per_R", c.cover.samples_per_R},
                {"alternates", c.cover.alternates}};
  j["scales"] = {{"list", c.scales}, {"dyadic_depth", c.dyadic_depth}};
  j["zgrid"] = {{"z_min", c.zgrid.z_min},
                {"ratio", c.zgrid.ratio},
                {"points_per_panel", c.zgrid.points_per_panel},
                {"ramp_panels", c.zgrid.ramp_panels}};
  j["diagnostics"] = {{"slack", c.slack}, {"refine", c.refine}, {"refine_tolerance", c.refine_tolerance}};
  j["sweep"] = {{"alpha", c.sweep_alpha}};
  j["output"] = {{"dir", c.output_dir}};
  return j;
}

}  // namespace sqg
