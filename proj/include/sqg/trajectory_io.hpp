#pragma once

// Trajectory directory: snap_NNNNNN.sqgf files plus manifest.json
// (config echo, times, stride, file list, solver statistics).

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "sqg/config.hpp"
#include "sqg/diagnostics.hpp"
#include "sqg/snapshot_io.hpp"
#include "sqg/solver.hpp"

namespace sqg {

inline constexpr int kManifestVersion = 1;

struct TrajectoryManifest {
  SolverConfig config;
  std::vector<double> times;
  std::vector<std::string> files;
  int cfl_halvings = 0;
  double spectral_tail = 0.0;
  std::vector<BudgetSample> budget;
};

inline std::string snapshot_name(std::size_t k) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "snap_%06zu.sqgf", k);
  return buf;
}

inline Json to_json(const TrajectoryManifest& m) {
  Json j;
  j["format"] = "sqg-trajectory";
  j["version"] = kManifestVersion;
  j["config"] = to_json(m.config);
  j["stride"] = m.config.snapshot_stride;
  j["times"] = m.times;
  j["files"] = m.files;
  j["cfl_halvings"] = m.cfl_halvings;
  j["spectral_tail"] = m.spectral_tail;
  Json b = Json::array();
  for (const BudgetSample& s : m.budget) {
    b.push_back({s.t, s.variance, s.dissipation});
  }
  j["budget"] = b;
  return j;
}

inline void write_json(const std::filesystem::path& path, const Json& j) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw DataError("cannot write " + path.string());
  }
  out << j.dump(2) << '\n';
  if (!out) {
    throw DataError("failed writing " + path.string());
  }
}

inline Json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw DataError("missing file: " + path.string());
  }
  try {
    return Json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError("corrupt JSON in " + path.string() + ": " + e.what());
  }
}

inline void write_trajectory(const std::filesystem::path& dir, const Trajectory& traj) {
  std::filesystem::create_directories(dir);
  TrajectoryManifest m;
  m.config = traj.config;
  m.times = traj.times;
  m.cfl_halvings = traj.cfl_halvings;
  m.spectral_tail = traj.spectral_tail;
  m.budget = traj.budget;
  for (std::size_t k = 0; k < traj.snapshots.size(); ++k) {
    m.files.push_back(snapshot_name(k));
    write_snapshot(dir / m.files.back(), traj.snapshots[k], traj.config.alpha, traj.config.kappa, traj.times[k]);
  }
  write_json(dir / "manifest.json", to_json(m));
}

inline TrajectoryManifest read_manifest(const std::filesystem::path& dir) {
  const Json j = read_json(dir / "manifest.json");
  TrajectoryManifest m;
  try {
    if (j.at("format") != "sqg-trajectory" || j.at("version").get<int>() != kManifestVersion) {
      throw DataError("unsupported manifest format in " + dir.string());
    }
    try {
      m.config = parse_solver_config(j.at("config"));
    } catch (const ConfigError& e) {
      throw DataError(std::string("manifest config: ") + e.what());
    }
    m.times = j.at("times").get<std::vector<double>>();
    m.files = j.at("files").get<std::vector<std::string>>();
    m.cfl_halvings = j.at("cfl_halvings").get<int>();
    m.spectral_tail = j.at("spectral_tail").get<double>();
    for (const Json& b : j.at("budget")) {
      m.budget.push_back({b.at(0).get<double>(), b.at(1).get<double>(), b.at(2).get<double>()});
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed manifest in " + dir.string() + ": " + e.what());
  }
  if (m.times.size() != m.files.size() || m.times.empty()) {
    throw DataError("manifest times and files disagree in " + dir.string());
  }
  return m;
}

/// Snapshots are read on demand and checked against the manifest.
inline SnapshotSource open_trajectory(const std::filesystem::path& dir) {
  const TrajectoryManifest m = read_manifest(dir);
  for (const std::string& f : m.files) {
    if (!std::filesystem::exists(dir / f)) {
      throw DataError("missing snapshot file: " + (dir / f).string());
    }
  }
  SnapshotSource s;
  s.grid = m.config.grid;
  s.alpha = m.config.alpha;
  s.kappa = m.config.kappa;
  s.times = m.times;
  s.load = [dir, m](std::size_t k) {
    const std::filesystem::path p = dir / m.files.at(k);
    Snapshot snap = read_snapshot(p);
    const SnapshotHeader& h = snap.header;
    if (static_cast<int>(h.N) != m.config.grid.N || h.L != m.config.grid.L || h.alpha != m.config.alpha ||
        h.kappa != m.config.kappa || h.t != m.times[k]) {
      throw DataError("snapshot header disagrees with the manifest: " + p.string());
    }
    return std::move(snap.theta);
  };
  return s;
}

inline Trajectory load_trajectory(const std::filesystem::path& dir) {
  const TrajectoryManifest m = read_manifest(dir);
  const SnapshotSource s = open_trajectory(dir);
  Trajectory t;
  t.config = m.config;
  t.times = m.times;
  t.cfl_halvings = m.cfl_halvings;
  t.spectral_tail = m.spectral_tail;
  t.budget = m.budget;
  for (std::size_t k = 0; k < m.times.size(); ++k) {
    t.snapshots.push_back(s.load(k));
  }
  return t;
}

}  // namespace sqg
