// sqg_cli: simulate | diagnose | sweep | report
//
// exit codes: 0 ok, 2 config error, 3 runtime/data error, 4 certification failure

#include <CLI11.hpp>

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "sqg/config.hpp"
#include "sqg/pipeline.hpp"
#include "sqg/report.hpp"
#include "sqg/solver.hpp"
#include "sqg/trajectory_io.hpp"

namespace fs = std::filesystem;
using namespace sqg;

namespace {

constexpr int kOk = 0;
constexpr int kConfig = 2;
constexpr int kRuntime = 3;
constexpr int kCert = 4;

struct Options {
  std::string config;
  std::string out;
  std::string trajectory;
  int jobs = 1;
  std::optional<std::uint64_t> seed;
  std::optional<double> slack;
};

ExperimentConfig load(const Options& o) {
  if (o.config.empty()) {
    throw ConfigError("--config is required");
  }
  ExperimentConfig c = load_config(o.config);
  if (o.seed) {
    c.solver.ic.seed = *o.seed;
  }
  if (o.slack) {
    c.slack = *o.slack;
  }
  if (!o.out.empty()) {
    c.output_dir = o.out;
  }
  validate(c);
  return c;
}

void simulate_into(const ExperimentConfig& c, const fs::path& dir) {
  const Trajectory tr = integrate(c.solver);
  write_trajectory(dir, tr);
  std::printf("wrote %zu snapshots to %s (cfl halvings %d, spectral tail %.3e)\n", tr.snapshots.size(),
              dir.string().c_str(), tr.cfl_halvings, tr.spectral_tail);
}

int diagnose_into(const ExperimentConfig& c, const fs::path& traj, const fs::path& out) {
  const SnapshotSource src = open_trajectory(traj);
  const Diagnosis d = diagnose(src, c);
  write_reports(out, d);
  const CascadeReport& r = d.cascade;
  std::printf("alpha %.3g: sigma0 %s, beta_eff %.4g, premise %s, in-range scales %zu; reports in %s\n", d.alpha,
              r.sigma0_defined ? std::to_string(r.sigma0).c_str() : "undefined", r.beta_eff,
              r.premise ? "met" : "not met", r.in_range_count(), out.string().c_str());
  if (!d.certificate_failures.empty()) {
    for (const std::string& f : d.certificate_failures) {
      std::fprintf(stderr, "certificate failure: %s\n", f.c_str());
    }
    return kCert;
  }
  if (has_chain_violation(r)) {
    std::fprintf(stderr, "guaranteed inequality violated; see cascade_report.json\n");
    return kCert;
  }
  return kOk;
}

template <class F>
int guarded(F&& f) {
  try {
    return f();
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfig;
  } catch (const CertificationError& e) {
    std::fprintf(stderr, "certification failure: %s\n", e.what());
    return kCert;
  } catch (const BlowUpError& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return kRuntime;
  } catch (const ParameterError& e) {
    std::fprintf(stderr, "parameter error: %s\n", e.what());
    return kConfig;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kRuntime;
  }
}

std::string alpha_dir(double a) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "alpha_%.4g", a);
  return buf;
}

struct SweepRow {
  double alpha = 0.0;
  int status = kOk;
  bool sigma0_defined = false;
  double sigma0 = 0.0;
  double beta_eff = 0.0;
  bool premise = false;
  std::size_t passing = 0;
  std::size_t in_range = 0;
  bool extension_skipped = false;
};

int cmd_sweep(const Options& o) {
  const ExperimentConfig base = load(o);
  std::vector<double> alphas = base.sweep_alpha.empty() ? std::vector<double>{base.solver.alpha} : base.sweep_alpha;
  std::vector<SweepRow> rows(alphas.size());
  std::atomic<std::size_t> next{0};
  std::mutex io;
  auto worker = [&] {
    for (std::size_t k; (k = next++) < alphas.size();) {
      SweepRow& row = rows[k];
      row.alpha = alphas[k];
      row.status = guarded([&] {
        ExperimentConfig c = base;
        c.solver.alpha = alphas[k];
        c.macro.alpha = alphas[k];
        c.sweep_alpha.clear();
        validate(c);
        const fs::path dir = fs::path(c.output_dir) / alpha_dir(alphas[k]);
        const Trajectory tr = integrate(c.solver);
        write_trajectory(dir / "trajectory", tr);
        const Diagnosis d = diagnose(source_of(tr), c);
        write_reports(dir, d);
        const CascadeReport& r = d.cascade;
        row.sigma0_defined = r.sigma0_defined;
        row.sigma0 = r.sigma0;
        row.beta_eff = r.beta_eff;
        row.premise = r.premise;
        row.extension_skipped = d.extension_skipped;
        for (const CascadeRow& cr : r.rows) {
          row.in_range += cr.in_range ? 1 : 0;
          row.passing += (cr.in_range && cr.pass) ? 1 : 0;
        }
        {
          std::lock_guard<std::mutex> lock(io);
          std::printf("alpha %.4g done\n", alphas[k]);
        }
        if (!d.certificate_failures.empty() || has_chain_violation(r)) {
          return kCert;
        }
        return kOk;
      });
    }
  };
  const int jobs = std::max(1, std::min<int>(o.jobs, static_cast<int>(alphas.size())));
  std::vector<std::thread> pool;
  for (int t = 0; t < jobs; ++t) {
    pool.emplace_back(worker);
  }
  for (auto& t : pool) {
    t.join();
  }

  Json summary = Json::array();
  std::string csv = "alpha,sigma0,beta_eff,premise,in_range,passing,status,note\n";
  int status = kOk;
  for (const SweepRow& r : rows) {
    const std::string note = r.extension_skipped ? "local-Laplacian path, extension diagnostics skipped" : "";
    summary.push_back({{"alpha", r.alpha},
                       {"sigma0", r.sigma0_defined ? Json(r.sigma0) : Json(nullptr)},
                       {"beta_eff", r.beta_eff},
                       {"premise", r.premise},
                       {"in_range_scales", r.in_range},
                       {"passing_scales", r.passing},
                       {"status", r.status},
                       {"note", note}});
    csv += detail::fmt(r.alpha) + ',' + (r.sigma0_defined ? detail::fmt(r.sigma0) : "undefined") + ',' +
           detail::fmt(r.beta_eff) + ',' + (r.premise ? "true" : "false") + ',' + std::to_string(r.in_range) + ',' +
           std::to_string(r.passing) + ',' + std::to_string(r.status) + ',' + note + '\n';
    status = std::max(status, r.status);
  }
  fs::create_directories(base.output_dir);
  write_json(fs::path(base.output_dir) / "sweep_summary.json", summary);
  detail::write_text(fs::path(base.output_dir) / "sweep_summary.csv", csv);
  std::fputs(csv.c_str(), stdout);
  return status;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SQG flux-cascade laboratory"};
  app.require_subcommand(1);
  Options o;
  auto common = [&](CLI::App* s) {
    s->add_option("--config", o.config, "experiment configuration (JSON)");
    s->add_option("--out", o.out, "output directory (overrides output.dir)");
    s->add_option("--seed", o.seed, "initial-condition seed (overrides ic.seed)");
    s->add_option("--slack", o.slack, "multiplicative slack for the guaranteed inequalities");
    s->add_option("--jobs", o.jobs, "parallel sweep entries")->check(CLI::PositiveNumber);
  };
  CLI::App* sim = app.add_subcommand("simulate", "integrate and write <out>/trajectory");
  CLI::App* dia = app.add_subcommand("diagnose", "flux diagnostics of a stored trajectory");
  CLI::App* swp = app.add_subcommand("sweep", "simulate and diagnose every alpha in sweep.alpha");
  CLI::App* rep = app.add_subcommand("report", "re-render CSV tables and plots from JSON reports in --out");
  for (CLI::App* s : {sim, dia, swp, rep}) {
    common(s);
  }
  dia->add_option("--trajectory", o.trajectory, "trajectory directory (default <out>/trajectory)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  if (sim->parsed()) {
    return guarded([&] {
      const ExperimentConfig c = load(o);
      simulate_into(c, fs::path(c.output_dir) / "trajectory");
      return kOk;
    });
  }
  if (dia->parsed()) {
    return guarded([&] {
      const ExperimentConfig c = load(o);
      const fs::path traj = o.trajectory.empty() ? fs::path(c.output_dir) / "trajectory" : fs::path(o.trajectory);
      return diagnose_into(c, traj, c.output_dir);
    });
  }
  if (swp->parsed()) {
    return guarded([&] { return cmd_sweep(o); });
  }
  return guarded([&] {
    if (o.out.empty()) {
      throw ConfigError("report needs --out DIR");
    }
    rerender_reports(o.out);
    std::printf("re-rendered reports in %s\n", o.out.c_str());
    return kOk;
  });
}
