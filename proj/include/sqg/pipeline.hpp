#pragma once

// Experiment orchestration shared by the command line tool and the acceptance runs.

#include <cstdint>
#include <deque>
#include <optional>
#include <string>
#include <vector>

#include "sqg/config.hpp"
#include "sqg/diagnostics.hpp"
#include "sqg/multiscale.hpp"

namespace sqg {

struct AlternateCover {
  double R = 0.0;
  std::uint64_t seed = 0;
  std::size_t n = 0;
  double K1_eff = 0.0;
  int K2_eff = 0;
  double F = 0.0;
  double D = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  bool within = false;
};

struct Diagnosis {
  double alpha = 1.0;
  double kappa = 1.0;
  bool extension_skipped = false;
  CascadeReport cascade;
  LocalityReport locality;
  std::vector<std::optional<CutoffCert>> cutoff_certs;
  std::vector<std::optional<FamilyCert>> family_certs;
  std::vector<std::string> certificate_failures;
  std::vector<AlternateCover> alternates;
  std::size_t snapshots_used = 0;
};

inline EngineOptions engine_options(const ExperimentConfig& c) {
  EngineOptions o;
  o.zgrid = c.zgrid;
  return o;
}

/// Covers, cutoff families and certificates at every configured scale, one engine
/// pass, then the cascade and locality reports.  Certificate failures are recorded
/// (and leave the report uncertified) rather than thrown.
inline Diagnosis diagnose(const SnapshotSource& src, const ExperimentConfig& cfg) {
  Diagnosis out;
  out.alpha = src.alpha;
  out.kappa = src.kappa;
  out.extension_skipped = src.alpha == 2.0;
  const MacroDomain macro = cfg.macro_for(src.alpha);
  macro.validate(src.grid);

  std::deque<Cover> covers;
  std::deque<CutoffFamily> families;
  std::vector<ScaleInput> scales;
  const std::vector<double> Rs = cfg.scale_list();
  for (double R : Rs) {
    covers.push_back(
        generate_cover(macro, R, cfg.cover.K1, cfg.cover.K2, cfg.cover.seed, cfg.cover.jitter, cfg.cover.samples_per_R));
    families.push_back(build_family(src.grid, covers.back(), cfg.cutoff));
    ScaleInput in{&covers.back(), &families.back(), std::nullopt, std::nullopt};
    try {
      in.cutoff_cert = certify_family(families.back(), cfg.refine, cfg.refine_tolerance);
    } catch (const CertificationError& e) {
      out.certificate_failures.push_back("R = " + std::to_string(R) + ": " + e.what());
    }
    try {
      in.family_cert = certify_cover_family(covers.back(), families.back(), cfg.cover.samples_per_R);
      const FamilyCert& fc = *in.family_cert;
      if (!fc.partition || !fc.domination || !fc.below_macro) {
        out.certificate_failures.push_back("R = " + std::to_string(R) + ": cutoff family fails partition/domination");
      }
    } catch (const CertificationError& e) {
      out.certificate_failures.push_back("R = " + std::to_string(R) + ": " + e.what());
    }
    out.cutoff_certs.push_back(in.cutoff_cert);
    out.family_certs.push_back(in.family_cert);
    scales.push_back(in);
  }

  struct Alt {
    std::size_t scale;
    std::uint64_t seed;
    FamilyCert cert;
  };
  std::vector<Alt> alts;
  std::vector<const CutoffFamily*> fams;
  for (const ScaleInput& s : scales) {
    fams.push_back(s.family);
  }
  for (std::size_t q = 0; q < Rs.size(); ++q) {
    for (int a = 1; a <= cfg.cover.alternates; ++a) {
      const std::uint64_t seed = cfg.cover.seed + static_cast<std::uint64_t>(a);
      covers.push_back(generate_cover(macro, Rs[q], cfg.cover.K1, cfg.cover.K2, seed, 0.05, cfg.cover.samples_per_R));
      families.push_back(build_family(src.grid, covers.back(), cfg.cutoff));
      alts.push_back({q, seed, certify_cover_family(covers.back(), families.back(), cfg.cover.samples_per_R)});
      fams.push_back(&families.back());
    }
  }

  const EngineResult er = run_engine(src, fams, engine_options(cfg));
  out.snapshots_used = er.snapshots_used;
  out.cascade = assemble_cascade(er, scales, src.alpha, cfg.slack);
  out.locality = locality_check(out.cascade);

  const double eps = out.cascade.macro.eps0_star;
  for (std::size_t k = 0; k < alts.size(); ++k) {
    const auto& terms = er.terms[scales.size() + k];
    AlternateCover ac;
    ac.R = Rs[alts[k].scale];
    ac.seed = alts[k].seed;
    ac.n = terms.size();
    ac.K1_eff = alts[k].cert.cover.K1_eff;
    ac.K2_eff = alts[k].cert.K2_eff;
    for (const FluxTerms& t : terms) {
      ac.F += t.F / static_cast<double>(terms.size());
      ac.D += t.D / static_cast<double>(terms.size());
    }
    ac.lower = eps / (4.0 * ac.K1_eff);
    ac.upper = 4.0 * ac.K2_eff * eps;
    ac.within = ac.F >= ac.lower * (1.0 - cfg.slack) && ac.F <= ac.upper * (1.0 + cfg.slack);
    out.alternates.push_back(ac);
  }
  return out;
}

/// A failed guaranteed inequality at any certified scale, or a violated flux bound at an in-range scale.
inline bool has_chain_violation(const CascadeReport& rep) {
  for (const CascadeRow& r : rep.rows) {
    if (r.certified && !r.pass) {
      return true;
    }
  }
  return false;
}

}  // namespace sqg
