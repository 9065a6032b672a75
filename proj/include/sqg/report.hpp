#pragma once

// Report serialization: JSON, CSV and self-contained SVG plots.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "sqg/pipeline.hpp"
#include "sqg/trajectory_io.hpp"

namespace sqg {

namespace detail {

inline Json num(double v) {
  if (!std::isfinite(v)) {
    return nullptr;
  }
  return v;
}

inline std::string fmt(double v) {
  if (!std::isfinite(v)) {
    return "nan";
  }
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void write_text(const std::filesystem::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::trunc | std::ios::binary);
  if (!out) {
    throw DataError("cannot write " + p.string());
  }
  out << s;
  if (!out) {
    throw DataError("failed writing " + p.string());
  }
}

inline const char* verdict(const CascadeRow& r) {
  if (!r.certified) {
    return "uncertified";
  }
  if (!r.in_range) {
    return r.pass ? "out_of_range" : "false";
  }
  return r.pass ? "true" : "false";
}

}  // namespace detail

inline Json macro_json(const CascadeReport& rep) {
  const MacroAverages& m = rep.macro;
  Json j;
  j["alpha"] = m.alpha;
  j["theta0"] = m.theta0;
  j["theta0_star"] = m.theta0_star;
  j["eps0_star"] = m.eps0_star;
  j["sigma0_defined"] = rep.sigma0_defined;
  j["sigma0"] = detail::num(rep.sigma0);
  j["d_alpha"] = rep.d_alpha;
  j["C0_eff"] = rep.C0_eff;
  j["K1_declared"] = rep.K1_declared;
  j["K2_declared"] = rep.K2_declared;
  j["K1_eff"] = rep.K1_eff_max;
  j["K2_eff"] = rep.K2_eff_max;
  j["beta_declared"] = rep.beta_declared;
  j["beta_eff"] = rep.beta_eff;
  j["premise"] = rep.premise;
  return j;
}

inline Json cascade_json(const Diagnosis& d) {
  const CascadeReport& rep = d.cascade;
  Json j;
  j["alpha"] = d.alpha;
  j["kappa"] = d.kappa;
  j["extension_skipped"] = d.extension_skipped;
  j["certified"] = rep.certified;
  j["certificate_failures"] = d.certificate_failures;
  j["slack"] = rep.slack;
  j["d_alpha"] = rep.d_alpha;
  j["C0_eff"] = rep.C0_eff;
  j["C_t"] = 2.0 * rep.C0_eff;
  j["K1_eff"] = rep.K1_eff_max;
  j["K2_eff"] = rep.K2_eff_max;
  j["beta_declared"] = rep.beta_declared;
  j["beta_eff"] = rep.beta_eff;
  j["sigma0_defined"] = rep.sigma0_defined;
  j["sigma0"] = detail::num(rep.sigma0);
  j["premise"] = rep.premise;
  if (rep.premise) {
    j["range"] = {rep.sigma0 / rep.beta_eff, d.cascade.rows.empty() ? 0.0 : d.cascade.rows.front().R};
  } else {
    j["range"] = nullptr;
  }
  j["in_range_scales"] = rep.in_range_count();
  j["snapshots_used"] = d.snapshots_used;
  j["macro"] = macro_json(rep);
  Json rows = Json::array();
  for (std::size_t q = 0; q < rep.rows.size(); ++q) {
    const CascadeRow& r = rep.rows[q];
    Json row;
    row["R"] = r.R;
    row["n"] = r.n;
    row["K1_eff"] = r.K1_eff;
    row["K2_eff"] = r.K2_eff;
    row["K2_ball"] = r.K2_ball;
    row["F"] = r.F;
    row["F_dual"] = r.F_dual;
    row["D"] = r.D;
    row["X"] = r.X;
    row["P"] = r.P;
    row["A1"] = r.A1;
    row["A2"] = r.A2;
    row["A1_bound"] = r.A1_bound;
    row["A2_bound"] = r.A2_bound;
    row["D_lower"] = r.D_lower;
    row["D_upper"] = r.D_upper;
    row["lower"] = r.lower;
    row["upper"] = r.upper;
    row["max_relative_residual"] = r.max_relative_residual;
    row["young_ok"] = r.young_ok;
    row["check_A1"] = r.check_A1;
    row["check_A2"] = r.check_A2;
    row["check_D"] = r.check_D;
    row["check_F"] = r.check_F;
    row["in_range"] = r.in_range;
    row["pass"] = detail::verdict(r);
    if (q < d.cutoff_certs.size() && d.cutoff_certs[q]) {
      const CutoffCert& c = *d.cutoff_certs[q];
      row["cutoff_certificate"] = {{"C0_time", c.C0_time},   {"C0_grad", c.C0_grad},
                                   {"C0_hess", c.C0_hess},   {"C_A2", c.C_A2},
                                   {"C0_eff", c.C0_eff},     {"refinement_change", c.refinement_change},
                                   {"interior", c.interior_count}, {"boundary", c.boundary_count}};
    } else {
      row["cutoff_certificate"] = nullptr;
    }
    if (q < d.family_certs.size() && d.family_certs[q]) {
      const FamilyCert& f = *d.family_certs[q];
      row["family_certificate"] = {{"K1_eff", f.cover.K1_eff},
                                   {"K2_ball", f.cover.K2_ball},
                                   {"K2_eff", f.K2_eff},
                                   {"partition", f.partition},
                                   {"partition_min_ratio", f.partition_min_ratio},
                                   {"domination", f.domination},
                                   {"below_macro", f.below_macro}};
    } else {
      row["family_certificate"] = nullptr;
    }
    rows.push_back(row);
  }
  j["rows"] = rows;
  Json alts = Json::array();
  for (const AlternateCover& a : d.alternates) {
    alts.push_back({{"R", a.R},
                    {"seed", a.seed},
                    {"n", a.n},
                    {"K1_eff", a.K1_eff},
                    {"K2_eff", a.K2_eff},
                    {"F", a.F},
                    {"D", a.D},
                    {"lower", a.lower},
                    {"upper", a.upper},
                    {"within", a.within}});
  }
  j["alternate_covers"] = alts;
  return j;
}

inline std::string cascade_csv(const CascadeReport& rep) {
  std::ostringstream s;
  s << "R,n,F,D,A1,A2,lower,upper,pass\n";
  for (const CascadeRow& r : rep.rows) {
    s << detail::fmt(r.R) << ',' << r.n << ',' << detail::fmt(r.F) << ',' << detail::fmt(r.D) << ','
      << detail::fmt(r.A1) << ',' << detail::fmt(r.A2) << ',' << detail::fmt(r.lower) << ',' << detail::fmt(r.upper)
      << ',' << detail::verdict(r) << '\n';
  }
  return s.str();
}

inline Json locality_json(const LocalityReport& loc) {
  Json j;
  j["K1_eff"] = loc.K1_eff;
  j["K2_eff"] = loc.K2_eff;
  Json pairs = Json::array();
  for (const LocalityPair& p : loc.pairs) {
    pairs.push_back({{"r", p.r},
                     {"R", p.R},
                     {"ratio", detail::num(p.ratio)},
                     {"defined", p.defined},
                     {"lower", p.lower},
                     {"upper", p.upper},
                     {"in_range", p.in_range},
                     {"within", p.within}});
  }
  j["pairs"] = pairs;
  Json dy = Json::array();
  for (const DyadicEnvelope& e : loc.dyadic) {
    dy.push_back({{"k", e.k}, {"lower", e.lower}, {"upper", e.upper}});
  }
  j["dyadic"] = dy;
  return j;
}

inline std::string locality_csv(const LocalityReport& loc) {
  std::ostringstream s;
  s << "r,R,ratio,lower,upper,in_range,within\n";
  for (const LocalityPair& p : loc.pairs) {
    s << detail::fmt(p.r) << ',' << detail::fmt(p.R) << ',' << detail::fmt(p.ratio) << ',' << detail::fmt(p.lower)
      << ',' << detail::fmt(p.upper) << ',' << (p.in_range ? "true" : "false") << ','
      << (p.within ? "true" : "false") << '\n';
  }
  return s.str();
}

// ---------------------------------------------------------------- SVG

namespace svg {

inline std::string esc(const std::string& s) {
  std::string o;
  for (char c : s) {
    switch (c) {
      case '<':
        o += "&lt;";
        break;
      case '>':
        o += "&gt;";
        break;
      case '&':
        o += "&amp;";
        break;
      default:
        o += c;
    }
  }
  return o;
}

struct Series {
  std::string label;
  std::string color;
  std::vector<double> x;
  std::vector<double> y;
  bool markers = true;
  bool dashed = false;
};

struct Band {
  std::vector<double> x;
  std::vector<double> lo;
  std::vector<double> hi;
  std::string color;
  std::string label;
};

/// Log-log plot; nonpositive values are dropped from lines and drawn as hollow markers at the floor.
inline std::string loglog(const std::string& title, const std::string& xlabel, const std::string& ylabel,
                          const std::vector<Series>& series, const std::vector<Band>& bands = {}) {
  const double W = 640, H = 440, ml = 80, mr = 170, mt = 40, mb = 60;
  double xmin = std::numeric_limits<double>::infinity(), xmax = 0, ymin = xmin, ymax = 0;
  auto take = [&](double x, double y) {
    if (x > 0 && std::isfinite(x)) {
      xmin = std::min(xmin, x);
      xmax = std::max(xmax, x);
    }
    if (y > 0 && std::isfinite(y)) {
      ymin = std::min(ymin, y);
      ymax = std::max(ymax, y);
    }
  };
  for (const Series& s : series) {
    for (std::size_t k = 0; k < s.x.size(); ++k) {
      take(s.x[k], s.y[k]);
    }
  }
  for (const Band& b : bands) {
    for (std::size_t k = 0; k < b.x.size(); ++k) {
      take(b.x[k], b.lo[k]);
      take(b.x[k], b.hi[k]);
    }
  }
  if (!(xmax > 0)) {
    xmin = 0.1;
    xmax = 1;
  }
  if (!(ymax > 0)) {
    ymin = 0.1;
    ymax = 1;
  }
  const double lx0 = std::floor(std::log10(xmin) - 0.05), lx1 = std::ceil(std::log10(xmax) + 0.05);
  const double ly0 = std::floor(std::log10(ymin) - 0.05), ly1 = std::ceil(std::log10(ymax) + 0.05);
  auto X = [&](double x) { return ml + (std::log10(x) - lx0) / (lx1 - lx0) * (W - ml - mr); };
  auto Y = [&](double y) { return H - mb - (std::log10(y) - ly0) / (ly1 - ly0) * (H - mt - mb); };
  std::ostringstream o;
  o.setf(std::ios::fixed);
  o.precision(2);
  o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
    << ' ' << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  o << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << esc(title) << "</text>\n";
  for (double e = lx0; e <= lx1; e += 1) {
    o << "<line x1=\"" << X(std::pow(10, e)) << "\" y1=\"" << mt << "\" x2=\"" << X(std::pow(10, e)) << "\" y2=\""
      << H - mb << "\" stroke=\"#ddd\"/>\n";
    o << "<text x=\"" << X(std::pow(10, e)) << "\" y=\"" << H - mb + 18 << "\" text-anchor=\"middle\">1e"
      << static_cast<int>(e) << "</text>\n";
  }
  for (double e = ly0; e <= ly1; e += 1) {
    o << "<line x1=\"" << ml << "\" y1=\"" << Y(std::pow(10, e)) << "\" x2=\"" << W - mr << "\" y2=\""
      << Y(std::pow(10, e)) << "\" stroke=\"#ddd\"/>\n";
    o << "<text x=\"" << ml - 6 << "\" y=\"" << Y(std::pow(10, e)) + 4 << "\" text-anchor=\"end\">1e"
      << static_cast<int>(e) << "</text>\n";
  }
  o << "<rect x=\"" << ml << "\" y=\"" << mt << "\" width=\"" << W - ml - mr << "\" height=\"" << H - mt - mb
    << "\" fill=\"none\" stroke=\"black\"/>\n";
  o << "<text x=\"" << (ml + W - mr) / 2 << "\" y=\"" << H - 16 << "\" text-anchor=\"middle\">" << esc(xlabel)
    << "</text>\n";
  o << "<text transform=\"translate(18," << (mt + H - mb) / 2 << ") rotate(-90)\" text-anchor=\"middle\">" << esc(ylabel)
    << "</text>\n";
  double ly = mt + 10;
  for (const Band& b : bands) {
    std::ostringstream pts;
    pts.setf(std::ios::fixed);
    pts.precision(2);
    bool any = false;
    for (std::size_t k = 0; k < b.x.size(); ++k) {
      if (b.hi[k] > 0) {
        pts << X(b.x[k]) << ',' << Y(b.hi[k]) << ' ';
        any = true;
      }
    }
    for (std::size_t k = b.x.size(); k-- > 0;) {
      if (b.lo[k] > 0) {
        pts << X(b.x[k]) << ',' << Y(b.lo[k]) << ' ';
      }
    }
    if (any) {
      o << "<polygon points=\"" << pts.str() << "\" fill=\"" << b.color << "\" fill-opacity=\"0.25\" stroke=\"none\"/>\n";
    }
    o << "<rect x=\"" << W - mr + 12 << "\" y=\"" << ly - 9 << "\" width=\"14\" height=\"10\" fill=\"" << b.color
      << "\" fill-opacity=\"0.25\"/><text x=\"" << W - mr + 32 << "\" y=\"" << ly << "\">" << esc(b.label) << "</text>\n";
    ly += 18;
  }
  for (const Series& s : series) {
    std::ostringstream pts;
    pts.setf(std::ios::fixed);
    pts.precision(2);
    for (std::size_t k = 0; k < s.x.size(); ++k) {
      if (s.y[k] > 0 && s.x[k] > 0) {
        pts << X(s.x[k]) << ',' << Y(s.y[k]) << ' ';
      }
    }
    o << "<polyline points=\"" << pts.str() << "\" fill=\"none\" stroke=\"" << s.color << "\" stroke-width=\"1.5\""
      << (s.dashed ? " stroke-dasharray=\"5,4\"" : "") << "/>\n";
    if (s.markers) {
      for (std::size_t k = 0; k < s.x.size(); ++k) {
        if (!(s.x[k] > 0)) {
          continue;
        }
        if (s.y[k] > 0) {
          o << "<circle cx=\"" << X(s.x[k]) << "\" cy=\"" << Y(s.y[k]) << "\" r=\"3.5\" fill=\"" << s.color
            << "\"/>\n";
        } else {
          o << "<circle cx=\"" << X(s.x[k]) << "\" cy=\"" << H - mb << "\" r=\"4\" fill=\"white\" stroke=\""
            << s.color << "\"/>\n";
        }
      }
    }
    o << "<line x1=\"" << W - mr + 12 << "\" y1=\"" << ly - 4 << "\" x2=\"" << W - mr + 26 << "\" y2=\"" << ly - 4
      << "\" stroke=\"" << s.color << "\" stroke-width=\"2\"" << (s.dashed ? " stroke-dasharray=\"4,3\"" : "")
      << "/><text x=\"" << W - mr + 32 << "\" y=\"" << ly << "\">" << esc(s.label) << "</text>\n";
    ly += 18;
  }
  o << "</svg>\n";
  return o.str();
}

}  // namespace svg

inline std::string flux_svg(const CascadeReport& rep) {
  svg::Series F{"<F>_R", "#1f4e9c", {}, {}};
  svg::Series D{"mean D", "#2a8c3a", {}, {}, true, true};
  svg::Band b{{}, {}, {}, "#e08a1e", "flux band"};
  for (const CascadeRow& r : rep.rows) {
    F.x.push_back(r.R);
    F.y.push_back(r.F);
    D.x.push_back(r.R);
    D.y.push_back(r.D);
    b.x.push_back(r.R);
    b.lo.push_back(r.lower);
    b.hi.push_back(r.upper);
  }
  std::string title = "localized flux vs scale";
  if (!rep.premise) {
    title += " (premise not met)";
  }
  return svg::loglog(title, "R", "normalized flux", {F, D}, {b});
}

inline std::string remainders_svg(const CascadeReport& rep) {
  svg::Series a1{"A1", "#9c1f4e", {}, {}}, a1b{"A1 bound", "#9c1f4e", {}, {}, false, true};
  svg::Series a2{"A2", "#1f8c9c", {}, {}}, a2b{"A2 bound", "#1f8c9c", {}, {}, false, true};
  for (const CascadeRow& r : rep.rows) {
    a1.x.push_back(r.R);
    a1.y.push_back(r.A1);
    a1b.x.push_back(r.R);
    a1b.y.push_back(r.A1_bound);
    a2.x.push_back(r.R);
    a2.y.push_back(r.A2);
    a2b.x.push_back(r.R);
    a2b.y.push_back(r.A2_bound);
  }
  return svg::loglog("remainder terms vs scale", "R", "A1, A2", {a1, a1b, a2, a2b});
}

/// cascade_report.{json,csv}, locality_report.{json,csv}, macro_averages.json, flux.svg, remainders.svg
inline void write_reports(const std::filesystem::path& dir, const Diagnosis& d) {
  std::filesystem::create_directories(dir);
  write_json(dir / "cascade_report.json", cascade_json(d));
  detail::write_text(dir / "cascade_report.csv", cascade_csv(d.cascade));
  write_json(dir / "locality_report.json", locality_json(d.locality));
  detail::write_text(dir / "locality_report.csv", locality_csv(d.locality));
  write_json(dir / "macro_averages.json", macro_json(d.cascade));
  detail::write_text(dir / "flux.svg", flux_svg(d.cascade));
  detail::write_text(dir / "remainders.svg", remainders_svg(d.cascade));
}

/// Rebuilds the CSV tables and plots from cascade_report.json / locality_report.json.
inline void rerender_reports(const std::filesystem::path& dir) {
  const Json cj = read_json(dir / "cascade_report.json");
  CascadeReport rep;
  try {
    rep.premise = cj.at("premise").get<bool>();
    for (const Json& r : cj.at("rows")) {
      CascadeRow row;
      row.R = r.at("R").get<double>();
      row.n = r.at("n").get<std::size_t>();
      row.F = r.at("F").get<double>();
      row.D = r.at("D").get<double>();
      row.A1 = r.at("A1").get<double>();
      row.A2 = r.at("A2").get<double>();
      row.A1_bound = r.at("A1_bound").get<double>();
      row.A2_bound = r.at("A2_bound").get<double>();
      row.lower = r.at("lower").get<double>();
      row.upper = r.at("upper").get<double>();
      const std::string p = r.at("pass").get<std::string>();
      row.certified = p != "uncertified";
      row.in_range = r.at("in_range").get<bool>();
      row.pass = p == "true" || p == "out_of_range";
      rep.rows.push_back(row);
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed cascade_report.json in " + dir.string() + ": " + e.what());
  }
  detail::write_text(dir / "cascade_report.csv", cascade_csv(rep));
  detail::write_text(dir / "flux.svg", flux_svg(rep));
  detail::write_text(dir / "remainders.svg", remainders_svg(rep));
  if (std::filesystem::exists(dir / "locality_report.json")) {
    const Json lj = read_json(dir / "locality_report.json");
    LocalityReport loc;
    try {
      for (const Json& p : lj.at("pairs")) {
        LocalityPair lp;
        lp.r = p.at("r").get<double>();
        lp.R = p.at("R").get<double>();
        lp.defined = p.at("defined").get<bool>();
        lp.ratio = p.at("ratio").is_null() ? std::numeric_limits<double>::quiet_NaN() : p.at("ratio").get<double>();
        lp.lower = p.at("lower").get<double>();
        lp.upper = p.at("upper").get<double>();
        lp.in_range = p.at("in_range").get<bool>();
        lp.within = p.at("within").get<bool>();
        loc.pairs.push_back(lp);
      }
    } catch (const nlohmann::json::exception& e) {
      throw DataError("malformed locality_report.json in " + dir.string() + ": " + e.what());
    }
    detail::write_text(dir / "locality_report.csv", locality_csv(loc));
  }
}

}  // namespace sqg
