#pragma once

// Weighted harmonic extension of theta into z > 0,
//   div(z^b grad theta*) = 0,  theta*(x, 0) = theta(x),  b = 1 - alpha,
// solved per Fourier mode: theta*^(xi, z) = theta^(xi) phi(|xi| z).

#include <cmath>
#include <map>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "sqg/errors.hpp"
#include "sqg/fields.hpp"
#include "sqg/quadrature.hpp"

namespace sqg {

inline void check_extension_alpha(double alpha) {
  if (!(alpha > 0.0 && alpha < 2.0)) {
    throw ParameterError("extension requires alpha in (0, 2), got " + std::to_string(alpha) +
                         "; alpha = 2 uses the local Laplacian path");
  }
}

/// d_alpha = 2^{1-alpha} Gamma(1 - alpha/2) / Gamma(alpha/2); d_1 = 1.
inline double trace_normalization(double alpha) {
  check_extension_alpha(alpha);
  if (alpha == 1.0) {
    return 1.0;
  }
  return std::exp2(1.0 - alpha) * std::tgamma(1.0 - 0.5 * alpha) / std::tgamma(0.5 * alpha);
}

namespace detail {

inline double profile_prefactor(double nu) { return std::exp2(1.0 - nu) / std::tgamma(nu); }

// beyond this K_nu underflows
constexpr double kProfileCutoff = 700.0;

}  // namespace detail

/// phi(s) = 2^{1-nu}/Gamma(nu) s^nu K_nu(s), nu = alpha/2.  Bounded solution of
/// (s^b phi')' = s^b phi with phi(0) = 1.
inline double extension_profile(double alpha, double s) {
  check_extension_alpha(alpha);
  if (!(s >= 0.0)) {
    throw ParameterError("extension_profile: argument must be nonnegative");
  }
  if (s == 0.0) {
    return 1.0;
  }
  if (alpha == 1.0) {
    return std::exp(-s);
  }
  if (s > detail::kProfileCutoff) {
    return 0.0;
  }
  const double nu = 0.5 * alpha;
  return detail::profile_prefactor(nu) * std::pow(s, nu) * std::cyl_bessel_k(nu, s);
}

/// phi'(s) = -2^{1-nu}/Gamma(nu) s^nu K_{1-nu}(s).  Singular like s^{alpha-1} at 0 when alpha < 1.
inline double extension_profile_derivative(double alpha, double s) {
  check_extension_alpha(alpha);
  if (!(s > 0.0)) {
    throw ParameterError("extension_profile_derivative: argument must be positive");
  }
  if (alpha == 1.0) {
    return -std::exp(-s);
  }
  if (s > detail::kProfileCutoff) {
    return 0.0;
  }
  const double nu = 0.5 * alpha;
  return -detail::profile_prefactor(nu) * std::pow(s, nu) * std::cyl_bessel_k(1.0 - nu, s);
}

/// lim_{s->0} -s^b phi'(s), from K_{1-nu}(s) ~ Gamma(1-nu)/2 (s/2)^{nu-1}.
inline double trace_limit_coefficient(double alpha) {
  check_extension_alpha(alpha);
  const double nu = 0.5 * alpha;
  return detail::profile_prefactor(nu) * std::exp2(-nu) * std::tgamma(1.0 - nu);
}

struct ExtensionConfig {
  double alpha = 1.0;
  double b = 0.0;
  double d_alpha = 1.0;
  ZGrid zgrid;
};

inline ExtensionConfig make_extension_config(double alpha, const ZGridSpec& spec) {
  check_extension_alpha(alpha);
  ExtensionConfig cfg;
  cfg.alpha = alpha;
  cfg.b = 1.0 - alpha;
  cfg.d_alpha = trace_normalization(alpha);
  cfg.zgrid = make_zgrid(cfg.b, spec);
  return cfg;
}

/// Profile values phi(|xi| z_j) and derivatives |xi| phi'(|xi| z_j), tabulated once
/// per distinct |xi|^2 and vertical node.
class ProfileTable {
 public:
  ProfileTable(const Grid& g, const ExtensionConfig& cfg) : grid_(g), nz_(cfg.zgrid.size()) {
    std::map<long, int> classes;
    mode_class_.assign(g.modes(), -1);
    for_each_mode(g, [&](std::size_t idx, int kx, int ky) {
      const long k2 = static_cast<long>(kx) * kx + static_cast<long>(ky) * ky;
      if (k2 == 0) {
        return;
      }
      auto [it, inserted] = classes.emplace(k2, static_cast<int>(classes.size()));
      mode_class_[idx] = it->second;
    });
    nc_ = classes.size();
    std::vector<double> k(nc_);
    for (const auto& [k2, c] : classes) {
      k[c] = g.k0() * std::sqrt(static_cast<double>(k2));
    }
    phi_.resize(nz_ * nc_);
    dphi_.resize(nz_ * nc_);
    for (std::size_t j = 0; j < nz_; ++j) {
      const double z = cfg.zgrid.nodes[j];
      for (std::size_t c = 0; c < nc_; ++c) {
        const double s = k[c] * z;
        phi_[j * nc_ + c] = extension_profile(cfg.alpha, s);
        dphi_[j * nc_ + c] = k[c] * extension_profile_derivative(cfg.alpha, s);
      }
    }
  }

  const Grid& grid() const { return grid_; }
  std::size_t nz() const { return nz_; }
  /// -1 for the zero mode.
  int mode_class(std::size_t idx) const { return mode_class_[idx]; }
  double phi(std::size_t j, int c) const { return phi_[j * nc_ + c]; }
  double dphi(std::size_t j, int c) const { return dphi_[j * nc_ + c]; }

 private:
  Grid grid_;
  std::size_t nz_;
  std::size_t nc_ = 0;
  std::vector<int> mode_class_;
  std::vector<double> phi_;
  std::vector<double> dphi_;
};

/// One horizontal slice of theta* and its gradient at node z_j.
struct ExtensionSlice {
  std::vector<double> value;
  std::vector<double> d1;
  std::vector<double> d2;
  std::vector<double> dz;
};

/// Evaluates slices of the extension of a fixed spectral field, one node at a time,
/// so the full (x, z) volume never has to be held in memory.
class ExtensionEvaluator {
 public:
  ExtensionEvaluator(const ProfileTable& table, const SpectralField& theta_hat)
      : table_(table), theta_hat_(theta_hat), scratch_(theta_hat.coeffs.size()) {
    if (!(table.grid() == theta_hat.grid)) {
      throw ParameterError("ExtensionEvaluator: grid mismatch between profile table and field");
    }
  }

  void slice(std::size_t j, ExtensionSlice& out, bool with_gradient = true) {
    const Grid& g = table_.grid();
    out.value.resize(g.points());
    fill(j, Part::value);
    inverse_into(g, scratch_, out.value);
    if (!with_gradient) {
      return;
    }
    out.d1.resize(g.points());
    out.d2.resize(g.points());
    out.dz.resize(g.points());
    fill(j, Part::d1);
    inverse_into(g, scratch_, out.d1);
    fill(j, Part::d2);
    inverse_into(g, scratch_, out.d2);
    fill(j, Part::dz);
    inverse_into(g, scratch_, out.dz);
  }

 private:
  enum class Part { value, d1, d2, dz };

  void fill(std::size_t j, Part part) {
    const Grid& g = table_.grid();
    const double k0 = g.k0();
    for_each_mode(g, [&](std::size_t idx, int kx, int ky) {
      const int c = table_.mode_class(idx);
      const Complex t = theta_hat_.coeffs[idx];
      Complex v{};
      switch (part) {
        case Part::value:
          v = c < 0 ? t : t * table_.phi(j, c);
          break;
        case Part::d1:
          v = (c < 0 || is_nyquist(g, kx, ky)) ? Complex{} : Complex(0.0, k0 * kx) * t * table_.phi(j, c);
          break;
        case Part::d2:
          v = (c < 0 || is_nyquist(g, kx, ky)) ? Complex{} : Complex(0.0, k0 * ky) * t * table_.phi(j, c);
          break;
        case Part::dz:
          v = c < 0 ? Complex{} : t * table_.dphi(j, c);
          break;
      }
      scratch_[idx] = v;
    });
  }

  const ProfileTable& table_;
  const SpectralField& theta_hat_;
  std::vector<Complex> scratch_;
};

struct ExtendedField {
  Grid grid;
  ZGrid zgrid;
  /// values[j] is the slice at zgrid.nodes[j]
  std::vector<std::vector<double>> values;
  std::vector<std::vector<double>> d1;
  std::vector<std::vector<double>> d2;
  std::vector<std::vector<double>> dz;
  bool has_gradient = false;
};

/// Full volume of theta* on the vertical grid.  Memory is nz * N^2 doubles per
/// component; large runs should use ExtensionEvaluator directly.
inline ExtendedField extend(const ScalarField& theta, const ExtensionConfig& cfg, bool with_gradient = false) {
  check_extension_alpha(cfg.alpha);
  ExtendedField out{theta.grid, cfg.zgrid, {}, {}, {}, {}, with_gradient};
  const ProfileTable table(theta.grid, cfg);
  const SpectralField th = transform(theta);
  ExtensionEvaluator ev(table, th);
  ExtensionSlice s;
  for (std::size_t j = 0; j < table.nz(); ++j) {
    ev.slice(j, s, with_gradient);
    out.values.push_back(s.value);
    if (with_gradient) {
      out.d1.push_back(s.d1);
      out.d2.push_back(s.d2);
      out.dz.push_back(s.dz);
    }
  }
  return out;
}

/// theta*(., z) at a single height.
inline ScalarField extension_at(const ScalarField& theta, const ExtensionConfig& cfg, double z) {
  check_extension_alpha(cfg.alpha);
  if (!(z >= 0.0)) {
    throw ParameterError("extension_at: height must be nonnegative");
  }
  const double alpha = cfg.alpha;
  return inverse(apply_multiplier(transform(theta), [&](double k) { return extension_profile(alpha, k * z); }));
}

/// -(1/d_alpha) lim_{z->0} z^b d_z theta*, per mode from the small-s expansion.
inline ScalarField trace_dissipation(const ScalarField& theta, const ExtensionConfig& cfg) {
  check_extension_alpha(cfg.alpha);
  const double coef = trace_limit_coefficient(cfg.alpha) / cfg.d_alpha;
  const double alpha = cfg.alpha;
  return inverse(apply_multiplier(transform(theta), [&](double k) {
    return k == 0.0 ? 0.0 : coef * std::pow(k, alpha);
  }));
}

/// int int phi*(x, z) |grad theta*|^2 z^b dz dx for a cutoff phi*(x1, x2, z).
template <class Cutoff>
double extension_energy(const ScalarField& theta, Cutoff&& cutoff, const ExtensionConfig& cfg) {
  check_extension_alpha(cfg.alpha);
  const Grid& g = theta.grid;
  const ProfileTable table(g, cfg);
  const SpectralField th = transform(theta);
  ExtensionEvaluator ev(table, th);
  ExtensionSlice s;
  const double dx = g.dx();
  const double area = dx * dx;
  double total = 0.0;
  for (std::size_t j = 0; j < table.nz(); ++j) {
    const double z = cfg.zgrid.nodes[j];
    ev.slice(j, s, true);
    double horizontal = 0.0;
    double vertical = 0.0;
    for (int iy = 0; iy < g.N; ++iy) {
      for (int ix = 0; ix < g.N; ++ix) {
        const std::size_t p = static_cast<std::size_t>(iy) * g.N + ix;
        const double w = cutoff(ix * dx, iy * dx, z);
        if (w != 0.0) {
          horizontal += w * (s.d1[p] * s.d1[p] + s.d2[p] * s.d2[p]);
          vertical += w * s.dz[p] * s.dz[p];
        }
      }
    }
    total += (cfg.zgrid.weights[j] * horizontal + cfg.zgrid.flux_weights[j] * vertical) * area;
  }
  return total;
}

inline double extension_energy(const ScalarField& theta, const ExtensionConfig& cfg) {
  return extension_energy(theta, [](double, double, double) { return 1.0; }, cfg);
}

}  // namespace sqg
