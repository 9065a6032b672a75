#pragma once

// Pseudo-spectral integration of  theta_t + u.grad(theta) + kappa Lambda^alpha theta = 0
// on the periodic square.  The linear dissipation is integrated exactly with
// fourth-order exponential time differencing (ETDRK4); the advection term is
// evaluated on the grid with 2/3-rule dealiasing.

#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <map>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include "sqg/errors.hpp"
#include "sqg/fields.hpp"
#include "sqg/snapshot_io.hpp"

namespace sqg {

enum class InitialKind { band_random, dual_vortex, file };

inline const char* to_string(InitialKind k) {
  switch (k) {
    case InitialKind::band_random:
      return "band_random";
    case InitialKind::dual_vortex:
      return "dual_vortex";
    case InitialKind::file:
      return "file";
  }
  return "?";
}

struct InitialConditionSpec {
  InitialKind kind = InitialKind::band_random;
  /// Integer shell [k_lo, k_hi] in units of 2 pi / L (band_random only).
  double k_lo = 3.0;
  double k_hi = 8.0;
  /// max |theta_0| after normalization.
  double amplitude = 1.0;
  std::uint64_t seed = 7;
  /// Snapshot file for kind == file.
  std::string path;
};

struct SolverConfig {
  double alpha = 1.0;
  double kappa = 1.0;
  Grid grid{64, 2.0 * std::numbers::pi};
  double dt = 1e-3;
  double t_end = 1.0;
  int snapshot_stride = 1;
  InitialConditionSpec ic;
  bool dealias = true;
  /// Switches the advection term off (linear dissipation only); test hook.
  bool transport = true;
  double cfl_max = 0.5;
};

inline void validate(const SolverConfig& c) {
  check_alpha(c.alpha);
  Grid::make(c.grid.N, c.grid.L);
  if (!(c.kappa >= 0.0)) {
    throw ParameterError("kappa must be >= 0");
  }
  if (!(c.dt > 0.0)) {
    throw ParameterError("dt must be > 0");
  }
  if (!(c.t_end >= 0.0)) {
    throw ParameterError("t_end must be >= 0");
  }
  if (c.snapshot_stride < 1) {
    throw ParameterError("snapshot_stride must be >= 1");
  }
}

/// Zero-mean initial temperature, deterministic in the seed.
inline ScalarField make_initial(const InitialConditionSpec& ic, const Grid& grid) {
  SpectralField h(grid);
  switch (ic.kind) {
    case InitialKind::band_random: {
      const int K = grid.dealias_cutoff();
      if (!(ic.k_lo >= 1.0) || !(ic.k_hi >= ic.k_lo) || ic.k_hi > K) {
        throw ParameterError("initial band [" + std::to_string(ic.k_lo) + ", " + std::to_string(ic.k_hi) +
                             "] must satisfy 1 <= k_lo <= k_hi <= " + std::to_string(K) +
                             " (dealiased resolution)");
      }
      std::mt19937_64 rng(ic.seed);
      std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
      std::uniform_real_distribution<double> mag(0.5, 1.5);
      for_each_mode(grid, [&](std::size_t idx, int kx, int ky) {
        const double k = std::hypot(static_cast<double>(kx), static_cast<double>(ky));
        if (k < ic.k_lo || k > ic.k_hi) {
          return;
        }
        // draw for every in-band mode so the sequence is layout independent
        const double p = phase(rng);
        const double a = mag(rng);
        if (kx == 0 && ky < 0) {
          return;
        }
        h.coeffs[idx] = std::polar(a / k, p);
      });
      // the kx = 0 column must be Hermitian on its own
      for (int j = 1; j < grid.N / 2; ++j) {
        h.at(0, grid.N - j) = std::conj(h.at(0, j));
      }
      break;
    }
    case InitialKind::dual_vortex: {
      const double L = grid.L;
      const double sigma = L / 20.0;
      const double c = L / 2.0;
      const double off = L / 8.0;
      ScalarField f = sample(grid, [&](double x1, double x2) {
        auto blob = [&](double cx) {
          const double r2 = (x1 - cx) * (x1 - cx) + (x2 - c) * (x2 - c);
          return std::exp(-r2 / (2.0 * sigma * sigma));
        };
        return blob(c - off) - blob(c + off);
      });
      h = transform(f);
      dealias(h);
      break;
    }
    case InitialKind::file: {
      Snapshot s = read_snapshot(ic.path);
      if (!(s.theta.grid == grid)) {
        throw ParameterError("initial snapshot grid does not match solver grid: " + ic.path);
      }
      h = transform(s.theta);
      dealias(h);
      break;
    }
  }
  h.coeffs[0] = 0.0;
  ScalarField theta = inverse(h);
  if (ic.kind != InitialKind::file) {
    const double m = max_abs(theta.values);
    if (m > 0.0) {
      const double s = ic.amplitude / m;
      for (double& v : theta.values) {
        v *= s;
      }
    }
  }
  return theta;
}

namespace detail {

/// ETDRK4 weights for one diagonal linear rate c = h * lambda, via the
/// contour-integral average which stays accurate as c -> 0.
struct EtdWeights {
  double e = 1.0;
  double e2 = 1.0;
  double q = 0.0;
  double f1 = 0.0;
  double f2 = 0.0;
  double f3 = 0.0;
};

inline EtdWeights etd_weights(double h, double lambda) {
  const double c = h * lambda;
  EtdWeights w;
  w.e = std::exp(c);
  w.e2 = std::exp(c / 2.0);
  constexpr int M = 64;
  std::complex<double> q{}, f1{}, f2{}, f3{};
  for (int j = 0; j < M; ++j) {
    const std::complex<double> r = c + std::polar(1.0, std::numbers::pi * (j + 0.5) / (M / 2.0));
    const std::complex<double> er = std::exp(r);
    const std::complex<double> er2 = std::exp(r / 2.0);
    q += (er2 - 1.0) / r;
    const std::complex<double> r3 = r * r * r;
    f1 += (-4.0 - r + er * (4.0 - 3.0 * r + r * r)) / r3;
    f2 += (2.0 + r + er * (r - 2.0)) / r3;
    f3 += (-4.0 - 3.0 * r - r * r + er * (4.0 - r)) / r3;
  }
  w.q = h * (q / double(M)).real();
  w.f1 = h * (f1 / double(M)).real();
  w.f2 = h * (f2 / double(M)).real();
  w.f3 = h * (f3 / double(M)).real();
  return w;
}

}  // namespace detail

/// Integrator state bound to one configuration: ETD weights per step size and
/// reusable FFT work buffers.  Not thread safe; use one per thread.
class Stepper {
 public:
  explicit Stepper(const SolverConfig& cfg) : cfg_(cfg), grid_(cfg.grid) {
    validate(cfg);
    rate_.resize(grid_.modes());
    mask_.resize(grid_.modes());
    for_each_mode(grid_, [&](std::size_t idx, int kx, int ky) {
      const double k = wavevector_norm(grid_, kx, ky);
      rate_[idx] = k == 0.0 ? 0.0 : -cfg_.kappa * std::pow(k, cfg_.alpha);
      mask_[idx] = cfg_.dealias ? kept_by_dealias(grid_, kx, ky) : !is_nyquist(grid_, kx, ky);
    });
    const std::size_t np = grid_.points();
    u1_.resize(np);
    u2_.resize(np);
    g1_.resize(np);
    g2_.resize(np);
    prod_.resize(np);
    scratch_.resize(grid_.modes());
    prod_hat_.resize(grid_.modes());
  }

  const SolverConfig& config() const { return cfg_; }

  /// -P(u . grad theta)^ for a spectral state.  Returns max |u| on the grid.
  double nonlinear(const std::vector<Complex>& th, std::vector<Complex>& out) {
    out.assign(th.size(), Complex{});
    if (!cfg_.transport) {
      return 0.0;
    }
    const double k0 = grid_.k0();
    auto fill = [&](auto&& mult, std::vector<double>& dst) {
      for_each_mode(grid_, [&](std::size_t idx, int kx, int ky) {
        scratch_[idx] = mask_[idx] ? mult(kx, ky) * th[idx] : Complex{};
      });
      scratch_[0] = 0.0;
      inverse_into(grid_, scratch_, dst);
    };
    fill(
        [&](int kx, int ky) {
          const double k = wavevector_norm(grid_, kx, ky);
          return k == 0.0 ? Complex{} : Complex(0.0, k0 * ky / k);
        },
        u1_);
    fill(
        [&](int kx, int ky) {
          const double k = wavevector_norm(grid_, kx, ky);
          return k == 0.0 ? Complex{} : Complex(0.0, -k0 * kx / k);
        },
        u2_);
    fill([&](int kx, int) { return Complex(0.0, k0 * kx); }, g1_);
    fill([&](int, int ky) { return Complex(0.0, k0 * ky); }, g2_);
    double umax2 = 0.0;
    for (std::size_t p = 0; p < prod_.size(); ++p) {
      prod_[p] = u1_[p] * g1_[p] + u2_[p] * g2_[p];
      umax2 = std::max(umax2, u1_[p] * u1_[p] + u2_[p] * u2_[p]);
    }
    detail::plans_for(grid_.N).forward(prod_.data(), prod_hat_.data());
    const double scale = -1.0 / static_cast<double>(grid_.points());
    for (std::size_t idx = 0; idx < out.size(); ++idx) {
      out[idx] = mask_[idx] ? scale * prod_hat_[idx] : Complex{};
    }
    out[0] = 0.0;
    return std::sqrt(umax2);
  }

  struct Advance {
    bool accepted = true;
    double cfl = 0.0;
  };

  /// One ETDRK4 step of size h in place.  Rejected (state untouched) if the
  /// CFL number at the start of the step exceeds cfl_max.
  Advance advance(std::vector<Complex>& th, double h) {
    const auto& w = weights(h);
    const std::size_t n = th.size();
    na_.resize(n);
    nb_.resize(n);
    nc_.resize(n);
    nv_.resize(n);
    a_.resize(n);
    b_.resize(n);
    c_.resize(n);
    const double umax = nonlinear(th, nv_);
    Advance result;
    result.cfl = h * umax / grid_.dx();
    if (result.cfl > cfg_.cfl_max) {
      result.accepted = false;
      return result;
    }
    for (std::size_t k = 0; k < n; ++k) {
      a_[k] = w[k].e2 * th[k] + w[k].q * nv_[k];
    }
    nonlinear(a_, na_);
    for (std::size_t k = 0; k < n; ++k) {
      b_[k] = w[k].e2 * th[k] + w[k].q * na_[k];
    }
    nonlinear(b_, nb_);
    for (std::size_t k = 0; k < n; ++k) {
      c_[k] = w[k].e2 * a_[k] + w[k].q * (2.0 * nb_[k] - nv_[k]);
    }
    nonlinear(c_, nc_);
    for (std::size_t k = 0; k < n; ++k) {
      th[k] = mask_[k] ? w[k].e * th[k] + w[k].f1 * nv_[k] + 2.0 * w[k].f2 * (na_[k] + nb_[k]) + w[k].f3 * nc_[k]
                       : Complex{};
    }
    th[0] = 0.0;
    return result;
  }

 private:
  const std::vector<detail::EtdWeights>& weights(double h) {
    auto it = cache_.find(h);
    if (it != cache_.end()) {
      return it->second;
    }
    if (cache_.size() > 16) {
      cache_.clear();
    }
    std::vector<detail::EtdWeights> w(rate_.size());
    std::map<double, detail::EtdWeights> by_rate;
    for (std::size_t k = 0; k < rate_.size(); ++k) {
      auto r = by_rate.find(rate_[k]);
      if (r == by_rate.end()) {
        r = by_rate.emplace(rate_[k], detail::etd_weights(h, rate_[k])).first;
      }
      w[k] = r->second;
    }
    return cache_.emplace(h, std::move(w)).first->second;
  }

  SolverConfig cfg_;
  Grid grid_;
  std::vector<double> rate_;
  std::vector<char> mask_;
  std::map<double, std::vector<detail::EtdWeights>> cache_;
  std::vector<double> u1_, u2_, g1_, g2_, prod_;
  std::vector<Complex> scratch_, prod_hat_;
  std::vector<Complex> na_, nb_, nc_, nv_, a_, b_, c_;
};

struct StepResult {
  ScalarField theta;
  /// Step actually taken; dt / 2^halvings.
  double dt_used = 0.0;
  int halvings = 0;
};

/// Advance theta by one step of config.dt, halving the step while the CFL
/// bound is violated.  The reduced step is reported in the result.
inline StepResult step(const ScalarField& theta, const SolverConfig& config) {
  Stepper stepper(config);
  SpectralField h = transform(theta);
  if (config.dealias) {
    dealias(h);
  }
  StepResult r;
  double dt = config.dt;
  for (;;) {
    std::vector<Complex> trial = h.coeffs;
    if (stepper.advance(trial, dt).accepted) {
      h.coeffs = std::move(trial);
      break;
    }
    dt *= 0.5;
    ++r.halvings;
    if (r.halvings > 40) {
      throw BlowUpError("step: CFL cannot be met by halving dt", 0.0, 0.0);
    }
  }
  r.dt_used = dt;
  r.theta = inverse(h);
  return r;
}

struct BudgetSample {
  double t = 0.0;
  /// 1/2 integral of theta^2 over the torus.
  double variance = 0.0;
  /// kappa integral |Lambda^{alpha/2} theta|^2.
  double dissipation = 0.0;
};

inline BudgetSample budget_of(const SpectralField& h, double t, double alpha, double kappa) {
  const Grid& g = h.grid;
  const double area = g.L * g.L;
  const int nyq = g.N / 2;
  double e = 0.0;
  double d = 0.0;
  for_each_mode(g, [&](std::size_t idx, int kx, int ky) {
    const double w = (kx == 0 || kx == nyq) ? 1.0 : 2.0;
    const double p = w * std::norm(h.coeffs[idx]);
    e += p;
    const double k = wavevector_norm(g, kx, ky);
    if (k > 0.0) {
      d += p * std::pow(k, alpha);
    }
  });
  return {t, 0.5 * area * e, kappa * area * d};
}

struct Trajectory {
  SolverConfig config;
  std::vector<double> times;
  std::vector<ScalarField> snapshots;
  std::vector<BudgetSample> budget;
  /// Number of CFL-triggered step halvings over the run.
  int cfl_halvings = 0;
  /// Largest fraction of spectral power in the outer fifth of the retained band.
  double spectral_tail = 0.0;
};

inline double spectral_tail_fraction(const SpectralField& h) {
  const Grid& g = h.grid;
  const int K = g.dealias_cutoff();
  const int nyq = g.N / 2;
  double tail = 0.0;
  double total = 0.0;
  for_each_mode(g, [&](std::size_t idx, int kx, int ky) {
    const double w = (kx == 0 || kx == nyq) ? 1.0 : 2.0;
    const double p = w * std::norm(h.coeffs[idx]);
    total += p;
    if (std::max(std::abs(kx), std::abs(ky)) > 0.8 * K) {
      tail += p;
    }
  });
  return total > 0.0 ? tail / total : 0.0;
}

/// Snapshot times 0, s, 2s, ... with s = dt * stride; the last interval ends at t_end.
inline std::vector<double> snapshot_times(const SolverConfig& c) {
  std::vector<double> t{0.0};
  if (c.t_end <= 0.0) {
    return t;
  }
  const double s = c.dt * c.snapshot_stride;
  const auto full = static_cast<long>(std::floor(c.t_end / s * (1.0 + 1e-12)));
  for (long k = 1; k <= full; ++k) {
    t.push_back(std::min(k * s, c.t_end));
  }
  if (c.t_end - t.back() > 1e-12 * c.t_end) {
    t.push_back(c.t_end);
  } else {
    t.back() = c.t_end;
  }
  return t;
}

/// Run from the initial condition to t_end, storing every stride-th state.
inline Trajectory integrate(const SolverConfig& config) {
  validate(config);
  Trajectory traj;
  traj.config = config;
  traj.times = snapshot_times(config);
  Stepper stepper(config);

  SpectralField h = transform(make_initial(config.ic, config.grid));
  if (config.dealias) {
    dealias(h);
  }
  h.coeffs[0] = 0.0;

  auto store = [&](double t) {
    traj.snapshots.push_back(inverse(h));
    traj.budget.push_back(budget_of(h, t, config.alpha, config.kappa));
    traj.spectral_tail = std::max(traj.spectral_tail, spectral_tail_fraction(h));
  };
  auto check_finite = [&](double t) {
    double m = 0.0;
    bool finite = true;
    for (const auto& c : h.coeffs) {
      if (!std::isfinite(c.real()) || !std::isfinite(c.imag())) {
        finite = false;
      } else {
        m = std::max(m, std::abs(c));
      }
    }
    if (!finite) {
      throw BlowUpError("solver blow-up: non-finite spectral coefficients at t = " + std::to_string(t) +
                            " (max finite |theta^| = " + std::to_string(m) + ")",
                        t, m);
    }
  };

  store(0.0);
  for (std::size_t k = 1; k < traj.times.size(); ++k) {
    const double span = traj.times[k] - traj.times[k - 1];
    const long base = std::max(1L, static_cast<long>(std::ceil(span / config.dt - 1e-9)));
    int level = 0;
    for (;;) {
      const long substeps = base << level;
      const double hstep = span / static_cast<double>(substeps);
      std::vector<Complex> state = h.coeffs;
      bool ok = true;
      for (long s = 0; s < substeps; ++s) {
        if (!stepper.advance(state, hstep).accepted) {
          ok = false;
          break;
        }
      }
      if (ok) {
        h.coeffs = std::move(state);
        break;
      }
      ++level;
      ++traj.cfl_halvings;
      if (level > 20) {
        check_finite(traj.times[k - 1]);
        throw BlowUpError("solver blow-up: CFL condition unattainable near t = " +
                              std::to_string(traj.times[k - 1]),
                          traj.times[k - 1], 0.0);
      }
    }
    check_finite(traj.times[k]);
    store(traj.times[k]);
  }
  return traj;
}

/// (t, 1/2 int theta^2, kappa int |Lambda^{alpha/2} theta|^2) per stored snapshot.
inline std::vector<BudgetSample> variance_budget(const Trajectory& traj) {
  if (traj.snapshots.empty()) {
    throw PreconditionError("variance_budget: empty trajectory");
  }
  std::vector<BudgetSample> out;
  out.reserve(traj.snapshots.size());
  for (std::size_t k = 0; k < traj.snapshots.size(); ++k) {
    out.push_back(budget_of(transform(traj.snapshots[k]), traj.times[k], traj.config.alpha, traj.config.kappa));
  }
  return out;
}

/// |d/dt(variance) + dissipation| at interior samples, three-point derivative
/// on the (possibly nonuniform) time grid.
inline std::vector<double> budget_residuals(const std::vector<BudgetSample>& b) {
  std::vector<double> r;
  for (std::size_t k = 1; k + 1 < b.size(); ++k) {
    const double h0 = b[k].t - b[k - 1].t;
    const double h1 = b[k + 1].t - b[k].t;
    const double dedt = (-h1 / (h0 * (h0 + h1))) * b[k - 1].variance +
                        ((h1 - h0) / (h0 * h1)) * b[k].variance + (h0 / (h1 * (h0 + h1))) * b[k + 1].variance;
    r.push_back(std::abs(dedt + b[k].dissipation));
  }
  return r;
}

}  // namespace sqg
