#pragma once

// Periodic 2D grid, spectral transforms, and the SQG constitutive law.
//
// Physical arrays are row-major: values[j * N + i] sits at x = (i * dx, j * dx),
// so the fast index i runs along x1.  Spectral arrays use the real-to-complex
// half layout coeffs[j * (N/2 + 1) + i] with kx = i in [0, N/2] and
// ky = wavenumber(j); negative kx are implied by Hermitian symmetry.
// Coefficients are normalized so that the zero mode equals the grid mean.

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "sqg/errors.hpp"

namespace sqg {

using Complex = std::complex<double>;

struct Grid {
  int N = 0;
  double L = 0.0;

  static Grid make(int n, double length) {
    if (n < 16 || (n & (n - 1)) != 0) {
      throw ParameterError("grid size must be a power of two >= 16, got " + std::to_string(n));
    }
    if (!(length > 0.0) || !std::isfinite(length)) {
      throw ParameterError("box period must be positive and finite");
    }
    return Grid{n, length};
  }

  double dx() const { return L / N; }
  int half() const { return N / 2 + 1; }
  std::size_t points() const { return static_cast<std::size_t>(N) * N; }
  std::size_t modes() const { return static_cast<std::size_t>(N) * half(); }
  /// Spacing of the wavevector lattice, 2 pi / L.
  double k0() const { return 2.0 * std::numbers::pi / L; }
  /// Signed integer wavenumber of row index j (Nyquist counted as +N/2).
  int wavenumber(int j) const { return j <= N / 2 ? j : j - N; }
  /// Largest integer wavenumber kept by the 2/3 rule.
  int dealias_cutoff() const { return (N - 1) / 3; }

  friend bool operator==(const Grid& a, const Grid& b) { return a.N == b.N && a.L == b.L; }
};

struct ScalarField {
  Grid grid;
  std::vector<double> values;

  ScalarField() = default;
  explicit ScalarField(const Grid& g, double fill = 0.0) : grid(g), values(g.points(), fill) {}

  double& operator()(int i, int j) { return values[static_cast<std::size_t>(j) * grid.N + i]; }
  double operator()(int i, int j) const { return values[static_cast<std::size_t>(j) * grid.N + i]; }
};

struct SpectralField {
  Grid grid;
  std::vector<Complex> coeffs;

  SpectralField() = default;
  explicit SpectralField(const Grid& g) : grid(g), coeffs(g.modes(), Complex{}) {}

  Complex& at(int i, int j) { return coeffs[static_cast<std::size_t>(j) * grid.half() + i]; }
  Complex at(int i, int j) const { return coeffs[static_cast<std::size_t>(j) * grid.half() + i]; }

  /// Logical coefficient at integer wavevector (kx, ky), |kx|,|ky| <= N/2.
  Complex coeff(int kx, int ky) const {
    const int N = grid.N;
    if (kx < 0) {
      return std::conj(coeff(-kx, -ky));
    }
    int j = ((ky % N) + N) % N;
    return at(kx, j);
  }
};

struct VectorField {
  Grid grid;
  std::vector<double> u1;
  std::vector<double> u2;

  VectorField() = default;
  explicit VectorField(const Grid& g) : grid(g), u1(g.points(), 0.0), u2(g.points(), 0.0) {}
};

namespace detail {

// FFTW planning is not thread safe; plans are created once per size under a lock
// and then executed through the new-array interface, which is.
class FftPlans {
 public:
  explicit FftPlans(int n) {
    std::vector<double> real(static_cast<std::size_t>(n) * n);
    std::vector<Complex> spec(static_cast<std::size_t>(n) * (n / 2 + 1));
    auto* cplx = reinterpret_cast<fftw_complex*>(spec.data());
    forward_ = fftw_plan_dft_r2c_2d(n, n, real.data(), cplx, FFTW_ESTIMATE | FFTW_UNALIGNED);
    backward_ = fftw_plan_dft_c2r_2d(n, n, cplx, real.data(), FFTW_ESTIMATE | FFTW_UNALIGNED);
  }
  FftPlans(const FftPlans&) = delete;
  FftPlans& operator=(const FftPlans&) = delete;
  ~FftPlans() {
    fftw_destroy_plan(forward_);
    fftw_destroy_plan(backward_);
  }

  void forward(const double* in, Complex* out) const {
    // r2c never writes its input, the const_cast only satisfies the C API
    fftw_execute_dft_r2c(forward_, const_cast<double*>(in), reinterpret_cast<fftw_complex*>(out));
  }
  /// Destroys `in`.
  void backward(Complex* in, double* out) const {
    fftw_execute_dft_c2r(backward_, reinterpret_cast<fftw_complex*>(in), out);
  }

 private:
  fftw_plan forward_;
  fftw_plan backward_;
};

inline const FftPlans& plans_for(int n) {
  static std::mutex mutex;
  static std::map<int, std::unique_ptr<FftPlans>> cache;
  std::lock_guard lock(mutex);
  auto& slot = cache[n];
  if (!slot) {
    slot = std::make_unique<FftPlans>(n);
  }
  return *slot;
}

inline bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

}  // namespace detail

/// Visit every stored mode as f(index, kx, ky).
template <class F>
void for_each_mode(const Grid& g, F&& f) {
  const int h = g.half();
  for (int j = 0; j < g.N; ++j) {
    const int ky = g.wavenumber(j);
    for (int i = 0; i < h; ++i) {
      f(static_cast<std::size_t>(j) * h + i, i, ky);
    }
  }
}

inline double wavevector_norm(const Grid& g, int kx, int ky) {
  return g.k0() * std::sqrt(static_cast<double>(kx) * kx + static_cast<double>(ky) * ky);
}

inline bool is_nyquist(const Grid& g, int kx, int ky) {
  return kx == g.N / 2 || ky == g.N / 2;
}

inline bool kept_by_dealias(const Grid& g, int kx, int ky) {
  const int K = g.dealias_cutoff();
  return std::abs(kx) <= K && std::abs(ky) <= K;
}

inline SpectralField transform(const ScalarField& f) {
  SpectralField out(f.grid);
  detail::plans_for(f.grid.N).forward(f.values.data(), out.coeffs.data());
  const double scale = 1.0 / static_cast<double>(f.grid.points());
  for (auto& c : out.coeffs) {
    c *= scale;
  }
  return out;
}

inline ScalarField inverse(const SpectralField& f) {
  ScalarField out(f.grid);
  std::vector<Complex> scratch = f.coeffs;
  detail::plans_for(f.grid.N).backward(scratch.data(), out.values.data());
  return out;
}

/// Inverse transform into an existing buffer; `scratch` is clobbered.
inline void inverse_into(const Grid& g, std::vector<Complex>& scratch, std::span<double> out) {
  detail::plans_for(g.N).backward(scratch.data(), out.data());
}

inline void dealias(SpectralField& f) {
  for_each_mode(f.grid, [&](std::size_t idx, int kx, int ky) {
    if (!kept_by_dealias(f.grid, kx, ky)) {
      f.coeffs[idx] = 0.0;
    }
  });
}

inline double mean(const ScalarField& f) {
  double s = 0.0;
  for (double v : f.values) {
    s += v;
  }
  return s / static_cast<double>(f.values.size());
}

inline double max_abs(std::span<const double> v) {
  double m = 0.0;
  for (double x : v) {
    m = std::max(m, std::abs(x));
  }
  return m;
}

/// Sum of |f^(xi)|^2 over the full (Hermitian-completed) mode lattice.
inline double spectral_power(const SpectralField& f) {
  const int nyq = f.grid.N / 2;
  double s = 0.0;
  for_each_mode(f.grid, [&](std::size_t idx, int kx, int) {
    const double w = (kx == 0 || kx == nyq) ? 1.0 : 2.0;
    s += w * std::norm(f.coeffs[idx]);
  });
  return s;
}

/// Apply a real radial multiplier m(|xi|) to every mode.
template <class M>
SpectralField apply_multiplier(SpectralField f, M&& multiplier) {
  for_each_mode(f.grid, [&](std::size_t idx, int kx, int ky) {
    f.coeffs[idx] *= multiplier(wavevector_norm(f.grid, kx, ky));
  });
  return f;
}

inline void check_alpha(double alpha) {
  if (!(alpha > 0.0 && alpha <= 2.0)) {
    throw ParameterError("fractional exponent alpha must lie in (0, 2], got " + std::to_string(alpha));
  }
}

inline SpectralField fractional_laplacian(const SpectralField& f, double alpha) {
  check_alpha(alpha);
  return apply_multiplier(f, [alpha](double k) { return k == 0.0 ? 0.0 : std::pow(k, alpha); });
}

/// Lambda^alpha f, the Fourier multiplier |xi|^alpha.
inline ScalarField fractional_laplacian(const ScalarField& f, double alpha) {
  check_alpha(alpha);
  if (!detail::all_finite(f.values)) {
    throw PreconditionError("fractional_laplacian: field contains non-finite values");
  }
  return inverse(fractional_laplacian(transform(f), alpha));
}

/// Spectral velocity u^ = (i xi2, -i xi1) theta^ / |xi| from Lambda Psi = -theta.
inline void velocity_hat(const SpectralField& th, SpectralField& u1, SpectralField& u2) {
  const Grid& g = th.grid;
  u1 = SpectralField(g);
  u2 = SpectralField(g);
  const double k0 = g.k0();
  for_each_mode(g, [&](std::size_t idx, int kx, int ky) {
    if ((kx == 0 && ky == 0) || is_nyquist(g, kx, ky)) {
      return;
    }
    const double k = wavevector_norm(g, kx, ky);
    const Complex t = th.coeffs[idx] / k;
    u1.coeffs[idx] = Complex(0.0, k0 * ky) * t;
    u2.coeffs[idx] = Complex(0.0, -k0 * kx) * t;
  });
}

inline void gradient_hat(const SpectralField& f, SpectralField& d1, SpectralField& d2) {
  const Grid& g = f.grid;
  d1 = SpectralField(g);
  d2 = SpectralField(g);
  const double k0 = g.k0();
  for_each_mode(g, [&](std::size_t idx, int kx, int ky) {
    if (is_nyquist(g, kx, ky)) {
      return;
    }
    d1.coeffs[idx] = Complex(0.0, k0 * kx) * f.coeffs[idx];
    d2.coeffs[idx] = Complex(0.0, k0 * ky) * f.coeffs[idx];
  });
}

inline void check_zero_mean(const ScalarField& theta, const char* who) {
  const double m = mean(theta);
  const double scale = std::max(1.0, max_abs(theta.values));
  if (std::abs(m) > 1e-12 * scale) {
    throw PreconditionError(std::string(who) + ": theta must have zero mean (got mean " +
                            std::to_string(m) + "); the velocity of the mean mode is undefined");
  }
}

inline VectorField velocity_from_theta(const ScalarField& theta) {
  check_zero_mean(theta, "velocity_from_theta");
  SpectralField u1;
  SpectralField u2;
  velocity_hat(transform(theta), u1, u2);
  VectorField out(theta.grid);
  out.u1 = inverse(u1).values;
  out.u2 = inverse(u2).values;
  return out;
}

inline VectorField gradient(const ScalarField& f) {
  if (!detail::all_finite(f.values)) {
    throw PreconditionError("gradient: field contains non-finite values");
  }
  SpectralField d1;
  SpectralField d2;
  gradient_hat(transform(f), d1, d2);
  VectorField out(f.grid);
  out.u1 = inverse(d1).values;
  out.u2 = inverse(d2).values;
  return out;
}

/// max over modes of |i xi . u^|, used to certify incompressibility.
inline double spectral_divergence(const VectorField& u) {
  ScalarField a(u.grid);
  a.values = u.u1;
  ScalarField b(u.grid);
  b.values = u.u2;
  const SpectralField h1 = transform(a);
  const SpectralField h2 = transform(b);
  const double k0 = u.grid.k0();
  double worst = 0.0;
  for_each_mode(u.grid, [&](std::size_t idx, int kx, int ky) {
    if (is_nyquist(u.grid, kx, ky)) {
      return;
    }
    const Complex d = Complex(0.0, k0 * kx) * h1.coeffs[idx] + Complex(0.0, k0 * ky) * h2.coeffs[idx];
    worst = std::max(worst, std::abs(d));
  });
  return worst;
}

/// Sample f(x1, x2) at the grid points.
template <class F>
ScalarField sample(const Grid& g, F&& f) {
  ScalarField out(g);
  const double dx = g.dx();
  for (int j = 0; j < g.N; ++j) {
    for (int i = 0; i < g.N; ++i) {
      out(i, j) = f(i * dx, j * dx);
    }
  }
  return out;
}

}  // namespace sqg
