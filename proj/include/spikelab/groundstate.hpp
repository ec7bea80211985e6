#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "errors.hpp"

namespace spikelab {

struct GroundStateOptions {
  double h = 1e-3;
  double r_max = 20.0;
  double r_match = 5.0;  // forward/backward stitching radius
};

// Radial ground state of -U'' - (n-1)/r U' + U = U^p sampled at r_i = i*h.
struct GroundState {
  int n = 1;
  double p = 3.0;
  double r_max = 20.0;
  double h = 1e-3;
  std::vector<double> u, du;
  double u0 = 0.0;
  double tail_amp = 0.0;  // U = tail_amp * r^-nu K_nu(r) beyond r_max
  double c_np = 0.0;
  double C0_tilde = 0.0;
  double C1_tilde = 0.0;
  int bisection_steps = 0;

  double nu() const { return 0.5 * (n - 2); }

  // log of r^-nu K_nu(r), valid for all r > 0
  double log_tail_kernel(double r) const {
    const double v = nu();
    double lk;
    if (r < 100.0) {
      lk = std::log(std::cyl_bessel_k(std::abs(v), r));
    } else {
      const double m = 4.0 * v * v;
      const double z = 8.0 * r;
      const double s = 1.0 + (m - 1) / z + (m - 1) * (m - 9) / (2 * z * z) +
                       (m - 1) * (m - 9) * (m - 25) / (6 * z * z * z);
      lk = 0.5 * std::log(std::numbers::pi / (2 * r)) - r + std::log(s);
    }
    return lk - v * std::log(r);
  }

  double value(double r) const {
    r = std::abs(r);
    if (r <= r_max) return hermite(r, false);
    if (tail_amp <= 0.0) return 0.0;
    return std::exp(std::log(tail_amp) + log_tail_kernel(r));
  }

  double derivative(double r) const {
    r = std::abs(r);
    if (r <= r_max) return hermite(r, true);
    if (tail_amp <= 0.0) return 0.0;
    const double v = nu();
    const double ratio = std::cyl_bessel_k(std::abs(v + 1), std::min(r, 600.0)) /
                         std::cyl_bessel_k(std::abs(v), std::min(r, 600.0));
    return -ratio * value(r);
  }

  // log U(r); finite far beyond the range where U underflows
  double log_value(double r) const {
    r = std::abs(r);
    if (r <= r_max) return std::log(hermite(r, false));
    return std::log(tail_amp) + log_tail_kernel(r);
  }

 private:
  double hermite(double r, bool deriv) const {
    const std::size_t last = u.size() - 1;
    std::size_t i = std::min<std::size_t>(static_cast<std::size_t>(r / h), last - 1);
    const double t = (r - i * h) / h;
    const double y0 = u[i], y1 = u[i + 1], m0 = du[i] * h, m1 = du[i + 1] * h;
    if (!deriv) {
      const double t2 = t * t, t3 = t2 * t;
      return (2 * t3 - 3 * t2 + 1) * y0 + (t3 - 2 * t2 + t) * m0 + (-2 * t3 + 3 * t2) * y1 +
             (t3 - t2) * m1;
    }
    const double t2 = t * t;
    return ((6 * t2 - 6 * t) * y0 + (3 * t2 - 4 * t + 1) * m0 + (-6 * t2 + 6 * t) * y1 +
            (3 * t2 - 2 * t) * m1) /
           h;
  }
};

namespace detail {

inline double spow(double u, double p) { return u >= 0 ? std::pow(u, p) : -std::pow(-u, p); }

// state: U, V=U', W=dU/dc, Z=W' for a shooting parameter c
using RadialState = std::array<double, 4>;

inline RadialState radial_rhs(const RadialState& s, double r, int n, double p) {
  const double f = spow(s[0], p);
  const double fp = p * std::pow(std::abs(s[0]), p - 1);
  RadialState d;
  d[0] = s[1];
  d[2] = s[3];
  if (r == 0.0) {
    d[1] = (s[0] - f) / n;
    d[3] = (s[2] - fp * s[2]) / n;
  } else {
    d[1] = -(n - 1) / r * s[1] + s[0] - f;
    d[3] = -(n - 1) / r * s[3] + s[2] - fp * s[2];
  }
  return d;
}

// Taylor series of the regular solution about r = 0 (through r^6), with the
// derivative with respect to U(0) carried along.
inline RadialState series_at(double a0, double r, int n, double p) {
  const double g0 = a0 - std::pow(a0, p);
  const double g1 = 1 - p * std::pow(a0, p - 1);
  const double g2 = -p * (p - 1) * std::pow(a0, p - 2);
  const double g3 = -p * (p - 1) * (p - 2) * std::pow(a0, p - 3);
  const double a2 = g0 / (2 * n);
  const double a4 = g1 * a2 / (4 * (n + 2));
  const double a6 = (g1 * a4 + 0.5 * g2 * a2 * a2) / (6 * (n + 4));
  const double b2 = g1 / (2 * n);
  const double b4 = (g2 * a2 + g1 * b2) / (4 * (n + 2));
  const double b6 = (g2 * a4 + g1 * b4 + 0.5 * g3 * a2 * a2 + g2 * a2 * b2) / (6 * (n + 4));
  const double r2 = r * r;
  return {a0 + r2 * (a2 + r2 * (a4 + r2 * a6)), r * (2 * a2 + r2 * (4 * a4 + r2 * 6 * a6)),
          1 + r2 * (b2 + r2 * (b4 + r2 * b6)), r * (2 * b2 + r2 * (4 * b4 + r2 * 6 * b6))};
}

inline RadialState rk4_step(const RadialState& s, double r, double h, int n, double p) {
  auto axpy = [](const RadialState& a, const RadialState& b, double c) {
    RadialState o;
    for (int k = 0; k < 4; ++k) o[k] = a[k] + c * b[k];
    return o;
  };
  const RadialState k1 = radial_rhs(s, r, n, p);
  const RadialState k2 = radial_rhs(axpy(s, k1, h / 2), r + h / 2, n, p);
  const RadialState k3 = radial_rhs(axpy(s, k2, h / 2), r + h / 2, n, p);
  const RadialState k4 = radial_rhs(axpy(s, k3, h), r + h, n, p);
  RadialState o;
  for (int k = 0; k < 4; ++k) o[k] = s[k] + h / 6 * (k1[k] + 2 * k2[k] + 2 * k3[k] + k4[k]);
  return o;
}

// +1: U0 too large (crosses zero), -1: too small (turns back up), 0: undecided
inline int classify_shot(double u0, int n, double p, double h, double r_max) {
  RadialState s{u0, 0.0, 0.0, 0.0};
  const long steps = std::lround(r_max / h);
  for (long i = 0; i < steps; ++i) {
    s = rk4_step(s, i * h, h, n, p);
    if (s[0] < 0) return +1;
    if (s[1] > 0) return -1;
    if (!std::isfinite(s[0])) return +1;
  }
  return s[1] > 0 ? -1 : 0;
}

inline double simpson(const std::vector<double>& f, double h) {
  const std::size_t N = f.size() - 1;
  if (N < 2) return 0.0;
  if (N % 2 != 0) {
    double s = 0.5 * (f.front() + f.back());
    for (std::size_t i = 1; i < N; ++i) s += f[i];
    return s * h;
  }
  double s = f[0] + f[N];
  for (std::size_t i = 1; i < N; ++i) s += (i % 2 ? 4.0 : 2.0) * f[i];
  return s * h / 3.0;
}

inline double sphere_area(int k) {  // |S^k|
  return 2.0 * std::pow(std::numbers::pi, 0.5 * (k + 1)) / std::tgamma(0.5 * (k + 1));
}

} // namespace detail

struct MomentIntegrals {
  double J_p1 = 0.0;
  double C0_tilde = 0.0;
  double C1_tilde = 0.0;
};

// |S^{n-1}_+|
inline double half_sphere_measure(int n) { return 0.5 * detail::sphere_area(n - 1); }

// integral of y_n |y'|^2 over the upper half of the unit sphere in R^n
inline double angular_curvature_factor(int n) {
  if (n < 2) return 0.0;
  return detail::sphere_area(n - 2) / (n + 1);
}

inline MomentIntegrals moment_integrals(const GroundState& gs) {
  MomentIntegrals m;
  const std::size_t N = gs.u.size();
  if (N < 3) return m;
  std::vector<double> a(N), b(N);
  for (std::size_t i = 0; i < N; ++i) {
    const double r = i * gs.h;
    const double U = std::max(gs.u[i], 0.0);
    a[i] = std::pow(r, gs.n - 1) * std::pow(U, gs.p + 1);
    b[i] = std::pow(r, gs.n) * gs.du[i] * gs.du[i];
  }
  m.J_p1 = half_sphere_measure(gs.n) * detail::simpson(a, gs.h);
  m.C0_tilde = (0.5 - 1.0 / (gs.p + 1)) * m.J_p1;
  m.C1_tilde = detail::simpson(b, gs.h) * angular_curvature_factor(gs.n);
  return m;
}

inline GroundState solve_ground_state(int n, double p, double tol = 1e-12,
                                      const GroundStateOptions& opt = {}) {
  using detail::RadialState;
  require(n >= 1, "dimension n must be >= 1");
  require(p > 1.0, "exponent p must exceed 1");
  if (n >= 3) require(p < (n + 2.0) / (n - 2.0), "exponent p is not subcritical");
  require(tol > 0, "tol must be positive");
  require(opt.h > 0 && opt.r_max > 4 && opt.r_match > 0 && opt.r_match < opt.r_max,
          "bad radial grid options");

  const double h = opt.h;
  const long N = std::lround(opt.r_max / h);
  const long M = std::lround(opt.r_match / h);
  const double r_max = N * h;

  // bracket U(0)
  double lo = 1.0, hi = 2.0;
  int steps = 0;
  while (detail::classify_shot(hi, n, p, h, r_max) != +1) {
    lo = hi;
    hi *= 2.0;
    if (hi > 1e6) throw NumericalFailure("ground state: no overshooting U(0) found below 1e6");
  }
  while (hi - lo > tol && steps < 200) {
    const double mid = 0.5 * (lo + hi);
    const int c = detail::classify_shot(mid, n, p, h, r_max);
    if (c == 0) {
      lo = hi = mid;
      break;
    }
    (c > 0 ? hi : lo) = mid;
    ++steps;
  }
  double u0 = 0.5 * (lo + hi);

  // two-sided polish: forward from 0, backward from r_max along the decaying tail
  GroundState gs;
  gs.n = n;
  gs.p = p;
  gs.h = h;
  gs.r_max = r_max;
  gs.u.assign(N + 1, 0.0);
  gs.du.assign(N + 1, 0.0);
  gs.bisection_steps = steps;

  const double v = gs.nu();
  const double kr = std::exp(gs.log_tail_kernel(r_max));
  const double kpr = -kr * std::cyl_bessel_k(std::abs(v + 1), r_max) /
                     std::cyl_bessel_k(std::abs(v), r_max);

  auto forward = [&](double c, bool store) {
    RadialState s{c, 0.0, 1.0, 0.0};
    const long i0 = std::min<long>(M, std::lround(0.002 / h));
    for (long i = 0; i <= i0; ++i) {
      s = detail::series_at(c, i * h, n, p);
      if (store) gs.u[i] = s[0], gs.du[i] = s[1];
    }
    for (long i = i0; i < M; ++i) {
      // the (n-1)/r coefficient is stiff near the origin: substep there
      const double r = i * h;
      const int sub = n == 1 ? 1 : (r < 0.25 ? 32 : (r < 1.0 ? 8 : 1));
      for (int k = 0; k < sub; ++k) s = detail::rk4_step(s, r + k * h / sub, h / sub, n, p);
      if (store) gs.u[i + 1] = s[0], gs.du[i + 1] = s[1];
    }
    return s;
  };
  auto backward = [&](double A, bool store) {
    RadialState s{A * kr, A * kpr, kr, kpr};
    if (store) gs.u[N] = s[0], gs.du[N] = s[1];
    for (long i = N; i > M; --i) {
      s = detail::rk4_step(s, i * h, -h, n, p);
      if (store && i - 1 > M) gs.u[i - 1] = s[0], gs.du[i - 1] = s[1];
    }
    return s;
  };

  RadialState f = forward(u0, false);
  double A = f[0] / std::exp(gs.log_tail_kernel(M * h));
  for (int it = 0; it < 30; ++it) {
    f = forward(u0, false);
    const RadialState b = backward(A, false);
    const double F0 = f[0] - b[0], F1 = f[1] - b[1];
    // Jacobian columns: d/du0 = (W, Z) forward, d/dA = -(W, Z) backward
    const double a11 = f[2], a12 = -b[2], a21 = f[3], a22 = -b[3];
    const double det = a11 * a22 - a12 * a21;
    if (!(std::abs(det) > 0)) throw NumericalFailure("ground state: singular matching Jacobian");
    const double du0 = (F0 * a22 - F1 * a12) / det;
    const double dA = (a11 * F1 - a21 * F0) / det;
    u0 -= du0;
    A -= dA;
    if (std::abs(du0) < 1e-15 * u0 && std::abs(dA) < 1e-14 * std::abs(A)) break;
  }
  forward(u0, true);
  backward(A, true);
  gs.u0 = u0;
  gs.tail_amp = A;
  gs.c_np = A * std::sqrt(std::numbers::pi / 2);

  for (long i = 0; i <= N; ++i) {
    if (!(gs.u[i] > 0)) throw NumericalFailure("ground state: profile not positive");
    if (i > 0 && !(gs.u[i] < gs.u[i - 1])) throw NumericalFailure("ground state: profile not monotone");
  }
  const MomentIntegrals m = moment_integrals(gs);
  gs.C0_tilde = m.C0_tilde;
  gs.C1_tilde = m.C1_tilde;
  return gs;
}

struct DecayDiagnostics {
  double c_np = 0.0;
  double c_spread = 0.0;  // (max - min) / mean over the last quarter
  double slope = 0.0;
  double slope_spread = 0.0;
};

inline DecayDiagnostics decay_diagnostics(const GroundState& gs) {
  const std::size_t N = gs.u.size() - 1;
  const std::size_t i0 = (3 * N) / 4;
  double cs = 0, cmin = 1e300, cmax = -1e300, ss = 0, smin = 1e300, smax = -1e300;
  std::size_t cnt = 0;
  for (std::size_t i = std::max<std::size_t>(i0, 1); i <= N; ++i) {
    const double r = i * gs.h;
    const double c = std::exp(r + 0.5 * (gs.n - 1) * std::log(r) + std::log(gs.u[i]));
    const double s = gs.du[i] / gs.u[i];
    cs += c, ss += s, ++cnt;
    cmin = std::min(cmin, c), cmax = std::max(cmax, c);
    smin = std::min(smin, s), smax = std::max(smax, s);
  }
  DecayDiagnostics d;
  d.c_np = cs / cnt;
  d.c_spread = (cmax - cmin) / d.c_np;
  d.slope = ss / cnt;
  d.slope_spread = smax - smin;
  if (d.c_spread > 0.05) throw InsufficientDomain("decay constant not settled: r_max too small");
  return d;
}

// U'/U at radius r
inline double log_slope_at(const GroundState& gs, double r) { return gs.derivative(r) / gs.value(r); }

// sup over interior nodes of | -U'' - (n-1)/r U' + U - U^p |
inline double ode_residual(const GroundState& gs) {
  const std::size_t N = gs.u.size() - 1;
  const double h = gs.h;
  double res = 0;
  for (std::size_t i = 2; i + 2 <= N; ++i) {
    const double r = i * h;
    const double upp =
        (-gs.du[i + 2] + 8 * gs.du[i + 1] - 8 * gs.du[i - 1] + gs.du[i - 2]) / (12 * h);
    const double R = -upp - (gs.n - 1) / r * gs.du[i] + gs.u[i] - std::pow(gs.u[i], gs.p);
    res = std::max(res, std::abs(R));
  }
  return res;
}

} // namespace spikelab
