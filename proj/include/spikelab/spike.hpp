#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#include "errors.hpp"
#include "geometry.hpp"
#include "grid.hpp"
#include "groundstate.hpp"
#include "newton.hpp"
#include "shapes.hpp"
#include "sparse.hpp"

namespace spikelab {

// Smooth cutoffs built from the quintic ramp 1 - 10t^3 + 15t^4 - 6t^5.
struct CutoffSpec {
  double mu0 = 1.0;  // outer cutoff, in the original variable
  double D = 40.0;   // chi_D equals 1 on |y| <= dD/16 and 0 on |y| >= dD/8

  static double ramp(double t) {
    if (t <= 0) return 1.0;
    if (t >= 1) return 0.0;
    const double t3 = t * t * t;
    return 1.0 - t3 * (10.0 - 15.0 * t + 6.0 * t * t);
  }
  static double ramp_slope(double t) {
    if (t <= 0 || t >= 1) return 0.0;
    const double s = t * (1 - t);
    return -30.0 * s * s;
  }
  static constexpr double kMaxSlope = 1.875;

  double chi_D(Point y, double d) const {
    const double r0 = d * D / 16;
    return ramp((norm(y) - r0) / r0);
  }
  double chi_mu0(Point x) const {
    const double r0 = 0.5 * mu0;
    return ramp((norm(x) - r0) / r0);
  }
  // bound on |grad chi_D| used by the invariant checks
  double chi_D_gradient_bound(double d) const { return kMaxSlope * 16 / (d * D); }
};

// radius of the Dirichlet arc closing the local model; the support of chi_D lies inside
inline double model_arc_radius(double d, const CutoffSpec& cut) { return (cut.D / 8 + 1) * d; }

inline constexpr double kModelSpacing = 0.25;

// Approximate solution on the dilated model around the peak Q (the origin).
struct ApproxSolution {
  double alpha = 0, d = 0, eps = 0;
  int side = 1;
  GridPtr grid;
  ScalarField u;        // chi_mu0 (U_Q - Xi_d) chi_D
  ScalarField log_xi;   // log of the projection correction
  double energy = 0;    // dilated energy, Neumann half-space normalisation
  double interaction = 0;  // 1/2 sum m U^p Xi
  double peak = 0;
  std::size_t clamped = 0;  // nodes where round-off made U - Xi negative
};

namespace detail {

// log Xi: (-Lap + 1) Xi = 0 at free nodes, Xi = U(|y|) at Dirichlet nodes. Data are taken
// at the node positions, so that U - Xi vanishes exactly there; node_data = false takes
// them at the nearest boundary point instead.
inline ScalarField solve_model_log_xi(GridPtr grid, const GroundState& gs, bool node_data = true) {
  const Grid2D& g = *grid;
  const LinearOperator op = assemble(grid, 1.0);
  ScalarField data(grid, -INFINITY);
  for (std::size_t k = 0; k < g.size(); ++k)
    if (g.dirichlet(k)) data.v[k] = gs.log_value(norm(node_data ? g.point(k) : g.bpoint[k]));
  return solve_log_scaled(op, data).log_u;
}

inline double neumaier_sum(const std::vector<double>& xs) {
  double s = 0, c = 0;
  for (double x : xs) {
    const double t = s + x;
    c += std::abs(s) >= std::abs(x) ? (s - t) + x : (x - t) + s;
    s = t;
  }
  return s + c;
}

} // namespace detail

inline GridPtr model_grid(double alpha, double d, int side, const CutoffSpec& cut, bool neumann_ray = false,
                          double h = kModelSpacing) {
  return make_grid(MixedWedgeModel(alpha, d, model_arc_radius(d, cut), side, neumann_ray), h, Point{0, 0});
}

inline ApproxSolution assemble_approx(int side, double d, double eps, const GroundState& gs, double alpha,
                                      const CutoffSpec& cut = {}, bool neumann_ray = false) {
  if (gs.n != 2) throw ParameterError("the local model is two-dimensional");
  if (!(eps > 0 && eps < 1)) throw ParameterError("eps must lie in (0, 1)");
  if (!(cut.D > 0 && cut.mu0 > 0)) throw ParameterError("cutoff scales must be positive");
  ApproxSolution a;
  a.alpha = alpha, a.d = d, a.eps = eps, a.side = side;
  a.grid = model_grid(alpha, d, side, cut, neumann_ray);
  const Grid2D& g = *a.grid;
  a.log_xi = detail::solve_model_log_xi(a.grid, gs);
  a.u = ScalarField(a.grid, 0.0);
  std::vector<double> inter;
  for (std::size_t k = 0; k < g.size(); ++k) {
    if (!g.active(k) || g.dirichlet(k)) continue;
    const Point y = g.point(k);
    const double lu = gs.log_value(norm(y));
    const double lx = a.log_xi.v[k];
    // U - Xi = U (1 - Xi/U), accurate where both are tiny
    double w = -std::expm1(lx - lu) * std::exp(lu);
    if (w < 0) {
      ++a.clamped;
      w = 0;
    }
    a.u.v[k] = cut.chi_mu0(eps * y) * w * cut.chi_D(y, d);
    inter.push_back(0.5 * g.weight[k] * g.h * g.h * std::exp(gs.p * lu + lx));
  }
  a.interaction = detail::neumaier_sum(inter);
  a.energy = energy(a.u, 1.0, gs.p);
  a.peak = a.u.max_active();
  return a;
}

inline ApproxSolution assemble_approx(int side, double d, double eps, const GroundState& gs, const WedgeDomain& dom,
                                      const CutoffSpec& cut = {}) {
  return assemble_approx(side, d, eps, gs, dom.alpha(), cut);
}

// Dual norm of F(u) = -a Lap u + u - u_+^p in the scaled H^1 norm: sqrt(R^T A^{-1} R),
// divided by eps^(n/2) = grid_eps to express it in dilated units (n = 2).
inline double residual_norm(const ScalarField& u, double grid_eps, double p) {
  if (!(grid_eps > 0)) throw ParameterError("grid_eps must be positive");
  const LinearOperator op = assemble(u.grid, grid_eps * grid_eps);
  Vec R = op.weak(u);
  for (std::size_t i = 0; i < op.n(); ++i) R[i] -= op.mass[i] * pos_pow(u.v[op.node[i]], p);
  Vec r(op.n(), 0.0);
  const auto A = [&](const Vec& x, Vec& y) { op.apply(x, y); };
  const double rn = norm2(R);
  if (rn == 0) return 0.0;
  const auto rep = cg(A, R, r, op.diag, 1e-12, static_cast<int>(10 * op.n()) + 100);
  if (!rep.converged) throw NumericalFailure("dual norm solve did not converge");
  return std::sqrt(std::max(0.0, dot(R, r))) / grid_eps;
}

inline double residual_norm(const ApproxSolution& a, double p) { return residual_norm(a.u, 1.0, p); }

// Bare ansatz U(|x - Q|/eps) on an unscaled grid; Dirichlet nodes are set to zero.
inline ScalarField boundary_ansatz(GridPtr grid, Point Q, double eps, const GroundState& gs) {
  const Grid2D& g = *grid;
  ScalarField u(grid, 0.0);
  for (std::size_t k = 0; k < g.size(); ++k)
    if (g.active(k) && !g.dirichlet(k)) u.v[k] = gs.value(dist(g.point(k), Q) / eps);
  return u;
}

struct LandscapeRow {
  int side = 1;
  double d = 0;
  double I = 0;
  double dI = 0;      // I(d) - I(d_max) for the same side
  double dI_dd = 0;   // finite difference of I along the d list
  double interaction = 0;
  double floor = 0;   // numerical floor from the flat Neumann control
  double peak = 0;
  bool fitted = false;
};

struct EnergyLandscape {
  double alpha = 0, eps = 0;
  CutoffSpec cut;
  std::vector<LandscapeRow> rows;
  double d_max = 0;
  double I_inf = 0;      // I at d_max, side +1
  double C0_tilde = 0;
  double fitted_rate = std::numeric_limits<double>::quiet_NaN();  // slope of log dI against d
  double fitted_log_amp = std::numeric_limits<double>::quiet_NaN();
  double fit_r2 = std::numeric_limits<double>::quiet_NaN();
  int fit_points = 0;
  double evenness = 0;  // max |I(+1) - I(-1)| over d
};

struct LineFit {
  double slope = 0, intercept = 0, r2 = 0;
};

inline LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
  const std::size_t n = x.size();
  if (n < 2) throw ParameterError("line fit needs two points");
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) mx += x[i], my += y[i];
  mx /= n, my /= n;
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (!(sxx > 0)) throw ParameterError("line fit needs distinct abscissae");
  LineFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  f.r2 = syy > 0 ? sxy * sxy / (sxx * syy) : 1.0;
  return f;
}

// Energy of the approximate solution against d. The largest d is the proxy for d = infinity.
// Every d must lie in the window C_Omega <= d <= 1/(eps C_Omega).
inline EnergyLandscape energy_landscape(double alpha, double eps, std::vector<double> d_list, const GroundState& gs,
                                        const CutoffSpec& cut = {}, std::vector<int> sides = {1},
                                        double C_Omega = 2.0) {
  if (d_list.size() < 4) throw ParameterError("energy landscape needs at least 4 d values");
  std::sort(d_list.begin(), d_list.end());
  if (std::adjacent_find(d_list.begin(), d_list.end()) != d_list.end()) throw ParameterError("duplicate d values");
  if (!(C_Omega > 0)) throw ParameterError("C_Omega must be positive");
  if (!(eps > 0 && eps < 1)) throw ParameterError("eps must lie in (0, 1)");
  if (d_list.front() < C_Omega || d_list.back() > 1 / (eps * C_Omega))
    throw ParameterError("d values leave the admissible window [C_Omega, 1/(eps C_Omega)]");
  if (sides.empty()) throw ParameterError("no peak sides given");
  for (int s : sides)
    if (s != 1 && s != -1) throw ParameterError("side must be +1 or -1");
  EnergyLandscape L;
  L.alpha = alpha, L.eps = eps, L.cut = cut, L.C0_tilde = gs.C0_tilde;
  L.d_max = d_list.back();
  const std::size_t m = d_list.size(), ns = sides.size();

  // cells: m flat controls, then (side, d) pairs
  std::vector<ApproxSolution> cells(m + ns * m);
  parallel_tasks(cells.size(), [&](std::size_t c) {
    ApproxSolution a = c < m ? assemble_approx(1, d_list[c], eps, gs, std::numbers::pi, cut, true)
                             : assemble_approx(sides[(c - m) / m], d_list[(c - m) % m], eps, gs, alpha, cut);
    a.u = ScalarField();  // keep the scalars only
    a.log_xi = ScalarField();
    a.grid.reset();
    cells[c] = std::move(a);
  });

  for (std::size_t si = 0; si < ns; ++si) {
    std::vector<LandscapeRow> rs(m);
    for (std::size_t i = 0; i < m; ++i) {
      const ApproxSolution& a = cells[m + si * m + i];
      rs[i].side = sides[si];
      rs[i].d = d_list[i];
      rs[i].I = a.energy;
      rs[i].interaction = a.interaction;
      rs[i].peak = a.peak;
    }
    for (std::size_t i = 0; i < m; ++i) {
      rs[i].dI = rs[i].I - rs[m - 1].I;
      rs[i].floor = std::abs(cells[i].energy - cells[m - 1].energy) +
                    64 * std::numeric_limits<double>::epsilon() * std::abs(rs[i].I);
      const std::size_t lo = i == 0 ? 0 : i - 1, hi = i + 1 == m ? m - 1 : i + 1;
      rs[i].dI_dd = (rs[hi].I - rs[lo].I) / (rs[hi].d - rs[lo].d);
    }
    L.rows.insert(L.rows.end(), rs.begin(), rs.end());
  }

  std::vector<double> xs, ys;
  for (auto& r : L.rows) {
    if (r.side != sides.front()) continue;
    if (r.d == L.d_max) L.I_inf = r.I;
    if (r.d < L.d_max && r.dI > 10 * r.floor) {
      r.fitted = true;
      xs.push_back(r.d);
      ys.push_back(std::log(r.dI));
    }
  }
  L.fit_points = static_cast<int>(xs.size());
  if (xs.size() >= 2) {
    const LineFit f = fit_line(xs, ys);
    L.fitted_rate = f.slope;
    L.fitted_log_amp = f.intercept;
    L.fit_r2 = f.r2;
  }
  for (const auto& r : L.rows)
    for (const auto& s : L.rows)
      if (r.side == 1 && s.side == -1 && r.d == s.d) L.evenness = std::max(L.evenness, std::abs(r.I - s.I));
  return L;
}

// Fitted interaction model I(d) = I_inf + exp(log_amp + rate d) plus a boundary-curvature
// term C1 kappa eps^2 d (kappa is the d-gradient of -H; zero for the flat model).
struct DerivativeSigns {
  double d_low = 0, d_high = 0;
  double slope_low = 0, slope_high = 0;
  int sign_low = 0, sign_high = 0;
  double kappa = 0;
  bool critical_point = false;  // the signs differ
};

inline double landscape_model(const EnergyLandscape& L, double d, double C1, double kappa) {
  return L.I_inf + std::exp(L.fitted_log_amp + L.fitted_rate * d) + C1 * kappa * L.eps * L.eps * d;
}

// kappa that balances the fitted interaction at d = 2|log eps|
inline double balancing_kappa(const EnergyLandscape& L, double C1) {
  const double d = 2 * std::abs(std::log(L.eps));
  return -L.fitted_rate * std::exp(L.fitted_log_amp + L.fitted_rate * d) / (C1 * L.eps * L.eps);
}

inline DerivativeSigns d_derivative_signs(const EnergyLandscape& L, double C1, double kappa, double beta = 0.3) {
  if (!std::isfinite(L.fitted_rate)) throw NumericalFailure("energy landscape has no fitted rate");
  if (!(beta >= 0.1 && beta < 1)) throw ParameterError("beta must lie in [0.1, 1)");
  DerivativeSigns s;
  const double le = std::abs(std::log(L.eps));
  s.d_low = (2 - beta) * le;
  s.d_high = (2 + beta) * le;
  double dmin = INFINITY;
  for (const auto& r : L.rows) dmin = std::min(dmin, r.d);
  if (s.d_low < dmin || s.d_high > L.d_max) throw ParameterError("(2 +- beta)|log eps| lies outside the d range");
  s.kappa = kappa;
  const auto slope = [&](double d) {
    const double e = 1e-3 * d;
    return (landscape_model(L, d + e, C1, kappa) - landscape_model(L, d - e, C1, kappa)) / (2 * e);
  };
  s.slope_low = slope(s.d_low);
  s.slope_high = slope(s.d_high);
  s.sign_low = (s.slope_low > 0) - (s.slope_low < 0);
  s.sign_high = (s.slope_high > 0) - (s.slope_high < 0);
  s.critical_point = s.sign_low != s.sign_high;
  return s;
}

} // namespace spikelab
