#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "errors.hpp"
#include "grid.hpp"
#include "groundstate.hpp"
#include "newton.hpp"
#include "shapes.hpp"
#include "spike.hpp"
#include "sparse.hpp"

namespace spikelab {

// Pure-Neumann disc of radius R restricted to the ball of radius rho about the boundary
// point Q = (R, 0); used where only the neighbourhood of a boundary spike matters.
struct DiscCap {
  double R = 1, rho = 1;

  Point Q() const { return {R, 0}; }
  bool contains(Point p) const { return norm(p) < R && dist(p, Q()) < rho; }
  BoundaryHit nearest_boundary(Point p) const {
    const DiscShape outer{{0, 0}, R};
    const DiscShape cap{Q(), rho};
    const BoundaryHit a = outer.nearest_boundary(p), b = cap.nearest_boundary(p);
    return a.distance <= b.distance ? a : b;
  }
  BBox bbox() const { return {R - rho, -rho, R, rho}; }
};

// U_Q - Xi on a domain grid: U_Q = U(|x - Q|/eps) and (-eps^2 Lap + 1) Xi = 0 with Xi = U_Q
// at the Dirichlet nodes, so the result vanishes there and keeps the natural Neumann
// condition elsewhere.
inline ScalarField projected_ansatz(GridPtr grid, Point Q, double eps, const GroundState& gs) {
  const Grid2D& g = *grid;
  const LinearOperator op = assemble(grid, eps * eps);
  ScalarField rhs(grid, 0.0);
  bool any = false;
  for (std::size_t k = 0; k < g.size(); ++k)
    if (g.dirichlet(k)) {
      rhs.v[k] = gs.value(dist(g.point(k), Q) / eps);
      any = any || rhs.v[k] > 0;
    }
  ScalarField u = boundary_ansatz(grid, Q, eps, gs);
  if (!any) return u;
  const LinearSolve xi = solve_linear(op, rhs, 1e-12);
  for (std::size_t k = 0; k < g.size(); ++k)
    if (g.active(k)) u.v[k] = g.dirichlet(k) ? 0.0 : std::max(u.v[k] - xi.u.v[k], 0.0);
  return u;
}

struct ReducedPoint {
  double d = 0;  // dilated distance to Gamma
  Point Q;
  double energy = 0;  // I / eps^2 of the projected ansatz
};

struct ReducedScan {
  std::vector<ReducedPoint> points;
  double d_min = std::numeric_limits<double>::quiet_NaN();  // refined minimiser
  bool interior = false;  // minimum strictly inside the scanned range
};

// Energy of the projected ansatz centred on the Neumann arc at dilated distance d from
// the first Gamma point; the reduced functional of the spike position.
inline ReducedScan reduced_energy_scan(const Keyhole& dom, GridPtr grid, double eps, double p, const GroundState& gs,
                                       const std::vector<double>& d_values) {
  if (d_values.size() < 3) throw ParameterError("reduced scan needs at least 3 positions");
  ReducedScan sc;
  sc.points.resize(d_values.size());
  parallel_tasks(d_values.size(), [&](std::size_t i) {
    ReducedPoint& r = sc.points[i];
    r.d = d_values[i];
    r.Q = dom.neumann_point_at(r.d * eps);
    r.energy = energy(projected_ansatz(grid, r.Q, eps, gs), eps, p) / (eps * eps);
  });
  std::size_t best = 0;
  for (std::size_t i = 1; i < sc.points.size(); ++i)
    if (sc.points[i].energy < sc.points[best].energy) best = i;
  sc.d_min = sc.points[best].d;
  sc.interior = best > 0 && best + 1 < sc.points.size();
  if (sc.interior) {
    // vertex of the parabola through the three points around the minimum
    const auto &a = sc.points[best - 1], &b = sc.points[best], &c = sc.points[best + 1];
    const double den = (a.d - b.d) * (a.d - c.d) * (b.d - c.d);
    const double A = (c.d * (b.energy - a.energy) + b.d * (a.energy - c.energy) + a.d * (c.energy - b.energy)) / den;
    const double B = (c.d * c.d * (a.energy - b.energy) + b.d * b.d * (c.energy - a.energy) +
                      a.d * a.d * (b.energy - c.energy)) / den;
    if (A > 0) sc.d_min = std::clamp(-B / (2 * A), a.d, c.d);
  }
  return sc;
}

struct MixedSolve {
  ScalarField u;
  NewtonStatus status = NewtonStatus::MaxIterations;
  int iterations = 0;
  int krylov_iterations = 0;
  double residual = 0;
  double energy = 0;       // dilated energy I / eps^2 of the solution
  double init_energy = 0;  // same for the initializer
  double min_interior = 0;
  double dirichlet_trace = 0;  // max |u| on Dirichlet nodes
  int restarts = 0;
};

// Newton solve of -eps^2 Lap u + u = u^p on the grid, starting from init. A collapse to
// the zero branch is retried once with the initializer scaled by 1.5.
inline MixedSolve solve_mixed(GridPtr grid, double eps, double p, const ScalarField& init, double tol = 1e-8,
                              const NewtonOptions& opt = {}) {
  if (!(eps > 0 && eps < 1)) throw ParameterError("eps must lie in (0, 1)");
  if (init.v.size() != grid->size()) throw ParameterError("initializer grid mismatch");
  const Grid2D& g = *grid;
  MixedSolve s;
  ScalarField start(grid, init.v);
  for (std::size_t k = 0; k < g.size(); ++k)
    if (!g.active(k) || g.dirichlet(k)) start.v[k] = 0.0;
  s.init_energy = energy(start, eps, p) / (eps * eps);
  NewtonResult r = newton_solve(grid, eps, p, start, tol, opt);
  if (r.status == NewtonStatus::Trivial && start.max_active() > 0) {
    for (auto& x : start.v) x *= 1.5;
    r = newton_solve(grid, eps, p, start, tol, opt);
    s.restarts = 1;
  }
  s.status = r.status;
  s.iterations = r.iterations;
  s.krylov_iterations = r.krylov_iterations;
  s.residual = r.residual;
  s.u = std::move(r.u);
  s.energy = energy(s.u, eps, p) / (eps * eps);
  s.min_interior = INFINITY;
  for (std::size_t k = 0; k < g.size(); ++k) {
    if (g.mask[k] == NodeKind::Interior) s.min_interior = std::min(s.min_interior, s.u.v[k]);
    if (g.dirichlet(k)) s.dirichlet_trace = std::max(s.dirichlet_trace, std::abs(s.u.v[k]));
  }
  return s;
}

struct PeakLocation {
  Point q;              // refined maximum point
  std::size_t node = 0; // grid argmax
  double value = 0;
  double second_ratio = 0;  // second-largest local maximum over the global one
  bool unique = true;       // second_ratio <= 0.5
};

// Grid argmax refined by a least-squares quadratic over the active 3x3 neighbourhood
// (at least six nodes); the refined point stays within half a cell of the argmax.
inline PeakLocation locate_peak(const ScalarField& u) {
  const Grid2D& g = *u.grid;
  PeakLocation pk;
  double best = -INFINITY;
  for (std::size_t k = 0; k < g.size(); ++k)
    if (g.active(k) && u.v[k] > best) best = u.v[k], pk.node = k;
  if (!std::isfinite(best)) throw ParameterError("field has no active nodes");
  pk.value = best;
  const int i0 = g.ix(pk.node), j0 = g.jy(pk.node);
  pk.q = g.point(pk.node);

  // normal equations for c0 + c1 x + c2 y + c3 x^2 + c4 xy + c5 y^2, offsets in cells
  double M[6][7] = {};
  int used = 0;
  for (int dj = -1; dj <= 1; ++dj)
    for (int di = -1; di <= 1; ++di) {
      if (!g.active(i0 + di, j0 + dj)) continue;
      const double x = di, y = dj;
      const double phi[6] = {1, x, y, x * x, x * y, y * y};
      const double f = u.v[g.idx(i0 + di, j0 + dj)];
      for (int a = 0; a < 6; ++a) {
        for (int b = 0; b < 6; ++b) M[a][b] += phi[a] * phi[b];
        M[a][6] += phi[a] * f;
      }
      ++used;
    }
  if (used >= 6) {
    bool ok = true;
    for (int c = 0; c < 6 && ok; ++c) {
      int piv = c;
      for (int r = c + 1; r < 6; ++r)
        if (std::abs(M[r][c]) > std::abs(M[piv][c])) piv = r;
      if (std::abs(M[piv][c]) < 1e-12) {
        ok = false;
        break;
      }
      std::swap(M[c], M[piv]);
      for (int r = 0; r < 6; ++r) {
        if (r == c) continue;
        const double f = M[r][c] / M[c][c];
        for (int k = c; k < 7; ++k) M[r][k] -= f * M[c][k];
      }
    }
    if (ok) {
      const double c1 = M[1][6] / M[1][1], c2 = M[2][6] / M[2][2], c3 = M[3][6] / M[3][3],
                   c4 = M[4][6] / M[4][4], c5 = M[5][6] / M[5][5];
      // stationary point of the quadratic; accepted only when it is a maximum
      const double det = 4 * c3 * c5 - c4 * c4;
      if (c3 < 0 && det > 0) {
        double x = (-2 * c5 * c1 + c4 * c2) / det, y = (-2 * c3 * c2 + c4 * c1) / det;
        x = std::clamp(x, -0.5, 0.5);
        y = std::clamp(y, -0.5, 0.5);
        pk.q = g.point(pk.node) + g.h * Point{x, y};
      }
    }
  }

  // local maxima over the 8-neighbourhood (ties broken by node index)
  double second = 0;
  for (std::size_t k = 0; k < g.size(); ++k) {
    if (!g.active(k) || k == pk.node || !(u.v[k] > 0)) continue;
    const int i = g.ix(k), j = g.jy(k);
    bool is_max = true;
    for (int dj = -1; dj <= 1 && is_max; ++dj)
      for (int di = -1; di <= 1 && is_max; ++di) {
        if ((di == 0 && dj == 0) || !g.active(i + di, j + dj)) continue;
        const std::size_t q = g.idx(i + di, j + dj);
        is_max = u.v[k] > u.v[q] || (u.v[k] == u.v[q] && k < q);
      }
    if (is_max) second = std::max(second, u.v[k]);
  }
  pk.second_ratio = second / best;
  pk.unique = pk.second_ratio <= 0.5;
  return pk;
}

struct PeakRow {
  double eps = 0, h = 0;
  std::string status;
  double max_u = 0;
  Point q;
  double dist_gamma = 0, dist_boundary = 0;
  double residual = 0;
  int iterations = 0;
  double energy = 0, init_energy = 0;
  double min_interior = 0, dirichlet_trace = 0;
  double second_ratio = 0;
  double scan_d = 0;     // reduced-energy minimiser, dilated
  double reduced_d = 0;  // zero of the constraint force, dilated
  std::size_t nodes = 0;
  bool ok = false;
};

struct PeakTrace {
  double alpha = 0, p = 0;
  std::vector<PeakRow> rows;
  double slope = std::numeric_limits<double>::quiet_NaN();  // dist against eps log(1/eps)
  double intercept = std::numeric_limits<double>::quiet_NaN();
  double slope_stderr = std::numeric_limits<double>::quiet_NaN();
  double r2 = std::numeric_limits<double>::quiet_NaN();
  int fitted = 0;
  bool monotone = true;  // dist non-increasing along decreasing eps
};

struct PeakStudyOptions {
  double h_factor = 0.125;  // h = h_factor * eps
  double scan_lo = 3.0;     // reduced scan over dilated distances [scan_lo, scan_hi]
  double scan_step = 0.25;
  double scan_hi_factor = 3.0;  // scan_hi = scan_hi_factor |log eps| + 2
  double crop_margin = 16.0;    // domain cropped to the ball of radius eps (scan_hi + margin) about Gamma
  double tol = 1e-8;
};

namespace detail {

struct Constrained {
  ScalarField u;
  double lambda = 0;
  double residual = 0;
  bool converged = false;
  int iterations = 0;
};

// Newton on F(u) = lambda M z subject to sum_i m_i z_i (u_i - w_i) = 0: the spike is held
// at the position of the reference w, lambda measures the force along the arc.
inline Constrained constrained_newton(const LinearOperator& op, double p, const ScalarField& w, const Vec& z,
                                      ScalarField u, double lambda, double tol, int max_it = 40) {
  const std::size_t n = op.n();
  Vec mz(n);
  for (std::size_t i = 0; i < n; ++i) mz[i] = op.mass[i] * z[i];
  const auto eval = [&](const ScalarField& uu, double lam, Vec& R, double& c) {
    R = weak_residual(op, uu, p);
    for (std::size_t i = 0; i < n; ++i) R[i] -= lam * mz[i];
    c = 0;
    for (std::size_t i = 0; i < n; ++i) c += mz[i] * (uu.v[op.node[i]] - w.v[op.node[i]]);
  };
  Constrained out;
  Vec R;
  double c;
  eval(u, lambda, R, c);
  const double zz = dot(mz, z);
  const auto merit = [&](const Vec& RR, double cc) { return std::hypot(residual_l2(op, RR), cc / std::sqrt(zz)); };
  double m = merit(R, c);
  Vec jd(n), pre(n + 1), rhs(n + 1), x;
  for (int it = 0; it < max_it; ++it) {
    out.residual = residual_sup(op, R);
    if (out.residual <= tol && std::abs(c) <= tol * std::sqrt(zz) * op.grid->h) {
      out.converged = true;
      break;
    }
    ++out.iterations;
    double schur = 0;
    for (std::size_t i = 0; i < n; ++i) {
      jd[i] = op.mass[i] * p * pos_pow(u.v[op.node[i]], p - 1);
      pre[i] = std::max(std::abs(op.diag[i] - jd[i]), 1e-3 * op.diag[i]);
      schur += mz[i] * mz[i] / pre[i];
      rhs[i] = -R[i];
    }
    pre[n] = schur;
    rhs[n] = c;
    // [J, -Mz; -(Mz)^T, 0] symmetric indefinite
    const auto K = [&](const Vec& v, Vec& y) {
      Vec vu(v.begin(), v.begin() + n), yu;
      op.apply(vu, yu);
      y.assign(n + 1, 0.0);
      double t = 0;
      for (std::size_t i = 0; i < n; ++i) {
        y[i] = yu[i] - jd[i] * v[i] - mz[i] * v[n];
        t -= mz[i] * v[i];
      }
      y[n] = t;
    };
    x.assign(n + 1, 0.0);
    minres(K, rhs, x, pre, 1e-12, 20000);
    double step = 1.0;
    bool accepted = false;
    ScalarField trial(u.grid, u.v);
    Vec Rt;
    double ct = 0, lt = lambda;
    for (int hv = 0; hv <= 6; ++hv) {
      for (std::size_t i = 0; i < n; ++i) trial.v[op.node[i]] = u.v[op.node[i]] + step * x[i];
      lt = lambda + step * x[n];
      eval(trial, lt, Rt, ct);
      if (merit(Rt, ct) < m) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) break;
    u = std::move(trial);
    lambda = lt;
    R = std::move(Rt);
    c = ct;
    m = merit(R, c);
  }
  out.u = std::move(u);
  out.lambda = lambda;
  return out;
}

} // namespace detail

struct PeakSolve {
  PeakRow row;
  ReducedScan scan;
  std::vector<std::pair<double, double>> secant;  // (d, lambda) along the position search
  ScalarField u;
};

inline PeakSolve solve_peak(const Keyhole& dom, double p, double eps, const GroundState& gs,
                            const PeakStudyOptions& opt = {}) {
  if (!(eps > 0 && eps < 1)) throw ParameterError("eps must lie in (0, 1)");
  if (!(opt.h_factor > 0 && opt.h_factor <= 0.5)) throw ParameterError("h_factor must lie in (0, 0.5]");
  if (gs.n != 2 || gs.p != p) throw ParameterError("ground state must match n = 2 and p");
  PeakSolve ps;
  PeakRow& row = ps.row;
  row.eps = eps;
  row.h = opt.h_factor * eps;
  const double le = std::abs(std::log(eps));
  const double hi = opt.scan_hi_factor * le + 2;
  if (!(hi > opt.scan_lo + 2 * opt.scan_step)) throw ParameterError("reduced scan range is empty");
  const Point g0 = dom.gamma().front();
  const Cropped<Keyhole> crop{dom, g0, eps * (hi + opt.crop_margin)};
  const GridPtr grid = make_cut_grid(crop, row.h, g0);
  row.nodes = grid->count(NodeKind::Interior) + grid->count(NodeKind::Boundary);
  std::vector<double> ds;
  for (double d = opt.scan_lo; d <= hi + 1e-12; d += opt.scan_step) ds.push_back(d);
  ps.scan = reduced_energy_scan(dom, grid, eps, p, gs, ds);
  row.scan_d = ps.scan.d_min;
  // secant on the arc position until the constraint force vanishes
  const LinearOperator op = assemble(grid, eps * eps);
  const auto reference = [&](double d, ScalarField& w, Vec& z) {
    const double dd = 0.05;
    w = projected_ansatz(grid, dom.neumann_point_at(d * eps), eps, gs);
    const ScalarField wp = projected_ansatz(grid, dom.neumann_point_at((d + dd) * eps), eps, gs);
    const ScalarField wm = projected_ansatz(grid, dom.neumann_point_at((d - dd) * eps), eps, gs);
    z.assign(op.n(), 0.0);
    for (std::size_t i = 0; i < op.n(); ++i) z[i] = (wp.v[op.node[i]] - wm.v[op.node[i]]) / (2 * dd);
  };
  ScalarField init;
  {
    double d0 = ps.scan.d_min, d1 = d0 + 0.5;
    ScalarField w;
    Vec z;
    reference(d0, w, z);
    detail::Constrained c0 = detail::constrained_newton(op, p, w, z, w, 0.0, opt.tol);
    reference(d1, w, z);
    detail::Constrained c1 = detail::constrained_newton(op, p, w, z, c0.u, c0.lambda, opt.tol);
    for (int it = 0; it < 20 && c0.converged && c1.converged; ++it) {
      ps.secant.push_back({d1, c1.lambda});
      if (std::abs(d1 - d0) < 1e-4 || c1.lambda == c0.lambda) break;
      double d2 = d1 - c1.lambda * (d1 - d0) / (c1.lambda - c0.lambda);
      d2 = std::clamp(d2, std::max(opt.scan_lo, d1 - 2.0), std::min(hi, d1 + 2.0));
      reference(d2, w, z);
      detail::Constrained c2 = detail::constrained_newton(op, p, w, z, c1.u, c1.lambda, opt.tol);
      d0 = d1, c0 = std::move(c1);
      d1 = d2, c1 = std::move(c2);
    }
    row.reduced_d = d1;
    init = c1.converged ? c1.u : projected_ansatz(grid, dom.neumann_point_at(ps.scan.d_min * eps), eps, gs);
  }
  try {
    MixedSolve ms = solve_mixed(grid, eps, p, init, opt.tol);
    row.status = to_string(ms.status);
    row.residual = ms.residual;
    row.iterations = ms.iterations;
    row.energy = ms.energy;
    row.init_energy = ms.init_energy;
    row.min_interior = ms.min_interior;
    row.dirichlet_trace = ms.dirichlet_trace;
    if (ms.status == NewtonStatus::Converged) {
      const PeakLocation pk = locate_peak(ms.u);
      row.max_u = pk.value;
      row.q = pk.q;
      row.dist_gamma = dom.dist_to_gamma(pk.q);
      row.dist_boundary = dom.nearest_boundary(pk.q).distance;
      row.second_ratio = pk.second_ratio;
      row.ok = ps.scan.interior;
      if (!ps.scan.interior) row.status = "no-interior-minimum";
    }
    ps.u = std::move(ms.u);
  } catch (const NumericalFailure& e) {
    row.status = std::string("failed: ") + e.what();
  }
  return ps;
}

// Each eps is solved independently: the reduced energy of the projected ansatz is scanned
// along the Neumann arc and Newton starts from its interior minimiser.
inline PeakTrace peak_scaling_study(const Keyhole& dom, double p, std::vector<double> eps_list, const GroundState& gs,
                                    const PeakStudyOptions& opt = {}) {
  if (eps_list.size() < 4) throw ParameterError("peak scaling needs at least 4 eps values");
  std::sort(eps_list.begin(), eps_list.end(), std::greater<>());
  for (double e : eps_list)
    if (!(e > 0 && e < 1)) throw ParameterError("eps values must lie in (0, 1)");
  if (std::adjacent_find(eps_list.begin(), eps_list.end()) != eps_list.end()) throw ParameterError("duplicate eps values");
  PeakTrace tr;
  tr.alpha = dom.alpha(), tr.p = p;
  tr.rows.resize(eps_list.size());
  parallel_tasks(eps_list.size(), [&](std::size_t i) { tr.rows[i] = solve_peak(dom, p, eps_list[i], gs, opt).row; });
  std::vector<double> xs, ys;
  double last = INFINITY;
  for (const auto& r : tr.rows) {
    if (!r.ok) continue;
    xs.push_back(r.eps * std::log(1 / r.eps));
    ys.push_back(r.dist_gamma);
    if (r.dist_gamma > last) tr.monotone = false;
    last = r.dist_gamma;
  }
  tr.fitted = static_cast<int>(xs.size());
  if (xs.size() >= 2) {
    const LineFit f = fit_line(xs, ys);
    tr.slope = f.slope, tr.intercept = f.intercept, tr.r2 = f.r2;
    if (xs.size() > 2) {
      double sxx = 0, sse = 0, mx = 0;
      for (double x : xs) mx += x;
      mx /= xs.size();
      for (std::size_t i = 0; i < xs.size(); ++i) {
        sxx += (xs[i] - mx) * (xs[i] - mx);
        const double e = ys[i] - f.intercept - f.slope * xs[i];
        sse += e * e;
      }
      tr.slope_stderr = std::sqrt(sse / (xs.size() - 2) / sxx);
    }
  }
  return tr;
}

struct CurvatureRow {
  double R = 0, eps = 0, energy = 0;  // energy in units of eps^n
};

struct CurvatureFit {
  std::vector<CurvatureRow> rows;
  double C0_fit = 0, C1_fit = 0;
  double C0_tilde = 0, C1_tilde = 0;
  double flat_ratio = 0;  // energy/C0_tilde for the row with the smallest eps/R
};

// Energy of the bare ansatz U(|x - Q|/eps) at a boundary point of discs of radius R,
// fitted as I/eps^2 = C0 - C1 eps/R (n = 2). Grids use cut Neumann cells with h = eps/8.
inline CurvatureFit neumann_curvature_fit(const std::vector<double>& R_list, const std::vector<double>& eps_list,
                                          double p, const GroundState& gs, double h_factor = 0.125) {
  if (R_list.empty() || eps_list.empty()) throw ParameterError("empty radius or eps list");
  if (gs.n != 2 || gs.p != p) throw ParameterError("ground state must match n = 2 and p");
  for (double R : R_list)
    if (!(R > 0)) throw ParameterError("radii must be positive");
  for (double e : eps_list)
    if (!(e > 0 && e < 1)) throw ParameterError("eps values must lie in (0, 1)");
  CurvatureFit cf;
  cf.C0_tilde = gs.C0_tilde, cf.C1_tilde = gs.C1_tilde;
  for (double R : R_list)
    for (double eps : eps_list) cf.rows.push_back({R, eps, 0.0});
  parallel_tasks(cf.rows.size(), [&](std::size_t i) {
    CurvatureRow& r = cf.rows[i];
    const DiscCap cap{r.R, std::min(2 * r.R, 25 * r.eps)};
    const GridPtr g = make_cut_grid(cap, h_factor * r.eps, cap.Q());
    r.energy = energy(boundary_ansatz(g, cap.Q(), r.eps, gs), r.eps, p) / (r.eps * r.eps);
  });
  std::vector<double> xs, ys;
  double kmin = INFINITY;
  for (const auto& r : cf.rows) {
    xs.push_back(r.eps / r.R);
    ys.push_back(r.energy);
    if (r.eps / r.R < kmin) kmin = r.eps / r.R, cf.flat_ratio = r.energy / gs.C0_tilde;
  }
  double lo = *std::min_element(xs.begin(), xs.end()), hi = *std::max_element(xs.begin(), xs.end());
  if (xs.size() < 3 || !(hi - lo > 1e-3 * hi)) throw ParameterError("curvature fit is ill-conditioned");
  const LineFit f = fit_line(xs, ys);
  cf.C0_fit = f.intercept;
  cf.C1_fit = -f.slope;
  return cf;
}

} // namespace spikelab
