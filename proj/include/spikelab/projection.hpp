#pragma once

#include <cmath>
#include <vector>

#include "errors.hpp"
#include "geometry.hpp"
#include "groundstate.hpp"
#include "pde_core.hpp"

namespace spikelab {

// Largest admissible spacing for the projection problem at scale d.
inline double projection_spacing(double d) { return std::min(0.02, 1.0 / (4.0 * d)); }

struct ProjectionResult {
  double d = 0, h = 0;
  GridPtr grid;           // x-space grid on Sigma_D, Q0 is a node
  ScalarField log_phi;    // log of the solution phi
  ScalarField Phi_d;      // -(1/d) log phi
  double Xi_log_norm = 0; // -(1/d) log ||Xi_d||_{H^1}
  double sup_error = 0;   // window sup of |Phi_d - limit_profile|
  double min_value = 0;   // min of Phi_d over active nodes
  double gradient_stat = 0;
  double boundary_error = 0;
  std::size_t window_nodes = 0;
};

namespace detail {

// log of the sum of exp(l_i) * w_i, for w_i >= 0
struct LogAccumulator {
  double shift;
  double sum = 0;
  explicit LogAccumulator(double s) : shift(s) {}
  void add(double log_term, double weight) {
    if (weight > 0 && std::isfinite(log_term)) sum += weight * std::exp(log_term - shift);
  }
  double log() const { return std::log(sum) + shift; }
};

// log of the squared H^1 norm in the dilated variable y = d (x - Q0) of a field given
// on the x-grid by sign * exp(log_abs):
// int |grad_y w|^2 dy + int w^2 dy = sum_e w_e (w_i - w_j)^2 + d^2 sum_i m_i w_i^2.
inline double log_h1_norm_sq(const Grid2D& g, const std::vector<double>& log_abs, const std::vector<double>& sign,
                             double d) {
  double shift = -INFINITY;
  for (std::size_t k = 0; k < g.size(); ++k)
    if (g.active(k)) shift = std::max(shift, log_abs[k]);
  if (!std::isfinite(shift)) return -INFINITY;
  const auto val = [&](std::size_t k) { return sign[k] * std::exp(log_abs[k] - shift); };
  double s = 0;
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i) {
      const std::size_t k = g.idx(i, j);
      if (!g.active(k)) continue;
      const double wk = val(k);
      s += d * d * g.weight[k] * g.h * g.h * wk * wk;
      if (i + 1 < g.nx) {
        const double w = 0.5 * (g.cell_weight(i, j - 1) + g.cell_weight(i, j));
        if (w > 0) s += w * std::pow(val(g.idx(i + 1, j)) - wk, 2);
      }
      if (j + 1 < g.ny) {
        const double w = 0.5 * (g.cell_weight(i - 1, j) + g.cell_weight(i, j));
        if (w > 0) s += w * std::pow(val(g.idx(i, j + 1)) - wk, 2);
      }
    }
  return std::log(s) + 2 * shift;
}

inline GridPtr projection_grid(const WedgeDomain& dom, double h) { return make_grid(dom, h, dom.q0()); }

// log phi on the given grid
inline ScalarField solve_log_phi(const WedgeDomain& dom, const GroundState& gs, double d, GridPtr grid) {
  const Grid2D& g = *grid;
  const LinearOperator op = assemble(grid, 1.0 / (d * d));
  ScalarField data(grid, -INFINITY);
  for (std::size_t k = 0; k < g.size(); ++k)
    if (g.dirichlet(k)) data.v[k] = gs.log_value(d * dist(g.bpoint[k], dom.q0()));
  return solve_log_scaled(op, data).log_u;
}

} // namespace detail

// sup over boundary points of |-(1/d) log U(d|z - Q0|) - |z - Q0||
inline double boundary_datum_error(const WedgeDomain& dom, const GroundState& gs, double d, int samples = 4000) {
  const TaggedPolygon& P = dom.polygon();
  const double L = P.perimeter();
  double e = 0;
  for (int i = 0; i < samples; ++i) {
    const Point z = P.at(L * i / samples);
    const double r = dist(z, dom.q0());
    e = std::max(e, std::abs(-gs.log_value(d * r) / d - r));
  }
  return e;
}

// -(1/d^2) Lap phi + phi = 0 in Sigma_D, phi = U(d|x - Q0|) on the boundary, solved for
// log phi. h = 0 selects projection_spacing(d).
inline ProjectionResult solve_projection(const WedgeDomain& dom, double d, const GroundState& gs, double h = 0) {
  if (!(d >= 5)) throw ParameterError("projection needs d >= 5");
  if (gs.n != 2) throw ParameterError("projection uses the two-dimensional ground state");
  const double hmax = projection_spacing(d);
  if (h == 0) h = hmax;
  if (!(h > 0) || h > hmax * (1 + 1e-12)) throw ParameterError("grid spacing does not resolve the 1/d layer");
  ProjectionResult r;
  r.d = d;
  r.h = h;
  r.grid = detail::projection_grid(dom, h);
  r.log_phi = detail::solve_log_phi(dom, gs, d, r.grid);
  const Grid2D& g = *r.grid;
  r.Phi_d = ScalarField(r.grid, 0.0);
  r.min_value = INFINITY;
  for (std::size_t k = 0; k < g.size(); ++k) {
    if (!g.active(k)) continue;
    r.Phi_d.v[k] = -r.log_phi.v[k] / d;
    r.min_value = std::min(r.min_value, r.Phi_d.v[k]);
  }
  for (std::size_t k = 0; k < g.size(); ++k) {
    if (!g.active(k)) continue;
    const Point x = g.point(k);
    if (!in_window(dom, x)) continue;
    ++r.window_nodes;
    r.sup_error = std::max(r.sup_error, std::abs(r.Phi_d.v[k] - limit_profile(x, dom)));
  }
  // central-difference |grad Phi_d| on the window away from the vertex
  for (int j = 1; j + 1 < g.ny; ++j)
    for (int i = 1; i + 1 < g.nx; ++i) {
      const std::size_t k = g.idx(i, j);
      if (g.mask[k] != NodeKind::Interior) continue;
      const Point x = g.point(k);
      if (norm(x) < 0.2 || norm(x) > dom.D() / 4) continue;
      const double gx = (r.Phi_d.v[g.idx(i + 1, j)] - r.Phi_d.v[g.idx(i - 1, j)]) / (2 * h);
      const double gy = (r.Phi_d.v[g.idx(i, j + 1)] - r.Phi_d.v[g.idx(i, j - 1)]) / (2 * h);
      r.gradient_stat = std::max(r.gradient_stat, std::hypot(gx, gy));
    }
  const std::vector<double> ones(g.size(), 1.0);
  r.Xi_log_norm = -0.5 * detail::log_h1_norm_sq(g, r.log_phi.v, ones, d) / d;
  r.boundary_error = boundary_datum_error(dom, gs, d);
  return r;
}

// Xi_d(y) = phi(y/d + Q0) on the dilated grid d (Sigma_D - Q0).
inline ScalarField xi_field(const ProjectionResult& pr, const WedgeDomain& dom) {
  auto g = std::make_shared<Grid2D>(*pr.grid);
  g->x0 = pr.d * (pr.grid->x0 - dom.q0().x);
  g->y0 = pr.d * (pr.grid->y0 - dom.q0().y);
  g->h = pr.d * pr.grid->h;
  for (auto& z : g->bpoint) z = pr.d * (z - dom.q0());
  ScalarField xi(g, 0.0);
  for (std::size_t k = 0; k < g->size(); ++k)
    if (g->active(k)) xi.v[k] = std::exp(pr.log_phi.v[k]);
  return xi;
}

// sup of the discrete residual of -Lap Xi + Xi = 0 over interior nodes of the dilated grid
inline double xi_residual(const ScalarField& xi) {
  const Grid2D& g = *xi.grid;
  double r = 0;
  for (int j = 1; j + 1 < g.ny; ++j)
    for (int i = 1; i + 1 < g.nx; ++i) {
      const std::size_t k = g.idx(i, j);
      if (g.mask[k] != NodeKind::Interior) continue;
      const double lap = (xi.v[g.idx(i + 1, j)] + xi.v[g.idx(i - 1, j)] + xi.v[g.idx(i, j + 1)] +
                          xi.v[g.idx(i, j - 1)] - 4 * xi.v[k]) / (g.h * g.h);
      r = std::max(r, std::abs(-lap + xi.v[k]));
    }
  return r;
}

struct XiRate {
  double d = 0, delta = 0;
  double rate = 0;           // -(1/d) log ||dXi_d/dd||_{H^1}
  double xi_rate = 0;        // -(1/d) log ||Xi_d||_{H^1} on the same grid
};

// Central difference in d at fixed dilated point y:
// dXi/dd (y) = d_d phi(x) - grad phi(x) . (x - Q0) / d,  x = y/d + Q0.
inline XiRate xi_d_rate(const WedgeDomain& dom, const GroundState& gs, double d, double delta_d, double h = 0) {
  if (!(delta_d > 0 && delta_d <= 0.1)) throw ParameterError("delta_d must lie in (0, 0.1]");
  if (!(d - delta_d >= 5)) throw ParameterError("projection needs d >= 5");
  if (h == 0) h = projection_spacing(d + delta_d);
  const GridPtr grid = detail::projection_grid(dom, h);
  const Grid2D& g = *grid;
  const ScalarField lp = detail::solve_log_phi(dom, gs, d + delta_d, grid);
  const ScalarField lm = detail::solve_log_phi(dom, gs, d - delta_d, grid);
  const ScalarField l0 = detail::solve_log_phi(dom, gs, d, grid);
  // everything is scaled by exp(-shift) to stay in range
  double shift = -INFINITY;
  for (std::size_t k = 0; k < g.size(); ++k)
    if (g.active(k)) shift = std::max(shift, l0.v[k]);
  const auto ph = [&](const ScalarField& l, std::size_t k) { return std::exp(l.v[k] - shift); };
  std::vector<double> labs(g.size(), -INFINITY), sgn(g.size(), 0.0);
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i) {
      const std::size_t k = g.idx(i, j);
      if (!g.active(k)) continue;
      const auto diff = [&](int di, int dj) {
        const bool fwd = g.active(i + di, j + dj), bwd = g.active(i - di, j - dj);
        if (fwd && bwd) return (ph(l0, g.idx(i + di, j + dj)) - ph(l0, g.idx(i - di, j - dj))) / (2 * h);
        if (fwd) return (ph(l0, g.idx(i + di, j + dj)) - ph(l0, k)) / h;
        if (bwd) return (ph(l0, k) - ph(l0, g.idx(i - di, j - dj))) / h;
        return 0.0;
      };
      const Point xq = g.point(k) - dom.q0();
      const double w = (ph(lp, k) - ph(lm, k)) / (2 * delta_d) - (diff(1, 0) * xq.x + diff(0, 1) * xq.y) / d;
      sgn[k] = w < 0 ? -1.0 : 1.0;
      labs[k] = w == 0 ? -INFINITY : std::log(std::abs(w)) + shift;
    }
  XiRate out;
  out.d = d;
  out.delta = delta_d;
  out.rate = -0.5 * detail::log_h1_norm_sq(g, labs, sgn, d) / d;
  const std::vector<double> ones(g.size(), 1.0);
  out.xi_rate = -0.5 * detail::log_h1_norm_sq(g, l0.v, ones, d) / d;
  return out;
}

struct ConvergenceRow {
  double d, h, sup_error, min_value, Xi_log_norm, gradient_stat, boundary_error;
  bool lower_bound_ok;
};

struct ConvergenceStudy {
  std::vector<ConvergenceRow> rows;
  bool monotone = true;       // sup_error non-increasing up to 10% slack
  bool final_ok = true;       // last sup_error <= 0.15
  bool lower_bounds_ok = true;
  double gradient_spread = 0; // (max - min) / min of gradient_stat across d
};

// h_rule maps d to the grid spacing (0 selects projection_spacing).
template <class HRule>
ConvergenceStudy convergence_study(const WedgeDomain& dom, const GroundState& gs, const std::vector<double>& d_list,
                                   HRule&& h_rule) {
  if (d_list.size() < 3) throw ParameterError("convergence study needs at least 3 values of d");
  for (std::size_t i = 1; i < d_list.size(); ++i)
    if (!(d_list[i] > d_list[i - 1])) throw ParameterError("d_list must be increasing");
  ConvergenceStudy s;
  double gmin = INFINITY, gmax = 0;
  for (double d : d_list) {
    const ProjectionResult r = solve_projection(dom, d, gs, h_rule(d));
    const bool lb = r.min_value > dom.phi_lower_bound() - r.h;
    s.rows.push_back({d, r.h, r.sup_error, r.min_value, r.Xi_log_norm, r.gradient_stat, r.boundary_error, lb});
    s.lower_bounds_ok = s.lower_bounds_ok && lb;
    gmin = std::min(gmin, r.gradient_stat);
    gmax = std::max(gmax, r.gradient_stat);
  }
  for (std::size_t i = 1; i < s.rows.size(); ++i)
    if (s.rows[i].sup_error > 1.1 * s.rows[i - 1].sup_error) s.monotone = false;
  s.final_ok = s.rows.back().sup_error <= 0.15;
  s.gradient_spread = (gmax - gmin) / gmin;
  return s;
}

inline ConvergenceStudy convergence_study(const WedgeDomain& dom, const GroundState& gs,
                                          const std::vector<double>& d_list) {
  return convergence_study(dom, gs, d_list, [](double) { return 0.0; });
}

} // namespace spikelab
