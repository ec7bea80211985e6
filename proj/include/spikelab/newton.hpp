#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "errors.hpp"
#include "grid.hpp"
#include "sparse.hpp"

namespace spikelab {

inline double pos_pow(double u, double p) { return u > 0 ? std::pow(u, p) : 0.0; }

// Discrete version of 1/2 int (a|grad u|^2 + u^2) - 1/(p+1) int u_+^{p+1} with a = eps^2:
// edge differences weighted by the active-cell fraction, node terms by the nodal cell area.
inline double energy(const ScalarField& u, double eps, double p) {
  const Grid2D& g = *u.grid;
  const double a = eps * eps, h2 = g.h * g.h;
  double sum = 0, comp = 0;
  const auto add = [&](double x) {  // Neumaier summation
    const double t = sum + x;
    comp += std::abs(sum) >= std::abs(x) ? (sum - t) + x : (x - t) + sum;
    sum = t;
  };
  for (int j = 0; j < g.ny; ++j)
    for (int i = 0; i < g.nx; ++i) {
      const std::size_t k = g.idx(i, j);
      if (!g.active(k)) continue;
      const double uk = u.v[k];
      add(g.weight[k] * h2 * (0.5 * uk * uk - pos_pow(uk, p + 1) / (p + 1)));
      if (i + 1 < g.nx) {
        const double w = 0.5 * (g.cell_weight(i, j - 1) + g.cell_weight(i, j));
        if (w > 0) {
          const double du = u.v[g.idx(i + 1, j)] - uk;
          add(0.5 * a * w * du * du);
        }
      }
      if (j + 1 < g.ny) {
        const double w = 0.5 * (g.cell_weight(i - 1, j) + g.cell_weight(i, j));
        if (w > 0) {
          const double du = u.v[g.idx(i, j + 1)] - uk;
          add(0.5 * a * w * du * du);
        }
      }
    }
  return sum + comp;
}

// strong residual F(u) = -eps^2 Lap_h u + u - u_+^p at free nodes, zero elsewhere
inline ScalarField nonlinear_residual(const LinearOperator& op, const ScalarField& u, double p) {
  const Vec y = op.weak(u);
  ScalarField F(op.grid, 0.0);
  for (std::size_t i = 0; i < op.n(); ++i) F.v[op.node[i]] = y[i] / op.mass[i] - pos_pow(u.v[op.node[i]], p);
  return F;
}

// weak residual R_i = (A u)_i - m_i u_+^p at free nodes
inline Vec weak_residual(const LinearOperator& op, const ScalarField& u, double p) {
  Vec R = op.weak(u);
  for (std::size_t i = 0; i < op.n(); ++i) R[i] -= op.mass[i] * pos_pow(u.v[op.node[i]], p);
  return R;
}

// max |R_i| / h^2: the strong residual at full-cell nodes, weighted by the node's cell
// fraction elsewhere (tiny cut-cell fractions do not amplify round-off)
inline double residual_sup(const LinearOperator& op, const Vec& R) {
  double m = 0;
  for (double r : R) m = std::max(m, std::abs(r));
  const double h = op.grid->h;
  return m / (h * h);
}

// sqrt(sum R_i^2 / m_i): mass-weighted L2 norm of the strong residual
inline double residual_l2(const LinearOperator& op, const Vec& R) {
  double s = 0;
  for (std::size_t i = 0; i < R.size(); ++i) s += R[i] * R[i] / op.mass[i];
  return std::sqrt(s);
}

inline double sup_norm_free(const LinearOperator& op, const ScalarField& F) {
  double m = 0;
  for (std::size_t i = 0; i < op.n(); ++i) m = std::max(m, std::abs(F.v[op.node[i]]));
  return m;
}

enum class NewtonStatus { Converged, Trivial, Diverged, MaxIterations };

inline std::string to_string(NewtonStatus s) {
  switch (s) {
    case NewtonStatus::Converged: return "converged";
    case NewtonStatus::Trivial: return "trivial";
    case NewtonStatus::Diverged: return "diverged";
    case NewtonStatus::MaxIterations: return "max-iterations";
  }
  return "?";
}

struct NewtonOptions {
  int max_iterations = 60;
  int max_halvings = 5;
  double krylov_tol = 1e-11;
  double trivial_threshold = 1e-6;  // sup |u| below this counts as the zero branch
  bool positive_tail = true;        // rebuild the far field by a log-scaled linear solve
  double tail_fraction = 1e-4;
};

struct NewtonResult {
  ScalarField u;
  NewtonStatus status = NewtonStatus::MaxIterations;
  int iterations = 0;
  int krylov_iterations = 0;
  double residual = 0;  // max |weak residual| / h^2 at free nodes
  std::vector<double> history;
};

namespace detail {

// Far-field nodes (u below tail_fraction * max) solve the linearisation frozen at u:
// (-a Lap + 1 - u_+^{p-1}) w = 0 with the core as data. The log-scaled solve keeps
// w > 0 where the Newton iterate carries round-off-level sign noise.

inline bool rebuild_tail(const LinearOperator& op, ScalarField& u, double p, double fraction) {
  const Grid2D& g = *op.grid;
  const double umax = u.max_active();
  if (!(umax > 0)) return false;
  std::vector<char> fixed(g.size(), 1);
  Vec reaction(g.size(), 1.0);
  ScalarField logd(op.grid, -INFINITY);
  bool any = false;
  for (std::size_t i = 0; i < op.n(); ++i) {
    const std::size_t k = op.node[i];
    if (u.v[k] < fraction * umax) {
      fixed[k] = 0;
      reaction[k] = 1.0 - pos_pow(u.v[k], p - 1);
      any = true;
    } else {
      logd.v[k] = std::log(u.v[k]);
    }
  }
  if (!any) return false;
  const LinearOperator tail = assemble(op.grid, op.a, reaction, fixed);
  const LogSolve ls = solve_log_scaled(tail, logd);
  for (std::size_t i = 0; i < tail.n(); ++i) u.v[tail.node[i]] = std::exp(ls.log_u.v[tail.node[i]]);
  return true;
}

} // namespace detail

// Damped Newton for -eps^2 Lap u + u = u_+^p with homogeneous Dirichlet data on the
// grid's Dirichlet nodes and natural Neumann conditions elsewhere. Linear systems use
// MINRES (the Jacobian is symmetric, indefinite near a spike).
inline NewtonResult newton_solve(GridPtr grid, double eps, double p, const ScalarField& u0, double tol = 1e-8,
                                 const NewtonOptions& opt = {}) {
  if (!(eps > 0)) throw ParameterError("eps must be positive");
  if (!(p > 1)) throw ParameterError("p must exceed 1");
  if (!(tol > 0)) throw ParameterError("tol must be positive");
  if (u0.grid.get() != grid.get() && u0.v.size() != grid->size()) throw ParameterError("initial field grid mismatch");
  const Grid2D& g = *grid;
  for (std::size_t k = 0; k < g.size(); ++k)
    if (g.active(k) && !(u0.v[k] >= 0)) throw ParameterError("initial field must be non-negative");
  const LinearOperator op = assemble(grid, eps * eps);
  NewtonResult res;
  res.u = ScalarField(grid, u0.v);
  for (std::size_t k = 0; k < g.size(); ++k)
    if (!g.active(k) || g.dirichlet(k)) res.u.v[k] = 0.0;

  Vec Rw = weak_residual(op, res.u, p);
  double fn = residual_sup(op, Rw), merit = residual_l2(op, Rw);
  res.history.push_back(fn);
  const std::size_t n = op.n();
  Vec R(n), delta, jd(n), pre(n);
  int bad = 0;
  while (fn > tol) {
    if (res.iterations >= opt.max_iterations) {
      res.status = NewtonStatus::MaxIterations;
      res.residual = fn;
      return res;
    }
    ++res.iterations;
    for (std::size_t i = 0; i < n; ++i) {
      const double uk = res.u.v[op.node[i]];
      R[i] = -Rw[i];
      jd[i] = op.mass[i] * p * pos_pow(uk, p - 1);
      pre[i] = std::max(std::abs(op.diag[i] - jd[i]), 1e-3 * op.diag[i]);
    }
    const auto J = [&](const Vec& x, Vec& y) {
      op.apply(x, y);
      for (std::size_t i = 0; i < n; ++i) y[i] -= jd[i] * x[i];
    };
    delta.assign(n, 0.0);
    const auto kr = minres(J, R, delta, pre, opt.krylov_tol, 20000);
    res.krylov_iterations += kr.iterations;
    double lambda = 1.0;
    bool accepted = false;
    ScalarField trial(grid, res.u.v);
    Vec Rt;
    double mt = 0;
    for (int halving = 0; halving <= opt.max_halvings; ++halving) {
      for (std::size_t i = 0; i < n; ++i) trial.v[op.node[i]] = res.u.v[op.node[i]] + lambda * delta[i];
      Rt = weak_residual(op, trial, p);
      mt = residual_l2(op, Rt);
      if (mt < merit) {
        accepted = true;
        break;
      }
      lambda *= 0.5;
    }
    // the smallest step is taken anyway; repeated failure is divergence
    res.u = std::move(trial);
    Rw = std::move(Rt);
    merit = mt;
    fn = residual_sup(op, Rw);
    res.history.push_back(fn);
    if (accepted) bad = 0;
    else if (++bad >= 5 || !std::isfinite(fn)) {
      res.status = NewtonStatus::Diverged;
      res.residual = fn;
      return res;
    }
  }
  res.residual = fn;
  double umax = 0;
  for (std::size_t i = 0; i < n; ++i) umax = std::max(umax, std::abs(res.u.v[op.node[i]]));
  if (umax < opt.trivial_threshold) {
    res.status = NewtonStatus::Trivial;
    return res;
  }
  res.status = NewtonStatus::Converged;
  if (opt.positive_tail) {
    try {
      if (detail::rebuild_tail(op, res.u, p, opt.tail_fraction)) {
        res.residual = residual_sup(op, weak_residual(op, res.u, p));
        res.history.push_back(res.residual);
      }
    } catch (const NumericalFailure&) {
      for (auto& x : res.u.v) x = std::max(x, 0.0);
    }
  }
  for (std::size_t i = 0; i < n; ++i) res.u.v[op.node[i]] = std::max(res.u.v[op.node[i]], 0.0);
  return res;
}

} // namespace spikelab
