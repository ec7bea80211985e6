#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <atomic>
#include <exception>
#include <thread>
#include <vector>

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "errors.hpp"
#include "grid.hpp"

namespace spikelab {

using Vec = std::vector<double>;

// Worker bound for row-parallel loops. Rows are independent, so results do not
// depend on the value.
inline int& worker_count() {
  static int n = 1;
  return n;
}

namespace detail {
inline thread_local bool in_task = false;  // nested loops inside a task stay serial
}

template <class F>
void parallel_rows(std::size_t n, F&& f) {
  const int jobs = std::max(1, worker_count());
  if (jobs == 1 || n < 20000 || detail::in_task) {
    f(std::size_t{0}, n);
    return;
  }
  std::vector<std::thread> pool;
  const std::size_t chunk = (n + jobs - 1) / jobs;
  for (int t = 0; t < jobs; ++t) {
    const std::size_t b = t * chunk, e = std::min(n, b + chunk);
    if (b < e) pool.emplace_back([&f, b, e] { f(b, e); });
  }
  for (auto& th : pool) th.join();
}

// Runs f(i) for i < n on up to worker_count() threads. Each task writes only its own
// result slot, so the outcome does not depend on scheduling.
template <class F>
void parallel_tasks(std::size_t n, F&& f) {
  const int jobs = std::min<std::size_t>(std::max(1, worker_count()), n);
  if (jobs <= 1 || detail::in_task) {
    for (std::size_t i = 0; i < n; ++i) f(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errs(n);
  std::vector<std::thread> pool;
  for (int t = 0; t < jobs; ++t)
    pool.emplace_back([&] {
      detail::in_task = true;
      for (std::size_t i; (i = next++) < n;) {
        try {
          f(i);
        } catch (...) {
          errs[i] = std::current_exception();
        }
      }
    });
  for (auto& th : pool) th.join();
  for (auto& e : errs)  // lowest failing index, independent of scheduling
    if (e) std::rethrow_exception(e);
}

inline double dot(const Vec& a, const Vec& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(const Vec& a) { return std::sqrt(dot(a, a)); }

// Variational five-point discretisation of -a Lap u + c u on the active cells.
// Row i is sum_e a w_e (u_i - u_j) + c_i m_i u_i with w_e the active fraction of the
// two cells along edge e and m_i = weight_i h^2. At interior nodes this is h^2 times
// the standard stencil; at Neumann nodes it is the mirror-ghost stencil scaled by the
// node weight. The matrix is the Hessian of the discrete energy.
struct LinearOperator {
  GridPtr grid;
  double a = 1;
  std::vector<int> slot;           // node -> free index, -1 for fixed or exterior
  std::vector<std::size_t> node;   // free index -> node
  std::vector<int> row_ptr, col;   // free-free block
  Vec val;
  std::vector<int> fix_ptr;        // couplings to fixed nodes
  std::vector<std::size_t> fix_node;
  Vec fix_val;
  Vec mass, diag, reaction;

  std::size_t n() const { return node.size(); }

  void apply(const Vec& x, Vec& y) const {
    y.resize(n());
    parallel_rows(n(), [&](std::size_t b, std::size_t e) {
      for (std::size_t i = b; i < e; ++i) {
        double s = 0;
        for (int k = row_ptr[i]; k < row_ptr[i + 1]; ++k) s += val[k] * x[col[k]];
        y[i] = s;
      }
    });
  }

  // y += (coupling to fixed nodes) applied to the node field u
  void apply_fixed(const Vec& u_nodes, Vec& y) const {
    for (std::size_t i = 0; i < n(); ++i)
      for (int k = fix_ptr[i]; k < fix_ptr[i + 1]; ++k) y[i] += fix_val[k] * u_nodes[fix_node[k]];
  }

  Vec gather(const ScalarField& f) const {
    Vec x(n());
    for (std::size_t i = 0; i < n(); ++i) x[i] = f.v[node[i]];
    return x;
  }

  void scatter(const Vec& x, ScalarField& f) const {
    for (std::size_t i = 0; i < n(); ++i) f.v[node[i]] = x[i];
  }

  // weak action (A u) at free nodes, fixed values taken from u
  Vec weak(const ScalarField& u) const {
    Vec y;
    apply(gather(u), y);
    apply_fixed(u.v, y);
    return y;
  }

  // strong form (-a Lap_h + c) u at free nodes, zero elsewhere
  ScalarField operator()(const ScalarField& u) const {
    const Vec y = weak(u);
    ScalarField out(grid, 0.0);
    for (std::size_t i = 0; i < n(); ++i) out.v[node[i]] = y[i] / mass[i];
    return out;
  }
};

// fixed: per node, nonzero marks an eliminated unknown (default: Dirichlet nodes).
// reaction: per node coefficient c (default 1).
inline LinearOperator assemble(GridPtr grid, double a, const Vec& reaction = {},
                               const std::vector<char>& fixed = {}) {
  if (!(a > 0)) throw ParameterError("diffusion coefficient must be positive");
  const Grid2D& g = *grid;
  if (!reaction.empty() && reaction.size() != g.size()) throw ParameterError("reaction size mismatch");
  if (!fixed.empty() && fixed.size() != g.size()) throw ParameterError("fixed mask size mismatch");
  LinearOperator op;
  op.grid = grid;
  op.a = a;
  op.slot.assign(g.size(), -1);
  for (std::size_t k = 0; k < g.size(); ++k) {
    if (!g.active(k)) continue;
    const bool fx = fixed.empty() ? g.dirichlet(k) : fixed[k] != 0;
    if (fx) continue;
    op.slot[k] = static_cast<int>(op.node.size());
    op.node.push_back(k);
  }
  if (op.node.empty()) throw ParameterError("degenerate grid: no free nodes");
  const double h2 = g.h * g.h;
  op.row_ptr.assign(1, 0);
  op.fix_ptr.assign(1, 0);
  for (std::size_t r = 0; r < op.node.size(); ++r) {
    const std::size_t k = op.node[r];
    const int i = g.ix(k), j = g.jy(k);
    const double c = reaction.empty() ? 1.0 : reaction[k];
    const double m = g.weight[k] * h2;
    double d = c * m;
    struct Nb { int di, dj; double w; };
    const Nb nbs[4] = {
        {1, 0, 0.5 * (g.cell_weight(i, j - 1) + g.cell_weight(i, j))},
        {-1, 0, 0.5 * (g.cell_weight(i - 1, j - 1) + g.cell_weight(i - 1, j))},
        {0, 1, 0.5 * (g.cell_weight(i - 1, j) + g.cell_weight(i, j))},
        {0, -1, 0.5 * (g.cell_weight(i - 1, j - 1) + g.cell_weight(i, j - 1))},
    };
    std::vector<std::pair<int, double>> row;
    for (const Nb& nb : nbs) {
      if (nb.w == 0) continue;
      const std::size_t q = g.idx(i + nb.di, j + nb.dj);
      d += a * nb.w;
      if (op.slot[q] >= 0) row.emplace_back(op.slot[q], -a * nb.w);
      else {
        op.fix_node.push_back(q);
        op.fix_val.push_back(-a * nb.w);
      }
    }
    row.emplace_back(static_cast<int>(r), d);
    std::sort(row.begin(), row.end());
    for (auto [cidx, v] : row) {
      op.col.push_back(cidx);
      op.val.push_back(v);
    }
    op.row_ptr.push_back(static_cast<int>(op.col.size()));
    op.fix_ptr.push_back(static_cast<int>(op.fix_node.size()));
    op.mass.push_back(m);
    op.diag.push_back(d);
    op.reaction.push_back(c);
  }
  return op;
}

struct KrylovReport {
  int iterations = 0;
  double rel_residual = 0;
  bool converged = false;
};

using ApplyFn = std::function<void(const Vec&, Vec&)>;

// Jacobi-preconditioned conjugate gradients.
inline KrylovReport cg(const ApplyFn& A, const Vec& b, Vec& x, const Vec& diag, double tol, int maxit) {
  const std::size_t n = b.size();
  x.resize(n, 0.0);
  Vec r(n), z(n), p(n), q(n);
  A(x, q);
  for (std::size_t i = 0; i < n; ++i) r[i] = b[i] - q[i];
  const double bn = std::max(norm2(b), 1e-300);
  KrylovReport rep;
  double rn = norm2(r);
  if (rn <= tol * bn || norm2(b) == 0) {
    rep.rel_residual = norm2(b) == 0 ? 0 : rn / bn;
    rep.converged = true;
    if (norm2(b) == 0) std::fill(x.begin(), x.end(), 0.0);
    return rep;
  }
  for (std::size_t i = 0; i < n; ++i) z[i] = r[i] / diag[i];
  p = z;
  double rz = dot(r, z);
  for (int it = 1; it <= maxit; ++it) {
    A(p, q);
    const double alpha = rz / dot(p, q);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] += alpha * p[i];
      r[i] -= alpha * q[i];
    }
    rn = norm2(r);
    rep.iterations = it;
    rep.rel_residual = rn / bn;
    if (rep.rel_residual <= tol) {
      rep.converged = true;
      return rep;
    }
    for (std::size_t i = 0; i < n; ++i) z[i] = r[i] / diag[i];
    const double rz1 = dot(r, z);
    const double beta = rz1 / rz;
    rz = rz1;
    for (std::size_t i = 0; i < n; ++i) p[i] = z[i] + beta * p[i];
  }
  return rep;
}

// Preconditioned MINRES for symmetric indefinite systems; M = diag(pre) must be SPD.
inline KrylovReport minres(const ApplyFn& A, const Vec& b, Vec& x, const Vec& pre, double tol, int maxit) {
  const std::size_t n = b.size();
  x.assign(n, 0.0);
  KrylovReport rep;
  const double bn = norm2(b);
  if (bn == 0) {
    rep.converged = true;
    return rep;
  }
  Vec r1 = b, y(n), r2 = b, v(n), w(n, 0.0), w1(n, 0.0), w2(n, 0.0), Av(n);
  for (std::size_t i = 0; i < n; ++i) y[i] = r1[i] / pre[i];
  double beta1 = std::sqrt(dot(r1, y));
  double beta = beta1, oldb = 0, dbar = 0, epsln = 0, phibar = beta1;
  double cs = -1, sn = 0;
  for (int it = 1; it <= maxit; ++it) {
    const double s = 1.0 / beta;
    for (std::size_t i = 0; i < n; ++i) v[i] = s * y[i];
    A(v, Av);
    if (it >= 2)
      for (std::size_t i = 0; i < n; ++i) Av[i] -= (beta / oldb) * r1[i];
    const double alfa = dot(v, Av);
    for (std::size_t i = 0; i < n; ++i) Av[i] -= (alfa / beta) * r2[i];
    r1 = r2;
    r2 = Av;
    for (std::size_t i = 0; i < n; ++i) y[i] = r2[i] / pre[i];
    oldb = beta;
    beta = std::sqrt(std::max(0.0, dot(r2, y)));
    const double oldeps = epsln;
    const double delta = cs * dbar + sn * alfa;
    const double gbar = sn * dbar - cs * alfa;
    epsln = sn * beta;
    dbar = -cs * beta;
    const double gamma = std::max(std::hypot(gbar, beta), 1e-300);
    cs = gbar / gamma;
    sn = beta / gamma;
    const double phi = cs * phibar;
    phibar = sn * phibar;
    const double denom = 1.0 / gamma;
    w1 = w2;
    w2 = w;
    for (std::size_t i = 0; i < n; ++i) {
      w[i] = (v[i] - oldeps * w1[i] - delta * w2[i]) * denom;
      x[i] += phi * w[i];
    }
    rep.iterations = it;
    // preconditioned residual estimate
    rep.rel_residual = std::abs(phibar) / beta1;
    if (rep.rel_residual <= tol || beta == 0) {
      rep.converged = true;
      break;
    }
  }
  return rep;
}

// Right-preconditioned BiCGSTAB; M(r, z) sets z = M^{-1} r.
inline KrylovReport bicgstab(const ApplyFn& A, const Vec& b, Vec& x, const ApplyFn& M, double tol, int maxit) {
  const std::size_t n = b.size();
  x.resize(n, 0.0);
  Vec r(n), rhat, p(n, 0.0), v(n, 0.0), s(n), t(n), ph(n), sh(n);
  A(x, t);
  for (std::size_t i = 0; i < n; ++i) r[i] = b[i] - t[i];
  rhat = r;
  const double bn = std::max(norm2(b), 1e-300);
  KrylovReport rep;
  rep.rel_residual = norm2(r) / bn;
  if (rep.rel_residual <= tol) {
    rep.converged = true;
    return rep;
  }
  double rho = 1, alpha = 1, omega = 1;
  for (int it = 1; it <= maxit; ++it) {
    const double rho1 = dot(rhat, r);
    if (rho1 == 0) break;
    const double beta = (rho1 / rho) * (alpha / omega);
    rho = rho1;
    for (std::size_t i = 0; i < n; ++i) p[i] = r[i] + beta * (p[i] - omega * v[i]);
    M(p, ph);
    A(ph, v);
    alpha = rho / dot(rhat, v);
    for (std::size_t i = 0; i < n; ++i) s[i] = r[i] - alpha * v[i];
    rep.iterations = it;
    if (norm2(s) / bn <= tol) {
      for (std::size_t i = 0; i < n; ++i) x[i] += alpha * ph[i];
      rep.rel_residual = norm2(s) / bn;
      rep.converged = true;
      return rep;
    }
    M(s, sh);
    A(sh, t);
    omega = dot(t, s) / dot(t, t);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] += alpha * ph[i] + omega * sh[i];
      r[i] = s[i] - omega * t[i];
    }
    rep.rel_residual = norm2(r) / bn;
    if (rep.rel_residual <= tol) {
      rep.converged = true;
      return rep;
    }
    if (omega == 0) break;
  }
  return rep;
}

inline KrylovReport bicgstab(const ApplyFn& A, const Vec& b, Vec& x, const Vec& diag, double tol, int maxit) {
  return bicgstab(A, b, x, [&diag](const Vec& r, Vec& z) {
    z.resize(r.size());
    for (std::size_t i = 0; i < r.size(); ++i) z[i] = r[i] / diag[i];
  }, tol, maxit);
}

struct LinearSolve {
  ScalarField u;
  int iterations = 0;
  double rel_residual = 0;
};

// rhs holds the source f at free nodes and the prescribed value at fixed nodes.
inline LinearSolve solve_linear(const LinearOperator& op, const ScalarField& rhs, double tol = 1e-10) {
  if (!(tol > 0)) throw ParameterError("tol must be positive");
  const Grid2D& g = *op.grid;
  Vec b(op.n());
  for (std::size_t i = 0; i < op.n(); ++i) b[i] = op.mass[i] * rhs.v[op.node[i]];
  Vec fixed_vals(g.size(), 0.0);
  for (std::size_t k = 0; k < g.size(); ++k)
    if (g.active(k) && op.slot[k] < 0) fixed_vals[k] = rhs.v[k];
  Vec coupling(op.n(), 0.0);
  op.apply_fixed(fixed_vals, coupling);
  for (std::size_t i = 0; i < op.n(); ++i) b[i] -= coupling[i];
  Vec x(op.n(), 0.0);
  const long maxit = std::min<long>(10L * g.nx * g.ny, std::numeric_limits<int>::max());
  const auto rep = cg([&](const Vec& in, Vec& out) { op.apply(in, out); }, b, x, op.diag, tol,
                      static_cast<int>(maxit));
  if (!rep.converged) throw NumericalFailure("conjugate gradients did not converge");
  LinearSolve out{ScalarField(op.grid, 0.0), rep.iterations, rep.rel_residual};
  for (std::size_t k = 0; k < g.size(); ++k)
    if (g.active(k)) out.u.v[k] = fixed_vals[k];
  op.scatter(x, out.u);
  return out;
}

struct LogSolve {
  ScalarField log_u;  // log of the solution; fixed nodes carry their data
  double shift = 0;   // data were divided by exp(shift) before the solve
};

// Homogeneous problem (-a Lap + c) u = 0 with fixed data exp(log_fixed), returned as
// log u. The matrix is an M-matrix, so its LDL^T factors carry signs that make every
// triangular-solve update a same-sign addition for non-negative data: each component is
// obtained to relative accuracy however small it is. Krylov methods only deliver
// accuracy relative to the largest entry. Requires c >= 0.
inline LogSolve solve_log_scaled(const LinearOperator& op, const ScalarField& log_fixed) {
  const Grid2D& g = *op.grid;
  const std::size_t n = op.n();
  for (double c : op.reaction)
    if (c < 0) throw ParameterError("log-scaled solve needs a non-negative reaction");
  LogSolve out;
  out.shift = -INFINITY;
  for (std::size_t k = 0; k < n; ++k)
    for (int q = op.fix_ptr[k]; q < op.fix_ptr[k + 1]; ++q) out.shift = std::max(out.shift, log_fixed.v[op.fix_node[q]]);
  if (!std::isfinite(out.shift)) throw NumericalFailure("log-scaled solve without positive boundary data");
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(op.val.size());
  for (std::size_t i = 0; i < n; ++i)
    for (int k = op.row_ptr[i]; k < op.row_ptr[i + 1]; ++k)
      trip.emplace_back(static_cast<int>(i), op.col[k], op.val[k]);
  Eigen::SparseMatrix<double> A(static_cast<int>(n), static_cast<int>(n));
  A.setFromTriplets(trip.begin(), trip.end());
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt(A);
  if (ldlt.info() != Eigen::Success) throw NumericalFailure("sparse LDL^T factorisation failed");
  Eigen::VectorXd b = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i)
    for (int k = op.fix_ptr[i]; k < op.fix_ptr[i + 1]; ++k)
      b[static_cast<Eigen::Index>(i)] -= op.fix_val[k] * std::exp(log_fixed.v[op.fix_node[k]] - out.shift);
  const Eigen::VectorXd x = ldlt.solve(b);
  out.log_u = ScalarField(op.grid, 0.0);
  for (std::size_t k = 0; k < g.size(); ++k)
    if (g.active(k) && op.slot[k] < 0) out.log_u.v[k] = log_fixed.v[k];
  for (std::size_t i = 0; i < n; ++i) {
    const double xi = x[static_cast<Eigen::Index>(i)];
    if (xi < 0) throw NumericalFailure("log-scaled solve produced a negative value");
    out.log_u.v[op.node[i]] = std::log(xi) + out.shift;  // -inf on underflow
  }
  return out;
}

} // namespace spikelab
