// Acceptance suite: one PASS/FAIL line per criterion, followed by the measured values.
// Exit status is nonzero when any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <spikelab/geometry.hpp>
#include <spikelab/groundstate.hpp>
#include <spikelab/projection.hpp>
#include <spikelab/solver.hpp>
#include <spikelab/spike.hpp>

using namespace spikelab;
using std::numbers::pi;

namespace {

struct Verdict {
  bool pass = true;
  std::vector<std::string> lines;

  static std::string format(const char* fmt, auto... args) {
    if constexpr (sizeof...(args) == 0) {
      return fmt;
    } else {
      char buf[512];
      std::snprintf(buf, sizeof buf, fmt, args...);
      return buf;
    }
  }
  void note(const char* fmt, auto... args) { lines.push_back(format(fmt, args...)); }
  void require(bool ok, const char* fmt, auto... args) {
    pass = pass && ok;
    lines.push_back(std::string(ok ? "ok    " : "MISS  ") + format(fmt, args...));
  }
};

int failures = 0;

void criterion(int k, const char* title, const std::function<void(Verdict&)>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Verdict v;
  try {
    body(v);
  } catch (const std::exception& e) {
    v.pass = false;
    v.note("exception: %s", e.what());
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("C%-2d %s  %s  (%.1f s)\n", k, v.pass ? "PASS" : "FAIL", title, secs);
  for (const auto& l : v.lines) std::printf("      %s\n", l.c_str());
  std::fflush(stdout);
  failures += !v.pass;
}

const GroundState& gs2() {
  static const GroundState g = solve_ground_state(2, 3.0);
  return g;
}

std::vector<Point> window_points(const WedgeDomain& dom, int count, unsigned seed, double margin) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> U(-dom.D() / 4, dom.D() / 4);
  std::vector<Point> pts;
  while (static_cast<int>(pts.size()) < count) {
    const Point x{U(rng), U(rng)};
    if (in_window(dom, x, margin)) pts.push_back(x);
  }
  return pts;
}

const std::vector<double> kScales = {10.0, 20.0, 40.0};

// viscosity-limit studies shared by criteria 2, 3, 4 and 11
const ConvergenceStudy& study(double alpha) {
  static std::vector<std::pair<double, ConvergenceStudy>> cache;
  for (const auto& [a, s] : cache)
    if (a == alpha) return s;
  cache.emplace_back(alpha, convergence_study(build_domain(alpha, 8.0), gs2(), kScales));
  return cache.back().second;
}

void viscosity(Verdict& v, double alpha) {
  const ConvergenceStudy& s = study(alpha);
  for (std::size_t i = 0; i < s.rows.size(); ++i) {
    const auto& r = s.rows[i];
    v.note("d = %2.0f  h = %.5f  sup |Phi - limit| = %.4f", r.d, r.h, r.sup_error);
    if (i > 0)
      v.require(r.sup_error <= 1.1 * s.rows[i - 1].sup_error, "non-increasing with 10%% slack: %.4f <= %.4f", r.sup_error,
                1.1 * s.rows[i - 1].sup_error);
  }
  v.require(s.rows.back().sup_error <= 0.15, "d = 40: %.4f <= 0.15", s.rows.back().sup_error);
}

} // namespace

int main() {
  std::printf("spikelab acceptance suite\n\n");

  criterion(1, "ground state closed form (n = 1)", [](Verdict& v) {
    const auto t0 = std::chrono::steady_clock::now();
    for (double p : {2.0, 3.0}) {
      const GroundState g = solve_ground_state(1, p);
      const double A = std::pow((p + 1) / 2, 1 / (p - 1));
      double err = 0;
      for (std::size_t i = 0; i < g.u.size(); ++i)
        err = std::max(err, std::abs(g.u[i] - A * std::pow(1 / std::cosh((p - 1) * i * g.h / 2), 2 / (p - 1))));
      v.require(err <= 1e-6, "p = %.0f: sup error %.2e <= 1e-6", p, err);
      const double s = log_slope_at(g, 18.0);
      v.require(std::abs(s + 1) <= 1e-2, "p = %.0f: U'/U(18) = %.6f within 1e-2 of -1", p, s);
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    v.require(secs < 1.0, "runtime %.3f s < 1 s", secs);
  });

  criterion(2, "viscosity limit, alpha = pi/4, D = 8", [](Verdict& v) { viscosity(v, pi / 4); });
  criterion(3, "viscosity limit, alpha = 3pi/2, D = 8", [](Verdict& v) { viscosity(v, 3 * pi / 2); });

  criterion(4, "lower bounds on Phi^d, every solve", [](Verdict& v) {
    std::vector<std::string> misses;
    for (double alpha : {pi / 6, pi / 4, pi / 3, 3 * pi / 4, 3 * pi / 2}) {
      const WedgeDomain dom = build_domain(alpha, 8.0);
      const double lb = dom.phi_lower_bound();
      for (const auto& r : study(alpha).rows) {
        const bool ok = r.min_value > lb - r.h;
        v.require(ok, "alpha = %.4f  d = %2.0f: min Phi = %.4f > %.4f", alpha, r.d, r.min_value, lb - r.h);
        // Phi^d is smallest on the Dirichlet part, where it equals the datum -(1/d) log U(d dist)
        if (!ok)
          misses.push_back(Verdict::format("alpha = %.4f  d = %2.0f: datum at the nearest Dirichlet point %.4f", alpha, r.d,
                                           -std::log(gs2().value(r.d * lb)) / r.d));
      }
    }
    if (!misses.empty()) {
      v.note("analysis: the minimum sits on the Dirichlet part at distance s from Q0, where Phi^d = -(1/d) log U(d s)");
      v.note("  = s + (log(d s)/2 - log c)/d + o(1/d) with c = %.3f, below s while d s < c^2", gs2().c_np);
      for (const auto& m : misses) v.note("  %s", m.c_str());
    }
  });

  criterion(5, "closed form vs boundary oracle, minimizer stationarity", [](Verdict& v) {
    const int m = 2000;
    for (double alpha : {pi / 4, 3 * pi / 4, 3 * pi / 2}) {
      const WedgeDomain dom = build_domain(alpha, 8.0);
      double worst = 0;
      for (const Point& x : window_points(dom, 200, 5, 0.0))
        worst = std::max(worst, std::abs(limit_profile(x, dom) - boundary_infimum_oracle(x, dom, m)));
      v.require(worst <= 2.0 / m + 1e-6, "alpha = %.4f: max diff %.2e <= %.2e (200 points)", alpha, worst, 2.0 / m + 1e-6);
    }
    for (double alpha : {pi / 6, pi / 4, pi / 3}) {
      double stat = 0;
      for (Point x : window_points(build_domain(alpha, 8.0), 200, 6, 0.01)) {
        x.y = std::abs(x.y);
        stat = std::max(stat, std::abs(minimizer_point(x, alpha).stationarity));
      }
      v.require(stat <= 1e-8, "alpha = %.4f: minimizer stationarity %.2e <= 1e-8", alpha, stat);
    }
  });

  criterion(6, "eikonal property of the limit profile", [](Verdict& v) {
    for (double alpha : {pi / 6, pi / 4, 3 * pi / 4, pi, 3 * pi / 2}) {
      const WedgeDomain dom = build_domain(alpha, 8.0);
      std::vector<Point> pts;
      for (const Point& x : window_points(dom, 400, 7, 0.01))
        if (std::abs(x.y) >= 1e-2 && dist(x, dom.q0()) >= 1e-2) pts.push_back(x);
      const EikonalReport e = eikonal_gradient_check(dom, pts);
      v.require(e.pass, "alpha = %.4f: max ||grad| - 1| = %.2e over %d points", alpha, e.max_deviation, e.tested);
    }
  });

  criterion(7, "projection decay at d = 30", [](Verdict& v) {
    bool acute_only = true;
    for (double alpha : {pi / 4, 3 * pi / 4}) {
      const WedgeDomain dom = build_domain(alpha, 8.0);
      const XiRate r = xi_d_rate(dom, gs2(), 30.0, 0.1);
      const bool a = std::abs(r.xi_rate - 1) <= 0.1, b = r.rate >= 0.85;
      if ((!a || !b) && dom.regime() != Regime::Acute) acute_only = false;
      v.require(a, "alpha = %.4f: -(1/d) log ||Xi|| = %.4f within 0.1 of 1", alpha, r.xi_rate);
      v.require(b, "alpha = %.4f: d-derivative rate %.4f >= 0.85", alpha, r.rate);
      if (dom.regime() == Regime::Acute)
        v.note("alpha = %.4f: dist(Q0, Dirichlet part) = sin(alpha) = %.4f", alpha, std::sin(alpha));
    }
    if (!v.pass && acute_only)
      v.note("analysis: for acute alpha the Dirichlet data U(d|x - Q0|) is of size exp(-d sin(alpha)), so the norm "
             "decays at rate sin(alpha) rather than 1; the obtuse case, where the distance is 1, meets both bounds");
  });

  criterion(8, "energy interaction rate", [](Verdict& v) {
    struct Case {
      double alpha, expected;
      std::vector<double> d;
    };
    const std::vector<Case> cases = {{pi / 6, -(1 + std::numbers::sqrt2 * std::sin(pi / 6)), {4, 5, 6, 7, 8, 9, 10, 24}},
                                     {3 * pi / 4, -2.0, {4, 5, 6, 7, 8, 9, 10, 24}}};
    for (const Case& c : cases) {
      const EnergyLandscape L = energy_landscape(c.alpha, 0.02, c.d, gs2());
      v.require(std::abs(L.fitted_rate / c.expected - 1) <= 0.1, "alpha = %.4f: fitted rate %.4f vs %.4f (10%%), r2 = %.4f",
                c.alpha, L.fitted_rate, c.expected, L.fit_r2);
      v.require(L.fit_points >= 5, "alpha = %.4f: %d fit points >= 5", c.alpha, L.fit_points);
      if (c.alpha < pi / 2)
        v.note("alpha = %.4f: -2 sin(alpha) = %.4f (twice the distance from the peak to its reflection across "
               "the Dirichlet ray, in units of d)", c.alpha, -2 * std::sin(c.alpha));
    }
  });

  criterion(9, "peak distance law on the keyhole, alpha = pi/3", [](Verdict& v) {
    const PeakTrace tr = peak_scaling_study(Keyhole(pi / 3), 3.0, {0.1, 0.05, 0.025, 0.0125}, gs2());
    for (const auto& r : tr.rows)
      v.note("eps = %.4f  %-10s dist(Q, Gamma) = %.5f  (%.3f eps|log eps|)  max u = %.4f", r.eps, r.status.c_str(),
             r.dist_gamma, r.dist_gamma / (r.eps * std::log(1 / r.eps)), r.max_u);
    v.require(tr.fitted == 4, "%d of 4 solves converged", tr.fitted);
    v.require(tr.slope >= 1.5 && tr.slope <= 2.5, "slope %.3f +- %.3f in [1.5, 2.5] (r2 = %.4f)", tr.slope,
              tr.slope_stderr, tr.r2);
  });

  criterion(10, "Neumann curvature expansion on discs", [](Verdict& v) {
    const CurvatureFit cf = neumann_curvature_fit({1.0, 2.0, 4.0, 100.0}, {0.1, 0.05}, 3.0, gs2());
    v.require(std::abs(cf.C0_fit / cf.C0_tilde - 1) <= 0.1, "C0_fit = %.4f within 10%% of %.4f", cf.C0_fit, cf.C0_tilde);
    v.require(cf.C1_fit > 0, "C1_fit = %.4f > 0 (moment constant %.4f)", cf.C1_fit, cf.C1_tilde);
    v.require(std::abs(cf.flat_ratio - 1) <= 0.02, "flat row energy / C0 = %.4f within 2%%", cf.flat_ratio);
  });

  criterion(11, "structural invariants", [](Verdict& v) {
    // mixed solves: keyhole sweep and a Neumann disc control
    int solves = 0, bad = 0;
    const auto mixed = [&](double min_interior, double trace, double e, double e0) {
      ++solves;
      bad += !(min_interior > 0 && trace == 0.0 && e <= e0 + 1e-10);
    };
    for (double eps : {0.1, 0.05}) {
      const PeakRow r = solve_peak(Keyhole(pi / 3), 3.0, eps, gs2()).row;
      if (r.status == "converged") mixed(r.min_interior, r.dirichlet_trace, r.energy, r.init_energy);
      else ++solves, ++bad;
    }
    {
      const GridPtr g = make_cut_grid(DiscShape{{0, 0}, 1.0}, 0.1 / 8, Point{1, 0});
      const MixedSolve s = solve_mixed(g, 0.1, 3.0, boundary_ansatz(g, {1, 0}, 0.1, gs2()));
      if (s.status == NewtonStatus::Converged) mixed(s.min_interior, s.dirichlet_trace, s.energy, s.init_energy);
      else ++solves, ++bad;
    }
    v.require(bad == 0, "positivity, zero Dirichlet trace, energy descent: %d of %d solves", solves - bad, solves);

    // maximum principle and evenness of the projection
    int mp_bad = 0, even_bad = 0;
    for (double alpha : {pi / 4, pi / 3, 3 * pi / 4, pi}) {
      const WedgeDomain dom = build_domain(alpha, 4.0);
      const ProjectionResult r = solve_projection(dom, 10.0, gs2());
      const Grid2D& g = *r.grid;
      double data_max = -INFINITY, free_max = -INFINITY;
      for (std::size_t k = 0; k < g.size(); ++k) {
        if (!g.active(k)) continue;
        (g.dirichlet(k) ? data_max : free_max) = std::max(g.dirichlet(k) ? data_max : free_max, r.log_phi.v[k]);
      }
      mp_bad += !(free_max <= data_max);
      const int jc = static_cast<int>(std::lround(-g.y0 / g.h));
      double worst = 0;
      for (int j = 0; j < g.ny; ++j)
        for (int i = 0; i < g.nx; ++i) {
          const int jm = 2 * jc - j;
          if (!g.active(i, j) || jm < 0 || jm >= g.ny || !g.active(i, jm)) continue;
          worst = std::max(worst, std::abs(r.Phi_d.v[g.idx(i, j)] - r.Phi_d.v[g.idx(i, jm)]));
        }
      even_bad += !(worst < 1e-10);
    }
    v.require(mp_bad == 0, "maximum principle for the projection: %d of 4 angles", 4 - mp_bad);
    v.require(even_bad == 0, "evenness of Phi^d in x_n: %d of 4 angles", 4 - even_bad);
    for (double alpha : {pi / 3, 5 * pi / 4}) {
      const double a = assemble_approx(1, 6.0, 0.02, gs2(), alpha).energy;
      const double b = assemble_approx(-1, 6.0, 0.02, gs2(), alpha).energy;
      v.require(std::abs(a - b) <= 1e-12 * std::abs(a), "alpha = %.4f: mirrored approximate solutions, |dI| = %.1e", alpha,
                std::abs(a - b));
    }

    // cutoff plateaus and Lipschitz bound
    const CutoffSpec cut;
    std::mt19937_64 rng(2024);
    int cut_bad = 0;
    for (double d : {4.0, 8.0, 16.0}) {
      const double r_in = d * cut.D / 16, r_out = d * cut.D / 8, step = 1e-6 * r_in;
      std::uniform_real_distribution<double> rad(0, 1.2 * r_out), ang(0, 2 * pi);
      for (int s = 0; s < 10000; ++s) {
        const double r = rad(rng), t = ang(rng);
        const Point y{r * std::cos(t), r * std::sin(t)}, e{std::cos(t), std::sin(t)};
        const double c = cut.chi_D(y, d);
        const double slope = std::abs(cut.chi_D(y + step * e, d) - cut.chi_D(y - step * e, d)) / (2 * step);
        cut_bad += !(c >= 0 && c <= 1 && (r > r_in || c == 1.0) && (r < r_out || c == 0.0) &&
                     slope <= cut.chi_D_gradient_bound(d) * (1 + 1e-6));
      }
    }
    v.require(cut_bad == 0, "cutoff plateau and Lipschitz checks: %d of 30000 samples", 30000 - cut_bad);
  });

  std::printf("\n%d of 11 criteria failed\n", failures);
  return failures ? 1 : 0;
}
