#include <catch_amalgamated.hpp>

#include <cmath>
#include <numbers>

#include <spikelab/projection.hpp>

using namespace spikelab;
using Catch::Approx;
using std::numbers::pi;

namespace {

const GroundState& gs2() {
  static const GroundState g = solve_ground_state(2, 3.0);
  return g;
}

} // namespace

TEST_CASE("boundary data and maximum principle", "[projection]") {
  const auto dom = build_domain(pi / 4, 4.0);
  const auto r = solve_projection(dom, 10.0, gs2());
  const Grid2D& g = *r.grid;
  double data_max = -INFINITY, free_max = -INFINITY;
  for (std::size_t k = 0; k < g.size(); ++k) {
    if (!g.active(k)) continue;
    REQUIRE(std::isfinite(r.log_phi.v[k]));
    if (g.dirichlet(k)) {
      REQUIRE(r.log_phi.v[k] == gs2().log_value(10.0 * dist(g.bpoint[k], dom.q0())));
      data_max = std::max(data_max, r.log_phi.v[k]);
    } else {
      free_max = std::max(free_max, r.log_phi.v[k]);
    }
  }
  CHECK(free_max <= data_max);
  // Q0 is a node of the lattice
  const double fx = (dom.q0().x - g.x0) / g.h, fy = (dom.q0().y - g.y0) / g.h;
  CHECK(std::abs(fx - std::round(fx)) < 1e-9);
  CHECK(std::abs(fy - std::round(fy)) < 1e-9);
}

TEST_CASE("lower bounds at d = 20", "[projection]") {
  const auto acute = build_domain(pi / 4, 8.0);
  const auto ra = solve_projection(acute, 20.0, gs2());
  CHECK(ra.min_value > std::sin(pi / 4));
  const auto reflex = build_domain(3 * pi / 2, 8.0);
  const auto rr = solve_projection(reflex, 20.0, gs2());
  CHECK(rr.min_value > 1.0);
}

TEST_CASE("convergence to the closed-form limit", "[projection]") {
  for (double alpha : {pi / 4, 3 * pi / 4, 3 * pi / 2}) {
    const auto dom = build_domain(alpha, 4.0);
    const auto s = convergence_study(dom, gs2(), {10.0, 15.0, 20.0});
    INFO("alpha = " << alpha);
    // reflex: the error is the offset (log(d r) - 2 log c)/(2d), which peaks near
    // d = 17 on this small window
    if (alpha < pi) CHECK(s.monotone);
    else for (const auto& row : s.rows) CHECK(row.sup_error < 0.05);
    for (const auto& row : s.rows) CHECK(row.sup_error < 0.2);
    CHECK(s.gradient_spread < 0.2);
  }
  CHECK_THROWS_AS(convergence_study(build_domain(pi / 4, 4.0), gs2(), {10.0, 20.0}), ParameterError);
  CHECK_THROWS_AS(convergence_study(build_domain(pi / 4, 4.0), gs2(), {10.0, 30.0, 20.0}), ParameterError);
}

TEST_CASE("evenness in x_n", "[projection]") {
  for (double alpha : {pi / 3, pi}) {
    const auto dom = build_domain(alpha, 4.0);
    const auto r = solve_projection(dom, 10.0, gs2());
    const Grid2D& g = *r.grid;
    const int jc = static_cast<int>(std::lround(-g.y0 / g.h));
    double worst = 0;
    for (int j = 0; j < g.ny; ++j)
      for (int i = 0; i < g.nx; ++i) {
        const int jm = 2 * jc - j;
        if (!g.active(i, j) || jm < 0 || jm >= g.ny) continue;
        REQUIRE(g.active(i, jm));
        worst = std::max(worst, std::abs(r.Phi_d.v[g.idx(i, j)] - r.Phi_d.v[g.idx(i, jm)]));
      }
    CHECK(worst < 1e-10);
  }
}

TEST_CASE("dilated field", "[projection]") {
  const auto dom = build_domain(3 * pi / 4, 4.0);
  const double d = 12.0;
  const auto r = solve_projection(dom, d, gs2());
  const auto xi = xi_field(r, dom);
  const Grid2D& g = *xi.grid;
  CHECK(g.h == Approx(d * r.h));
  for (std::size_t k = 0; k < g.size(); ++k)
    if (g.dirichlet(k)) REQUIRE(xi.v[k] == Approx(gs2().value(norm(g.bpoint[k]))).epsilon(1e-12));
  // the node of Q0 maps to the origin
  const std::size_t kq = r.grid->idx(static_cast<int>(std::lround((dom.q0().x - r.grid->x0) / r.h)),
                                     static_cast<int>(std::lround((dom.q0().y - r.grid->y0) / r.h)));
  CHECK(norm(g.point(kq)) < 1e-9);
  double xmax = 0;
  for (std::size_t k = 0; k < g.size(); ++k)
    if (g.active(k)) xmax = std::max(xmax, xi.v[k]);
  CHECK(xi_residual(xi) <= 10 * g.h * g.h * xmax);
  CHECK(r.Xi_log_norm > 0.8);
  CHECK(r.Xi_log_norm < 1.2);
}

TEST_CASE("boundary datum error decays like log d / d", "[projection]") {
  const auto dom = build_domain(pi / 4, 8.0);
  double prev = INFINITY;
  for (double d : {10.0, 20.0, 40.0, 80.0}) {
    const double e = boundary_datum_error(dom, gs2(), d);
    CHECK(e < prev);
    CHECK(e * d / std::log(d) < 1.0);
    prev = e;
  }
}

TEST_CASE("d-derivative of the projection", "[projection]") {
  const auto dom = build_domain(3 * pi / 4, 4.0);
  const auto a = xi_d_rate(dom, gs2(), 12.0, 0.1);
  const auto b = xi_d_rate(dom, gs2(), 12.0, 0.05);
  CHECK(std::abs(a.rate - b.rate) < 0.01 * a.rate);
  CHECK(a.rate > 0.8);
  CHECK_THROWS_AS(xi_d_rate(dom, gs2(), 12.0, 0.2), ParameterError);
}

TEST_CASE("projection parameter errors", "[projection]") {
  const auto dom = build_domain(pi / 4, 4.0);
  CHECK_THROWS_AS(solve_projection(dom, 4.0, gs2()), ParameterError);
  CHECK_THROWS_AS(solve_projection(dom, 10.0, gs2(), 0.05), ParameterError);
  CHECK_THROWS_AS(solve_projection(dom, 10.0, solve_ground_state(3, 3.0)), ParameterError);
  CHECK(projection_spacing(10) == 0.02);
  CHECK(projection_spacing(40) == 1.0 / 160);
}
