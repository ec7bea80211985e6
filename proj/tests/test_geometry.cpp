#include <catch_amalgamated.hpp>

#include <numbers>
#include <random>

#include <spikelab/geometry.hpp>

using namespace spikelab;
using Catch::Approx;
constexpr double pi = std::numbers::pi;

namespace {

std::vector<Point> window_points(const WedgeDomain& dom, int count, unsigned seed, double margin = 0.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> U(-dom.D() / 4, dom.D() / 4);
  std::vector<Point> pts;
  while (static_cast<int>(pts.size()) < count) {
    const Point x{U(rng), U(rng)};
    if (norm(x) <= dom.D() / 4 && dom.contains(x) && dom.nearest_boundary(x).distance >= margin)
      pts.push_back(x);
  }
  return pts;
}

} // namespace

TEST_CASE("regimes and source distances", "[geometry]") {
  CHECK(build_domain(pi / 4, 8).regime() == Regime::Acute);
  CHECK(build_domain(pi / 2, 8).regime() == Regime::ObtuseFlat);
  CHECK(build_domain(pi, 8).regime() == Regime::ObtuseFlat);
  CHECK(build_domain(3 * pi / 2, 8).regime() == Regime::Reflex);

  CHECK(build_domain(pi / 4, 8).source_distance() == Approx(std::sin(pi / 4)).epsilon(1e-12));
  CHECK(build_domain(pi / 6, 8).source_distance() == Approx(0.5).epsilon(1e-12));
  CHECK(build_domain(3 * pi / 4, 8).source_distance() == Approx(1.0).epsilon(1e-12));
  CHECK(build_domain(pi, 8).source_distance() == Approx(1.0).epsilon(1e-12));
  CHECK(build_domain(4 * pi / 3, 8).source_distance() == Approx(1.0).epsilon(1e-12));
  CHECK(build_domain(3 * pi / 2, 8).source_distance() == Approx(1.0).epsilon(1e-12));

  CHECK_THROWS_AS(build_domain(0.0, 8), ParameterError);
  CHECK_THROWS_AS(build_domain(2 * pi, 8), ParameterError);
  CHECK_THROWS_AS(build_domain(1.0, 0.5), ParameterError);
}

TEST_CASE("flat case has the Dirichlet slit on the positive axis", "[geometry]") {
  const auto dom = build_domain(pi, 8);
  CHECK_FALSE(dom.contains({1.0, 0.0}));
  CHECK(dom.contains({1.0, 1e-6}));
  CHECK(dom.contains({-1.0, 0.0}));
  CHECK(dom.nearest_boundary({2.0, 0.5}).distance == Approx(0.5));
}

TEST_CASE("polygon symmetry and window containment", "[geometry]") {
  for (double a : {pi / 6, pi / 4, pi / 3, pi / 2, 2 * pi / 3, 3 * pi / 4, pi, 4 * pi / 3, 3 * pi / 2, 1.9 * pi}) {
    const auto dom = build_domain(a, 8);
    const auto& P = dom.polygon();
    REQUIRE(P.v.size() == P.tag.size());
    if (a <= pi) {
      // vertex list is mirrored: v[k] <-> v[N+1-k]
      const std::size_t N = P.v.size();
      for (std::size_t k = 1; k < N; ++k) {
        CHECK(P.v[k].x == Approx(P.v[N - k].x).margin(1e-12));
        CHECK(P.v[k].y == Approx(-P.v[N - k].y).margin(1e-12));
      }
    }
    // the quarter-radius window of the infinite wedge lies inside Sigma_D
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> U(-2.0, 2.0);
    for (int i = 0; i < 2000; ++i) {
      const Point x{U(rng), U(rng)};
      if (norm(x) > 2.0 || norm(x) == 0) continue;
      const double th = std::atan2(x.y, x.x);
      const bool in_wedge = a <= pi ? std::abs(th) > pi - a : std::abs(th) < a - pi;
      CHECK(dom.contains(x) == in_wedge);
    }
  }
}

TEST_CASE("reflected sources", "[geometry]") {
  auto [q1, q2] = reflect_source(pi / 4);
  CHECK(q1.x == Approx(0.0).margin(1e-15));
  CHECK(q1.y == Approx(1.0));
  CHECK(q2.y == Approx(-1.0));
  auto [r1, r2] = reflect_source(pi / 6);
  CHECK(r1.x == Approx(-0.5));
  CHECK(r1.y == Approx(std::sqrt(3.0) / 2));
  CHECK(r2.y == Approx(-std::sqrt(3.0) / 2));
  auto [s1, s2] = reflect_source(pi / 2 - 1e-9);
  CHECK(s1.x == Approx(1.0).margin(1e-8));
  CHECK(s1.y == Approx(0.0).margin(1e-8));
  (void)s2;
  CHECK_THROWS_AS(reflect_source(3 * pi / 4), RegimeError);

  // tan-based form of the paper for comparison at a generic acute angle
  const double a = 0.4, t = std::tan(a);
  auto [p1, p2] = reflect_source(a);
  CHECK(p1.x == Approx((t * t - 1) / (t * t + 1)));
  CHECK(p1.y == Approx(2 * t / (t * t + 1)));
  (void)p2;
  // Q1 is the mirror of Q0 across x_1 tan(a) + x_n = 0
  const Point mid = 0.5 * (p1 + Point{-1, 0});
  CHECK(mid.x * t + mid.y == Approx(0.0).margin(1e-14));
}

TEST_CASE("limit profile examples", "[geometry]") {
  CHECK(limit_profile({0, 0}, build_domain(pi / 4, 8)) == Approx(1.0));
  CHECK(limit_profile({0, 0}, build_domain(3 * pi / 2, 8)) == Approx(1.0));
  const auto ob = build_domain(3 * pi / 4, 8);
  // (1, 0) lies outside the 3pi/4 wedge
  CHECK_THROWS_AS(limit_profile({1.0, 0.0}, ob), DomainError);
  // a point on the upper Dirichlet ray and one on the symmetry axis
  const Point on_ray{0.5 * std::cos(pi / 4), 0.5 * std::sin(pi / 4)};
  CHECK(limit_profile(on_ray, ob) == Approx(boundary_infimum_oracle(on_ray, ob, 4000)).margin(1e-3));
  CHECK(limit_profile({-1.0, 0.0}, ob) == Approx(boundary_infimum_oracle({-1.0, 0.0}, ob, 4000)).margin(1e-3));
}

TEST_CASE("closed form agrees with the boundary infimum oracle", "[geometry]") {
  const int m = 2000;
  for (double a : {pi / 6, pi / 4, pi / 3, 2 * pi / 3, pi, 4 * pi / 3, 3 * pi / 2}) {
    const auto dom = build_domain(a, 8);
    double worst = 0;
    for (const Point& x : window_points(dom, 200, 11)) {
      worst = std::max(worst, std::abs(limit_profile(x, dom) - boundary_infimum_oracle(x, dom, m)));
    }
    INFO("alpha = " << a);
    CHECK(worst <= 2.0 / m + 1e-6);
  }
}

TEST_CASE("oracle edge cases", "[geometry]") {
  const auto dom = build_domain(pi / 4, 8);
  // next to the source the shortest broken path is twice the source distance
  CHECK(boundary_infimum_oracle({-1.0, 1e-7}, dom, 2000) == Approx(2 * dom.source_distance()).margin(1e-6));
  // boundary point: z = x is admissible
  const Point xb{-2.0 * std::cos(pi / 4), 2.0 * std::sin(pi / 4)};
  CHECK(boundary_infimum_oracle(xb, dom, 2000) == Approx(dist(xb, dom.q0())).margin(1e-9));
  CHECK(boundary_infimum_oracle({-1.0, 0.5}, dom, 2000) == Approx(dist({-1.0, 0.5}, dom.q1())).margin(1e-3));
  CHECK_THROWS_AS(boundary_infimum_oracle({0, 0}, dom, 10), ParameterError);
}

TEST_CASE("limit profile structure", "[geometry]") {
  for (double a : {pi / 6, pi / 4, pi / 3, 2 * pi / 3, 3 * pi / 4, pi, 4 * pi / 3, 3 * pi / 2}) {
    const auto dom = build_domain(a, 8);
    const auto pts = window_points(dom, 300, 5);
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const double v = limit_profile(pts[i], dom);
      CHECK(v >= dom.source_distance() - 1e-12);
      CHECK(v >= dom.phi_lower_bound() - 1e-12);
      const Point& y = pts[(i + 1) % pts.size()];
      CHECK(std::abs(v - limit_profile(y, dom)) <= dist(pts[i], y) + 1e-12);
      if (a <= pi) CHECK(limit_profile({pts[i].x, -pts[i].y}, dom) == Approx(v).epsilon(1e-14));
    }
  }
}

TEST_CASE("minimizer point", "[geometry]") {
  // x on the Dirichlet line
  const double a = pi / 6;
  const Point on{-1.3 * std::cos(a), 1.3 * std::sin(a)};
  const auto m0 = minimizer_point(on, a);
  CHECK(m0.z.x == Approx(on.x).epsilon(1e-12));
  CHECK(m0.z.y == Approx(on.y).epsilon(1e-12));

  // reflection construction at pi/4, x = (-1, 0.5): z is where [x, Q1] meets x_1 + x_n = 0
  const Point x{-1.0, 0.5};
  const auto m1 = minimizer_point(x, pi / 4);
  CHECK(std::abs(m1.stationarity) <= 1e-8);
  CHECK(m1.z.x + m1.z.y == Approx(0.0).margin(1e-14));
  const Point q1{0.0, 1.0};
  const Point e = q1 - x;
  CHECK((m1.z - x).x * e.y - (m1.z - x).y * e.x == Approx(0.0).margin(1e-14));
  // x = Q1 itself makes the denominator vanish
  CHECK_THROWS_AS(minimizer_point({0.0, 1.0}, pi / 4), ParameterError);

  // golden-section line search oracle
  const Point x3{-0.6, 0.2};
  const auto m3 = minimizer_point(x3, a);
  auto f = [&](double tau) {
    const Point z{-tau * std::cos(a), tau * std::sin(a)};
    return dist(x3, z) + dist(z, {-1, 0});
  };
  double lo = 0, hi = 10;
  const double g = 0.5 * (std::sqrt(5.0) - 1);
  for (int i = 0; i < 200; ++i) {
    const double c = hi - g * (hi - lo), d = lo + g * (hi - lo);
    (f(c) < f(d) ? hi : lo) = f(c) < f(d) ? d : c;
  }
  const double tau = 0.5 * (lo + hi);
  CHECK(m3.z.x == Approx(-tau * std::cos(a)).margin(1e-6));
  CHECK(m3.z.y == Approx(tau * std::sin(a)).margin(1e-6));
  CHECK(std::abs(m3.stationarity) <= 1e-8);

  // many window points
  const auto dom = build_domain(pi / 3, 8);
  for (Point p : window_points(dom, 200, 3, 0.01)) {
    p.y = std::abs(p.y);
    CHECK(std::abs(minimizer_point(p, pi / 3).stationarity) <= 1e-8);
  }
  CHECK_THROWS_AS(minimizer_point({0, 1}, 2.0), RegimeError);
  // the reflection formula needs x on the source side of the Dirichlet line
  CHECK_THROWS_AS(minimizer_point({0.3, 0.4}, a), DomainError);
}

TEST_CASE("eikonal gradient check", "[geometry]") {
  for (double a : {pi / 6, pi / 4, pi / 3, 2 * pi / 3, 3 * pi / 4, pi, 4 * pi / 3, 3 * pi / 2}) {
    const auto dom = build_domain(a, 8);
    std::vector<Point> pts;
    for (const Point& x : window_points(dom, 400, 9, 0.01))
      if (std::abs(x.y) >= 1e-2 && dist(x, dom.q0()) >= 1e-2) pts.push_back(x);
    const auto rep = eikonal_gradient_check(dom, pts);
    INFO("alpha = " << a);
    CHECK(rep.pass);
    CHECK(rep.tested == static_cast<int>(pts.size()));
  }
  const auto acute = build_domain(pi / 4, 8);
  CHECK_THROWS_AS(eikonal_gradient_check(acute, {{-1.0, 0.0}}), PreconditionViolation);
  CHECK_THROWS_AS(eikonal_gradient_check(acute, {{-1.0, 1.0 - 1e-3}}), PreconditionViolation);
}
