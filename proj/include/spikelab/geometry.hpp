#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <vector>

#include "errors.hpp"

namespace spikelab {

struct Point {
  double x = 0.0;  // x_1
  double y = 0.0;  // x_n
};

inline Point operator+(Point a, Point b) { return {a.x + b.x, a.y + b.y}; }
inline Point operator-(Point a, Point b) { return {a.x - b.x, a.y - b.y}; }
inline Point operator*(double s, Point a) { return {s * a.x, s * a.y}; }
inline double dot(Point a, Point b) { return a.x * b.x + a.y * b.y; }
inline double norm(Point a) { return std::hypot(a.x, a.y); }
inline double dist(Point a, Point b) { return norm(a - b); }

enum class Regime { Acute, ObtuseFlat, Reflex };
enum class EdgeTag { DirichletUp, DirichletDown, NeumannFlat, Closure };
enum class BoundaryKind { Dirichlet, Neumann };

inline const char* to_string(Regime r) {
  switch (r) {
    case Regime::Acute: return "ACUTE";
    case Regime::ObtuseFlat: return "OBTUSE_FLAT";
    default: return "REFLEX";
  }
}

inline const char* to_string(EdgeTag t) {
  switch (t) {
    case EdgeTag::DirichletUp: return "DIRICHLET_UP";
    case EdgeTag::DirichletDown: return "DIRICHLET_DOWN";
    case EdgeTag::NeumannFlat: return "NEUMANN_FLAT";
    default: return "CLOSURE";
  }
}

struct BoundaryHit {
  Point point;
  double distance = 0.0;
  BoundaryKind kind = BoundaryKind::Dirichlet;
  EdgeTag tag = EdgeTag::Closure;
};

struct BBox {
  double xmin, ymin, xmax, ymax;
};

inline Regime regime_of(double alpha) {
  if (!(alpha > 0 && alpha < 2 * std::numbers::pi)) throw ParameterError("alpha must lie in (0, 2pi)");
  if (alpha < std::numbers::pi / 2) return Regime::Acute;
  if (alpha <= std::numbers::pi) return Regime::ObtuseFlat;
  return Regime::Reflex;
}

// Closest point on segment [a, b].
inline Point project_segment(Point p, Point a, Point b) {
  const Point e = b - a;
  const double L2 = dot(e, e);
  if (L2 == 0.0) return a;
  const double t = std::clamp(dot(p - a, e) / L2, 0.0, 1.0);
  return a + t * e;
}

// Closed polygonal boundary with one tag per edge (edge i joins v[i] and v[i+1]).
struct TaggedPolygon {
  std::vector<Point> v;
  std::vector<EdgeTag> tag;
  std::vector<BoundaryKind> kind;

  std::size_t edges() const { return v.size(); }
  Point a(std::size_t i) const { return v[i]; }
  Point b(std::size_t i) const { return v[(i + 1) % v.size()]; }

  double perimeter() const {
    double L = 0;
    for (std::size_t i = 0; i < edges(); ++i) L += dist(a(i), b(i));
    return L;
  }

  BoundaryHit nearest(Point p) const {
    BoundaryHit best;
    best.distance = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < edges(); ++i) {
      const Point q = project_segment(p, a(i), b(i));
      const double d = dist(p, q);
      // exact ties go to the smaller |y|, then smaller x, so mirrored queries agree
      if (d < best.distance ||
          (d == best.distance && (std::abs(q.y) < std::abs(best.point.y) ||
                                  (std::abs(q.y) == std::abs(best.point.y) && q.x < best.point.x))))
        best = {q, d, kind[i], tag[i]};
    }
    return best;
  }

  // arc-length parametrization, s taken modulo the perimeter
  Point at(double s) const {
    const double L = perimeter();
    s = std::fmod(s, L);
    if (s < 0) s += L;
    for (std::size_t i = 0; i < edges(); ++i) {
      const double l = dist(a(i), b(i));
      if (s <= l || i + 1 == edges()) return l > 0 ? a(i) + (std::min(s, l) / l) * (b(i) - a(i)) : a(i);
      s -= l;
    }
    return v.front();
  }
};

// Two-dimensional section of the scaled model domain Sigma_D.
//
// Acute and obtuse/flat: the sector of radius D with polar angle |theta| > pi - alpha,
// bounded by the Dirichlet rays x_1 sin(a) +- x_n cos(a) = 0.
// Reflex: the sector |theta| < alpha - pi, so that Q0 = (-1, 0) lies outside and the
// Dirichlet rays are the lower ray at angle alpha and its mirror image.
class WedgeDomain {
 public:
  static constexpr int kArcSegments = 256;

  WedgeDomain(double alpha, double D) : alpha_(alpha), D_(D), regime_(regime_of(alpha)) {
    if (!(D > 1)) throw ParameterError("D must exceed 1");
    const double pi = std::numbers::pi;
    center_ = regime_ == Regime::Reflex ? 0.0 : pi;
    half_ = regime_ == Regime::Reflex ? alpha - pi : alpha;
    q0_ = {-1.0, 0.0};
    // reflection across the line with unit normal (s, c) and its mirror
    q1_ = {-std::cos(2 * alpha), std::sin(2 * alpha)};
    q2_ = {q1_.x, -q1_.y};

    const double a0 = center_ - half_, a1 = center_ + half_;
    Point first = {D * std::cos(a0), D * std::sin(a0)};
    poly_.v.push_back({0.0, 0.0});
    poly_.v.push_back(first);
    // arc vertex k is the exact mirror image of vertex kArcSegments - k
    for (int k = 1; k <= kArcSegments; ++k) {
      if (2 * k > kArcSegments) {
        const Point m = poly_.v[1 + kArcSegments - k];
        poly_.v.push_back({m.x, -m.y});
        continue;
      }
      const double t = a0 + (a1 - a0) * k / kArcSegments;
      poly_.v.push_back({D * std::cos(t), 2 * k == kArcSegments ? 0.0 : D * std::sin(t)});
    }
    // edge tags: vertex->first ray, arc, last ray->vertex
    const bool reflex = regime_ == Regime::Reflex;
    poly_.tag.push_back(reflex ? EdgeTag::DirichletDown : EdgeTag::DirichletUp);
    for (int k = 0; k < kArcSegments; ++k) poly_.tag.push_back(EdgeTag::Closure);
    poly_.tag.push_back(reflex ? EdgeTag::DirichletUp : EdgeTag::DirichletDown);
    poly_.kind.assign(poly_.tag.size(), BoundaryKind::Dirichlet);
  }

  double alpha() const { return alpha_; }
  double D() const { return D_; }
  Regime regime() const { return regime_; }
  Point q0() const { return q0_; }
  Point q1() const { return q1_; }
  Point q2() const { return q2_; }
  const TaggedPolygon& polygon() const { return poly_; }

  BBox bbox() const {
    BBox b{0, 0, 0, 0};
    for (const Point& p : poly_.v) {
      b.xmin = std::min(b.xmin, p.x), b.xmax = std::max(b.xmax, p.x);
      b.ymin = std::min(b.ymin, p.y), b.ymax = std::max(b.ymax, p.y);
    }
    return b;
  }

  // strict interior of the polygon
  bool contains(Point p) const {
    p.y = std::abs(p.y);  // the sector is symmetric; keeps the test exactly even
    const double r = norm(p);
    if (r == 0.0) return false;
    const double delta = angle_offset(p);
    if (!(std::abs(delta) < half_)) return false;
    const double step = 2 * half_ / kArcSegments;
    const int k = std::clamp(static_cast<int>((delta + half_) / step), 0, kArcSegments - 1);
    const double mid = -half_ + (k + 0.5) * step;
    const double r_edge = D_ * std::cos(0.5 * step) / std::cos(delta - mid);
    return r < r_edge;
  }

  BoundaryHit nearest_boundary(Point p) const { return poly_.nearest(p); }

  bool in_closure(Point p, double tol = 1e-9) const {
    return contains(p) || nearest_boundary(p).distance <= tol;
  }

  double source_distance() const { return nearest_boundary(q0_).distance; }

  // lower bound asserted for Phi^d: sin(alpha) for acute angles, 1 otherwise
  double phi_lower_bound() const { return regime_ == Regime::Acute ? std::sin(alpha_) : 1.0; }

 private:
  double angle_offset(Point p) const {
    double d = std::atan2(p.y, p.x) - center_;
    while (d <= -std::numbers::pi) d += 2 * std::numbers::pi;
    while (d > std::numbers::pi) d -= 2 * std::numbers::pi;
    return d;
  }

  double alpha_, D_;
  Regime regime_;
  double center_ = 0, half_ = 0;
  Point q0_, q1_, q2_;
  TaggedPolygon poly_;
};

inline WedgeDomain build_domain(double alpha, double D) { return WedgeDomain(alpha, D); }

// Mirror images of Q0 across the two Dirichlet lines.
inline std::pair<Point, Point> reflect_source(double alpha) {
  if (regime_of(alpha) != Regime::Acute) throw RegimeError("reflected sources are defined for acute angles only");
  const Point n{std::sin(alpha), std::cos(alpha)};
  const Point q0{-1.0, 0.0};
  const Point q1 = q0 - (2 * dot(q0, n)) * n;
  return {q1, {q1.x, -q1.y}};
}

// Vanishing-viscosity limit of Phi^d on the window B_{D/4}(0).
inline double limit_profile(Point x, const WedgeDomain& dom) {
  if (!dom.in_closure(x)) throw DomainError("point outside the closure of Sigma_D");
  switch (dom.regime()) {
    case Regime::Acute:
      return std::min(dist(x, dom.q1()), dist(x, dom.q2()));
    case Regime::ObtuseFlat: {
      // reflected path through the nearer Dirichlet ray while it is visible,
      // otherwise around the vertex
      const double theta = std::atan2(std::abs(x.y), x.x);
      if (theta <= 2 * (std::numbers::pi - dom.alpha()) + 1e-15)
        return dist(x, x.y >= 0 ? dom.q1() : dom.q2());
      return 1.0 + norm(x);
    }
    default:
      return dist(x, dom.q0());
  }
}

inline double boundary_infimum_oracle(Point x, const WedgeDomain& dom, int m) {
  if (m < 1000) throw ParameterError("boundary oracle needs at least 1000 samples");
  const TaggedPolygon& P = dom.polygon();
  const Point q0 = dom.q0();
  const double L = P.perimeter();
  auto f = [&](double s) {
    const Point z = P.at(s);
    return dist(x, z) + dist(z, q0);
  };
  double best = std::numeric_limits<double>::infinity();
  int kbest = 0;
  for (int k = 0; k < m; ++k) {
    const double v = f(L * k / m);
    if (v < best) best = v, kbest = k;
  }
  for (const Point& z : P.v) best = std::min(best, dist(x, z) + dist(z, q0));
  // golden-section refinement on the two neighbouring sample intervals
  const double gr = 0.5 * (std::sqrt(5.0) - 1.0);
  double lo = L * (kbest - 1) / m, hi = L * (kbest + 1) / m;
  double c = hi - gr * (hi - lo), d = lo + gr * (hi - lo);
  double fc = f(c), fd = f(d);
  for (int it = 0; it < 200 && hi - lo > 1e-13 * L; ++it) {
    if (fc < fd) {
      hi = d, d = c, fd = fc;
      c = hi - gr * (hi - lo), fc = f(c);
    } else {
      lo = c, c = d, fc = fd;
      d = lo + gr * (hi - lo), fd = f(d);
    }
  }
  return std::min({best, fc, fd});
}

struct Minimizer {
  Point z;
  double stationarity = 0.0;  // d/dtau of |x - z| + |z - Q0| along the Dirichlet line
};

// Closed-form minimizer of |x - z| + |z - Q0| over the upper Dirichlet line, written
// with s = sin(alpha), c = cos(alpha) instead of tan(alpha).
inline Minimizer minimizer_point(Point x, double alpha) {
  if (regime_of(alpha) != Regime::Acute) throw RegimeError("minimizer formulas hold for acute angles only");
  if (x.y < 0) throw DomainError("minimizer formulas need x_n >= 0");
  const double s = std::sin(alpha), c = std::cos(alpha);
  if (s * x.x + c * x.y > 0) throw DomainError("x lies across the Dirichlet line from Q0");
  const double den = s * x.x + c * x.y - s;
  if (std::abs(den) < 1e-12) throw ParameterError("degenerate configuration: denominator vanishes");
  const double s2 = std::sin(2 * alpha), c2 = std::cos(2 * alpha);
  Minimizer m;
  m.z = {c * (-s2 * x.x - c2 * x.y) / den, (2 * s * s * c * x.x + s * c2 * x.y) / den};
  const Point e{-c, s};
  const Point a = m.z - x, b = m.z - Point{-1.0, 0.0};
  const double na = norm(a);
  m.stationarity = (na > 1e-12 ? dot(e, a) / na : 0.0) + dot(e, b) / norm(b);
  return m;
}

struct EikonalReport {
  int tested = 0;
  double max_deviation = 0.0;
  bool pass = true;
};

inline EikonalReport eikonal_gradient_check(const WedgeDomain& dom, const std::vector<Point>& pts,
                                            double step = 1e-5) {
  EikonalReport rep;
  for (const Point& x : pts) {
    if (!dom.contains(x) || dom.nearest_boundary(x).distance < 1e-2)
      throw PreconditionViolation("eikonal check point too close to the boundary");
    if (dom.regime() == Regime::Acute && std::abs(x.y) < 1e-2)
      throw PreconditionViolation("eikonal check point on the ridge x_n = 0");
    if (dom.regime() == Regime::Reflex && dist(x, dom.q0()) < 1e-2)
      throw PreconditionViolation("eikonal check point at the source");
    const double gx = (limit_profile({x.x + step, x.y}, dom) - limit_profile({x.x - step, x.y}, dom)) / (2 * step);
    const double gy = (limit_profile({x.x, x.y + step}, dom) - limit_profile({x.x, x.y - step}, dom)) / (2 * step);
    const double dev = std::abs(std::hypot(gx, gy) - 1.0);
    rep.max_deviation = std::max(rep.max_deviation, dev);
    ++rep.tested;
  }
  rep.pass = rep.max_deviation <= 1e-4;
  return rep;
}

// Compact window B_{D/4}(0) intersected with {dist to boundary >= margin}.
inline bool in_window(const WedgeDomain& dom, Point x, double margin = 0.1) {
  return norm(x) <= dom.D() / 4 && dom.contains(x) && dom.nearest_boundary(x).distance >= margin;
}

} // namespace spikelab
