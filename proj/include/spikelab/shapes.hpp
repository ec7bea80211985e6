#pragma once

#include <cmath>
#include <numbers>
#include <vector>

#include "errors.hpp"
#include "geometry.hpp"

namespace spikelab {

namespace detail {

inline bool polygon_contains(const std::vector<Point>& v, Point p) {
  bool in = false;
  const std::size_t n = v.size();
  for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
    const Point a = v[i], b = v[j];
    if ((a.y > p.y) != (b.y > p.y) && p.x < (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x) in = !in;
  }
  return in;
}

inline BBox polygon_bbox(const std::vector<Point>& v) {
  BBox b{v[0].x, v[0].y, v[0].x, v[0].y};
  for (const Point& q : v) {
    b.xmin = std::min(b.xmin, q.x), b.xmax = std::max(b.xmax, q.x);
    b.ymin = std::min(b.ymin, q.y), b.ymax = std::max(b.ymax, q.y);
  }
  return b;
}

} // namespace detail

// Disc with a single boundary kind (pure Neumann controls).
struct DiscShape {
  Point c{0, 0};
  double R = 1;
  BoundaryKind kind = BoundaryKind::Neumann;

  bool contains(Point p) const { return dist(p, c) < R; }
  BoundaryHit nearest_boundary(Point p) const {
    const Point d = p - c;
    const double r = norm(d);
    const Point q = r > 0 ? c + (R / r) * d : c + Point{R, 0};
    return {q, std::abs(R - r), kind, EdgeTag::Closure};
  }
  BBox bbox() const { return {c.x - R, c.y - R, c.x + R, c.y + R}; }
  double curvature() const { return 1.0 / R; }
};

// Dilated local model of the mixed problem, centred at the peak Q = origin.
// The Neumann boundary is the x-axis up to the vertex V = (side * d, 0); the Dirichlet
// boundary is the ray from V making the opening angle alpha with the Neumann ray,
// closed by a Dirichlet arc of radius R_arc about V. side = -1 is the mirror image.
class MixedWedgeModel {
 public:
  static constexpr int kArcSegments = 512;

  MixedWedgeModel(double alpha, double d, double R_arc, int side = 1, bool neumann_ray = false)
      : alpha_(alpha), d_(d), side_(side) {
    if (!(alpha > 0 && alpha < 2 * std::numbers::pi)) throw ParameterError("alpha must lie in (0, 2pi)");
    if (!(d > 0)) throw ParameterError("peak distance must be positive");
    if (!(R_arc > d)) throw ParameterError("arc radius must exceed d");
    if (side != 1 && side != -1) throw ParameterError("side must be +1 or -1");
    // polar angles about V (side = +1): Neumann ray at pi, Dirichlet ray at pi - alpha
    const double pi = std::numbers::pi;
    const Point V{d, 0};
    poly_.v.push_back(V);
    poly_.tag.push_back(neumann_ray ? EdgeTag::NeumannFlat : EdgeTag::DirichletUp);
    poly_.kind.push_back(neumann_ray ? BoundaryKind::Neumann : BoundaryKind::Dirichlet);
    for (int k = 0; k <= kArcSegments; ++k) {
      const double t = (pi - alpha) + alpha * k / kArcSegments;
      poly_.v.push_back(k == kArcSegments ? Point{d - R_arc, 0.0}
                                          : V + Point{R_arc * std::cos(t), R_arc * std::sin(t)});
      if (k < kArcSegments) {
        poly_.tag.push_back(EdgeTag::Closure);
        poly_.kind.push_back(BoundaryKind::Dirichlet);
      }
    }
    poly_.tag.push_back(EdgeTag::NeumannFlat);
    poly_.kind.push_back(BoundaryKind::Neumann);
    if (side < 0)
      for (auto& q : poly_.v) q.x = -q.x;
    R_inner_ = R_arc * std::cos(std::numbers::pi / kArcSegments) * (1 - 1e-12);
  }

  double alpha() const { return alpha_; }
  double d() const { return d_; }
  int side() const { return side_; }
  Point vertex() const { return {side_ * d_, 0.0}; }
  const TaggedPolygon& polygon() const { return poly_; }

  bool contains(Point p) const {
    const double x = side_ * p.x - d_, y = p.y;
    const double r = std::hypot(x, y);
    if (!(r > 0)) return false;
    // clockwise angle from the Neumann ray
    double phi = std::numbers::pi - std::atan2(y, x);
    if (phi >= 2 * std::numbers::pi) phi -= 2 * std::numbers::pi;
    if (!(phi > 0 && phi < alpha_)) return false;
    if (r < R_inner_) return true;
    return detail::polygon_contains(poly_.v, p);
  }
  BoundaryHit nearest_boundary(Point p) const { return poly_.nearest(p); }
  BBox bbox() const { return detail::polygon_bbox(poly_.v); }

 private:
  double alpha_, d_;
  int side_;
  double R_inner_ = 0;  // radius of the circle inscribed in the arc polygon
  TaggedPolygon poly_;
};

// Keyhole family on the ellipse x^2/a^2 + y^2/b^2 < 1, one Neumann arc meeting a
// Dirichlet piece at the two corners Gamma = (+-x_c, y_c) with opening angle alpha.
//   acute  (alpha < pi/2):       cap above the chord y = y_c
//   obtuse (pi/2 <= alpha < pi): ellipse left of the chord x = x_c (corners (x_c, +-y_c))
//   reflex (pi < alpha < 3pi/2): ellipse plus a slot |x| < x_c capped at y = b + lid
// The corner parameter t solves (b/a) cot t = tan(theta), theta the angle between the
// ellipse tangent and the Dirichlet piece.
class Keyhole {
 public:
  static constexpr int kEllipseSegments = 8192;

  explicit Keyhole(double alpha, double a = 2.0, double b = 1.0, double lid = 0.5) : alpha_(alpha), a_(a), b_(b) {
    const double pi = std::numbers::pi;
    if (!(a > 0 && b > 0)) throw ParameterError("ellipse axes must be positive");
    double theta;
    if (alpha > 0 && alpha < pi / 2) {
      regime_ = Regime::Acute;
      theta = alpha;
    } else if (alpha >= pi / 2 && alpha < pi) {
      regime_ = Regime::ObtuseFlat;
      theta = alpha - pi / 2;
    } else if (alpha > pi && alpha < 1.5 * pi) {
      regime_ = Regime::Reflex;
      theta = 1.5 * pi - alpha;
    } else {
      throw ParameterError("keyhole opening angle must lie in (0, pi) or (pi, 3pi/2)");
    }
    // theta = 0 puts the corner on the minor axis
    t_ = std::atan2(b, a * std::tan(theta));
    if (regime_ == Regime::Reflex && theta == 0) throw ParameterError("reflex keyhole needs alpha < 3pi/2");
    xc_ = a * std::cos(t_);
    yc_ = b * std::sin(t_);
    top_ = b + lid;
    build();
  }

  Regime regime() const { return regime_; }
  double alpha() const { return alpha_; }
  double corner_parameter() const { return t_; }
  // Gamma points; the first is the one peaks are traced against
  std::vector<Point> gamma() const {
    if (regime_ == Regime::ObtuseFlat) return {{xc_, yc_}, {xc_, -yc_}};
    return {{xc_, yc_}, {-xc_, yc_}};
  }
  double dist_to_gamma(Point p) const {
    double m = INFINITY;
    for (const Point& g : gamma()) m = std::min(m, dist(p, g));
    return m;
  }
  Point ellipse_point(double t) const { return {a_ * std::cos(t), b_ * std::sin(t)}; }
  double curvature(double t) const {
    const double s = std::sin(t), c = std::cos(t);
    return a_ * b_ / std::pow(a_ * a_ * s * s + b_ * b_ * c * c, 1.5);
  }
  // parameter range of the Neumann arc adjacent to the first Gamma point, oriented away from it
  std::pair<double, double> neumann_arc() const {
    const double pi = std::numbers::pi;
    switch (regime_) {
      case Regime::Acute: return {t_, pi - t_};
      case Regime::ObtuseFlat: return {t_, 2 * pi - t_};
      default: return {t_, -pi - t_};
    }
  }
  // point on the Neumann arc at Euclidean distance s from the first Gamma point
  Point neumann_point_at(double s) const {
    const auto [t0, t1] = neumann_arc();
    const Point g = gamma().front();
    double lo = t0, hi = t0 + 0.5 * (t1 - t0);
    if (!(dist(ellipse_point(hi), g) > s)) throw ParameterError("distance exceeds the Neumann arc");
    for (int it = 0; it < 200; ++it) {
      const double mid = 0.5 * (lo + hi);
      (dist(ellipse_point(mid), g) < s ? lo : hi) = mid;
    }
    return ellipse_point(0.5 * (lo + hi));
  }
  double parameter_of(Point p) const { return std::atan2(p.y / b_, p.x / a_); }

  bool contains(Point p) const {
    const double e = p.x * p.x / (a_ * a_) + p.y * p.y / (b_ * b_);
    switch (regime_) {
      case Regime::Acute: return e < 1 && p.y > yc_;
      case Regime::ObtuseFlat: return e < 1 && p.x < xc_;
      default: return e < 1 || (std::abs(p.x) < xc_ && p.y > 0 && p.y < top_);
    }
  }
  BoundaryHit nearest_boundary(Point p) const { return poly_.nearest(p); }
  BBox bbox() const { return detail::polygon_bbox(poly_.v); }
  const TaggedPolygon& polygon() const { return poly_; }

 private:
  void add(Point p, BoundaryKind k, EdgeTag tag) {
    poly_.v.push_back(p);
    poly_.kind.push_back(k);
    poly_.tag.push_back(tag);
  }

  // ellipse arc from t0 to t1 as Neumann edges; the end point is left to the next piece
  void arc(double t0, double t1) {
    const int n = std::max(8, static_cast<int>(std::ceil(kEllipseSegments * std::abs(t1 - t0) / (2 * std::numbers::pi))));
    for (int k = 0; k < n; ++k) add(ellipse_point(t0 + (t1 - t0) * k / n), BoundaryKind::Neumann, EdgeTag::NeumannFlat);
  }

  void build() {
    const double pi = std::numbers::pi;
    const auto D = BoundaryKind::Dirichlet;
    switch (regime_) {
      case Regime::Acute:
        arc(t_, pi - t_);
        add({-xc_, yc_}, D, EdgeTag::DirichletDown);
        break;
      case Regime::ObtuseFlat:
        arc(t_, 2 * pi - t_);
        add({xc_, -yc_}, D, EdgeTag::DirichletUp);
        break;
      default:
        arc(pi - t_, 2 * pi + t_);
        add({xc_, yc_}, D, EdgeTag::DirichletUp);
        add({xc_, top_}, D, EdgeTag::Closure);
        add({-xc_, top_}, D, EdgeTag::DirichletDown);  // closes onto the arc start (-x_c, y_c)
        break;
    }
  }

  double alpha_, a_, b_;
  Regime regime_ = Regime::Acute;
  double t_ = 0, xc_ = 0, yc_ = 0, top_ = 0;
  TaggedPolygon poly_;
};

// A shape restricted to the open ball of radius rho about c; the cut is Neumann.
template <class Shape>
struct Cropped {
  Shape shape;
  Point c;
  double rho = 1;

  bool contains(Point p) const { return dist(p, c) < rho && shape.contains(p); }
  BoundaryHit nearest_boundary(Point p) const {
    const BoundaryHit a = shape.nearest_boundary(p);
    const BoundaryHit b = DiscShape{c, rho, BoundaryKind::Neumann}.nearest_boundary(p);
    // only the part of each boundary that bounds the intersection counts
    const bool a_ok = dist(a.point, c) <= rho, b_ok = shape.contains(b.point);
    if (a_ok && (!b_ok || a.distance <= b.distance)) return a;
    if (b_ok) return b;
    return a.distance <= b.distance ? a : b;
  }
  BBox bbox() const {
    const BBox s = shape.bbox();
    return {std::max(s.xmin, c.x - rho), std::max(s.ymin, c.y - rho), std::min(s.xmax, c.x + rho),
            std::min(s.ymax, c.y + rho)};
  }
};

} // namespace spikelab
