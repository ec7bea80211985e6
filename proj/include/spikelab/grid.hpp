#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "errors.hpp"
#include "geometry.hpp"

namespace spikelab {

enum class NodeKind : std::uint8_t { Exterior, Interior, Boundary };

// Uniform node grid; node (i, j) sits at (x0 + i h, y0 + j h).
struct Grid2D {
  double x0 = 0, y0 = 0, h = 1;
  int nx = 0, ny = 0;
  std::vector<NodeKind> mask;
  std::vector<BoundaryKind> tag;   // boundary nodes only
  std::vector<Point> bpoint;       // nearest boundary point (boundary nodes only)
  std::vector<double> weight;      // quarter of the summed fractions of the four surrounding cells
  std::vector<double> frac;        // per cell, indexed by its lower-left node: area fraction in use

  std::size_t size() const { return mask.size(); }
  std::size_t idx(int i, int j) const { return static_cast<std::size_t>(j) * nx + i; }
  int ix(std::size_t k) const { return static_cast<int>(k % nx); }
  int jy(std::size_t k) const { return static_cast<int>(k / nx); }
  Point point(std::size_t k) const { return {x0 + ix(k) * h, y0 + jy(k) * h}; }
  Point point(int i, int j) const { return {x0 + i * h, y0 + j * h}; }
  BBox bbox() const { return {x0, y0, x0 + (nx - 1) * h, y0 + (ny - 1) * h}; }

  bool active(std::size_t k) const { return mask[k] != NodeKind::Exterior; }
  bool active(int i, int j) const {
    return i >= 0 && j >= 0 && i < nx && j < ny && mask[idx(i, j)] != NodeKind::Exterior;
  }
  bool dirichlet(std::size_t k) const {
    return mask[k] == NodeKind::Boundary && tag[k] == BoundaryKind::Dirichlet;
  }
  bool neumann(std::size_t k) const {
    return mask[k] == NodeKind::Boundary && tag[k] == BoundaryKind::Neumann;
  }
  bool is_free(std::size_t k) const { return active(k) && !dirichlet(k); }

  // weight of cell (i, j); zero outside the lattice
  double cell_weight(int i, int j) const {
    return i >= 0 && j >= 0 && i + 1 < nx && j + 1 < ny ? frac[idx(i, j)] : 0.0;
  }

  std::size_t count(NodeKind kind) const {
    std::size_t c = 0;
    for (auto m : mask) c += m == kind;
    return c;
  }
};

using GridPtr = std::shared_ptr<const Grid2D>;

namespace detail {

// area fraction of {f < 0} over a triangle with linear f
inline double negative_fraction(double f1, double f2, double f3) {
  const int neg = (f1 < 0) + (f2 < 0) + (f3 < 0);
  if (neg == 0) return 0.0;
  if (neg == 3) return 1.0;
  // rotate so that f1 is the vertex alone on its side
  if (neg == 1) {
    if (f2 < 0) std::swap(f1, f2);
    else if (f3 < 0) std::swap(f1, f3);
    return f1 * f1 / ((f1 - f2) * (f1 - f3));
  }
  if (!(f2 < 0)) std::swap(f1, f2);
  else if (!(f3 < 0)) std::swap(f1, f3);
  return 1.0 - f1 * f1 / ((f1 - f2) * (f1 - f3));
}

template <class Shape>
GridPtr build_grid(const Shape& shape, double h, Point anchor, double on_tol, bool cut_cells) {
  if (!(h > 0)) throw ParameterError("grid spacing must be positive");
  const BBox b = shape.bbox();
  auto g = std::make_shared<Grid2D>();
  g->h = h;
  const long i0 = static_cast<long>(std::floor((b.xmin - anchor.x) / h)) - 1;
  const long i1 = static_cast<long>(std::ceil((b.xmax - anchor.x) / h)) + 1;
  const long j0 = static_cast<long>(std::floor((b.ymin - anchor.y) / h)) - 1;
  const long j1 = static_cast<long>(std::ceil((b.ymax - anchor.y) / h)) + 1;
  const long nxl = i1 - i0 + 1, nyl = j1 - j0 + 1;
  if (nxl < 3 || nyl < 3 || nxl * nyl > 400'000'000L) throw ParameterError("degenerate grid");
  g->nx = static_cast<int>(nxl);
  g->ny = static_cast<int>(nyl);
  g->x0 = anchor.x + i0 * h;
  g->y0 = anchor.y + j0 * h;
  const int nx = g->nx, ny = g->ny;
  const std::size_t N = static_cast<std::size_t>(nx) * ny;
  std::vector<std::uint8_t> inside(N, 0), in(N, 0);
  for (std::size_t k = 0; k < N; ++k) inside[k] = in[k] = shape.contains(g->point(k));
  // nodes lying on the boundary next to the interior
  for (int j = 0; j < ny; ++j)
    for (int i = 0; i < nx; ++i) {
      const std::size_t k = g->idx(i, j);
      if (inside[k]) continue;
      bool near = false;
      for (int dj = -1; dj <= 1 && !near; ++dj)
        for (int di = -1; di <= 1 && !near; ++di) {
          const int a = i + di, c = j + dj;
          near = a >= 0 && c >= 0 && a < nx && c < ny && inside[g->idx(a, c)];
        }
      if (near && shape.nearest_boundary(g->point(k)).distance <= on_tol * std::max(1.0, h)) in[k] = 1;
    }
  g->frac.assign(N, 0.0);
  std::vector<double> sd(N, NAN);  // signed distance, computed on demand
  const auto signed_dist = [&](std::size_t k) {
    if (std::isnan(sd[k])) {
      const double d = shape.nearest_boundary(g->point(k)).distance;
      sd[k] = inside[k] ? -d : d;
    }
    return sd[k];
  };
  for (int j = 0; j + 1 < ny; ++j)
    for (int i = 0; i + 1 < nx; ++i) {
      const std::size_t c[4] = {g->idx(i, j), g->idx(i + 1, j), g->idx(i + 1, j + 1), g->idx(i, j + 1)};
      const int n_in = in[c[0]] + in[c[1]] + in[c[2]] + in[c[3]];
      double f = n_in == 4 ? 1.0 : 0.0;
      const int n_inside = inside[c[0]] + inside[c[1]] + inside[c[2]] + inside[c[3]];
      if (cut_cells && n_inside > 0 && n_inside < 4) {
        // Neumann cuts carry their area fraction; Dirichlet cuts keep the staircase
        const Point mid = g->point(i, j) + Point{0.5 * h, 0.5 * h};
        if (shape.nearest_boundary(mid).kind == BoundaryKind::Neumann) {
          double s[4];
          for (int q = 0; q < 4; ++q) s[q] = signed_dist(c[q]);
          f = 0.5 * (negative_fraction(s[0], s[1], s[2]) + negative_fraction(s[0], s[2], s[3]));
          if (f < 1e-6) f = 0.0;
        }
      }
      g->frac[c[0]] = f;
    }
  g->weight.assign(N, 0.0);
  for (int j = 0; j + 1 < ny; ++j)
    for (int i = 0; i + 1 < nx; ++i) {
      const double f = g->frac[g->idx(i, j)];
      if (f == 0) continue;
      for (std::size_t k : {g->idx(i, j), g->idx(i + 1, j), g->idx(i, j + 1), g->idx(i + 1, j + 1)})
        g->weight[k] += 0.25 * f;
    }
  g->mask.assign(N, NodeKind::Exterior);
  g->tag.assign(N, BoundaryKind::Neumann);
  g->bpoint.assign(N, Point{});
  std::size_t interior = 0;
  for (std::size_t k = 0; k < N; ++k) {
    if (g->weight[k] == 0.0) continue;
    if (inside[k] && g->weight[k] == 1.0) {
      g->mask[k] = NodeKind::Interior;
      ++interior;
      continue;
    }
    g->mask[k] = NodeKind::Boundary;
    const BoundaryHit hit = shape.nearest_boundary(g->point(k));
    g->tag[k] = hit.kind;
    g->bpoint[k] = hit.point;
  }
  if (interior == 0) throw ParameterError("degenerate grid: no interior nodes");
  return g;
}

} // namespace detail

// Builds the staircase grid of a shape. The shape provides contains(Point),
// nearest_boundary(Point) -> BoundaryHit and bbox(). The lattice is anchored so that
// `anchor` is a node. A cell is used when its four corners are inside or on the boundary.
template <class Shape>
GridPtr make_grid(const Shape& shape, double h, Point anchor = {0, 0}, double on_tol = 1e-9) {
  return detail::build_grid(shape, h, anchor, on_tol, false);
}

// As make_grid, but cells cut by a Neumann boundary enter with their area fraction
// (signed distance taken linear on the two triangles of the cell). Curved Neumann
// boundaries then cost O(h^2) in the energy instead of the O(h) of the staircase.
template <class Shape>
GridPtr make_cut_grid(const Shape& shape, double h, Point anchor = {0, 0}) {
  return detail::build_grid(shape, h, anchor, 1e-9, true);
}

// Polygon with per-edge boundary kinds; used for test domains.
struct PolygonShape {
  TaggedPolygon poly;

  static PolygonShape rectangle(double x0, double y0, double x1, double y1, BoundaryKind bottom,
                                BoundaryKind right, BoundaryKind top, BoundaryKind left) {
    PolygonShape s;
    s.poly.v = {{x0, y0}, {x1, y0}, {x1, y1}, {x0, y1}};
    s.poly.tag.assign(4, EdgeTag::Closure);
    s.poly.kind = {bottom, right, top, left};
    return s;
  }

  bool contains(Point p) const {
    bool in = false;
    const std::size_t n = poly.v.size();
    for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
      const Point a = poly.v[i], b = poly.v[j];
      if ((a.y > p.y) != (b.y > p.y) && p.x < (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x) in = !in;
    }
    return in && poly.nearest(p).distance > 1e-12;
  }
  BoundaryHit nearest_boundary(Point p) const { return poly.nearest(p); }
  BBox bbox() const {
    BBox b{poly.v[0].x, poly.v[0].y, poly.v[0].x, poly.v[0].y};
    for (const Point& q : poly.v) {
      b.xmin = std::min(b.xmin, q.x), b.xmax = std::max(b.xmax, q.x);
      b.ymin = std::min(b.ymin, q.y), b.ymax = std::max(b.ymax, q.y);
    }
    return b;
  }
};

struct ScalarField {
  GridPtr grid;
  std::vector<double> v;

  ScalarField() = default;
  explicit ScalarField(GridPtr g, double fill = 0.0) : grid(std::move(g)), v(grid->size(), fill) {}
  ScalarField(GridPtr g, std::vector<double> values) : grid(std::move(g)), v(std::move(values)) {}

  double& operator[](std::size_t k) { return v[k]; }
  double operator[](std::size_t k) const { return v[k]; }

  template <class F>
  static ScalarField from_function(GridPtr g, F&& f) {
    ScalarField s(g);
    for (std::size_t k = 0; k < g->size(); ++k)
      if (g->active(k)) s.v[k] = f(g->point(k));
    return s;
  }

  double max_active() const {
    double m = -INFINITY;
    for (std::size_t k = 0; k < v.size(); ++k)
      if (grid->active(k)) m = std::max(m, v[k]);
    return m;
  }
  double min_active() const {
    double m = INFINITY;
    for (std::size_t k = 0; k < v.size(); ++k)
      if (grid->active(k)) m = std::min(m, v[k]);
    return m;
  }

  // bilinear interpolation from active nodes; NaN when no active corner is available
  double sample(Point p) const {
    const Grid2D& g = *grid;
    const double fx = (p.x - g.x0) / g.h, fy = (p.y - g.y0) / g.h;
    const int i = static_cast<int>(std::floor(fx)), j = static_cast<int>(std::floor(fy));
    const double tx = fx - i, ty = fy - j;
    double s = 0, w = 0;
    const int di[4] = {0, 1, 0, 1}, dj[4] = {0, 0, 1, 1};
    for (int c = 0; c < 4; ++c) {
      if (!g.active(i + di[c], j + dj[c])) continue;
      const double wc = (di[c] ? tx : 1 - tx) * (dj[c] ? ty : 1 - ty);
      s += wc * v[g.idx(i + di[c], j + dj[c])];
      w += wc;
    }
    return w > 1e-12 ? s / w : NAN;
  }
};

// CSV (x, y, value) over active nodes, row-major order.
inline void write_csv(const ScalarField& f, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw ParameterError("cannot open " + path);
  os << "x,y,value\n" << std::setprecision(17);
  for (std::size_t k = 0; k < f.v.size(); ++k)
    if (f.grid->active(k)) {
      const Point p = f.grid->point(k);
      os << p.x << ',' << p.y << ',' << f.v[k] << '\n';
    }
}

namespace detail {

template <class T>
void put_le(std::ostream& os, T value) {
  unsigned char b[sizeof(T)];
  std::memcpy(b, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
  os.write(reinterpret_cast<const char*>(b), sizeof(T));
}

template <class T>
T get_le(std::istream& is) {
  unsigned char b[sizeof(T)];
  if (!is.read(reinterpret_cast<char*>(b), sizeof(T))) throw ParameterError("truncated binary field");
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
  T value;
  std::memcpy(&value, b, sizeof(T));
  return value;
}

} // namespace detail

// header: int64 nx, int64 ny, f64 h, f64 xmin, ymin, xmax, ymax; then nx*ny f64
// row-major (x fastest), little-endian; exterior nodes stored as NaN.
inline void write_binary(const ScalarField& f, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ParameterError("cannot open " + path);
  const Grid2D& g = *f.grid;
  const BBox b = g.bbox();
  detail::put_le<std::int64_t>(os, g.nx);
  detail::put_le<std::int64_t>(os, g.ny);
  for (double x : {g.h, b.xmin, b.ymin, b.xmax, b.ymax}) detail::put_le(os, x);
  for (std::size_t k = 0; k < f.v.size(); ++k) detail::put_le(os, g.active(k) ? f.v[k] : NAN);
}

struct BinaryField {
  std::int64_t nx = 0, ny = 0;
  double h = 0;
  BBox box{};
  std::vector<double> values;
};

inline BinaryField read_binary(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ParameterError("cannot open " + path);
  BinaryField b;
  b.nx = detail::get_le<std::int64_t>(is);
  b.ny = detail::get_le<std::int64_t>(is);
  b.h = detail::get_le<double>(is);
  b.box.xmin = detail::get_le<double>(is);
  b.box.ymin = detail::get_le<double>(is);
  b.box.xmax = detail::get_le<double>(is);
  b.box.ymax = detail::get_le<double>(is);
  if (b.nx <= 0 || b.ny <= 0 || b.nx * b.ny > 400'000'000LL) throw ParameterError("bad binary header");
  b.values.resize(static_cast<std::size_t>(b.nx * b.ny));
  for (auto& x : b.values) x = detail::get_le<double>(is);
  return b;
}

} // namespace spikelab
