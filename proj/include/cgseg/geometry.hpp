#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>
#include <cmath>
#include <limits>
#include <vector>

namespace cgseg {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;

/// Polygon ring, closed implicitly (last vertex connects back to the first).
using Ring = std::vector<Vec2>;

struct Box2 {
  Vec2 lo{Vec2::Constant(std::numeric_limits<double>::infinity())};
  Vec2 hi{Vec2::Constant(-std::numeric_limits<double>::infinity())};

  void extend(const Vec2& p) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  bool empty() const { return (hi.array() < lo.array()).any(); }
};

double signed_area(const Ring& ring);
void make_ccw(Ring& ring);
Box2 bounds(const Ring& ring);

/// Even-odd point-in-polygon test. Points exactly on an edge follow the
/// half-open crossing rule used by the rasterizer.
bool point_in_ring(const Vec2& p, const Ring& ring);

/// True when segments [a,b] and [c,d] share at least one point.
bool segments_intersect(const Vec2& a, const Vec2& b, const Vec2& c, const Vec2& d);

/// No two non-adjacent edges touch and adjacent edges meet only at their
/// shared vertex.
bool is_simple(const Ring& ring);

double distance_to_segment(const Vec2& p, const Vec2& a, const Vec2& b);

/// Rotation of `v` by `angle` radians counter-clockwise.
inline Vec2 rotated(const Vec2& v, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  return {c * v.x() - s * v.y(), s * v.x() + c * v.y()};
}

}  // namespace cgseg
