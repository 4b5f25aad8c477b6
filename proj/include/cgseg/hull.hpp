#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "cgseg/geometry.hpp"

namespace cgseg {

/// Convex hull of a 3D point set.
///
/// `dimension` is the affine dimension of the input (0..3) at the given
/// tolerance. For full-dimensional input `faces` holds outward-oriented
/// triangles and `boundary[i]` marks hull vertices. For flat input (dimension
/// 1 or 2) `faces` is empty and `boundary[i]` marks points lying within
/// `tolerance` of the relative boundary.
struct ConvexHull3 {
  int dimension = 0;
  std::vector<std::array<int, 3>> faces;
  std::vector<std::uint8_t> boundary;
};

/// Quickhull. Points closer than `tolerance` to a face plane are treated as
/// lying on it and are not promoted to vertices.
ConvexHull3 convex_hull(std::span<const Vec3> points, double tolerance);

}  // namespace cgseg
