#include "cgseg/raster.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace cgseg {

RasterizeResult rasterize_polygon(const Ring& ring, const GridDef& grid) {
  RasterizeResult out;
  out.mask = Mask::Zero(grid.rows, grid.cols);
  if (ring.size() < 3 || std::abs(signed_area(ring)) == 0.0) {
    out.degenerate = true;
    return out;
  }
  const Box2 box = bounds(ring);
  std::vector<double> xs;
  const std::size_t n = ring.size();
  for (int row = 0; row < grid.rows; ++row) {
    const double yc = grid.y0 + (row + 0.5) * grid.dy;
    if (yc < box.lo.y() || yc > box.hi.y()) continue;
    xs.clear();
    for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
      const Vec2& a = ring[j];
      const Vec2& b = ring[i];
      if ((a.y() <= yc && yc < b.y()) || (b.y() <= yc && yc < a.y())) {
        xs.push_back(a.x() + (yc - a.y()) * (b.x() - a.x()) / (b.y() - a.y()));
      }
    }
    std::sort(xs.begin(), xs.end());
    for (std::size_t k = 0; k + 1 < xs.size(); k += 2) {
      const int c0 = std::max(0, static_cast<int>(std::ceil((xs[k] - grid.x0) / grid.dx - 0.5)));
      const int c1 = std::min(grid.cols, static_cast<int>(std::ceil((xs[k + 1] - grid.x0) / grid.dx - 0.5)));
      for (int col = c0; col < c1; ++col) out.mask(row, col) = 1;
    }
  }
  return out;
}

void draw_segment(Mask& mask, const Vec2& a, const Vec2& b) {
  const double len = (b - a).norm();
  const int steps = std::max(1, static_cast<int>(std::ceil(2.0 * len)));
  for (int i = 0; i <= steps; ++i) {
    const Vec2 p = a + (b - a) * (static_cast<double>(i) / steps);
    const long col = std::lround(p.x());
    const long row = std::lround(p.y());
    if (row >= 0 && row < mask.rows() && col >= 0 && col < mask.cols()) mask(row, col) = 1;
  }
}

namespace {

template <bool kDilate>
Mask morph3(const Mask& m) {
  const int rows = static_cast<int>(m.rows()), cols = static_cast<int>(m.cols());
  Mask out = Mask::Zero(rows, cols);
  const PixelBox box = bbox(m);
  if (box.empty()) return out;
  // Only the set region (grown by one pixel for dilation) can change.
  const int grow = kDilate ? 1 : 0;
  const int r0 = std::max(0, box.row0 - grow), r1 = std::min(rows - 1, box.row1 + grow);
  const int c0 = std::max(0, box.col0 - grow), c1 = std::min(cols - 1, box.col1 + grow);
  for (int r = r0; r <= r1; ++r) {
    for (int c = c0; c <= c1; ++c) {
      bool v = !kDilate;
      for (int dr = -1; dr <= 1; ++dr) {
        for (int dc = -1; dc <= 1; ++dc) {
          const int rr = r + dr, cc = c + dc;
          const bool inside = rr >= 0 && rr < rows && cc >= 0 && cc < cols;
          const bool bit = inside && m(rr, cc) != 0;
          if constexpr (kDilate) {
            v = v || bit;
          } else {
            v = v && bit;
          }
        }
      }
      out(r, c) = v ? 1 : 0;
    }
  }
  return out;
}

}  // namespace

Mask dilate3(const Mask& mask) { return morph3<true>(mask); }
Mask erode3(const Mask& mask) { return morph3<false>(mask); }

Mask translate(const Mask& mask, int dx, int dy) {
  Mask out = Mask::Zero(mask.rows(), mask.cols());
  const int rows = static_cast<int>(mask.rows()), cols = static_cast<int>(mask.cols());
  const int r0 = std::max(0, dy), r1 = std::min(rows, rows + dy);
  const int c0 = std::max(0, dx), c1 = std::min(cols, cols + dx);
  if (r1 <= r0 || c1 <= c0) return out;
  out.block(r0, c0, r1 - r0, c1 - c0) = mask.block(r0 - dy, c0 - dx, r1 - r0, c1 - c0);
  return out;
}

PixelBox bbox(const Mask& mask) {
  PixelBox box{static_cast<int>(mask.cols()), static_cast<int>(mask.rows()), -1, -1};
  for (Eigen::Index r = 0; r < mask.rows(); ++r) {
    for (Eigen::Index c = 0; c < mask.cols(); ++c) {
      if (!mask(r, c)) continue;
      box.col0 = std::min(box.col0, static_cast<int>(c));
      box.col1 = std::max(box.col1, static_cast<int>(c));
      box.row0 = std::min(box.row0, static_cast<int>(r));
      box.row1 = std::max(box.row1, static_cast<int>(r));
    }
  }
  if (box.col1 < 0) return PixelBox{};
  return box;
}

}  // namespace cgseg
