#pragma once

#include <Eigen/Core>
#include <cstdint>

#include "cgseg/geometry.hpp"

namespace cgseg {

/// Binary raster, rows x cols, values in {0,1}. Row index is the vertical
/// image axis (azimuth for SAR frames, north-to-south for DEM grids).
using Mask = Eigen::Array<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Per-pixel counts (overlays, scatterer histograms).
using CountRaster = Eigen::Array<std::int32_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Regular grid: the center of cell (col, row) sits at
/// (x0 + (col + 0.5) * dx, y0 + (row + 0.5) * dy). `dy` may be negative for
/// north-up rasters whose first row is the northern edge.
struct GridDef {
  double x0 = 0.0;
  double y0 = 0.0;
  double dx = 1.0;
  double dy = 1.0;
  int cols = 0;
  int rows = 0;

  Vec2 center(int col, int row) const { return {x0 + (col + 0.5) * dx, y0 + (row + 0.5) * dy}; }
};

/// Pixel grid whose cell (col,row) is centred on integer coordinates
/// (col,row), matching nearest-pixel rounding of continuous image positions.
inline GridDef pixel_grid(int cols, int rows) { return {-0.5, -0.5, 1.0, 1.0, cols, rows}; }

struct RasterizeResult {
  Mask mask;
  bool degenerate = false;
};

/// Sets every cell whose centre lies inside `ring` (even-odd rule). A centre
/// exactly on a boundary belongs to the polygon when the boundary is a left or
/// lower-row crossing (half-open intervals in both axes).
RasterizeResult rasterize_polygon(const Ring& ring, const GridDef& grid);

/// Marks the pixels a segment passes through, sampling at most half a pixel
/// apart and rounding to the nearest pixel centre. Coordinates are pixel units.
void draw_segment(Mask& mask, const Vec2& a, const Vec2& b);

Mask dilate3(const Mask& mask);
Mask erode3(const Mask& mask);
inline Mask close3(const Mask& mask) { return erode3(dilate3(mask)); }

/// Shift by (dx cols, dy rows); pixels leaving the raster are dropped.
Mask translate(const Mask& mask, int dx, int dy);

inline long area(const Mask& mask) { return mask.cast<long>().sum(); }

/// Inclusive pixel bounding box of the set cells.
struct PixelBox {
  int col0 = 0, row0 = 0, col1 = -1, row1 = -1;
  bool empty() const { return col1 < col0 || row1 < row0; }
  int width() const { return empty() ? 0 : col1 - col0 + 1; }
  int height() const { return empty() ? 0 : row1 - row0 + 1; }
  bool operator==(const PixelBox&) const = default;
};

PixelBox bbox(const Mask& mask);

}  // namespace cgseg
