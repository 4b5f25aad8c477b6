#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cgseg/geometry.hpp"
#include "cgseg/raster.hpp"

namespace cgseg {

/// 2.5D height raster. Row 0 is the northern edge (ESRI ASCII order).
struct DemGrid {
  int ncols = 0;
  int nrows = 0;
  double xllcorner = 0.0;
  double yllcorner = 0.0;
  double cellsize = 1.0;
  double nodata = -9999.0;
  std::vector<double> heights;  // row-major, ncols * nrows

  double& at(int col, int row) { return heights[static_cast<std::size_t>(row) * ncols + col]; }
  double at(int col, int row) const { return heights[static_cast<std::size_t>(row) * ncols + col]; }
  bool is_nodata(double h) const { return h == nodata; }
  GridDef grid() const { return {xllcorner, yllcorner + nrows * cellsize, cellsize, -cellsize, ncols, nrows}; }
  Vec2 cell_center(int col, int row) const { return grid().center(col, row); }

  /// Throws GeometryError when the invariants do not hold.
  void validate() const;
};

struct Footprint {
  std::string id;
  Ring ring;                        // counter-clockwise, implicitly closed
  std::optional<double> gt_height;  // evaluation only
};

using FootprintSet = std::vector<Footprint>;

enum class ShapeKind { kRectangle, kLShape };

struct SceneSpec {
  std::uint64_t seed = 1;
  double extent_x = 200.0;
  double extent_y = 200.0;
  int n_buildings = 20;
  double rect_fraction = 0.7;  // shape mix; the remainder are L-shapes
  double l_fraction = 0.3;
  double height_min = 4.0;
  double height_max = 30.0;
  double touch_fraction = 0.0;  // fraction of buildings placed as edge-sharing pairs
  double dem_cellsize = 0.5;
  double side_min = 8.0;   // rectangle side lengths, meters
  double side_max = 20.0;
  double gap = 4.0;        // minimum clearance between non-touching buildings
  double border = 10.0;    // clearance from the scene edge
  bool axis_aligned = false;
  int max_retries = 2000;

  void validate() const;
};

struct Scene {
  DemGrid dem;
  FootprintSet footprints;
};

/// Flat ground at height 0 with one flat-roofed prism per footprint.
/// Deterministic in `spec`. Throws GeometryError when the buildings cannot be
/// placed within the retry budget.
Scene generate_scene(const SceneSpec& spec);

/// Burns each footprint's gt_height into the cells whose centres it covers.
void extrude_into(DemGrid& dem, const FootprintSet& footprints);

/// Per-cell footprint index (-1 for none), using the rasterizer's centre rule.
std::vector<int> label_cells(const DemGrid& dem, const FootprintSet& footprints);

DemGrid load_dem(const std::filesystem::path& path);
void save_dem(const DemGrid& dem, const std::filesystem::path& path);
DemGrid parse_dem(const std::string& text);
std::string format_dem(const DemGrid& dem);

/// Rings are normalised to counter-clockwise on load.
FootprintSet load_footprints(const std::filesystem::path& path);
void save_footprints(const FootprintSet& footprints, const std::filesystem::path& path);
FootprintSet parse_footprints(const std::string& json_text);
std::string format_footprints(const FootprintSet& footprints);

/// Index of the footprint with id `id`, or -1.
int find_footprint(const FootprintSet& footprints, const std::string& id);

}  // namespace cgseg
