#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "cgseg/geometry.hpp"
#include "cgseg/scene.hpp"

namespace cgseg {

/// Point label: ground, or the index of a footprint in its FootprintSet.
struct Label {
  int building = -1;
  bool is_ground() const { return building < 0; }
  static Label ground() { return {}; }
  bool operator==(const Label&) const = default;
};

struct LabeledPoint {
  Vec3 pos;  // (x, y, h) in meters
  Label label;
};

using PointCloud = std::vector<LabeledPoint>;

enum class LookSide { kRight, kLeft };

struct ViewGeometry {
  double incidence_deg = 36.0;
  double heading_deg = 0.0;
  LookSide look = LookSide::kRight;

  void validate() const;
  double incidence_rad() const;
  /// Horizontal flight direction (east, north), heading clockwise from north.
  Vec2 flight_dir() const;
  /// Horizontal direction of increasing ground range (away from the sensor).
  Vec2 ground_range_dir() const;
  bool operator==(const ViewGeometry&) const = default;
};

struct VerticalFillParams {
  double h_step = 0.25;
  double jump_threshold = 2.0;

  void validate() const;
};

struct HprParams {
  double far_multiple = 100.0;
  double radius_exponent = 4.5;
};

/// One point per non-nodata cell, labelled by the footprint covering the
/// cell centre.
PointCloud dem_to_cloud(const DemGrid& dem, const FootprintSet& footprints);

/// Adds vertical point columns at building points sitting on height jumps.
/// `p_dem` must be the output of dem_to_cloud for the same grid; its points
/// come first in the result, in the same order.
PointCloud fill_vertical(const PointCloud& p_dem, const DemGrid& dem, const VerticalFillParams& params);

/// Unit vector pointing from the sensor toward the scene.
Vec3 line_of_sight(const ViewGeometry& view);

/// Hidden point removal by spherical flipping and a convex hull, with the
/// viewpoint far out along the line of sight. Returns one flag per point.
/// Throws GeometryError when two or more points all coincide.
std::vector<std::uint8_t> hpr_visibility(const PointCloud& cloud, const ViewGeometry& view,
                                         const HprParams& params = {});

/// Visible subset of `cloud`, original coordinates and labels.
PointCloud hpr_visible(const PointCloud& cloud, const ViewGeometry& view, const HprParams& params = {});

/// Points of `p_svs` labelled with footprint `building`, or nullopt when the
/// footprint region holds no point raised more than `jump_threshold` above
/// the surrounding ground.
std::optional<PointCloud> select_building_points(const PointCloud& p_svs, int building, const Footprint& footprint,
                                                 double jump_threshold);

/// Debug dump: `x y h label` per line, label -1 for ground.
void save_cloud_ascii(const PointCloud& cloud, const std::filesystem::path& path);

}  // namespace cgseg
