#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cgseg/geometry.hpp"
#include "cgseg/sargeo.hpp"
#include "cgseg/scene.hpp"

namespace cgseg {

struct LayoverMeasure {
  double length_m = 0.0;  // slant-range meters
  int rows = 0;           // footprint rows inspected
  int skipped = 0;        // rows whose run ran into another footprint or the frame edge
  bool flagged = false;   // empty prediction, or more than half the rows skipped
};

/// Median over footprint rows of the run of predicted, non-footprint pixels
/// extending toward near range from the footprint's nearest pixel. `others`
/// (optional) marks pixels of neighbouring footprints. Throws GeometryError
/// when `footprint` is empty.
LayoverMeasure layover_length(const Mask& pred, const Mask& footprint, const SarFrame& frame,
                              const Mask* others = nullptr);

/// h = l / cos(incidence).
double height_from_layover(double l, double incidence_deg);

struct HeightEstimate {
  std::string id;
  double l = 0.0;
  double h = 0.0;
  std::optional<double> gt_h;
  bool flagged = false;
  std::optional<double> error() const {
    return gt_h ? std::optional<double>(h - *gt_h) : std::nullopt;
  }
};

/// Height of every predicted building that has a non-empty footprint mask.
std::vector<HeightEstimate> estimate_heights(const MaskStack& pred, const MaskStack& footprints,
                                             const FootprintSet& fps);

struct Mesh {
  std::string name;
  std::vector<Vec3> vertices;
  std::vector<std::array<int, 3>> triangles;  // outward-facing, 0-based
  bool flat = false;                          // zero height
};

/// Prism over the footprint ring: bottom vertices then top vertices, caps by
/// ear clipping, two triangles per wall. Throws GeometryError for rings with
/// fewer than three vertices, zero area or self-intersections, and for h < 0.
Mesh extrude_lod1(const Footprint& footprint, double h);

/// Ear-clipping triangulation of a simple counter-clockwise ring.
std::vector<std::array<int, 3>> triangulate(const Ring& ring);

double mesh_volume(const Mesh& m);
std::string format_obj(const std::vector<Mesh>& meshes);
void save_obj(const std::vector<Mesh>& meshes, const std::filesystem::path& path);

struct HeightErrorStats {
  double mean_abs = 0.0;
  int n = 0;
  std::map<int, long> histogram;  // 1 m bins centred on integers, gaps filled with zero
};

/// Throws Error when no estimate has a reference height.
HeightErrorStats height_error_stats(const std::vector<HeightEstimate>& est);

/// id,l,h,gt_h,error
std::string format_heights_csv(const std::vector<HeightEstimate>& est);
/// bin_center,count
std::string format_hist_csv(const HeightErrorStats& s);

}  // namespace cgseg
