#pragma once

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "cgseg/cloud.hpp"
#include "cgseg/raster.hpp"
#include "cgseg/scene.hpp"

namespace cgseg {

/// Far-field SAR image frame. Rows are azimuth, columns slant range; pixel
/// (col,row) is centred on integer image coordinates.
struct SarFrame {
  double spacing_az = 0.871;
  double spacing_rg = 0.455;
  ViewGeometry view;
  Vec2 centroid = Vec2::Zero();  // ground reference the offsets are measured from
  double origin_az = 0.0;
  double origin_rg = 0.0;
  int width = 1;
  int height = 1;

  void validate() const;
  GridDef grid() const { return pixel_grid(width, height); }
  bool operator==(const SarFrame&) const = default;
};

void to_json(nlohmann::json& j, const SarFrame& f);
void from_json(const nlohmann::json& j, SarFrame& f);

/// Image position (rg_px, az_px) of a scene point.
Vec2 project_point(const Vec3& p, const SarFrame& frame);

/// Frame covering every point of `scene` with `margin` pixels on each side.
SarFrame make_frame(const PointCloud& scene, const ViewGeometry& view, double spacing_az, double spacing_rg,
                    int margin = 5);

/// Per-building binary masks over one frame, keyed by building id. `flagged`
/// records ids whose mask came out empty for a geometric reason.
struct MaskStack {
  SarFrame frame;
  std::map<std::string, Mask> masks;
  std::set<std::string> flagged;

  Mask blank() const { return Mask::Zero(frame.height, frame.width); }
};

struct BuildingSelection {
  std::string id;
  PointCloud points;
};

/// Splats each selection's points at their nearest pixel, then closes each
/// mask once with a 3x3 element.
MaskStack make_gt_masks(const std::vector<BuildingSelection>& selections, const SarFrame& frame);

struct EdgeVisibility {
  bool visible = false;
  bool shared = false;
  double delta_deg = 0.0;  // angle between outward normal and ground range
};

/// Visibility of each ring edge (edge i runs from vertex i to i+1).
std::vector<EdgeVisibility> footprint_visibility(const Footprint& footprint, const FootprintSet& all,
                                                 const SarFrame& frame, double shared_tol = 1e-6);

enum class FootprintRepr { kCbf, kSvs };

/// Footprint masks projected at ground height `ground_h`.
MaskStack make_footprint_masks(const FootprintSet& footprints, const SarFrame& frame, FootprintRepr repr,
                               double ground_h = 0.0);

using Image = Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct IntensityImage {
  SarFrame frame;
  Image values;
};

struct IntensityParams {
  double floor = 0.05;
  double percentile = 0.99;
  bool normalize = true;
};

/// Scatterer-count image with multiplicative unit-mean exponential speckle,
/// normalized by its upper percentile and clipped to [0,1]. Each row draws
/// from its own stream seeded by (seed, row).
IntensityImage simulate_intensity(const PointCloud& p_svs, const SarFrame& frame, std::uint64_t seed,
                                  const IntensityParams& params = {});

/// Number of projected points per pixel.
CountRaster scatterer_counts(const PointCloud& cloud, const SarFrame& frame);

/// Centre of the fullest of 256 equal bins over [0,1].
double intensity_mode(const Image& values);

struct FilterResult {
  MaskStack kept;
  std::vector<std::string> dropped;
  double mode = 0.0;
};

/// Drops buildings whose mean intensity inside their mask is below the
/// intensity mode. Empty masks are dropped and flagged.
FilterResult postprocess_filter(const MaskStack& masks, const IntensityImage& intensity);

// Image files. Binary masks are 8-bit PGM with 0/255; intensity is 16-bit PGM
// with a JSON sidecar holding the frame.
void save_mask_pgm(const Mask& mask, const std::filesystem::path& path);
Mask load_mask_pgm(const std::filesystem::path& path);
void save_intensity(const IntensityImage& img, const std::filesystem::path& pgm_path);
IntensityImage load_intensity(const std::filesystem::path& pgm_path);

/// Writes `<dir>/<id>.pgm` for every mask.
void save_mask_dir(const MaskStack& stack, const std::filesystem::path& dir);
/// Reads every `*.pgm` in `dir`; sizes must match `frame`.
MaskStack load_mask_dir(const std::filesystem::path& dir, const SarFrame& frame);

}  // namespace cgseg
