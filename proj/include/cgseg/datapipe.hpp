#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cgseg/cgnet.hpp"
#include "cgseg/cloud.hpp"
#include "cgseg/sargeo.hpp"
#include "cgseg/scene.hpp"

namespace cgseg {

// ---- Dataset generation -------------------------------------------------

struct DatasetParams {
  ViewGeometry view;
  double spacing_az = 0.871;
  double spacing_rg = 0.455;
  VerticalFillParams fill;
  HprParams hpr;
  IntensityParams intensity;
  std::uint64_t seed = 1;  // speckle stream
  int margin = 5;
};

/// Everything derived from one scene: the image, the per-building masks of
/// every kind, and the bookkeeping of which buildings were left out.
struct Dataset {
  SarFrame frame;
  FootprintSet footprints;
  IntensityImage intensity;
  MaskStack gt, cbf, svs;
  std::vector<std::string> excluded;  // no elevated points in the DEM
  std::vector<std::string> filtered;  // dropped by the intensity-mode filter
  nlohmann::json provenance;
  std::vector<std::string> ids() const;
};

Dataset build_dataset(const Scene& scene, const DatasetParams& params);

/// Directory layout: manifest.json, intensity.pgm (+ .json sidecar),
/// footprints.json, gt/, cbf/, svs/ with one PGM per building.
void save_dataset(const Dataset& ds, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

// ---- Patches and splits --------------------------------------------------

using PatchImage = Eigen::Array<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Sample {
  std::string id;
  int row0 = 0, col0 = 0;  // patch origin in frame pixels (azimuth, range)
  int size = 0;
  PatchImage sar;
  Mask gis, gt;
};

struct TrainConfig {
  double lr0 = 2e-3;
  double lr_factor = 3.1622776601683795;  // sqrt(10)
  int plateau_epochs = 2;
  int batch = 5;
  int max_epochs = 20;
  std::uint64_t seed = 1;
  int patch = 256;
  int stride = 150;
  double train_fraction = 0.65;

  void validate() const;
};

struct PatchResult {
  std::vector<Sample> samples;
  std::vector<std::string> dropped;  // no patch contains the whole building
};

/// One sample per building: among grid patches containing both its GT and
/// GIS masks, the one with the widest margin to the patch border (first in
/// row-major patch order on ties).
PatchResult extract_patches(const IntensityImage& intensity, const MaskStack& gt, const MaskStack& gis,
                            const TrainConfig& cfg);

/// Re-cuts each sample's GIS patch from another mask stack at the same window.
std::vector<Sample> with_gis(std::vector<Sample> samples, const MaskStack& gis);

Mask cut_patch(const Mask& m, int row0, int col0, int size);

struct Split {
  std::vector<Sample> train, test;
  int border_row = 0;  // first azimuth row of the test region
  int dropped = 0;     // samples straddling the border
};

/// Azimuth bands of `band_rows` rows; the first round(fraction * bands)
/// bands train, the rest test. Throws ConfigError if a side is empty.
Split split_regions(const std::vector<Sample>& samples, const SarFrame& frame, double train_fraction,
                    int band_rows);

// ---- Training ------------------------------------------------------------

/// Divides the rate by `factor` whenever the loss has not improved on its
/// best value for `patience` consecutive epochs.
class PlateauSchedule {
 public:
  PlateauSchedule(double lr0, double factor, int patience)
      : lr0_(lr0), lr_(lr0), factor_(factor), patience_(patience) {}
  /// Records one epoch's loss and returns the rate for the next epoch.
  double update(double loss);
  double lr() const { return lr_; }
  int drops() const { return drops_; }

 private:
  double lr0_, lr_, factor_;
  int patience_;
  double best_ = 0.0;
  bool have_best_ = false;
  int stall_ = 0;
  int drops_ = 0;
};

struct EpochLog {
  int epoch = 0;
  double loss = 0.0;
  double lr = 0.0;  // rate used during the epoch
};

struct TrainResult {
  std::vector<EpochLog> log;
  long steps = 0;
  bool aborted = false;  // non-finite loss; model holds the last good parameters
  std::string abort_reason;
};

/// Per-batch loss hook for tests; returns the loss to record for the batch.
using LossHook = std::function<double(int epoch, double loss)>;

TrainResult train(Model<float>& model, const std::vector<Sample>& samples, const TrainConfig& cfg,
                  const LossHook& hook = {});

std::string format_train_log(const TrainResult& r);

/// Batched input tensors for samples [first, first + count).
struct Batch {
  Tensor<float> sar, gis, gt;
};
Batch make_batch(const std::vector<Sample>& samples, const std::vector<std::size_t>& order, std::size_t first,
                 std::size_t count);

// ---- Prediction ----------------------------------------------------------

/// Thresholds each sample's probability map at 0.5 and places it at the
/// sample's window in a full-frame mask.
MaskStack predict_all(Model<float>& model, const std::vector<Sample>& samples, const SarFrame& frame,
                      double threshold = 0.5);

/// Number of masks covering each pixel.
CountRaster overlay_masks(const MaskStack& stack);

}  // namespace cgseg
