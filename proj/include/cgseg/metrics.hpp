#pragma once

#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cgseg/raster.hpp"
#include "cgseg/sargeo.hpp"

namespace cgseg {

struct Confusion {
  long tp = 0, fp = 0, tn = 0, fn = 0;
  long total() const { return tp + fp + tn + fn; }
  Confusion& operator+=(const Confusion& o);
  bool operator==(const Confusion&) const = default;
};

/// Bits of Scores::undefined: which ratios had a zero denominator.
enum ScoreFlag : unsigned { kUndefP = 1, kUndefR = 2, kUndefF1 = 4, kUndefIoU = 8, kUndefOA = 16 };

struct Scores {
  double precision = 0, recall = 0, f1 = 0, iou = 0, oa = 0;
  unsigned undefined = 0;  // 0/0 ratios are reported as 0
};

Scores score(const Confusion& c);

/// Pixel counts of `pred` against `truth` inside `window` (inclusive box,
/// clipped to the rasters).
Confusion confusion(const Mask& pred, const Mask& truth, const PixelBox& window);
Confusion confusion(const Mask& pred, const Mask& truth);

struct BuildingScore {
  std::string id;
  Confusion counts;
  Scores scores;
};

struct EvalReport {
  std::vector<BuildingScore> buildings;
  Scores macro;        // mean of per-building scores
  Scores micro;        // scores of the summed per-building counts
  Confusion micro_counts;
  Confusion frame_counts;  // union of all predictions vs union of all truths, whole frame
  Scores frame;
};

/// Scores every predicted building inside its evaluation window. Every
/// prediction needs a truth mask and a window; throws Error otherwise.
EvalReport evaluate(const MaskStack& pred, const MaskStack& truth, const std::map<std::string, PixelBox>& windows);

/// id,tp,fp,fn,tn,P,R,F1,IoU,OA
std::string format_metrics_csv(const EvalReport& r);
nlohmann::json metrics_json(const EvalReport& r);

}  // namespace cgseg
