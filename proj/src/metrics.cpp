#include "cgseg/metrics.hpp"

#include <algorithm>

#include "cgseg/error.hpp"
#include "cgseg/io_util.hpp"

namespace cgseg {

namespace {

double ratio(long num, long den, unsigned flag, unsigned& undefined) {
  if (den == 0) {
    undefined |= flag;
    return 0.0;
  }
  return static_cast<double>(num) / static_cast<double>(den);
}

nlohmann::json scores_json(const Scores& s) {
  return {{"P", s.precision}, {"R", s.recall}, {"F1", s.f1}, {"IoU", s.iou}, {"OA", s.oa}, {"undefined", s.undefined}};
}

nlohmann::json counts_json(const Confusion& c) { return {{"tp", c.tp}, {"fp", c.fp}, {"fn", c.fn}, {"tn", c.tn}}; }

}  // namespace

Confusion& Confusion::operator+=(const Confusion& o) {
  tp += o.tp;
  fp += o.fp;
  tn += o.tn;
  fn += o.fn;
  return *this;
}

Scores score(const Confusion& c) {
  Scores s;
  s.precision = ratio(c.tp, c.tp + c.fp, kUndefP, s.undefined);
  s.recall = ratio(c.tp, c.tp + c.fn, kUndefR, s.undefined);
  if (s.precision + s.recall > 0) {
    s.f1 = 2 * s.precision * s.recall / (s.precision + s.recall);
  } else {
    s.undefined |= kUndefF1;
  }
  s.iou = ratio(c.tp, c.tp + c.fp + c.fn, kUndefIoU, s.undefined);
  s.oa = ratio(c.tp + c.tn, c.total(), kUndefOA, s.undefined);
  return s;
}

Confusion confusion(const Mask& pred, const Mask& truth, const PixelBox& window) {
  if (pred.rows() != truth.rows() || pred.cols() != truth.cols()) throw ShapeError("confusion: mask sizes differ");
  const int r0 = std::max(0, window.row0), c0 = std::max(0, window.col0);
  const int r1 = std::min(static_cast<int>(pred.rows()) - 1, window.row1);
  const int c1 = std::min(static_cast<int>(pred.cols()) - 1, window.col1);
  Confusion c;
  for (int r = r0; r <= r1; ++r) {
    for (int col = c0; col <= c1; ++col) {
      const bool p = pred(r, col) != 0, t = truth(r, col) != 0;
      if (p && t) ++c.tp;
      else if (p) ++c.fp;
      else if (t) ++c.fn;
      else ++c.tn;
    }
  }
  return c;
}

Confusion confusion(const Mask& pred, const Mask& truth) {
  return confusion(pred, truth, PixelBox{0, 0, static_cast<int>(pred.cols()) - 1, static_cast<int>(pred.rows()) - 1});
}

EvalReport evaluate(const MaskStack& pred, const MaskStack& truth, const std::map<std::string, PixelBox>& windows) {
  if (!(pred.frame == truth.frame)) throw ShapeError("evaluate: prediction and truth frames differ");
  EvalReport r;
  Mask pred_union = pred.blank(), truth_union = truth.blank();
  for (const auto& [id, p] : pred.masks) {
    const auto t = truth.masks.find(id);
    if (t == truth.masks.end()) throw Error("evaluate: no ground truth for building " + id);
    const auto w = windows.find(id);
    if (w == windows.end()) throw Error("evaluate: no evaluation window for building " + id);
    BuildingScore b{id, confusion(p, t->second, w->second), {}};
    b.scores = score(b.counts);
    r.micro_counts += b.counts;
    pred_union = pred_union.max(p);
    truth_union = truth_union.max(t->second);
    r.buildings.push_back(b);
  }
  if (!r.buildings.empty()) {
    const double n = static_cast<double>(r.buildings.size());
    for (const auto& b : r.buildings) {
      r.macro.precision += b.scores.precision / n;
      r.macro.recall += b.scores.recall / n;
      r.macro.f1 += b.scores.f1 / n;
      r.macro.iou += b.scores.iou / n;
      r.macro.oa += b.scores.oa / n;
      r.macro.undefined |= b.scores.undefined;
    }
  }
  r.micro = score(r.micro_counts);
  r.frame_counts = confusion(pred_union, truth_union);
  r.frame = score(r.frame_counts);
  return r;
}

std::string format_metrics_csv(const EvalReport& r) {
  std::string out = "id,tp,fp,fn,tn,P,R,F1,IoU,OA\n";
  for (const auto& b : r.buildings) {
    const auto& c = b.counts;
    const auto& s = b.scores;
    out += b.id + "," + std::to_string(c.tp) + "," + std::to_string(c.fp) + "," + std::to_string(c.fn) + "," +
           std::to_string(c.tn) + "," + format_double(s.precision) + "," + format_double(s.recall) + "," +
           format_double(s.f1) + "," + format_double(s.iou) + "," + format_double(s.oa) + "\n";
  }
  return out;
}

nlohmann::json metrics_json(const EvalReport& r) {
  nlohmann::json flagged = nlohmann::json::array();
  for (const auto& b : r.buildings)
    if (b.scores.undefined) flagged.push_back(b.id);
  nlohmann::json micro = scores_json(r.micro);
  micro["counts"] = counts_json(r.micro_counts);
  nlohmann::json frame = scores_json(r.frame);
  frame["counts"] = counts_json(r.frame_counts);
  return {{"buildings", r.buildings.size()},
          {"macro", scores_json(r.macro)},
          {"micro", micro},
          {"frame", frame},
          {"flagged", flagged}};
}

}  // namespace cgseg
