#include "cgseg/giserr.hpp"

#include <cmath>
#include <numbers>

#include "cgseg/error.hpp"
#include "cgseg/io_util.hpp"

namespace cgseg {

void OffsetModel::validate() const {
  if (!(mu > 0) || !(sigma > 0)) throw ConfigError("offset model needs mu > 0 and sigma > 0");
}

Offset sample_offset(const OffsetModel& model, std::mt19937_64& rng) {
  std::normal_distribution<double> mag(model.mu, model.sigma);
  std::uniform_int_distribution<int> angle(0, 359);
  Offset e;
  do {
    e.magnitude = mag(rng);
  } while (e.magnitude < 0.0);
  e.alpha_deg = angle(rng);
  return e;
}

std::pair<int, int> offset_pixels(const Offset& e, const SarFrame& frame) {
  const double a = e.alpha_deg * std::numbers::pi / 180.0;
  return {static_cast<int>(std::lround(e.magnitude * std::cos(a) / frame.spacing_rg)),
          static_cast<int>(std::lround(e.magnitude * std::sin(a) / frame.spacing_az))};
}

InjectedErrors apply_offsets(const MaskStack& footprints, const OffsetModel& model) {
  model.validate();
  std::mt19937_64 rng(model.seed);
  InjectedErrors out;
  out.masks.frame = footprints.frame;
  out.masks.flagged = footprints.flagged;
  for (const auto& [id, m] : footprints.masks) {
    const Offset e = sample_offset(model, rng);
    const auto [dx, dy] = offset_pixels(e, footprints.frame);
    Mask shifted = translate(m, dx, dy);
    if (area(shifted) == 0 && area(m) > 0) out.masks.flagged.insert(id);
    out.masks.masks[id] = std::move(shifted);
    out.offsets[id] = e;
  }
  return out;
}

std::string format_offsets_csv(const InjectedErrors& e, const SarFrame& frame) {
  std::string out = "id,magnitude,alpha_deg,dx,dy\n";
  for (const auto& [id, off] : e.offsets) {
    const auto [dx, dy] = offset_pixels(off, frame);
    out += id + "," + format_double(off.magnitude) + "," + std::to_string(off.alpha_deg) + "," + std::to_string(dx) +
           "," + std::to_string(dy) + "\n";
  }
  return out;
}

}  // namespace cgseg
