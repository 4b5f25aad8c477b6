#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <string>

#include "cgseg/sargeo.hpp"

namespace cgseg {

/// Footprint positioning error: |e| ~ N(mu, sigma^2) truncated at zero,
/// direction uniform over whole degrees measured from the range axis.
struct OffsetModel {
  double mu = 4.13;
  double sigma = 1.71;
  std::uint64_t seed = 1;
  void validate() const;
};

struct Offset {
  double magnitude = 0.0;  // meters
  int alpha_deg = 0;       // 0..359, counter-clockwise from +range toward +azimuth
};

Offset sample_offset(const OffsetModel& model, std::mt19937_64& rng);

/// Whole-pixel image shift (columns, rows) for an offset.
std::pair<int, int> offset_pixels(const Offset& e, const SarFrame& frame);

struct InjectedErrors {
  MaskStack masks;  // shifted; masks pushed entirely off-frame are flagged
  std::map<std::string, Offset> offsets;
};

/// One independent draw per building in id order, each mask translated in the
/// image plane and clipped at the frame border.
InjectedErrors apply_offsets(const MaskStack& footprints, const OffsetModel& model);

/// id,magnitude,alpha_deg,dx,dy
std::string format_offsets_csv(const InjectedErrors& e, const SarFrame& frame);

}  // namespace cgseg
