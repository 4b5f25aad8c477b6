#include "cgseg/cloud.hpp"
#include "doctest.h"

using namespace cgseg;

// Orthographic convergence: pushing the viewpoint further out should leave
// the visible set nearly unchanged.
TEST_CASE("hpr: larger viewpoint distance changes under 1% of flags") {
  for (std::uint64_t seed : {3u, 4u, 5u}) {
    SceneSpec sp;
    sp.seed = seed;
    sp.extent_x = sp.extent_y = 30;
    sp.n_buildings = 2;
    sp.side_min = 4;
    sp.side_max = 7;
    sp.height_min = 3;
    sp.height_max = 9;
    sp.border = 3;
    sp.gap = 1;
    const Scene sc = generate_scene(sp);
    const auto pcom = fill_vertical(dem_to_cloud(sc.dem, sc.footprints), sc.dem, {});
    ViewGeometry v;
    v.heading_deg = 20.0 * static_cast<double>(seed);
    const auto base = hpr_visibility(pcom, v);
    for (double far : {300.0, 1000.0}) {
      HprParams hp;
      hp.far_multiple = far;
      const auto other = hpr_visibility(pcom, v, hp);
      std::size_t diff = 0;
      for (std::size_t i = 0; i < base.size(); ++i) diff += base[i] != other[i];
      CHECK(static_cast<double>(diff) < 0.01 * static_cast<double>(base.size()));
    }
  }
}
