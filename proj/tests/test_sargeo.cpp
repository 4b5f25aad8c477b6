#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "cgseg/error.hpp"
#include "cgseg/sargeo.hpp"
#include "doctest.h"

using namespace cgseg;
namespace fs = std::filesystem;

namespace {

constexpr double kDeg = 3.14159265358979323846 / 180.0;

Footprint rect(const std::string& id, double x0, double y0, double x1, double y1, double h) {
  return {id, {{x0, y0}, {x1, y0}, {x1, y1}, {x0, y1}}, h};
}

struct Pipeline {
  Scene scene;
  PointCloud svs;
  SarFrame frame;
  MaskStack gt, cbf, svs_masks;
};

Pipeline run(double extent_x, double extent_y, const FootprintSet& fps, const ViewGeometry& view = {}) {
  Pipeline p;
  p.scene.dem.ncols = static_cast<int>(extent_x / 0.5);
  p.scene.dem.nrows = static_cast<int>(extent_y / 0.5);
  p.scene.dem.cellsize = 0.5;
  p.scene.dem.heights.assign(static_cast<std::size_t>(p.scene.dem.ncols) * p.scene.dem.nrows, 0.0);
  p.scene.footprints = fps;
  extrude_into(p.scene.dem, fps);
  const auto pcom = fill_vertical(dem_to_cloud(p.scene.dem, fps), p.scene.dem, {});
  p.svs = hpr_visible(pcom, view);
  p.frame = make_frame(pcom, view, 0.871, 0.455);
  std::vector<BuildingSelection> sel;
  for (std::size_t i = 0; i < fps.size(); ++i) {
    auto pts = select_building_points(p.svs, static_cast<int>(i), fps[i], 2.0);
    if (pts) sel.push_back({fps[i].id, *pts});
  }
  p.gt = make_gt_masks(sel, p.frame);
  p.cbf = make_footprint_masks(fps, p.frame, FootprintRepr::kCbf);
  p.svs_masks = make_footprint_masks(fps, p.frame, FootprintRepr::kSvs);
  return p;
}

// Median over rows of the run of (gt \ cbf) pixels immediately on the near
// (low column) side of the footprint.
double near_side_run_median(const Mask& gt, const Mask& cbf) {
  std::vector<int> runs;
  for (Eigen::Index r = 0; r < cbf.rows(); ++r) {
    Eigen::Index c0 = -1;
    for (Eigen::Index c = 0; c < cbf.cols(); ++c) {
      if (cbf(r, c)) {
        c0 = c;
        break;
      }
    }
    if (c0 < 0) continue;
    int run = 0;
    for (Eigen::Index c = c0 - 1; c >= 0 && gt(r, c) && !cbf(r, c); --c) ++run;
    runs.push_back(run);
  }
  std::sort(runs.begin(), runs.end());
  return runs.empty() ? -1.0 : runs[runs.size() / 2];
}

}  // namespace

TEST_CASE("project_point: slant range with and without height") {
  SarFrame f;
  f.spacing_rg = f.spacing_az = 1.0;
  const Vec2 base = project_point(Vec3(100, 0, 0), f);
  CHECK(base.x() == doctest::Approx(58.7785).epsilon(1e-6));
  CHECK(base.y() == doctest::Approx(0.0));
  const Vec2 up = project_point(Vec3(100, 0, 10), f);
  CHECK(up.x() == doctest::Approx(50.6883).epsilon(1e-5));
  // Along-track displacement maps to azimuth only.
  const Vec2 az = project_point(Vec3(0, 7, 0), f);
  CHECK(az.x() == doctest::Approx(0.0));
  CHECK(az.y() == doctest::Approx(7.0));
}

TEST_CASE("project_point: affine in height, monotone in ground range") {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-100, 100);
  for (int t = 0; t < 50; ++t) {
    SarFrame f;
    f.view.heading_deg = std::abs(u(rng)) * 3.59;
    f.view.incidence_deg = 20 + std::abs(u(rng)) * 0.4;
    f.centroid = Vec2(u(rng), u(rng));
    const Vec3 p(u(rng), u(rng), std::abs(u(rng)) / 5);
    const Vec3 p2(p.x(), p.y(), 2 * p.z());
    const double shift = project_point(p, f).x() - project_point(p2, f).x();
    CHECK(shift == doctest::Approx(p.z() * std::cos(f.view.incidence_deg * kDeg) / f.spacing_rg));
    const Vec2 g = f.view.ground_range_dir();
    const Vec3 q(p.x() + 0.1 * g.x(), p.y() + 0.1 * g.y(), 0.0);
    CHECK(project_point(q, f).x() > project_point(Vec3(p.x(), p.y(), 0.0), f).x());
  }
}

TEST_CASE("make_frame keeps every point inside the margin") {
  const Pipeline p = run(30, 30, {rect("a", 10, 10, 18, 16, 12)});
  for (const auto& q : p.svs) {
    const Vec2 px = project_point(q.pos, p.frame);
    CHECK(px.x() >= 5.0 - 1e-9);
    CHECK(px.y() >= 5.0 - 1e-9);
    CHECK(px.x() <= p.frame.width - 6.0 + 1e-9);
    CHECK(px.y() <= p.frame.height - 6.0 + 1e-9);
  }
}

TEST_CASE("gt mask: layover of a 10 m box matches h cos(theta)") {
  const Pipeline p = run(40, 40, {rect("box", 14, 14, 26, 26, 10)});
  REQUIRE(p.gt.masks.count("box"));
  const double expected = 10.0 * std::cos(36.0 * kDeg) / 0.455;  // 17.78 px
  const double got = near_side_run_median(p.gt.masks.at("box"), p.cbf.masks.at("box"));
  CHECK(std::abs(got - expected) <= 1.0);
}

TEST_CASE("gt mask: rotated heading keeps the layover law") {
  ViewGeometry v;
  v.heading_deg = 194.34;
  // A square aligned with the flight direction keeps rows parallel to edges.
  const double a = v.heading_deg * kDeg;
  const Vec2 fwd(std::sin(a), std::cos(a)), rg = v.ground_range_dir();
  const Vec2 c(20, 20);
  Footprint fp{"r", {c - 6 * fwd - 6 * rg, c - 6 * fwd + 6 * rg, c + 6 * fwd + 6 * rg, c + 6 * fwd - 6 * rg}, 14.0};
  make_ccw(fp.ring);
  const Pipeline p = run(40, 40, {fp}, v);
  const double expected = 14.0 * std::cos(36.0 * kDeg) / 0.455;
  CHECK(std::abs(near_side_run_median(p.gt.masks.at("r"), p.cbf.masks.at("r")) - expected) <= 1.0);
}

TEST_CASE("gt mask: zero-height slab is close to its footprint") {
  // Selection bypasses the jump rule here: the slab's own cells at h = 0.
  const Footprint fp = rect("s", 10, 10, 20, 20, 0);
  DemGrid dem;
  dem.ncols = dem.nrows = 60;
  dem.cellsize = 0.5;
  dem.heights.assign(3600, 0.0);
  const auto cloud = dem_to_cloud(dem, {fp});
  PointCloud slab;
  for (const auto& q : cloud)
    if (!q.label.is_ground()) slab.push_back(q);
  const SarFrame f = make_frame(cloud, {}, 0.871, 0.455);
  const Mask gt = make_gt_masks({{"s", slab}}, f).masks.at("s");
  const Mask cbf = make_footprint_masks({fp}, f, FootprintRepr::kCbf).masks.at("s");
  const long inter = area(gt * cbf), uni = area(gt.max(cbf));
  CHECK(static_cast<double>(inter) / static_cast<double>(uni) > 0.85);
}

TEST_CASE("gt masks overlap when a far building's layover reaches a near one") {
  const Pipeline p = run(50, 30, {rect("near", 8, 10, 18, 20, 6), rect("far", 20, 10, 30, 20, 25)});
  const Mask& a = p.gt.masks.at("near");
  const Mask& b = p.gt.masks.at("far");
  CHECK(area(a * b) > 0);
}

TEST_CASE("gt masks: off-frame building is flagged empty") {
  SarFrame f;
  f.width = f.height = 10;
  const PointCloud far_away = {{Vec3(1e4, 1e4, 0), Label{0}}};
  const MaskStack s = make_gt_masks({{"x", far_away}}, f);
  CHECK(s.flagged.count("x") == 1);
  CHECK(area(s.masks.at("x")) == 0);
}

TEST_CASE("footprint_visibility: delta bounds and shared edges") {
  SarFrame f;  // heading 0, right look: ground range is +x
  const Footprint sq = rect("a", 0, 0, 4, 4, 5);
  const auto vis = footprint_visibility(sq, {sq}, f);
  REQUIRE(vis.size() == 4);
  // Edges: south (normal -y), east (+x), north (+y), west (-x).
  CHECK(vis[0].delta_deg == doctest::Approx(90.0));
  CHECK_FALSE(vis[0].visible);
  CHECK(vis[1].delta_deg == doctest::Approx(0.0));
  CHECK_FALSE(vis[1].visible);
  CHECK_FALSE(vis[2].visible);
  CHECK(vis[3].delta_deg == doctest::Approx(180.0));
  CHECK(vis[3].visible);

  const Footprint left = rect("b", -4, 0, 0, 4, 5);
  const auto shared = footprint_visibility(sq, {sq, left}, f);
  CHECK(shared[3].shared);
  CHECK_FALSE(shared[3].visible);
  // Tolerance: a neighbour off by 1e-7 m still shares the edge.
  const Footprint near_left = rect("c", -4, 0, 1e-7, 4, 5);
  CHECK(footprint_visibility(sq, {sq, near_left}, f)[3].shared);
  const Footprint off_left = rect("d", -4, 0, -1e-3, 4, 5);
  CHECK(footprint_visibility(sq, {sq, off_left}, f)[3].visible);
}

TEST_CASE("footprint masks: CBF area and SVS containment") {
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(0, 1);
  for (int t = 0; t < 10; ++t) {
    SarFrame f;
    f.view.heading_deg = 360 * u(rng);
    f.width = 200;
    f.height = 120;
    f.origin_rg = -60;
    f.origin_az = -50;
    Ring ring = {{0, 0}, {8 + 10 * u(rng), 0}, {8 + 10 * u(rng), 12}, {0, 6 + 6 * u(rng)}};
    make_ccw(ring);
    const Footprint fp{"q", ring, 10};
    const auto cbf = make_footprint_masks({fp}, f, FootprintRepr::kCbf);
    const auto svs = make_footprint_masks({fp}, f, FootprintRepr::kSvs);
    const Mask& c = cbf.masks.at("q");
    const Mask& s = svs.masks.at("q");
    // Ground pixel area is spacing_az * spacing_rg / sin(theta).
    const double px_area = f.spacing_az * f.spacing_rg / std::sin(36.0 * kDeg);
    double perim = 0;
    for (std::size_t i = 0; i < fp.ring.size(); ++i) perim += (fp.ring[(i + 1) % 4] - fp.ring[i]).norm();
    const double expected = signed_area(fp.ring) / px_area;
    const double band = perim * 2.0 / std::min(f.spacing_az, f.spacing_rg / std::sin(36.0 * kDeg));
    CHECK(std::abs(static_cast<double>(area(c)) - expected) <= band);
    const Mask boundary = c * (1 - erode3(c));
    const Mask ring_band = dilate3(dilate3(boundary));
    CHECK(area(s) > 0);
    CHECK(area(s * (1 - ring_band)) == 0);
  }
}

TEST_CASE("footprint masks: a single visible edge gives a thin segment") {
  SarFrame f;
  f.width = 100;
  f.height = 100;
  f.origin_rg = -20;
  f.origin_az = -20;
  const auto svs = make_footprint_masks({rect("a", 0, 0, 10, 20, 5)}, f, FootprintRepr::kSvs);
  const PixelBox b = bbox(svs.masks.at("a"));
  CHECK(b.width() <= 3);
  CHECK(b.height() >= 20);
}

TEST_CASE("footprint masks: degenerate footprint is flagged") {
  SarFrame f;
  f.width = f.height = 50;
  const Footprint flat{"z", {{0, 0}, {1, 0}, {2, 0}}, 3};
  const auto cbf = make_footprint_masks({flat}, f, FootprintRepr::kCbf);
  CHECK(cbf.flagged.count("z"));
  CHECK(area(cbf.masks.at("z")) == 0);
}

TEST_CASE("intensity: speckle has unit mean") {
  SarFrame f;
  f.width = 1000;
  f.height = 1000;
  IntensityParams ip;
  ip.floor = 1.0;
  ip.normalize = false;
  const auto img = simulate_intensity({}, f, 77, ip);
  CHECK(img.values.mean() == doctest::Approx(1.0).epsilon(0.01));
}

TEST_CASE("intensity: shadow is dim, layover bright, output deterministic") {
  const Pipeline p = run(40, 40, {rect("box", 14, 14, 26, 26, 10)});
  IntensityParams raw;
  raw.normalize = false;
  const auto img = simulate_intensity(p.svs, p.frame, 5, raw);
  const CountRaster n = scatterer_counts(p.svs, p.frame);
  // Expected intensity is (n + floor); compare mean counts in the two regions.
  const Mask& gt = p.gt.masks.at("box");
  const Mask& cbf = p.cbf.masks.at("box");
  double lay = 0, lay_n = 0, ground = 0, ground_n = 0;
  for (Eigen::Index r = 0; r < n.rows(); ++r) {
    for (Eigen::Index c = 0; c < n.cols(); ++c) {
      if (gt(r, c) && !cbf(r, c)) {
        lay += img.values(r, c);
        ++lay_n;
      } else if (!gt(r, c) && n(r, c) > 0 && c < 20) {
        ground += img.values(r, c);
        ++ground_n;
      }
      if (n(r, c) == 0) CHECK(img.values(r, c) <= 0.05 * 30);
    }
  }
  REQUIRE(lay_n > 0);
  REQUIRE(ground_n > 0);
  CHECK(lay / lay_n > ground / ground_n);

  const auto a = simulate_intensity(p.svs, p.frame, 5);
  const auto b = simulate_intensity(p.svs, p.frame, 5);
  const auto c = simulate_intensity(p.svs, p.frame, 6);
  CHECK((a.values == b.values).all());
  CHECK_FALSE((a.values == c.values).all());
  CHECK(a.values.minCoeff() >= 0.0);
  CHECK(a.values.maxCoeff() <= 1.0);
}

TEST_CASE("postprocess_filter: drops dark and empty buildings") {
  SarFrame f;
  f.width = 40;
  f.height = 40;
  IntensityImage img{f, Image::Constant(40, 40, 0.3)};
  img.values.block(0, 0, 10, 10) = 0.9;
  img.values.block(20, 20, 10, 10) = 0.05;
  MaskStack s;
  s.frame = f;
  s.masks["bright"] = s.blank();
  s.masks["bright"].block(0, 0, 10, 10) = 1;
  s.masks["dark"] = s.blank();
  s.masks["dark"].block(20, 20, 10, 10) = 1;
  s.masks["empty"] = s.blank();
  const FilterResult r = postprocess_filter(s, img);
  CHECK(r.mode == doctest::Approx((std::floor(0.3 * 256) + 0.5) / 256));
  CHECK(r.kept.masks.count("bright") == 1);
  CHECK(r.kept.masks.count("dark") == 0);
  CHECK(r.kept.masks.count("empty") == 0);
  CHECK(r.kept.flagged.count("empty") == 1);
  CHECK(r.dropped.size() == 2);
}

TEST_CASE("pgm: mask and intensity round trips") {
  const fs::path dir = fs::temp_directory_path() / "cgseg_test_sargeo";
  fs::remove_all(dir);
  std::mt19937_64 rng(4);
  for (int t = 0; t < 20; ++t) {
    Mask m(1 + static_cast<int>(rng() % 40), 1 + static_cast<int>(rng() % 40));
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng() % 2;
    save_mask_pgm(m, dir / "m.pgm");
    const Mask back = load_mask_pgm(dir / "m.pgm");
    REQUIRE(back.rows() == m.rows());
    CHECK((back == m).all());
  }
  SarFrame f;
  f.width = 17;
  f.height = 9;
  f.centroid = Vec2(3.25, -1.5);
  f.origin_rg = -12.75;
  IntensityImage img{f, Image(9, 17)};
  for (Eigen::Index i = 0; i < img.values.size(); ++i) img.values.data()[i] = static_cast<double>(rng() % 65536) / 65535.0;
  save_intensity(img, dir / "intensity.pgm");
  const auto back = load_intensity(dir / "intensity.pgm");
  CHECK(back.frame == f);
  CHECK((back.values == img.values).all());

  MaskStack s;
  s.frame = f;
  s.masks["b0001"] = s.blank();
  s.masks["b0001"](3, 4) = 1;
  s.masks["b0002"] = s.blank();
  save_mask_dir(s, dir / "gt");
  const MaskStack sb = load_mask_dir(dir / "gt", f);
  REQUIRE(sb.masks.size() == 2);
  CHECK((sb.masks.at("b0001") == s.masks.at("b0001")).all());
  fs::remove_all(dir);
}

TEST_CASE("pgm: malformed input") {
  const fs::path p = fs::temp_directory_path() / "cgseg_bad.pgm";
  std::ofstream(p, std::ios::binary) << "P2\n1 1\n255\n0";
  CHECK_THROWS_AS(load_mask_pgm(p), ParseError);
  std::ofstream(p, std::ios::binary) << "P5\n2 2\n255\n\x00";
  CHECK_THROWS_AS(load_mask_pgm(p), ParseError);
  fs::remove(p);
}
