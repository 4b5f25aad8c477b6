#include <filesystem>
#include <random>

#include "cgseg/error.hpp"
#include "cgseg/scene.hpp"
#include "doctest.h"

using namespace cgseg;

namespace {
std::filesystem::path tmp(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "cgseg_test_scene";
  std::filesystem::create_directories(dir);
  return dir / name;
}
}  // namespace

TEST_CASE("generate_scene: single rectangle extrudes to its height") {
  SceneSpec s;
  s.seed = 1;
  s.n_buildings = 1;
  s.rect_fraction = 1;
  s.l_fraction = 0;
  s.extent_x = s.extent_y = 60;
  s.height_min = s.height_max = 10;
  const Scene sc = generate_scene(s);
  REQUIRE(sc.footprints.size() == 1);
  const auto labels = label_cells(sc.dem, sc.footprints);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    CHECK(sc.dem.heights[i] == (labels[i] == 0 ? 10.0 : 0.0));
  }
}

TEST_CASE("generate_scene is deterministic") {
  SceneSpec s;
  s.seed = 42;
  s.n_buildings = 12;
  s.touch_fraction = 0.5;
  const Scene a = generate_scene(s), b = generate_scene(s);
  CHECK(a.dem.heights == b.dem.heights);
  CHECK(format_footprints(a.footprints) == format_footprints(b.footprints));
}

TEST_CASE("generate_scene: touching pair shares exactly one edge") {
  SceneSpec s;
  s.n_buildings = 2;
  s.touch_fraction = 1.0;
  s.extent_x = s.extent_y = 100;
  const Scene sc = generate_scene(s);
  REQUIRE(sc.footprints.size() == 2);
  const Ring& a = sc.footprints[0].ring;
  const Ring& b = sc.footprints[1].ring;
  int shared = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const Vec2 a0 = a[i], a1 = a[(i + 1) % a.size()];
    for (std::size_t j = 0; j < b.size(); ++j) {
      const Vec2 b0 = b[j], b1 = b[(j + 1) % b.size()];
      if ((a0 - b1).norm() < 1e-9 && (a1 - b0).norm() < 1e-9) ++shared;
    }
  }
  CHECK(shared == 1);
  CHECK(signed_area(a) > 0);
  CHECK(signed_area(b) > 0);
}

TEST_CASE("generate_scene: overcrowded extent is an explicit error") {
  SceneSpec s;
  s.n_buildings = 200;
  s.extent_x = s.extent_y = 50;
  s.max_retries = 50;
  CHECK_THROWS_AS(generate_scene(s), GeometryError);
}

TEST_CASE("DEM round-trip bit-exact, nodata preserved") {
  DemGrid d;
  d.ncols = 2;
  d.nrows = 2;
  d.cellsize = 0.5;
  d.heights = {0, 1, 2, 3};
  save_dem(d, tmp("a.asc"));
  const DemGrid r = load_dem(tmp("a.asc"));
  CHECK(r.heights == d.heights);
  CHECK(r.cellsize == d.cellsize);

  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> u(-50, 50);
  DemGrid e;
  e.ncols = 7;
  e.nrows = 5;
  e.xllcorner = u(rng);
  e.yllcorner = u(rng);
  e.cellsize = 0.1 + std::abs(u(rng));
  for (int i = 0; i < 35; ++i) e.heights.push_back(i % 6 == 0 ? e.nodata : u(rng));
  const DemGrid f = parse_dem(format_dem(e));
  CHECK(f.heights == e.heights);
  CHECK(f.xllcorner == e.xllcorner);
  CHECK(f.cellsize == e.cellsize);
  CHECK(format_dem(f) == format_dem(e));
}

TEST_CASE("DEM parse errors") {
  const std::string missing = "ncols 2\nnrows 1\nxllcorner 0\nyllcorner 0\nNODATA_value -9999\n1 2\n";
  try {
    parse_dem(missing);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("cellsize") != std::string::npos);
  }
  const std::string hdr = "ncols 2\nnrows 2\nxllcorner 0\nyllcorner 0\ncellsize 1\nNODATA_value -9999\n";
  try {
    parse_dem(hdr + "1 2\n3\n");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 8);
  }
  CHECK_THROWS_AS(parse_dem(hdr + "1 2\n3 x\n"), ParseError);
}

TEST_CASE("footprint I/O: orientation, errors, random round-trip") {
  const std::string cw = R"([{"id":"a","ring":[[0,0],[0,1],[1,1],[1,0]],"gt_height":5}])";
  const auto fs = parse_footprints(cw);
  CHECK(signed_area(fs[0].ring) == doctest::Approx(1.0));
  CHECK(*fs[0].gt_height == 5.0);

  const std::string dup = R"([{"id":"x","ring":[[0,0],[1,0],[1,1]]},{"id":"x","ring":[[0,0],[1,0],[1,1]]}])";
  try {
    parse_footprints(dup);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("'x'") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_footprints(R"([{"id":"a","ring":[[0,0],[1,0]]}])"), ParseError);
  CHECK_THROWS_AS(parse_footprints(R"([{"id":"a","ring":[[0,0],[1,1],[1,0],[0,1]]}])"), ParseError);

  // 100 random star-shaped polygons round-trip exactly.
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  FootprintSet set;
  for (int i = 0; i < 100; ++i) {
    Footprint fp;
    fp.id = "p" + std::to_string(i);
    const int n = 3 + static_cast<int>(u(rng) * 8);
    const Vec2 c(1000 * u(rng), 1000 * u(rng));
    for (int k = 0; k < n; ++k) {
      const double a = 2 * 3.14159265358979 * (k + 0.8 * u(rng)) / n;
      const double r = 2 + 10 * u(rng);
      fp.ring.push_back(c + r * Vec2(std::cos(a), std::sin(a)));
    }
    if (u(rng) < 0.8) fp.gt_height = 30 * u(rng);
    set.push_back(fp);
  }
  save_footprints(set, tmp("fp.json"));
  const auto back = load_footprints(tmp("fp.json"));
  REQUIRE(back.size() == set.size());
  for (std::size_t i = 0; i < set.size(); ++i) {
    CHECK(back[i].id == set[i].id);
    CHECK(back[i].ring == set[i].ring);
    CHECK(back[i].gt_height == set[i].gt_height);
  }
}
