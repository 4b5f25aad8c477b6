#include "cgseg/scene.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <nlohmann/json.hpp>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include "cgseg/error.hpp"
#include "cgseg/io_util.hpp"

namespace cgseg {

void DemGrid::validate() const {
  if (ncols < 1 || nrows < 1) throw GeometryError("DEM must have at least one row and column");
  if (!(cellsize > 0.0)) throw GeometryError("DEM cellsize must be positive");
  if (heights.size() != static_cast<std::size_t>(ncols) * nrows) {
    throw GeometryError("DEM holds " + std::to_string(heights.size()) + " heights, expected " +
                        std::to_string(static_cast<std::size_t>(ncols) * nrows));
  }
  for (double h : heights) {
    if (!is_nodata(h) && !std::isfinite(h)) throw GeometryError("DEM contains a non-finite height");
  }
}

void SceneSpec::validate() const {
  auto frac = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (n_buildings < 1) throw ConfigError("n_buildings must be >= 1");
  if (!frac(rect_fraction) || !frac(l_fraction) || !frac(touch_fraction)) {
    throw ConfigError("shape and touch fractions must lie in [0,1]");
  }
  if (std::abs(rect_fraction + l_fraction - 1.0) > 1e-9) throw ConfigError("shape_mix fractions must sum to 1");
  if (!(height_min > 0.0) || height_max < height_min) throw ConfigError("height_range must be positive and ordered");
  if (!(dem_cellsize > 0.0)) throw ConfigError("dem_cellsize must be positive");
  if (!(side_min > 0.0) || side_max < side_min) throw ConfigError("side range must be positive and ordered");
  if (!(extent_x > 0.0) || !(extent_y > 0.0)) throw ConfigError("extent must be positive");
}

namespace {

struct Placed {
  Vec2 center;
  double radius;
};

Ring transform(const Ring& local, const Vec2& center, double angle) {
  Ring out;
  out.reserve(local.size());
  for (const auto& p : local) out.push_back(center + rotated(p, angle));
  return out;
}

Ring l_shape(double w, double l, double notch_w, double notch_l) {
  // Notch removed from the (+x,+y) corner.
  const double hx = w / 2, hy = l / 2;
  return {{-hx, -hy}, {hx, -hy}, {hx, hy - notch_l}, {hx - notch_w, hy - notch_l}, {hx - notch_w, hy}, {-hx, hy}};
}

Ring rectangle(double w, double l) {
  const double hx = w / 2, hy = l / 2;
  return {{-hx, -hy}, {hx, -hy}, {hx, hy}, {-hx, hy}};
}

std::string building_id(int index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "b%04d", index);
  return buf;
}

// Cell window of `grid` that can contain centres inside `box`.
struct Window {
  int col0, col1, row0, row1;
};

Window window_for(const GridDef& grid, const Box2& box) {
  auto col_of = [&](double x) { return static_cast<int>(std::floor((x - grid.x0) / grid.dx)); };
  auto row_of = [&](double y) { return static_cast<int>(std::floor((y - grid.y0) / grid.dy)); };
  int c0 = col_of(box.lo.x()) - 1, c1 = col_of(box.hi.x()) + 1;
  int r0 = row_of(box.lo.y()), r1 = row_of(box.hi.y());
  if (r0 > r1) std::swap(r0, r1);
  r0 -= 1;
  r1 += 1;
  return {std::max(0, c0), std::min(grid.cols - 1, c1), std::max(0, r0), std::min(grid.rows - 1, r1)};
}

template <typename Fn>
void for_each_covered_cell(const GridDef& grid, const Ring& ring, Fn&& fn) {
  const Window w = window_for(grid, bounds(ring));
  if (w.col1 < w.col0 || w.row1 < w.row0) return;
  GridDef sub = grid;
  sub.x0 = grid.x0 + w.col0 * grid.dx;
  sub.y0 = grid.y0 + w.row0 * grid.dy;
  sub.cols = w.col1 - w.col0 + 1;
  sub.rows = w.row1 - w.row0 + 1;
  const RasterizeResult r = rasterize_polygon(ring, sub);
  for (int row = 0; row < sub.rows; ++row) {
    for (int col = 0; col < sub.cols; ++col) {
      if (r.mask(row, col)) fn(w.col0 + col, w.row0 + row);
    }
  }
}

}  // namespace

void extrude_into(DemGrid& dem, const FootprintSet& footprints) {
  const GridDef grid = dem.grid();
  for (const auto& fp : footprints) {
    const double h = fp.gt_height.value_or(0.0);
    for_each_covered_cell(grid, fp.ring, [&](int col, int row) { dem.at(col, row) = h; });
  }
}

std::vector<int> label_cells(const DemGrid& dem, const FootprintSet& footprints) {
  std::vector<int> labels(static_cast<std::size_t>(dem.ncols) * dem.nrows, -1);
  const GridDef grid = dem.grid();
  for (std::size_t i = 0; i < footprints.size(); ++i) {
    for_each_covered_cell(grid, footprints[i].ring, [&](int col, int row) {
      labels[static_cast<std::size_t>(row) * dem.ncols + col] = static_cast<int>(i);
    });
  }
  return labels;
}

Scene generate_scene(const SceneSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double a, double b) { return a + (b - a) * unit(rng); };

  const int n_touching = static_cast<int>(std::lround(spec.touch_fraction * spec.n_buildings));
  const int n_pairs = std::min(n_touching / 2, spec.n_buildings / 2);
  const int n_single = spec.n_buildings - 2 * n_pairs;

  Scene scene;
  std::vector<Placed> placed;

  auto fits = [&](const Vec2& c, double r) {
    if (c.x() - r < spec.border || c.x() + r > spec.extent_x - spec.border) return false;
    if (c.y() - r < spec.border || c.y() + r > spec.extent_y - spec.border) return false;
    for (const auto& p : placed) {
      if ((p.center - c).norm() < p.radius + r + spec.gap) return false;
    }
    return true;
  };
  auto angle = [&] { return spec.axis_aligned ? 0.0 : uniform(0.0, std::numbers::pi); };
  auto height = [&] { return uniform(spec.height_min, spec.height_max); };

  int next_id = 1;
  for (int k = 0; k < n_pairs; ++k) {
    bool ok = false;
    for (int attempt = 0; attempt < spec.max_retries && !ok; ++attempt) {
      const double w1 = uniform(spec.side_min, spec.side_max);
      const double w2 = uniform(spec.side_min, spec.side_max);
      const double l = uniform(spec.side_min, spec.side_max);
      const double phi = angle();
      const double r = 0.5 * std::hypot(w1 + w2, l);
      const Vec2 c(uniform(0.0, spec.extent_x), uniform(0.0, spec.extent_y));
      if (!fits(c, r)) continue;
      // Pair laid out along local x with the shared edge at x = w1 - (w1+w2)/2.
      const double x0 = -(w1 + w2) / 2, xs = x0 + w1, x1 = xs + w2, hy = l / 2;
      const Ring a_local{{x0, -hy}, {xs, -hy}, {xs, hy}, {x0, hy}};
      Ring a = transform(a_local, c, phi);
      // Reuse the shared vertices verbatim so both rings agree bit-for-bit.
      Ring b{a[1], c + rotated(Vec2(x1, -hy), phi), c + rotated(Vec2(x1, hy), phi), a[2]};
      scene.footprints.push_back({building_id(next_id++), std::move(a), height()});
      scene.footprints.push_back({building_id(next_id++), std::move(b), height()});
      placed.push_back({c, r});
      ok = true;
    }
    if (!ok) throw GeometryError("could not place touching pair " + std::to_string(k + 1) + " of " +
                                 std::to_string(n_pairs) + " within the scene extent");
  }
  for (int k = 0; k < n_single; ++k) {
    bool ok = false;
    for (int attempt = 0; attempt < spec.max_retries && !ok; ++attempt) {
      const bool is_l = unit(rng) < spec.l_fraction;
      const double w = uniform(spec.side_min, spec.side_max);
      const double l = uniform(spec.side_min, spec.side_max);
      const double phi = angle();
      const double r = 0.5 * std::hypot(w, l);
      const Vec2 c(uniform(0.0, spec.extent_x), uniform(0.0, spec.extent_y));
      const double nw = uniform(0.3, 0.6) * w, nl = uniform(0.3, 0.6) * l;
      if (!fits(c, r)) continue;
      Ring ring = transform(is_l ? l_shape(w, l, nw, nl) : rectangle(w, l), c, phi);
      scene.footprints.push_back({building_id(next_id++), std::move(ring), height()});
      placed.push_back({c, r});
      ok = true;
    }
    if (!ok) throw GeometryError("could not place building " + std::to_string(n_pairs * 2 + k + 1) + " of " +
                                 std::to_string(spec.n_buildings) + "; enlarge the extent or reduce n_buildings");
  }

  DemGrid& dem = scene.dem;
  dem.cellsize = spec.dem_cellsize;
  dem.ncols = static_cast<int>(std::ceil(spec.extent_x / spec.dem_cellsize));
  dem.nrows = static_cast<int>(std::ceil(spec.extent_y / spec.dem_cellsize));
  dem.heights.assign(static_cast<std::size_t>(dem.ncols) * dem.nrows, 0.0);
  extrude_into(dem, scene.footprints);
  return scene;
}

// ---------------------------------------------------------------- DEM I/O

DemGrid parse_dem(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  std::optional<double> ncols, nrows, xll, yll, cell, nodata;
  DemGrid dem;
  std::size_t expected = 0;
  bool header_done = false;

  auto parse_num = [](std::string_view tok, int ln) {
    double v = 0.0;
    const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (res.ec != std::errc() || res.ptr != tok.data() + tok.size()) {
      throw ParseError("non-numeric value '" + std::string(tok) + "'", ln);
    }
    return v;
  };

  while (std::getline(in, line)) {
    ++line_no;
    const auto tokens = split_ws(line);
    if (tokens.empty()) continue;
    if (!header_done) {
      const char c0 = tokens[0].front();
      const bool numeric = std::isdigit(static_cast<unsigned char>(c0)) || c0 == '-' || c0 == '+' || c0 == '.';
      if (!numeric) {
        if (tokens.size() != 2) throw ParseError("header line must be '<key> <value>'", line_no);
        const std::string key = to_lower(std::string(tokens[0]));
        const double v = parse_num(tokens[1], line_no);
        if (key == "ncols") ncols = v;
        else if (key == "nrows") nrows = v;
        else if (key == "xllcorner") xll = v;
        else if (key == "yllcorner") yll = v;
        else if (key == "cellsize") cell = v;
        else if (key == "nodata_value") nodata = v;
        else throw ParseError("unknown header field '" + std::string(tokens[0]) + "'", line_no);
        continue;
      }
      auto require = [&](const std::optional<double>& f, const char* name) {
        if (!f) throw ParseError(std::string("missing header field '") + name + "'", line_no);
        return *f;
      };
      dem.ncols = static_cast<int>(require(ncols, "ncols"));
      dem.nrows = static_cast<int>(require(nrows, "nrows"));
      dem.xllcorner = require(xll, "xllcorner");
      dem.yllcorner = require(yll, "yllcorner");
      dem.cellsize = require(cell, "cellsize");
      dem.nodata = nodata.value_or(-9999.0);
      if (dem.ncols < 1 || dem.nrows < 1) throw ParseError("ncols and nrows must be >= 1", line_no);
      if (!(dem.cellsize > 0.0)) throw ParseError("cellsize must be positive", line_no);
      expected = static_cast<std::size_t>(dem.ncols) * dem.nrows;
      dem.heights.reserve(expected);
      header_done = true;
    }
    if (tokens.size() != static_cast<std::size_t>(dem.ncols)) {
      throw ParseError("expected " + std::to_string(dem.ncols) + " values, found " + std::to_string(tokens.size()),
                       line_no);
    }
    if (dem.heights.size() + tokens.size() > expected) throw ParseError("more rows than nrows", line_no);
    for (auto tok : tokens) dem.heights.push_back(parse_num(tok, line_no));
  }
  if (!header_done) {
    for (auto [f, name] : {std::pair{&ncols, "ncols"}, {&nrows, "nrows"}, {&xll, "xllcorner"},
                           {&yll, "yllcorner"}, {&cell, "cellsize"}}) {
      if (!*f) throw ParseError(std::string("missing header field '") + name + "'", line_no);
    }
    throw ParseError("no data rows", line_no);
  }
  if (dem.heights.size() != expected) {
    throw ParseError("expected " + std::to_string(dem.nrows) + " rows, found " +
                         std::to_string(dem.heights.size() / dem.ncols),
                     line_no);
  }
  return dem;
}

std::string format_dem(const DemGrid& dem) {
  dem.validate();
  std::string out;
  out += "ncols " + std::to_string(dem.ncols) + "\n";
  out += "nrows " + std::to_string(dem.nrows) + "\n";
  out += "xllcorner " + format_double(dem.xllcorner) + "\n";
  out += "yllcorner " + format_double(dem.yllcorner) + "\n";
  out += "cellsize " + format_double(dem.cellsize) + "\n";
  out += "NODATA_value " + format_double(dem.nodata) + "\n";
  for (int r = 0; r < dem.nrows; ++r) {
    for (int c = 0; c < dem.ncols; ++c) {
      if (c) out += ' ';
      out += format_double(dem.at(c, r));
    }
    out += '\n';
  }
  return out;
}

DemGrid load_dem(const std::filesystem::path& path) { return parse_dem(read_text(path)); }
void save_dem(const DemGrid& dem, const std::filesystem::path& path) { write_text(path, format_dem(dem)); }

// --------------------------------------------------------- footprint I/O

FootprintSet parse_footprints(const std::string& json_text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("footprint JSON: ") + e.what());
  }
  if (!doc.is_array()) throw ParseError("footprint file must hold a JSON array");
  FootprintSet out;
  std::set<std::string> seen;
  for (std::size_t i = 0; i < doc.size(); ++i) {
    const auto& rec = doc[i];
    const std::string where = "footprint record " + std::to_string(i);
    if (!rec.is_object() || !rec.contains("id") || !rec.contains("ring")) {
      throw ParseError(where + ": needs 'id' and 'ring'");
    }
    Footprint fp;
    fp.id = rec.at("id").get<std::string>();
    if (!seen.insert(fp.id).second) throw ParseError("duplicate footprint id '" + fp.id + "'");
    for (const auto& v : rec.at("ring")) {
      if (!v.is_array() || v.size() != 2) throw ParseError(where + ": ring vertices must be [x, y]");
      fp.ring.emplace_back(v[0].get<double>(), v[1].get<double>());
    }
    if (fp.ring.size() >= 2 && fp.ring.front() == fp.ring.back()) fp.ring.pop_back();
    if (fp.ring.size() < 3) throw ParseError("footprint '" + fp.id + "' has fewer than 3 vertices");
    if (!is_simple(fp.ring)) throw ParseError("footprint '" + fp.id + "' is self-intersecting");
    make_ccw(fp.ring);
    if (rec.contains("gt_height") && !rec.at("gt_height").is_null()) fp.gt_height = rec.at("gt_height").get<double>();
    out.push_back(std::move(fp));
  }
  return out;
}

std::string format_footprints(const FootprintSet& footprints) {
  nlohmann::json doc = nlohmann::json::array();
  for (const auto& fp : footprints) {
    nlohmann::json rec;
    rec["id"] = fp.id;
    nlohmann::json ring = nlohmann::json::array();
    for (const auto& p : fp.ring) ring.push_back({p.x(), p.y()});
    rec["ring"] = std::move(ring);
    if (fp.gt_height) rec["gt_height"] = *fp.gt_height;
    doc.push_back(std::move(rec));
  }
  return doc.dump(1) + "\n";
}

FootprintSet load_footprints(const std::filesystem::path& path) { return parse_footprints(read_text(path)); }
void save_footprints(const FootprintSet& footprints, const std::filesystem::path& path) {
  write_text(path, format_footprints(footprints));
}

int find_footprint(const FootprintSet& footprints, const std::string& id) {
  for (std::size_t i = 0; i < footprints.size(); ++i) {
    if (footprints[i].id == id) return static_cast<int>(i);
  }
  return -1;
}

}  // namespace cgseg
