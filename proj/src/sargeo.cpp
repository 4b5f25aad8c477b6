#include "cgseg/sargeo.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <numbers>
#include <random>

#include "cgseg/error.hpp"
#include "cgseg/io_util.hpp"

namespace cgseg {

void SarFrame::validate() const {
  view.validate();
  if (!(spacing_az > 0.0) || !(spacing_rg > 0.0)) throw ConfigError("pixel spacings must be positive");
  if (width < 1 || height < 1) throw ConfigError("frame must be at least 1x1 pixel");
}

void to_json(nlohmann::json& j, const SarFrame& f) {
  j = {{"spacing_az", f.spacing_az},
       {"spacing_rg", f.spacing_rg},
       {"incidence_deg", f.view.incidence_deg},
       {"heading_deg", f.view.heading_deg},
       {"look", f.view.look == LookSide::kRight ? "right" : "left"},
       {"centroid", {f.centroid.x(), f.centroid.y()}},
       {"origin_az", f.origin_az},
       {"origin_rg", f.origin_rg},
       {"width", f.width},
       {"height", f.height}};
}

void from_json(const nlohmann::json& j, SarFrame& f) {
  f.spacing_az = j.at("spacing_az").get<double>();
  f.spacing_rg = j.at("spacing_rg").get<double>();
  f.view.incidence_deg = j.at("incidence_deg").get<double>();
  f.view.heading_deg = j.at("heading_deg").get<double>();
  const std::string look = j.at("look").get<std::string>();
  if (look != "right" && look != "left") throw ConfigError("look must be 'left' or 'right'");
  f.view.look = look == "right" ? LookSide::kRight : LookSide::kLeft;
  f.centroid = Vec2(j.at("centroid").at(0).get<double>(), j.at("centroid").at(1).get<double>());
  f.origin_az = j.at("origin_az").get<double>();
  f.origin_rg = j.at("origin_rg").get<double>();
  f.width = j.at("width").get<int>();
  f.height = j.at("height").get<int>();
  f.validate();
}

namespace {

// Unscaled (slant range, azimuth) in meters relative to the frame centroid.
Vec2 slant_coords(const Vec3& p, const ViewGeometry& view, const Vec2& centroid) {
  const Vec2 rel = p.head<2>() - centroid;
  const double th = view.incidence_rad();
  const double g = rel.dot(view.ground_range_dir());
  return {g * std::sin(th) - p.z() * std::cos(th), rel.dot(view.flight_dir())};
}

}  // namespace

Vec2 project_point(const Vec3& p, const SarFrame& frame) {
  const Vec2 s = slant_coords(p, frame.view, frame.centroid);
  return {(s.x() - frame.origin_rg) / frame.spacing_rg, (s.y() - frame.origin_az) / frame.spacing_az};
}

SarFrame make_frame(const PointCloud& scene, const ViewGeometry& view, double spacing_az, double spacing_rg,
                    int margin) {
  if (scene.empty()) throw GeometryError("cannot size a frame for an empty scene");
  SarFrame f;
  f.view = view;
  f.spacing_az = spacing_az;
  f.spacing_rg = spacing_rg;
  Vec2 c = Vec2::Zero();
  for (const auto& p : scene) c += p.pos.head<2>();
  f.centroid = c / static_cast<double>(scene.size());
  double rg0 = 1e300, rg1 = -1e300, az0 = 1e300, az1 = -1e300;
  for (const auto& p : scene) {
    const Vec2 s = slant_coords(p.pos, view, f.centroid);
    rg0 = std::min(rg0, s.x());
    rg1 = std::max(rg1, s.x());
    az0 = std::min(az0, s.y());
    az1 = std::max(az1, s.y());
  }
  f.origin_rg = rg0 - margin * spacing_rg;
  f.origin_az = az0 - margin * spacing_az;
  f.width = static_cast<int>(std::ceil((rg1 - rg0) / spacing_rg)) + 2 * margin + 1;
  f.height = static_cast<int>(std::ceil((az1 - az0) / spacing_az)) + 2 * margin + 1;
  f.validate();
  return f;
}

namespace {

bool pixel_of(const Vec3& p, const SarFrame& frame, int& col, int& row) {
  const Vec2 q = project_point(p, frame);
  col = static_cast<int>(std::lround(q.x()));
  row = static_cast<int>(std::lround(q.y()));
  return col >= 0 && row >= 0 && col < frame.width && row < frame.height;
}

}  // namespace

MaskStack make_gt_masks(const std::vector<BuildingSelection>& selections, const SarFrame& frame) {
  MaskStack out;
  out.frame = frame;
  for (const auto& sel : selections) {
    Mask m = out.blank();
    bool any = false;
    for (const auto& p : sel.points) {
      int c, r;
      if (!pixel_of(p.pos, frame, c, r)) continue;
      m(r, c) = 1;
      any = true;
    }
    if (!any) out.flagged.insert(sel.id);
    out.masks[sel.id] = close3(m);
  }
  return out;
}

std::vector<EdgeVisibility> footprint_visibility(const Footprint& footprint, const FootprintSet& all,
                                                 const SarFrame& frame, double shared_tol) {
  const Vec2 r = frame.view.ground_range_dir();
  const Ring& ring = footprint.ring;
  const std::size_t n = ring.size();
  auto same = [&](const Vec2& a, const Vec2& b) { return (a - b).norm() <= shared_tol; };
  std::vector<EdgeVisibility> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const Vec2& a = ring[i];
    const Vec2& b = ring[(i + 1) % n];
    const Vec2 e = b - a;
    const Vec2 normal = Vec2(e.y(), -e.x()).normalized();  // outward for a CCW ring
    const double c = std::clamp(normal.dot(r), -1.0, 1.0);
    out[i].delta_deg = std::acos(c) * 180.0 / std::numbers::pi;
    for (const auto& other : all) {
      if (&other == &footprint || other.id == footprint.id) continue;
      const std::size_t m = other.ring.size();
      for (std::size_t k = 0; k < m && !out[i].shared; ++k) {
        const Vec2& p = other.ring[k];
        const Vec2& q = other.ring[(k + 1) % m];
        out[i].shared = (same(a, p) && same(b, q)) || (same(a, q) && same(b, p));
      }
      if (out[i].shared) break;
    }
    // delta in (90, 180] is exactly a negative cosine.
    out[i].visible = c < 0.0 && !out[i].shared;
  }
  return out;
}

MaskStack make_footprint_masks(const FootprintSet& footprints, const SarFrame& frame, FootprintRepr repr,
                               double ground_h) {
  MaskStack out;
  out.frame = frame;
  const GridDef grid = frame.grid();
  for (const auto& fp : footprints) {
    Ring img;
    img.reserve(fp.ring.size());
    for (const auto& v : fp.ring) img.push_back(project_point(Vec3(v.x(), v.y(), ground_h), frame));
    if (repr == FootprintRepr::kCbf) {
      RasterizeResult rr = rasterize_polygon(img, grid);
      if (rr.degenerate || area(rr.mask) == 0) out.flagged.insert(fp.id);
      out.masks[fp.id] = std::move(rr.mask);
    } else {
      Mask m = out.blank();
      const auto vis = footprint_visibility(fp, footprints, frame);
      for (std::size_t i = 0; i < img.size(); ++i) {
        if (vis[i].visible) draw_segment(m, img[i], img[(i + 1) % img.size()]);
      }
      if (area(m) == 0) out.flagged.insert(fp.id);
      out.masks[fp.id] = dilate3(m);
    }
  }
  return out;
}

CountRaster scatterer_counts(const PointCloud& cloud, const SarFrame& frame) {
  CountRaster n = CountRaster::Zero(frame.height, frame.width);
  for (const auto& p : cloud) {
    int c, r;
    if (pixel_of(p.pos, frame, c, r)) ++n(r, c);
  }
  return n;
}

IntensityImage simulate_intensity(const PointCloud& p_svs, const SarFrame& frame, std::uint64_t seed,
                                  const IntensityParams& params) {
  const CountRaster n = scatterer_counts(p_svs, frame);
  IntensityImage img{frame, Image(frame.height, frame.width)};
  for (int r = 0; r < frame.height; ++r) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(r)};
    std::mt19937_64 rng(seq);
    std::exponential_distribution<double> speckle(1.0);
    for (int c = 0; c < frame.width; ++c) img.values(r, c) = (n(r, c) + params.floor) * speckle(rng);
  }
  if (!params.normalize) return img;
  std::vector<double> v(img.values.data(), img.values.data() + img.values.size());
  const auto k = static_cast<std::size_t>(std::floor(params.percentile * static_cast<double>(v.size() - 1)));
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k), v.end());
  const double scale = v[k];
  if (scale > 0.0) img.values = (img.values / scale).min(1.0);
  return img;
}

double intensity_mode(const Image& values) {
  std::array<long, 256> hist{};
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    const double x = std::clamp(values.data()[i], 0.0, 1.0);
    ++hist[std::min<std::size_t>(255, static_cast<std::size_t>(x * 256.0))];
  }
  const auto best = std::max_element(hist.begin(), hist.end()) - hist.begin();
  return (static_cast<double>(best) + 0.5) / 256.0;
}

FilterResult postprocess_filter(const MaskStack& masks, const IntensityImage& intensity) {
  if (intensity.values.rows() != masks.frame.height || intensity.values.cols() != masks.frame.width) {
    throw ShapeError("intensity image and masks do not share a frame");
  }
  FilterResult out;
  out.kept.frame = masks.frame;
  out.mode = intensity_mode(intensity.values);
  for (const auto& [id, m] : masks.masks) {
    const long a = area(m);
    if (a == 0) {
      out.dropped.push_back(id);
      out.kept.flagged.insert(id);
      continue;
    }
    const double mean = (intensity.values * m.cast<double>()).sum() / static_cast<double>(a);
    if (mean < out.mode) {
      out.dropped.push_back(id);
    } else {
      out.kept.masks[id] = m;
      if (masks.flagged.count(id)) out.kept.flagged.insert(id);
    }
  }
  return out;
}

namespace {

struct PgmData {
  int width = 0, height = 0, maxval = 0;
  std::string pixels;
};

PgmData parse_pgm(const std::string& bytes, const std::filesystem::path& path) {
  // Header: "P5" then width, height, maxval separated by whitespace, comments
  // allowed, then a single whitespace byte.
  std::size_t pos = 0;
  auto fail = [&](const std::string& what) { throw ParseError(path.string() + ": " + what); };
  auto skip = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto number = [&] {
    skip();
    long v = 0;
    const std::size_t start = pos;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) v = v * 10 + (bytes[pos++] - '0');
    if (pos == start || v > 1 << 24) fail("malformed PGM header");
    return static_cast<int>(v);
  };
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') fail("not a binary PGM (P5)");
  pos = 2;
  PgmData d;
  d.width = number();
  d.height = number();
  d.maxval = number();
  if (d.width < 1 || d.height < 1 || d.maxval < 1 || d.maxval > 65535) fail("bad PGM dimensions or maxval");
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) fail("malformed PGM header");
  ++pos;
  const std::size_t bpp = d.maxval > 255 ? 2 : 1;
  const std::size_t need = static_cast<std::size_t>(d.width) * d.height * bpp;
  if (bytes.size() - pos != need) fail("PGM pixel data has the wrong length");
  d.pixels = bytes.substr(pos);
  return d;
}

std::string pgm_header(int width, int height, int maxval) {
  return "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n" + std::to_string(maxval) + "\n";
}

std::filesystem::path sidecar_path(std::filesystem::path p) { return p.replace_extension(".json"); }

}  // namespace

void save_mask_pgm(const Mask& mask, const std::filesystem::path& path) {
  std::string out = pgm_header(static_cast<int>(mask.cols()), static_cast<int>(mask.rows()), 255);
  out.reserve(out.size() + static_cast<std::size_t>(mask.size()));
  for (Eigen::Index i = 0; i < mask.size(); ++i) out.push_back(mask.data()[i] ? static_cast<char>(255) : '\0');
  write_binary(path, out);
}

Mask load_mask_pgm(const std::filesystem::path& path) {
  const PgmData d = parse_pgm(read_binary(path), path);
  if (d.maxval != 255) throw ParseError(path.string() + ": mask PGM must have maxval 255");
  Mask m(d.height, d.width);
  for (std::size_t i = 0; i < d.pixels.size(); ++i) {
    const auto v = static_cast<unsigned char>(d.pixels[i]);
    if (v != 0 && v != 255) throw ParseError(path.string() + ": mask pixels must be 0 or 255");
    m.data()[i] = v ? 1 : 0;
  }
  return m;
}

void save_intensity(const IntensityImage& img, const std::filesystem::path& pgm_path) {
  std::string out = pgm_header(img.frame.width, img.frame.height, 65535);
  for (Eigen::Index i = 0; i < img.values.size(); ++i) {
    const auto q = static_cast<std::uint16_t>(std::lround(std::clamp(img.values.data()[i], 0.0, 1.0) * 65535.0));
    out.push_back(static_cast<char>(q >> 8));
    out.push_back(static_cast<char>(q & 0xff));
  }
  write_binary(pgm_path, out);
  write_text(sidecar_path(pgm_path), nlohmann::json(img.frame).dump(2) + "\n");
}

IntensityImage load_intensity(const std::filesystem::path& pgm_path) {
  IntensityImage img;
  img.frame = nlohmann::json::parse(read_text(sidecar_path(pgm_path))).get<SarFrame>();
  const PgmData d = parse_pgm(read_binary(pgm_path), pgm_path);
  if (d.maxval != 65535 || d.width != img.frame.width || d.height != img.frame.height) {
    throw ParseError(pgm_path.string() + ": intensity image does not match its sidecar frame");
  }
  img.values.resize(d.height, d.width);
  for (Eigen::Index i = 0; i < img.values.size(); ++i) {
    const auto hi = static_cast<unsigned char>(d.pixels[2 * i]);
    const auto lo = static_cast<unsigned char>(d.pixels[2 * i + 1]);
    img.values.data()[i] = static_cast<double>((hi << 8) | lo) / 65535.0;
  }
  return img;
}

void save_mask_dir(const MaskStack& stack, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (const auto& [id, m] : stack.masks) save_mask_pgm(m, dir / (id + ".pgm"));
}

MaskStack load_mask_dir(const std::filesystem::path& dir, const SarFrame& frame) {
  MaskStack out;
  out.frame = frame;
  if (!std::filesystem::is_directory(dir)) throw Error("mask directory not found: " + dir.string());
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.path().extension() != ".pgm") continue;
    Mask m = load_mask_pgm(entry.path());
    if (m.rows() != frame.height || m.cols() != frame.width) {
      throw ShapeError(entry.path().string() + ": mask size does not match the frame");
    }
    out.masks[entry.path().stem().string()] = std::move(m);
  }
  return out;
}

}  // namespace cgseg
