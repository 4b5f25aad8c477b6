#include "cgseg/cloud.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "cgseg/error.hpp"
#include "cgseg/hull.hpp"
#include "cgseg/io_util.hpp"

namespace cgseg {

void ViewGeometry::validate() const {
  if (!(incidence_deg > 0.0 && incidence_deg < 90.0)) throw ConfigError("incidence angle must lie in (0, 90) degrees");
  if (!(heading_deg >= 0.0 && heading_deg < 360.0)) throw ConfigError("heading must lie in [0, 360) degrees");
}

double ViewGeometry::incidence_rad() const { return incidence_deg * std::numbers::pi / 180.0; }

Vec2 ViewGeometry::flight_dir() const {
  const double psi = heading_deg * std::numbers::pi / 180.0;
  return {std::sin(psi), std::cos(psi)};
}

Vec2 ViewGeometry::ground_range_dir() const {
  const Vec2 a = flight_dir();
  const Vec2 right(a.y(), -a.x());  // clockwise quarter turn
  return look == LookSide::kRight ? right : Vec2(-right);
}

void VerticalFillParams::validate() const {
  if (!(h_step > 0.0) || !(jump_threshold > 0.0)) throw ConfigError("h_step and jump_threshold must be positive");
  if (h_step > jump_threshold) throw ConfigError("h_step must not exceed jump_threshold");
}

PointCloud dem_to_cloud(const DemGrid& dem, const FootprintSet& footprints) {
  dem.validate();
  const std::vector<int> labels = label_cells(dem, footprints);
  PointCloud cloud;
  cloud.reserve(dem.heights.size());
  for (int r = 0; r < dem.nrows; ++r) {
    for (int c = 0; c < dem.ncols; ++c) {
      const double h = dem.at(c, r);
      if (dem.is_nodata(h)) continue;
      const Vec2 xy = dem.cell_center(c, r);
      cloud.push_back({Vec3(xy.x(), xy.y(), h), Label{labels[static_cast<std::size_t>(r) * dem.ncols + c]}});
    }
  }
  return cloud;
}

PointCloud fill_vertical(const PointCloud& p_dem, const DemGrid& dem, const VerticalFillParams& params) {
  params.validate();
  PointCloud out = p_dem;
  std::size_t k = 0;
  for (int r = 0; r < dem.nrows; ++r) {
    for (int c = 0; c < dem.ncols; ++c) {
      const double h = dem.at(c, r);
      if (dem.is_nodata(h)) continue;
      if (k >= p_dem.size()) throw GeometryError("P_dem does not match the DEM grid");
      const LabeledPoint& g = p_dem[k++];
      if (g.label.is_ground()) continue;
      double h0 = h, he = h;
      constexpr int kOffsets[4][2] = {{1, 0}, {-1, 0}, {0, 1}, {0, -1}};
      for (const auto& o : kOffsets) {
        const int cc = c + o[0], rr = r + o[1];
        if (cc < 0 || cc >= dem.ncols || rr < 0 || rr >= dem.nrows) continue;
        const double hn = dem.at(cc, rr);
        if (dem.is_nodata(hn)) continue;
        h0 = std::min(h0, hn);
        he = std::max(he, hn);
      }
      if (he - h0 <= params.jump_threshold) continue;
      for (int i = 1;; ++i) {
        const double hi = h0 + i * params.h_step;
        if (!(hi < he)) break;
        out.push_back({Vec3(g.pos.x(), g.pos.y(), hi), g.label});
      }
    }
  }
  if (k != p_dem.size()) throw GeometryError("P_dem does not match the DEM grid");
  return out;
}

Vec3 line_of_sight(const ViewGeometry& view) {
  view.validate();
  const double th = view.incidence_rad();
  const Vec2 g = view.ground_range_dir();
  return Vec3(std::sin(th) * g.x(), std::sin(th) * g.y(), -std::cos(th));
}

namespace {

// Uniform bucket grid over triangles in a 2D parameter plane.
class TriangleLocator {
 public:
  TriangleLocator(const std::vector<Eigen::Vector2d>& uv, const std::vector<std::array<int, 3>>& tris)
      : uv_(uv), tris_(tris) {
    Box2 box;
    for (const auto& t : tris)
      for (int v : t) box.extend(uv[v]);
    lo_ = box.lo;
    const Vec2 size = (box.hi - box.lo).cwiseMax(1e-300);
    const double cells = std::max<double>(1.0, std::sqrt(static_cast<double>(tris.size())));
    nx_ = std::clamp(static_cast<int>(cells * std::sqrt(size.x() / size.y())), 1, 4096);
    ny_ = std::clamp(static_cast<int>(cells * std::sqrt(size.y() / size.x())), 1, 4096);
    cell_ = Vec2(size.x() / nx_, size.y() / ny_);
    start_.assign(static_cast<std::size_t>(nx_) * ny_ + 1, 0);
    // Two passes: count, then fill (CSR layout).
    for (int pass = 0; pass < 2; ++pass) {
      std::vector<int> fill;
      if (pass == 1) {
        for (std::size_t i = 1; i < start_.size(); ++i) start_[i] += start_[i - 1];
        items_.resize(start_.back());
        fill.assign(start_.begin(), start_.end() - 1);
      }
      for (int t = 0; t < static_cast<int>(tris.size()); ++t) {
        Box2 tb;
        for (int v : tris[t]) tb.extend(uv[v]);
        const int x0 = cx(tb.lo.x()), x1 = cx(tb.hi.x()), y0 = cy(tb.lo.y()), y1 = cy(tb.hi.y());
        for (int y = y0; y <= y1; ++y)
          for (int x = x0; x <= x1; ++x) {
            const std::size_t c = static_cast<std::size_t>(y) * nx_ + x;
            if (pass == 0) ++start_[c + 1];
            else items_[fill[c]++] = t;
          }
      }
    }
  }

  // Triangle containing p (barycentric slack `slack`), or -1.
  int locate(const Eigen::Vector2d& p, double slack) const {
    const std::size_t c = static_cast<std::size_t>(cy(p.y())) * nx_ + cx(p.x());
    int best = -1;
    double best_min = -std::numeric_limits<double>::infinity();
    for (int i = start_[c]; i < start_[c + 1]; ++i) {
      const int t = items_[i];
      const auto& a = uv_[tris_[t][0]];
      const auto& b = uv_[tris_[t][1]];
      const auto& d = uv_[tris_[t][2]];
      const double det = (b.x() - a.x()) * (d.y() - a.y()) - (b.y() - a.y()) * (d.x() - a.x());
      if (det == 0.0) continue;
      const double l1 = ((p.x() - a.x()) * (d.y() - a.y()) - (p.y() - a.y()) * (d.x() - a.x())) / det;
      const double l2 = ((b.x() - a.x()) * (p.y() - a.y()) - (b.y() - a.y()) * (p.x() - a.x())) / det;
      const double m = std::min({1.0 - l1 - l2, l1, l2});
      if (m > best_min) {
        best_min = m;
        best = t;
      }
    }
    return best_min >= -slack ? best : -1;
  }

 private:
  int cx(double x) const { return std::clamp(static_cast<int>((x - lo_.x()) / cell_.x()), 0, nx_ - 1); }
  int cy(double y) const { return std::clamp(static_cast<int>((y - lo_.y()) / cell_.y()), 0, ny_ - 1); }

  const std::vector<Eigen::Vector2d>& uv_;
  const std::vector<std::array<int, 3>>& tris_;
  Vec2 lo_, cell_;
  int nx_ = 1, ny_ = 1;
  std::vector<int> start_, items_;
};

}  // namespace

std::vector<std::uint8_t> hpr_visibility(const PointCloud& cloud, const ViewGeometry& view, const HprParams& params) {
  const std::size_t n = cloud.size();
  if (n == 0) throw GeometryError("hidden point removal needs at least one point");
  if (n == 1) return {1};

  Vec3 centroid = Vec3::Zero();
  Vec3 lo = Vec3::Constant(std::numeric_limits<double>::infinity()), hi = -lo;
  for (const auto& p : cloud) {
    centroid += p.pos;
    lo = lo.cwiseMin(p.pos);
    hi = hi.cwiseMax(p.pos);
  }
  centroid /= static_cast<double>(n);
  const double diameter = (hi - lo).norm();
  if (diameter == 0.0) throw GeometryError("degenerate hull: all points coincide");

  const Vec3 d = line_of_sight(view);
  const Vec3 viewpoint = centroid - params.far_multiple * diameter * d;

  double max_dist = 0.0;
  for (const auto& p : cloud) max_dist = std::max(max_dist, (p.pos - viewpoint).norm());
  const double radius = std::pow(10.0, params.radius_exponent) * max_dist;

  // Flipped cloud relative to the viewpoint, which is appended as the last point.
  std::vector<Vec3> flipped(n + 1);
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 v = cloud[i].pos - viewpoint;
    const double r = v.norm();
    flipped[i] = v * ((2.0 * radius - r) / r);
  }
  flipped[n] = Vec3::Zero();

  const double tol = 1e-9 * radius;
  const ConvexHull3 hull = convex_hull(flipped, tol);
  std::vector<std::uint8_t> visible(hull.boundary.begin(), hull.boundary.begin() + static_cast<long>(n));
  if (hull.dimension < 3) return visible;

  // Points within `tol` of a hull face also count as visible. The hull is a
  // cone from the viewpoint over a cap; locate each remaining point in the
  // cap by central projection along the mean viewing direction.
  const Vec3 axis = d;
  const Vec3 e1 = axis.unitOrthogonal();
  const Vec3 e2 = axis.cross(e1);
  std::vector<Eigen::Vector2d> uv(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double depth = flipped[i].dot(axis);
    uv[i] = Eigen::Vector2d(flipped[i].dot(e1) / depth, flipped[i].dot(e2) / depth);
  }
  std::vector<std::array<int, 3>> cap;
  const int apex = static_cast<int>(n);
  for (const auto& f : hull.faces) {
    if (f[0] != apex && f[1] != apex && f[2] != apex) cap.push_back(f);
  }
  if (cap.empty()) return visible;
  TriangleLocator locator(uv, cap);
  for (std::size_t i = 0; i < n; ++i) {
    if (visible[i]) continue;
    const int t = locator.locate(uv[i], 1e-9);
    if (t < 0) continue;
    const auto& f = cap[t];
    const Vec3 a = flipped[f[0]];
    const Vec3 normal = (flipped[f[1]] - a).cross(flipped[f[2]] - a).normalized();
    if (normal.dot(flipped[i] - a) >= -tol) visible[i] = 1;
  }
  return visible;
}

PointCloud hpr_visible(const PointCloud& cloud, const ViewGeometry& view, const HprParams& params) {
  const auto flags = hpr_visibility(cloud, view, params);
  PointCloud out;
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    if (flags[i]) out.push_back(cloud[i]);
  }
  return out;
}

std::optional<PointCloud> select_building_points(const PointCloud& p_svs, int building, const Footprint& footprint,
                                                 double jump_threshold) {
  PointCloud own;
  double roof = -std::numeric_limits<double>::infinity();
  for (const auto& p : p_svs) {
    if (p.label.building != building) continue;
    own.push_back(p);
    roof = std::max(roof, p.pos.z());
  }
  if (own.empty()) return std::nullopt;

  // Surrounding ground: ground points within a buffer around the footprint.
  Box2 box = bounds(footprint.ring);
  constexpr double kBuffer = 5.0;
  std::vector<double> ground;
  for (const auto& p : p_svs) {
    if (!p.label.is_ground()) continue;
    const Vec2 xy = p.pos.head<2>();
    if (xy.x() < box.lo.x() - kBuffer || xy.x() > box.hi.x() + kBuffer || xy.y() < box.lo.y() - kBuffer ||
        xy.y() > box.hi.y() + kBuffer)
      continue;
    ground.push_back(p.pos.z());
  }
  double ground_h = 0.0;
  if (!ground.empty()) {
    auto mid = ground.begin() + static_cast<long>(ground.size() / 2);
    std::nth_element(ground.begin(), mid, ground.end());
    ground_h = *mid;
  }
  if (roof - ground_h <= jump_threshold) return std::nullopt;
  return own;
}

void save_cloud_ascii(const PointCloud& cloud, const std::filesystem::path& path) {
  std::string out;
  for (const auto& p : cloud) {
    out += format_double(p.pos.x()) + ' ' + format_double(p.pos.y()) + ' ' + format_double(p.pos.z()) + ' ' +
           std::to_string(p.label.building) + '\n';
  }
  write_text(path, out);
}

}  // namespace cgseg
