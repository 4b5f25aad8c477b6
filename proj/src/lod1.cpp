#include "cgseg/lod1.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "cgseg/error.hpp"
#include "cgseg/io_util.hpp"

namespace cgseg {

namespace {

double cross(const Vec2& o, const Vec2& a, const Vec2& b) {
  return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
}

bool in_triangle(const Vec2& p, const Vec2& a, const Vec2& b, const Vec2& c) {
  return cross(a, b, p) >= 0 && cross(b, c, p) >= 0 && cross(c, a, p) >= 0;
}

double median(std::vector<double> v) {
  const std::size_t mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  if (v.size() % 2) return v[mid];
  const double hi = v[mid];
  return 0.5 * (hi + *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid)));
}

}  // namespace

LayoverMeasure layover_length(const Mask& pred, const Mask& footprint, const SarFrame& frame, const Mask* others) {
  if (pred.rows() != footprint.rows() || pred.cols() != footprint.cols() ||
      (others && (others->rows() != pred.rows() || others->cols() != pred.cols()))) {
    throw ShapeError("layover_length: mask sizes differ");
  }
  if (area(footprint) == 0) throw GeometryError("layover_length: empty footprint mask");
  LayoverMeasure out;
  if (area(pred) == 0) {
    out.flagged = true;
    return out;
  }
  std::vector<double> runs;
  for (Eigen::Index r = 0; r < footprint.rows(); ++r) {
    Eigen::Index c0 = -1;
    for (Eigen::Index c = 0; c < footprint.cols(); ++c) {
      if (footprint(r, c)) {
        c0 = c;
        break;
      }
    }
    if (c0 < 0) continue;
    ++out.rows;
    Eigen::Index c = c0 - 1;
    while (c >= 0 && pred(r, c) && !footprint(r, c) && !(others && (*others)(r, c))) --c;
    // The run ran off the frame or stopped on a neighbour's footprint.
    const bool blocked = c < 0 ? c0 > 0 : others && (*others)(r, c) && pred(r, c);
    if (blocked) {
      ++out.skipped;
      continue;
    }
    runs.push_back(static_cast<double>(c0 - 1 - c));
  }
  out.flagged = 2 * out.skipped > out.rows;
  if (!runs.empty()) out.length_m = median(runs) * frame.spacing_rg;
  return out;
}

double height_from_layover(double l, double incidence_deg) {
  if (!(incidence_deg >= 0 && incidence_deg < 90)) {
    throw ConfigError("incidence angle must lie in [0, 90) degrees");
  }
  return l / std::cos(incidence_deg * std::numbers::pi / 180.0);
}

std::vector<HeightEstimate> estimate_heights(const MaskStack& pred, const MaskStack& footprints,
                                             const FootprintSet& fps) {
  Mask all = footprints.blank();
  for (const auto& [id, m] : footprints.masks) all = all.max(m);
  std::vector<HeightEstimate> out;
  for (const auto& [id, p] : pred.masks) {
    const auto f = footprints.masks.find(id);
    if (f == footprints.masks.end() || area(f->second) == 0) continue;
    // Neighbours: every footprint pixel not belonging to this building.
    const Mask others = (all.cast<int>() - f->second.cast<int>()).max(0).cast<std::uint8_t>();
    const LayoverMeasure lm = layover_length(p, f->second, pred.frame, &others);
    HeightEstimate e;
    e.id = id;
    e.l = lm.length_m;
    e.h = height_from_layover(lm.length_m, pred.frame.view.incidence_deg);
    e.flagged = lm.flagged;
    const int k = find_footprint(fps, id);
    if (k >= 0) e.gt_h = fps[static_cast<std::size_t>(k)].gt_height;
    out.push_back(e);
  }
  return out;
}

std::vector<std::array<int, 3>> triangulate(const Ring& ring) {
  const int n = static_cast<int>(ring.size());
  if (n < 3) throw GeometryError("triangulate: fewer than three vertices");
  std::vector<int> idx(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
  std::vector<std::array<int, 3>> tris;
  while (idx.size() > 3) {
    const std::size_t m = idx.size();
    bool clipped = false;
    for (std::size_t k = 0; k < m; ++k) {
      const int a = idx[(k + m - 1) % m], b = idx[k], c = idx[(k + 1) % m];
      const Vec2 &pa = ring[static_cast<std::size_t>(a)], &pb = ring[static_cast<std::size_t>(b)],
                 &pc = ring[static_cast<std::size_t>(c)];
      if (cross(pa, pb, pc) <= 0) continue;  // reflex or collinear
      bool empty = true;
      for (int q : idx) {
        if (q == a || q == b || q == c) continue;
        const Vec2& pq = ring[static_cast<std::size_t>(q)];
        if (pq == pa || pq == pb || pq == pc) continue;
        if (in_triangle(pq, pa, pb, pc)) {
          empty = false;
          break;
        }
      }
      if (!empty) continue;
      tris.push_back({a, b, c});
      idx.erase(idx.begin() + static_cast<std::ptrdiff_t>(k));
      clipped = true;
      break;
    }
    if (!clipped) {
      // Only collinear vertices remain among the candidates: drop one.
      bool dropped = false;
      for (std::size_t k = 0; k < idx.size(); ++k) {
        const std::size_t mm = idx.size();
        const Vec2& pa = ring[static_cast<std::size_t>(idx[(k + mm - 1) % mm])];
        const Vec2& pb = ring[static_cast<std::size_t>(idx[k])];
        const Vec2& pc = ring[static_cast<std::size_t>(idx[(k + 1) % mm])];
        if (cross(pa, pb, pc) == 0) {
          idx.erase(idx.begin() + static_cast<std::ptrdiff_t>(k));
          dropped = true;
          break;
        }
      }
      if (!dropped) throw GeometryError("triangulate: ring is not simple and counter-clockwise");
    }
  }
  if (cross(ring[static_cast<std::size_t>(idx[0])], ring[static_cast<std::size_t>(idx[1])],
            ring[static_cast<std::size_t>(idx[2])]) > 0) {
    tris.push_back({idx[0], idx[1], idx[2]});
  }
  return tris;
}

Mesh extrude_lod1(const Footprint& footprint, double h) {
  if (!(h >= 0)) throw GeometryError("extrude_lod1: negative height for " + footprint.id);
  Ring ring = footprint.ring;
  if (ring.size() < 3 || std::abs(signed_area(ring)) == 0 || !is_simple(ring)) {
    throw GeometryError("extrude_lod1: degenerate footprint " + footprint.id);
  }
  make_ccw(ring);
  const int n = static_cast<int>(ring.size());
  Mesh m;
  m.name = footprint.id;
  m.flat = h == 0;
  for (const auto& p : ring) m.vertices.emplace_back(p.x(), p.y(), 0.0);
  for (const auto& p : ring) m.vertices.emplace_back(p.x(), p.y(), h);
  for (const auto& t : triangulate(ring)) {
    m.triangles.push_back({t[0] + n, t[1] + n, t[2] + n});  // top, facing up
    m.triangles.push_back({t[0], t[2], t[1]});              // bottom, facing down
  }
  for (int i = 0; i < n; ++i) {
    const int j = (i + 1) % n;
    m.triangles.push_back({i, j, j + n});
    m.triangles.push_back({i, j + n, i + n});
  }
  return m;
}

double mesh_volume(const Mesh& m) {
  double v = 0.0;
  for (const auto& t : m.triangles) {
    v += m.vertices[static_cast<std::size_t>(t[0])].dot(
        m.vertices[static_cast<std::size_t>(t[1])].cross(m.vertices[static_cast<std::size_t>(t[2])]));
  }
  return v / 6.0;
}

std::string format_obj(const std::vector<Mesh>& meshes) {
  std::string out;
  int base = 1;
  for (const auto& m : meshes) {
    out += "o " + m.name + "\n";
    for (const auto& v : m.vertices) {
      out += "v " + format_double(v.x()) + " " + format_double(v.y()) + " " + format_double(v.z()) + "\n";
    }
    for (const auto& t : m.triangles) {
      out += "f " + std::to_string(t[0] + base) + " " + std::to_string(t[1] + base) + " " +
             std::to_string(t[2] + base) + "\n";
    }
    base += static_cast<int>(m.vertices.size());
  }
  return out;
}

void save_obj(const std::vector<Mesh>& meshes, const std::filesystem::path& path) {
  write_text(path, format_obj(meshes));
}

HeightErrorStats height_error_stats(const std::vector<HeightEstimate>& est) {
  HeightErrorStats s;
  double sum = 0.0;
  for (const auto& e : est) {
    const auto err = e.error();
    if (!err) continue;
    sum += std::abs(*err);
    ++s.n;
    ++s.histogram[static_cast<int>(std::lround(*err))];
  }
  if (s.n == 0) throw Error("height_error_stats: no estimate has a reference height");
  s.mean_abs = sum / s.n;
  for (int b = s.histogram.begin()->first; b < s.histogram.rbegin()->first; ++b) s.histogram.try_emplace(b, 0);
  return s;
}

std::string format_heights_csv(const std::vector<HeightEstimate>& est) {
  std::string out = "id,l,h,gt_h,error\n";
  for (const auto& e : est) {
    out += e.id + "," + format_double(e.l) + "," + format_double(e.h) + "," + (e.gt_h ? format_double(*e.gt_h) : "") +
           "," + (e.error() ? format_double(*e.error()) : "") + "\n";
  }
  return out;
}

std::string format_hist_csv(const HeightErrorStats& s) {
  std::string out = "bin_center,count\n";
  for (const auto& [b, c] : s.histogram) out += std::to_string(b) + "," + std::to_string(c) + "\n";
  return out;
}

}  // namespace cgseg
