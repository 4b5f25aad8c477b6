#include "cgseg/hull.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>

#include "cgseg/error.hpp"

namespace cgseg {
namespace {

struct HalfEdge {
  int head = -1;  // vertex the edge points to
  int twin = -1;
  int next = -1;
  int face = -1;
};

struct Face {
  int edge = -1;
  Vec3 normal = Vec3::Zero();
  double offset = 0.0;
  std::vector<int> outside;
  int far_point = -1;
  double far_dist = 0.0;
  bool alive = false;
  std::uint32_t visit = 0;
};

class Quickhull {
 public:
  Quickhull(std::span<const Vec3> pts, double tol) : pts_(pts), tol_(tol) {}

  // Returns false if no non-degenerate tetrahedron exists.
  bool build(const std::array<int, 4>& simplex) {
    make_simplex(simplex);
    std::vector<int> pending;
    for (std::size_t f = 0; f < faces_.size(); ++f) {
      if (!faces_[f].outside.empty()) pending.push_back(static_cast<int>(f));
    }
    while (!pending.empty()) {
      const int f = pending.back();
      pending.pop_back();
      if (!faces_[f].alive || faces_[f].outside.empty()) continue;
      add_point(f, pending);
    }
    return true;
  }

  void collect(ConvexHull3& out) const {
    out.boundary.assign(pts_.size(), 0);
    for (const auto& f : faces_) {
      if (!f.alive) continue;
      const int e0 = f.edge, e1 = edges_[e0].next, e2 = edges_[e1].next;
      const std::array<int, 3> tri{edges_[e2].head, edges_[e0].head, edges_[e1].head};
      out.faces.push_back(tri);
      for (int v : tri) out.boundary[v] = 1;
    }
  }

 private:
  double distance(const Face& f, int p) const { return f.normal.dot(pts_[p]) - f.offset; }

  int new_edge() {
    if (!free_edges_.empty()) {
      const int e = free_edges_.back();
      free_edges_.pop_back();
      edges_[e] = HalfEdge{};
      return e;
    }
    edges_.emplace_back();
    return static_cast<int>(edges_.size()) - 1;
  }

  int new_face() {
    if (!free_faces_.empty()) {
      const int f = free_faces_.back();
      free_faces_.pop_back();
      faces_[f] = Face{};
      faces_[f].alive = true;
      return f;
    }
    faces_.emplace_back();
    faces_.back().alive = true;
    return static_cast<int>(faces_.size()) - 1;
  }

  void set_plane(Face& f, int a, int b, int c) {
    const Vec3& pa = pts_[a];
    Vec3 n = (pts_[b] - pa).cross(pts_[c] - pa);
    const double len = n.norm();
    f.normal = len > 0.0 ? Vec3(n / len) : Vec3::Zero();
    // Centroid-based offset is less sensitive to which vertex is used.
    f.offset = f.normal.dot((pa + pts_[b] + pts_[c]) / 3.0);
  }

  // Triangle (a,b,c) with edges a->b, b->c, c->a. Returns face index and the
  // three edge ids via `e`.
  int make_triangle(int a, int b, int c, std::array<int, 3>& e) {
    const int f = new_face();
    for (int& id : e) id = new_edge();
    edges_[e[0]].head = b;
    edges_[e[1]].head = c;
    edges_[e[2]].head = a;
    for (int i = 0; i < 3; ++i) {
      edges_[e[i]].next = e[(i + 1) % 3];
      edges_[e[i]].face = f;
    }
    faces_[f].edge = e[0];
    set_plane(faces_[f], a, b, c);
    return f;
  }

  void make_simplex(const std::array<int, 4>& s) {
    const Vec3 centroid = (pts_[s[0]] + pts_[s[1]] + pts_[s[2]] + pts_[s[3]]) / 4.0;
    std::array<std::array<int, 3>, 4> tris{{{s[0], s[1], s[2]}, {s[0], s[3], s[1]}, {s[1], s[3], s[2]}, {s[2], s[3], s[0]}}};
    // Orient outward.
    const Vec3 n = (pts_[s[1]] - pts_[s[0]]).cross(pts_[s[2]] - pts_[s[0]]);
    if (n.dot(centroid - pts_[s[0]]) > 0.0) {
      for (auto& t : tris) std::swap(t[1], t[2]);
    }
    std::map<std::pair<int, int>, int> by_ends;
    std::vector<int> created;
    for (const auto& t : tris) {
      std::array<int, 3> e{};
      created.push_back(make_triangle(t[0], t[1], t[2], e));
      by_ends[{t[0], t[1]}] = e[0];
      by_ends[{t[1], t[2]}] = e[1];
      by_ends[{t[2], t[0]}] = e[2];
    }
    for (auto& [ends, e] : by_ends) edges_[e].twin = by_ends.at({ends.second, ends.first});

    std::vector<char> used(pts_.size(), 0);
    for (int v : s) used[v] = 1;
    for (int p = 0; p < static_cast<int>(pts_.size()); ++p) {
      if (used[p]) continue;
      assign(p, created);
    }
  }

  // Puts `p` in the outside set of the face it is farthest above, if any.
  bool assign(int p, const std::vector<int>& candidates) {
    int best = -1;
    double best_d = tol_;
    for (int f : candidates) {
      const double d = distance(faces_[f], p);
      if (d > best_d) {
        best_d = d;
        best = f;
      }
    }
    if (best < 0) return false;
    Face& face = faces_[best];
    face.outside.push_back(p);
    if (face.far_point < 0 || best_d > face.far_dist) {
      face.far_point = p;
      face.far_dist = best_d;
    }
    return true;
  }

  void add_point(int start, std::vector<int>& pending) {
    const int eye = faces_[start].far_point;
    ++visit_;
    visible_.clear();
    horizon_.clear();

    // Depth-first walk over faces visible from `eye`; horizon edges come out
    // in counter-clockwise order around the eye.
    struct Frame {
      int face, first, edge;
      bool started;
    };
    std::vector<Frame> stack;
    faces_[start].visit = visit_;
    visible_.push_back(start);
    stack.push_back({start, faces_[start].edge, faces_[start].edge, false});
    while (!stack.empty()) {
      Frame& fr = stack.back();
      if (fr.started && fr.edge == fr.first) {
        stack.pop_back();
        if (!stack.empty()) stack.back().edge = edges_[stack.back().edge].next;
        continue;
      }
      fr.started = true;
      const int e = fr.edge;
      const int twin = edges_[e].twin;
      const int nb = edges_[twin].face;
      if (faces_[nb].visit != visit_) {
        if (distance(faces_[nb], eye) > tol_) {
          faces_[nb].visit = visit_;
          visible_.push_back(nb);
          const int first = edges_[twin].next;
          stack.push_back({nb, first, first, false});
          continue;
        }
        horizon_.push_back(e);
      }
      fr.edge = edges_[e].next;
    }

    // Cone of new faces from the horizon to the eye.
    const std::size_t n = horizon_.size();
    std::vector<int> new_faces(n);
    std::vector<std::array<int, 3>> new_edges(n);
    for (std::size_t k = 0; k < n; ++k) {
      const int e = horizon_[k];
      const int tail = edges_[edges_[e].twin].head;
      const int head = edges_[e].head;
      new_faces[k] = make_triangle(tail, head, eye, new_edges[k]);
      const int outer = edges_[e].twin;
      edges_[new_edges[k][0]].twin = outer;
      edges_[outer].twin = new_edges[k][0];
    }
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t nx = (k + 1) % n;
      edges_[new_edges[k][1]].twin = new_edges[nx][2];
      edges_[new_edges[nx][2]].twin = new_edges[k][1];
    }

    // Retire visible faces and hand their outside points to the cone.
    orphans_.clear();
    for (int f : visible_) {
      Face& face = faces_[f];
      for (int p : face.outside) {
        if (p != eye) orphans_.push_back(p);
      }
      face.outside.clear();
      face.outside.shrink_to_fit();
      face.alive = false;
      int e = face.edge;
      for (int i = 0; i < 3; ++i) {
        const int nx = edges_[e].next;
        free_edges_.push_back(e);
        e = nx;
      }
      free_faces_.push_back(f);
    }
    for (int p : orphans_) assign(p, new_faces);
    for (int f : new_faces) {
      if (!faces_[f].outside.empty()) pending.push_back(f);
    }
  }

  std::span<const Vec3> pts_;
  double tol_;
  std::vector<HalfEdge> edges_;
  std::vector<Face> faces_;
  std::vector<int> free_edges_, free_faces_;
  std::vector<int> visible_, horizon_, orphans_;
  std::uint32_t visit_ = 0;
};

// Boundary flags for input that is (numerically) a segment.
void segment_boundary(std::span<const Vec3> pts, const Vec3& origin, const Vec3& dir, double tol,
                      std::vector<std::uint8_t>& flags) {
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  std::vector<double> t(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    t[i] = (pts[i] - origin).dot(dir);
    lo = std::min(lo, t[i]);
    hi = std::max(hi, t[i]);
  }
  for (std::size_t i = 0; i < pts.size(); ++i) flags[i] = (t[i] <= lo + tol || t[i] >= hi - tol) ? 1 : 0;
}

double cross2(const Eigen::Vector2d& o, const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
  return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
}

// Boundary flags for planar input: 2D monotone-chain hull in the plane basis.
void polygon_boundary(std::span<const Vec3> pts, const Vec3& origin, const Vec3& u, const Vec3& v, double tol,
                      std::vector<std::uint8_t>& flags) {
  const std::size_t n = pts.size();
  std::vector<Eigen::Vector2d> q(n);
  for (std::size_t i = 0; i < n; ++i) q[i] = {(pts[i] - origin).dot(u), (pts[i] - origin).dot(v)};
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return q[a].x() < q[b].x() || (q[a].x() == q[b].x() && q[a].y() < q[b].y());
  });
  std::vector<std::size_t> hull(2 * n);
  std::size_t k = 0;
  for (std::size_t i = 0; i < n; ++i) {
    while (k >= 2 && cross2(q[hull[k - 2]], q[hull[k - 1]], q[idx[i]]) <= 0) --k;
    hull[k++] = idx[i];
  }
  for (std::size_t i = n - 1, t = k + 1; i-- > 0;) {
    while (k >= t && cross2(q[hull[k - 2]], q[hull[k - 1]], q[idx[i]]) <= 0) --k;
    hull[k++] = idx[i];
  }
  hull.resize(k > 1 ? k - 1 : k);
  for (std::size_t i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t h = 0; h < hull.size(); ++h) {
      const Vec2 a = q[hull[h]], b = q[hull[(h + 1) % hull.size()]];
      best = std::min(best, distance_to_segment(q[i], a, b));
    }
    flags[i] = best <= tol ? 1 : 0;
  }
}

}  // namespace

ConvexHull3 convex_hull(std::span<const Vec3> points, double tolerance) {
  ConvexHull3 out;
  const std::size_t n = points.size();
  out.boundary.assign(n, 0);
  if (n == 0) return out;
  if (n == 1) {
    out.boundary[0] = 1;
    return out;
  }

  // Extreme points along the axes seed the initial simplex.
  std::array<int, 6> ext{};
  for (int a = 0; a < 3; ++a) {
    for (std::size_t i = 0; i < n; ++i) {
      if (points[i][a] < points[ext[2 * a]][a]) ext[2 * a] = static_cast<int>(i);
      if (points[i][a] > points[ext[2 * a + 1]][a]) ext[2 * a + 1] = static_cast<int>(i);
    }
  }
  int i0 = 0, i1 = 0;
  double best = -1.0;
  for (int a : ext) {
    for (int b : ext) {
      const double d = (points[a] - points[b]).squaredNorm();
      if (d > best) {
        best = d;
        i0 = a;
        i1 = b;
      }
    }
  }
  if (std::sqrt(best) <= tolerance) {
    out.dimension = 0;
    out.boundary.assign(n, 1);
    return out;
  }
  const Vec3 dir = (points[i1] - points[i0]).normalized();
  int i2 = -1;
  best = -1.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Vec3 r = points[i] - points[i0];
    const double d = (r - dir * r.dot(dir)).norm();
    if (d > best) {
      best = d;
      i2 = static_cast<int>(i);
    }
  }
  if (best <= tolerance) {
    out.dimension = 1;
    segment_boundary(points, points[i0], dir, tolerance, out.boundary);
    return out;
  }
  const Vec3 normal = (points[i1] - points[i0]).cross(points[i2] - points[i0]).normalized();
  int i3 = -1;
  best = -1.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = std::abs((points[i] - points[i0]).dot(normal));
    if (d > best) {
      best = d;
      i3 = static_cast<int>(i);
    }
  }
  if (best <= tolerance) {
    out.dimension = 2;
    const Vec3 v = normal.cross(dir);
    polygon_boundary(points, points[i0], dir, v, tolerance, out.boundary);
    return out;
  }
  out.dimension = 3;
  Quickhull qh(points, tolerance);
  qh.build({i0, i1, i2, i3});
  qh.collect(out);
  return out;
}

}  // namespace cgseg
