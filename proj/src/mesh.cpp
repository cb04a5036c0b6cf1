#include "eqgnn/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <map>
#include <numbers>
#include <random>
#include <unordered_map>

#include "eqgnn/errors.hpp"

namespace eqgnn {

// ---- geometry helpers ----------------------------------------------------

double orient2d(const Point2& a, const Point2& b, const Point2& c) {
  return (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
}

double signed_area(const BoundaryLoop& loop) {
  const auto& p = loop.points;
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const Point2& a = p[i];
    const Point2& b = p[(i + 1) % p.size()];
    s += a.x * b.y - b.x * a.y;
  }
  return 0.5 * s;
}

bool segments_intersect(const Point2& a, const Point2& b, const Point2& c, const Point2& d) {
  const double d1 = orient2d(c, d, a);
  const double d2 = orient2d(c, d, b);
  const double d3 = orient2d(a, b, c);
  const double d4 = orient2d(a, b, d);
  if (((d1 > 0 && d2 < 0) || (d1 < 0 && d2 > 0)) && ((d3 > 0 && d4 < 0) || (d3 < 0 && d4 > 0))) {
    return true;
  }
  auto on_segment = [](const Point2& p, const Point2& q, const Point2& r) {
    return std::min(p.x, q.x) <= r.x && r.x <= std::max(p.x, q.x) && std::min(p.y, q.y) <= r.y &&
           r.y <= std::max(p.y, q.y);
  };
  if (d1 == 0 && on_segment(c, d, a)) return true;
  if (d2 == 0 && on_segment(c, d, b)) return true;
  if (d3 == 0 && on_segment(a, b, c)) return true;
  if (d4 == 0 && on_segment(a, b, d)) return true;
  return false;
}

bool is_simple(const BoundaryLoop& loop) {
  const auto& p = loop.points;
  const std::size_t k = p.size();
  if (k < 3) return false;
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = i + 1; j < k; ++j) {
      // adjacent edges share an endpoint by construction
      if (j == i + 1 || (i == 0 && j == k - 1)) continue;
      if (segments_intersect(p[i], p[(i + 1) % k], p[j], p[(j + 1) % k])) return false;
    }
  }
  return true;
}

bool point_in_loop(const Point2& q, const BoundaryLoop& loop) {
  const auto& p = loop.points;
  bool inside = false;
  for (std::size_t i = 0, j = p.size() - 1; i < p.size(); j = i++) {
    if (((p[i].y > q.y) != (p[j].y > q.y)) &&
        (q.x < (p[j].x - p[i].x) * (q.y - p[i].y) / (p[j].y - p[i].y) + p[i].x)) {
      inside = !inside;
    }
  }
  return inside;
}

double triangle_area(const Point2& a, const Point2& b, const Point2& c) {
  return 0.5 * orient2d(a, b, c);
}

double min_angle_deg(const Point2& a, const Point2& b, const Point2& c) {
  auto angle = [](const Point2& o, const Point2& p, const Point2& q) {
    const double ux = p.x - o.x, uy = p.y - o.y, vx = q.x - o.x, vy = q.y - o.y;
    return std::atan2(std::abs(ux * vy - uy * vx), ux * vx + uy * vy);
  };
  const double m = std::min({angle(a, b, c), angle(b, c, a), angle(c, a, b)});
  return m * 180.0 / std::numbers::pi;
}

namespace {

double dist(const Point2& a, const Point2& b) { return std::hypot(a.x - b.x, a.y - b.y); }

Point2 lerp(const Point2& a, const Point2& b, double t) {
  return {a.x + t * (b.x - a.x), a.y + t * (b.y - a.y)};
}

// Centripetal Catmull-Rom segment between p1 and p2.
Point2 catmull_rom(const Point2& p0, const Point2& p1, const Point2& p2, const Point2& p3,
                   double u) {
  auto knot = [](double t, const Point2& a, const Point2& b) {
    return t + std::sqrt(std::max(dist(a, b), 1e-12));
  };
  const double t0 = 0.0, t1 = knot(t0, p0, p1), t2 = knot(t1, p1, p2), t3 = knot(t2, p2, p3);
  const double t = t1 + u * (t2 - t1);
  auto mix = [](const Point2& a, const Point2& b, double ta, double tb, double tt) {
    const double w = (tt - ta) / (tb - ta);
    return lerp(a, b, w);
  };
  const Point2 a1 = mix(p0, p1, t0, t1, t), a2 = mix(p1, p2, t1, t2, t), a3 = mix(p2, p3, t2, t3, t);
  const Point2 b1 = mix(a1, a2, t0, t2, t), b2 = mix(a2, a3, t1, t3, t);
  return mix(b1, b2, t1, t2, t);
}

std::vector<Point2> draw_control_points(std::mt19937_64& rng, int n) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Point2> pts(static_cast<std::size_t>(n));
  for (auto& p : pts) {
    p.x = u(rng);
    p.y = u(rng);
  }
  Point2 c{0.0, 0.0};
  for (const auto& p : pts) {
    c.x += p.x / n;
    c.y += p.y / n;
  }
  std::sort(pts.begin(), pts.end(), [c](const Point2& a, const Point2& b) {
    return std::atan2(a.y - c.y, a.x - c.x) < std::atan2(b.y - c.y, b.x - c.x);
  });
  return pts;
}

// Closed polyline resampled at uniform arc length with spacing <= h.
std::vector<Point2> resample_closed(const std::vector<Point2>& dense, double h) {
  const std::size_t k = dense.size();
  std::vector<double> cum(k + 1, 0.0);
  for (std::size_t i = 0; i < k; ++i) cum[i + 1] = cum[i] + dist(dense[i], dense[(i + 1) % k]);
  const double total = cum[k];
  const auto n = static_cast<std::size_t>(std::max(3.0, std::ceil(total / h)));
  std::vector<Point2> out;
  out.reserve(n);
  std::size_t seg = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double s = total * static_cast<double>(i) / static_cast<double>(n);
    while (seg + 1 < k && cum[seg + 1] <= s) ++seg;
    const double len = cum[seg + 1] - cum[seg];
    const double t = len > 0 ? (s - cum[seg]) / len : 0.0;
    out.push_back(lerp(dense[seg], dense[(seg + 1) % k], t));
  }
  return out;
}

// Each polygon edge split into equal pieces no longer than h; corners kept.
std::vector<Point2> subdivide_polygon(const std::vector<Point2>& ctrl, double h) {
  std::vector<Point2> out;
  for (std::size_t i = 0; i < ctrl.size(); ++i) {
    const Point2& a = ctrl[i];
    const Point2& b = ctrl[(i + 1) % ctrl.size()];
    const int pieces = std::max(1, static_cast<int>(std::ceil(dist(a, b) / h - 1e-12)));
    for (int s = 0; s < pieces; ++s) out.push_back(lerp(a, b, static_cast<double>(s) / pieces));
  }
  return out;
}

double min_interior_turn_deg(const std::vector<Point2>& p) {
  double worst = 180.0;
  const std::size_t k = p.size();
  for (std::size_t i = 0; i < k; ++i) {
    const Point2& prev = p[(i + k - 1) % k];
    const Point2& cur = p[i];
    const Point2& next = p[(i + 1) % k];
    const double ux = prev.x - cur.x, uy = prev.y - cur.y, vx = next.x - cur.x, vy = next.y - cur.y;
    const double ang = std::atan2(std::abs(ux * vy - uy * vx), ux * vx + uy * vy);
    worst = std::min(worst, ang * 180.0 / std::numbers::pi);
  }
  return worst;
}

BoundaryLoop build_loop(const std::vector<Point2>& ctrl, const DomainSpec& spec) {
  std::vector<Point2> pts;
  if (spec.curve == BoundaryCurve::Polygon) {
    pts = subdivide_polygon(ctrl, spec.target_h);
  } else {
    const std::size_t n = ctrl.size();
    constexpr int kSamples = 64;
    std::vector<Point2> dense;
    dense.reserve(n * kSamples);
    for (std::size_t i = 0; i < n; ++i) {
      const Point2& p0 = ctrl[(i + n - 1) % n];
      const Point2& p1 = ctrl[i];
      const Point2& p2 = ctrl[(i + 1) % n];
      const Point2& p3 = ctrl[(i + 2) % n];
      for (int s = 0; s < kSamples; ++s) {
        dense.push_back(catmull_rom(p0, p1, p2, p3, static_cast<double>(s) / kSamples));
      }
    }
    pts = resample_closed(dense, spec.target_h);
  }
  BoundaryLoop loop{std::move(pts)};
  if (signed_area(loop) < 0) std::reverse(loop.points.begin(), loop.points.end());
  return loop;
}

}  // namespace

BoundaryLoop generate_domain(const DomainSpec& spec) {
  if (spec.n_control < 3 && spec.control_points.empty()) {
    throw InvalidArgument("n_control must be >= 3");
  }
  if (!(spec.target_h > 0)) throw InvalidArgument("target_h must be > 0");
  if (!spec.control_points.empty() && spec.control_points.size() < 3) {
    throw InvalidArgument("need at least 3 control points");
  }
  std::mt19937_64 rng(spec.seed);
  const int attempts = spec.control_points.empty() ? 100 : 1;
  for (int attempt = 0; attempt < attempts; ++attempt) {
    std::vector<Point2> ctrl = spec.control_points.empty()
                                   ? draw_control_points(rng, spec.n_control)
                                   : spec.control_points;
    BoundaryLoop loop = build_loop(ctrl, spec);
    // Boundary vertices sharper than 60 degrees stall the quality refinement.
    if (loop.points.size() >= 3 && std::abs(signed_area(loop)) > 1e-6 && is_simple(loop) &&
        min_interior_turn_deg(loop.points) >= 60.0) {
      return loop;
    }
  }
  throw RetryExhausted("no simple boundary loop after " + std::to_string(attempts) +
                       " draws (seed " + std::to_string(spec.seed) + ")");
}

// ---- conforming Delaunay refinement --------------------------------------

namespace {

struct Tri {
  std::array<int, 3> v;
  Point2 cc;
  double r2 = 0.0;
  bool alive = true;
  bool inside = false;
};

std::uint64_t edge_key(int a, int b) {
  const auto lo = static_cast<std::uint64_t>(std::min(a, b));
  const auto hi = static_cast<std::uint64_t>(std::max(a, b));
  return (lo << 32) | hi;
}

class Refiner {
 public:
  Refiner(const BoundaryLoop& outer, const std::vector<BoundaryLoop>& holes, double h,
          double min_angle)
      : outer_(outer), holes_(holes), h_(h), min_angle_(min_angle) {}

  TriMesh run() {
    init_super_triangle();
    add_loop(outer_);
    for (const auto& hole : holes_) add_loop(hole);
    for (int v = 3; v < static_cast<int>(pts_.size()); ++v) {
      if (!insert(pts_[v], v)) throw MeshQualityError("boundary point insertion failed");
    }
    conform_segments();
    refine();
    return extract();
  }

 private:
  void init_super_triangle() {
    double minx = 1e300, miny = 1e300, maxx = -1e300, maxy = -1e300;
    for (const auto& p : outer_.points) {
      minx = std::min(minx, p.x);
      miny = std::min(miny, p.y);
      maxx = std::max(maxx, p.x);
      maxy = std::max(maxy, p.y);
    }
    const double cx = 0.5 * (minx + maxx), cy = 0.5 * (miny + maxy);
    const double r = 20.0 * std::max({maxx - minx, maxy - miny, 1e-3});
    pts_ = {{cx - 2 * r, cy - r}, {cx + 2 * r, cy - r}, {cx, cy + 2 * r}};
    add_triangle(0, 1, 2);
  }

  void add_loop(const BoundaryLoop& loop) {
    const int first = static_cast<int>(pts_.size());
    const int k = static_cast<int>(loop.points.size());
    for (const auto& p : loop.points) pts_.push_back(p);
    for (int i = 0; i < k; ++i) segments_.push_back({first + i, first + (i + 1) % k});
  }

  bool inside_domain(const Point2& p) const {
    if (!point_in_loop(p, outer_)) return false;
    for (const auto& hole : holes_) {
      if (point_in_loop(p, hole)) return false;
    }
    return true;
  }

  int add_triangle(int a, int b, int c) {
    Tri t;
    t.v = {a, b, c};
    const Point2 &A = pts_[a], &B = pts_[b], &C = pts_[c];
    const double d = 2.0 * orient2d(A, B, C);
    const double a2 = A.x * A.x + A.y * A.y, b2 = B.x * B.x + B.y * B.y, c2 = C.x * C.x + C.y * C.y;
    t.cc.x = (a2 * (B.y - C.y) + b2 * (C.y - A.y) + c2 * (A.y - B.y)) / d;
    t.cc.y = (a2 * (C.x - B.x) + b2 * (A.x - C.x) + c2 * (B.x - A.x)) / d;
    t.r2 = (A.x - t.cc.x) * (A.x - t.cc.x) + (A.y - t.cc.y) * (A.y - t.cc.y);
    const bool super = a < 3 || b < 3 || c < 3;
    t.inside = !super && inside_domain({(A.x + B.x + C.x) / 3.0, (A.y + B.y + C.y) / 3.0});
    tris_.push_back(t);
    const int id = static_cast<int>(tris_.size()) - 1;
    if (t.inside) work_.push_back(id);
    return id;
  }

  // Bowyer-Watson insertion of an already-stored point `v`.
  bool insert(const Point2& p, int v) {
    int host = -1;
    for (int t = 0; t < static_cast<int>(tris_.size()); ++t) {
      const Tri& T = tris_[t];
      if (!T.alive) continue;
      const Point2 &A = pts_[T.v[0]], &B = pts_[T.v[1]], &C = pts_[T.v[2]];
      if (orient2d(A, B, p) >= 0 && orient2d(B, C, p) >= 0 && orient2d(C, A, p) >= 0) {
        host = t;
        break;
      }
    }
    if (host < 0) return false;
    for (int k = 0; k < 3; ++k) {
      if (dist(pts_[tris_[host].v[k]], p) < 1e-12 * std::max(1.0, h_)) return false;
    }

    std::vector<int> bad;
    for (int t = 0; t < static_cast<int>(tris_.size()); ++t) {
      const Tri& T = tris_[t];
      if (!T.alive) continue;
      const double dx = p.x - T.cc.x, dy = p.y - T.cc.y;
      if (dx * dx + dy * dy < T.r2 * (1.0 - 1e-12)) bad.push_back(t);
    }
    if (std::find(bad.begin(), bad.end(), host) == bad.end()) bad.push_back(host);

    // Keep the component of the cavity connected to the host triangle.
    std::unordered_map<std::uint64_t, std::vector<int>> by_edge;
    for (int t : bad) {
      const auto& vv = tris_[t].v;
      for (int k = 0; k < 3; ++k) by_edge[edge_key(vv[k], vv[(k + 1) % 3])].push_back(t);
    }
    std::vector<int> cavity{host};
    std::unordered_map<int, bool> seen{{host, true}};
    for (std::size_t q = 0; q < cavity.size(); ++q) {
      const auto& vv = tris_[cavity[q]].v;
      for (int k = 0; k < 3; ++k) {
        for (int nb : by_edge[edge_key(vv[k], vv[(k + 1) % 3])]) {
          if (!seen[nb]) {
            seen[nb] = true;
            cavity.push_back(nb);
          }
        }
      }
    }
    std::unordered_map<std::uint64_t, int> count;
    for (int t : cavity) {
      const auto& vv = tris_[t].v;
      for (int k = 0; k < 3; ++k) ++count[edge_key(vv[k], vv[(k + 1) % 3])];
    }
    std::vector<std::pair<int, int>> rim;
    for (int t : cavity) {
      const auto& vv = tris_[t].v;
      for (int k = 0; k < 3; ++k) {
        const int a = vv[k], b = vv[(k + 1) % 3];
        if (count[edge_key(a, b)] == 1) rim.emplace_back(a, b);
      }
    }
    for (const auto& [a, b] : rim) {
      const Point2 &A = pts_[a], &B = pts_[b];
      const double scale = dist(A, B) * (dist(A, p) + dist(B, p));
      if (orient2d(A, B, p) <= 1e-12 * scale) return false;
    }
    for (int t : cavity) tris_[t].alive = false;
    for (const auto& [a, b] : rim) add_triangle(a, b, v);
    return true;
  }

  int add_point(const Point2& p) {
    pts_.push_back(p);
    return static_cast<int>(pts_.size()) - 1;
  }

  bool encroaches(const Point2& p, const std::pair<int, int>& s) const {
    const Point2 &a = pts_[s.first], &b = pts_[s.second];
    const double dot = (a.x - p.x) * (b.x - p.x) + (a.y - p.y) * (b.y - p.y);
    return dot < -1e-12 * dist(a, b) * dist(a, b);
  }

  bool segment_encroached(std::size_t si) const {
    const auto& s = segments_[si];
    for (int v = 3; v < static_cast<int>(pts_.size()); ++v) {
      if (v == s.first || v == s.second) continue;
      if (encroaches(pts_[v], s)) return true;
    }
    return false;
  }

  // Splits segment `si` at its midpoint; returns false if insertion fails.
  bool split_segment(std::size_t si) {
    const auto s = segments_[si];
    const Point2 m = lerp(pts_[s.first], pts_[s.second], 0.5);
    const int v = add_point(m);
    if (!insert(m, v)) {
      pts_.pop_back();
      return false;
    }
    segments_[si] = {s.first, v};
    segments_.push_back({v, s.second});
    return true;
  }

  void check_budget() const {
    if (pts_.size() > max_points_) {
      throw MeshQualityError("refinement exceeded point budget");
    }
  }

  void conform_segments() {
    max_points_ = budget();
    bool changed = true;
    while (changed) {
      changed = false;
      for (std::size_t si = 0; si < segments_.size(); ++si) {
        if (segment_encroached(si) || !edge_present(segments_[si])) {
          if (!split_segment(si)) throw MeshQualityError("segment split failed");
          check_budget();
          changed = true;
        }
      }
    }
  }

  bool edge_present(const std::pair<int, int>& s) const {
    for (const Tri& t : tris_) {
      if (!t.alive) continue;
      int hits = 0;
      for (int k = 0; k < 3; ++k) hits += (t.v[k] == s.first || t.v[k] == s.second);
      if (hits == 2) return true;
    }
    return false;
  }

  std::size_t budget() const {
    double area = std::abs(signed_area(outer_));
    for (const auto& hole : holes_) area -= std::abs(signed_area(hole));
    const double per_node = h_ * h_ * std::sqrt(3.0) / 4.0;
    return static_cast<std::size_t>(20.0 * area / per_node) + 20 * pts_.size() + 200;
  }

  bool is_bad(const Tri& t) const {
    const Point2 &A = pts_[t.v[0]], &B = pts_[t.v[1]], &C = pts_[t.v[2]];
    return min_angle_deg(A, B, C) < min_angle_ || std::sqrt(t.r2) > 0.75 * h_;
  }

  void refine() {
    std::vector<bool> skip;
    while (!work_.empty()) {
      const int t = work_.front();
      work_.pop_front();
      if (t >= static_cast<int>(skip.size())) skip.resize(tris_.size(), false);
      const Tri& T = tris_[t];
      if (!T.alive || !T.inside || skip[t] || !is_bad(T)) continue;
      const Point2 c = T.cc;

      std::vector<std::size_t> hit;
      for (std::size_t si = 0; si < segments_.size(); ++si) {
        if (encroaches(c, segments_[si])) hit.push_back(si);
      }
      if (!hit.empty()) {
        for (std::size_t si : hit) {
          if (!split_segment(si)) continue;
          check_budget();
          // New subsegments may be encroached by existing vertices.
          std::deque<std::size_t> q{si, segments_.size() - 1};
          while (!q.empty()) {
            const std::size_t s = q.front();
            q.pop_front();
            if (segment_encroached(s) && split_segment(s)) {
              check_budget();
              q.push_back(s);
              q.push_back(segments_.size() - 1);
            }
          }
        }
        if (tris_[t].alive) work_.push_back(t);
        continue;
      }
      if (!inside_domain(c)) {
        skip.resize(tris_.size(), false);
        skip[t] = true;
        continue;
      }
      const int v = add_point(c);
      if (!insert(c, v)) {
        pts_.pop_back();
        skip.resize(tris_.size(), false);
        skip[t] = true;
        continue;
      }
      check_budget();
    }
  }

  TriMesh extract() const {
    for (const auto& s : segments_) {
      if (!edge_present(s)) throw MeshQualityError("boundary segment lost");
    }
    std::vector<long> remap(pts_.size(), -1);
    TriMesh mesh;
    std::vector<std::array<int, 3>> kept;
    for (const Tri& t : tris_) {
      if (t.alive && t.inside) kept.push_back(t.v);
    }
    std::vector<int> used;
    for (const auto& t : kept)
      for (int v : t) used.push_back(v);
    std::sort(used.begin(), used.end());
    used.erase(std::unique(used.begin(), used.end()), used.end());
    for (int v : used) {
      remap[v] = static_cast<long>(mesh.nodes.size());
      mesh.nodes.push_back(pts_[v]);
    }
    for (const auto& t : kept) {
      mesh.triangles.push_back({static_cast<std::size_t>(remap[t[0]]),
                                static_cast<std::size_t>(remap[t[1]]),
                                static_cast<std::size_t>(remap[t[2]])});
    }
    mesh.node_type.assign(mesh.nodes.size(), NodeType::Interior);
    mesh.normals.assign(mesh.nodes.size(), Point2{0.0, 0.0});
    const double worst = mesh_min_angle_deg(mesh);
    if (worst < min_angle_ - 1e-9) {
      throw MeshQualityError("minimum angle " + std::to_string(worst) + " below floor");
    }
    return mesh;
  }

  const BoundaryLoop& outer_;
  const std::vector<BoundaryLoop>& holes_;
  double h_;
  double min_angle_;
  std::vector<Point2> pts_;
  std::vector<Tri> tris_;
  std::vector<std::pair<int, int>> segments_;
  std::deque<int> work_;
  std::size_t max_points_ = 0;
};

}  // namespace

TriMesh triangulate(const BoundaryLoop& loop, const DomainSpec& spec) {
  if (loop.points.size() < 3) throw InvalidArgument("loop needs at least 3 points");
  if (!(spec.target_h > 0)) throw InvalidArgument("target_h must be > 0");
  BoundaryLoop outer = loop;
  if (signed_area(outer) < 0) std::reverse(outer.points.begin(), outer.points.end());
  std::vector<BoundaryLoop> holes = spec.holes;
  for (auto& hole : holes) {
    if (signed_area(hole) < 0) std::reverse(hole.points.begin(), hole.points.end());
  }
  return Refiner(outer, holes, spec.target_h, spec.min_angle_deg).run();
}

// ---- topology ----------------------------------------------------------------

std::vector<std::vector<std::size_t>> boundary_loops(const TriMesh& mesh) {
  std::map<std::pair<std::size_t, std::size_t>, int> directed;
  for (const auto& t : mesh.triangles) {
    for (int k = 0; k < 3; ++k) directed[{t[k], t[(k + 1) % 3]}] += 1;
  }
  std::unordered_map<std::size_t, std::size_t> next;
  for (const auto& [e, c] : directed) {
    if (directed.count({e.second, e.first})) continue;
    if (next.count(e.first)) throw InvalidArgument("non-manifold boundary vertex");
    next.emplace(e.first, e.second);
  }
  std::vector<std::size_t> starts;
  for (const auto& [a, b] : next) starts.push_back(a);
  std::sort(starts.begin(), starts.end());
  std::vector<bool> visited(mesh.nodes.size(), false);
  std::vector<std::vector<std::size_t>> loops;
  for (std::size_t s : starts) {
    if (visited[s]) continue;
    std::vector<std::size_t> loop;
    std::size_t cur = s;
    while (!visited[cur]) {
      visited[cur] = true;
      loop.push_back(cur);
      auto it = next.find(cur);
      if (it == next.end()) throw InvalidArgument("open boundary chain");
      cur = it->second;
    }
    loops.push_back(std::move(loop));
  }
  auto area_of = [&mesh](const std::vector<std::size_t>& l) {
    BoundaryLoop b;
    for (std::size_t i : l) b.points.push_back(mesh.nodes[i]);
    return signed_area(b);
  };
  std::stable_sort(loops.begin(), loops.end(), [&](const auto& a, const auto& b) {
    return area_of(a) > area_of(b);
  });
  return loops;
}

TriMesh assign_node_types(TriMesh mesh, std::uint64_t seed, TypingMode mode,
                          std::optional<double> offset_fraction) {
  const auto loops = boundary_loops(mesh);
  mesh.node_type.assign(mesh.nodes.size(), NodeType::Interior);
  if (loops.empty()) throw NoDirichletError("mesh has no boundary");
  for (std::size_t l = 1; l < loops.size(); ++l) {
    for (std::size_t i : loops[l]) mesh.node_type[i] = NodeType::Neumann;
  }
  const auto& outer = loops.front();
  if (mode == TypingMode::OuterAllDirichlet) {
    for (std::size_t i : outer) mesh.node_type[i] = NodeType::Dirichlet;
    return mesh;
  }
  double offset = 0.0;
  if (offset_fraction) {
    offset = *offset_fraction;
  } else {
    std::mt19937_64 rng(seed);
    offset = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  }
  std::vector<double> arc(outer.size(), 0.0);
  for (std::size_t k = 1; k < outer.size(); ++k) {
    arc[k] = arc[k - 1] + dist(mesh.nodes[outer[k - 1]], mesh.nodes[outer[k]]);
  }
  const double total = arc.back() + dist(mesh.nodes[outer.back()], mesh.nodes[outer.front()]);
  bool any_dirichlet = false;
  for (std::size_t k = 0; k < outer.size(); ++k) {
    double s = std::fmod(arc[k] - offset * total, total);
    if (s < 0) s += total;
    const int sector = std::clamp(static_cast<int>(std::floor(4.0 * s / total)), 0, 3);
    const bool dirichlet = sector % 2 == 0;
    mesh.node_type[outer[k]] = dirichlet ? NodeType::Dirichlet : NodeType::Neumann;
    any_dirichlet = any_dirichlet || dirichlet;
  }
  if (!any_dirichlet) throw NoDirichletError("boundary split produced no Dirichlet node");
  return mesh;
}

TriMesh compute_normals(TriMesh mesh) {
  mesh.normals.assign(mesh.nodes.size(), Point2{0.0, 0.0});
  for (const auto& loop : boundary_loops(mesh)) {
    const std::size_t k = loop.size();
    for (std::size_t i = 0; i < k; ++i) {
      const Point2& prev = mesh.nodes[loop[(i + k - 1) % k]];
      const Point2& cur = mesh.nodes[loop[i]];
      const Point2& next = mesh.nodes[loop[(i + 1) % k]];
      // Domain lies on the left of each directed boundary edge.
      auto outward = [](const Point2& a, const Point2& b) {
        const double dx = b.x - a.x, dy = b.y - a.y, len = std::hypot(dx, dy);
        return Point2{dy / len, -dx / len};
      };
      const Point2 n1 = outward(prev, cur), n2 = outward(cur, next);
      Point2 n{n1.x + n2.x, n1.y + n2.y};
      double len = std::hypot(n.x, n.y);
      if (len < 1e-14) {  // cusp: fall back to the incoming edge normal
        n = n1;
        len = 1.0;
      }
      mesh.normals[loop[i]] = {n.x / len, n.y / len};
    }
  }
  return mesh;
}

TriMesh make_mesh(const DomainSpec& spec, std::uint64_t typing_seed, TypingMode mode) {
  const BoundaryLoop loop = generate_domain(spec);
  return compute_normals(assign_node_types(triangulate(loop, spec), typing_seed, mode));
}

TriMesh structured_rectangle(double width, double height, int nx, int ny) {
  if (nx < 1 || ny < 1 || !(width > 0) || !(height > 0)) {
    throw InvalidArgument("structured_rectangle: bad dimensions");
  }
  TriMesh mesh;
  for (int j = 0; j <= ny; ++j)
    for (int i = 0; i <= nx; ++i) mesh.nodes.push_back({width * i / nx, height * j / ny});
  auto id = [nx](int i, int j) { return static_cast<std::size_t>(j * (nx + 1) + i); };
  for (int j = 0; j < ny; ++j) {
    for (int i = 0; i < nx; ++i) {
      mesh.triangles.push_back({id(i, j), id(i + 1, j), id(i + 1, j + 1)});
      mesh.triangles.push_back({id(i, j), id(i + 1, j + 1), id(i, j + 1)});
    }
  }
  mesh.node_type.assign(mesh.nodes.size(), NodeType::Interior);
  mesh.normals.assign(mesh.nodes.size(), Point2{0.0, 0.0});
  return mesh;
}

TriMesh crisscross_rectangle(double width, double height, int nx, int ny) {
  TriMesh mesh = structured_rectangle(width, height, nx, ny);
  mesh.triangles.clear();
  auto id = [nx](int i, int j) { return static_cast<std::size_t>(j * (nx + 1) + i); };
  for (int j = 0; j < ny; ++j) {
    for (int i = 0; i < nx; ++i) {
      mesh.nodes.push_back({width * (i + 0.5) / nx, height * (j + 0.5) / ny});
      const std::size_t c = mesh.nodes.size() - 1;
      mesh.triangles.push_back({id(i, j), id(i + 1, j), c});
      mesh.triangles.push_back({id(i + 1, j), id(i + 1, j + 1), c});
      mesh.triangles.push_back({id(i + 1, j + 1), id(i, j + 1), c});
      mesh.triangles.push_back({id(i, j + 1), id(i, j), c});
    }
  }
  mesh.node_type.assign(mesh.nodes.size(), NodeType::Interior);
  mesh.normals.assign(mesh.nodes.size(), Point2{0.0, 0.0});
  return mesh;
}

TriMesh refine_uniform(const TriMesh& mesh) {
  TriMesh out;
  out.nodes = mesh.nodes;
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> mid;
  auto midpoint = [&](std::size_t a, std::size_t b) {
    const auto key = std::make_pair(std::min(a, b), std::max(a, b));
    auto it = mid.find(key);
    if (it != mid.end()) return it->second;
    out.nodes.push_back(lerp(mesh.nodes[a], mesh.nodes[b], 0.5));
    mid.emplace(key, out.nodes.size() - 1);
    return out.nodes.size() - 1;
  };
  for (const auto& t : mesh.triangles) {
    const std::size_t ab = midpoint(t[0], t[1]), bc = midpoint(t[1], t[2]), ca = midpoint(t[2], t[0]);
    out.triangles.push_back({t[0], ab, ca});
    out.triangles.push_back({ab, t[1], bc});
    out.triangles.push_back({ca, bc, t[2]});
    out.triangles.push_back({ab, bc, ca});
  }
  out.node_type.assign(out.nodes.size(), NodeType::Interior);
  out.normals.assign(out.nodes.size(), Point2{0.0, 0.0});
  return out;
}

DomainSpec holed_domain_spec(std::uint64_t seed, double target_h) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> jitter(-0.04, 0.04);
  DomainSpec spec;
  spec.seed = seed;
  spec.target_h = target_h;
  spec.curve = BoundaryCurve::CatmullRom;
  constexpr int kControl = 12;
  for (int i = 0; i < kControl; ++i) {
    const double a = 2.0 * std::numbers::pi * i / kControl;
    spec.control_points.push_back(
        {0.5 + (0.46 + jitter(rng)) * std::cos(a), 0.5 + (0.30 + jitter(rng)) * std::sin(a)});
  }
  spec.n_control = kControl;
  auto ellipse = [target_h](Point2 c, double rx, double ry) {
    const double perim = std::numbers::pi * (3 * (rx + ry) - std::sqrt((3 * rx + ry) * (rx + 3 * ry)));
    const int n = std::max(8, static_cast<int>(std::ceil(perim / target_h)));
    BoundaryLoop loop;
    for (int i = 0; i < n; ++i) {
      const double a = 2.0 * std::numbers::pi * i / n;
      loop.points.push_back({c.x + rx * std::cos(a), c.y + ry * std::sin(a)});
    }
    return loop;
  };
  spec.holes.push_back(ellipse({0.30, 0.52}, 0.09, 0.05));
  spec.holes.push_back(ellipse({0.68, 0.47}, 0.06, 0.09));
  return spec;
}

// ---- checks ------------------------------------------------------------------

double mesh_area(const TriMesh& mesh) {
  double a = 0.0;
  for (const auto& t : mesh.triangles) {
    a += triangle_area(mesh.nodes[t[0]], mesh.nodes[t[1]], mesh.nodes[t[2]]);
  }
  return a;
}

double mesh_min_angle_deg(const TriMesh& mesh) {
  double worst = 180.0;
  for (const auto& t : mesh.triangles) {
    worst = std::min(worst, min_angle_deg(mesh.nodes[t[0]], mesh.nodes[t[1]], mesh.nodes[t[2]]));
  }
  return worst;
}

std::vector<std::pair<std::size_t, std::size_t>> mesh_edges(const TriMesh& mesh) {
  std::vector<std::pair<std::size_t, std::size_t>> edges;
  edges.reserve(3 * mesh.triangles.size());
  for (const auto& t : mesh.triangles) {
    for (int k = 0; k < 3; ++k) {
      const std::size_t a = t[k], b = t[(k + 1) % 3];
      edges.emplace_back(std::min(a, b), std::max(a, b));
    }
  }
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  return edges;
}

bool is_connected(const TriMesh& mesh) {
  if (mesh.nodes.empty()) return true;
  std::vector<std::vector<std::size_t>> adj(mesh.nodes.size());
  for (const auto& [a, b] : mesh_edges(mesh)) {
    adj[a].push_back(b);
    adj[b].push_back(a);
  }
  std::vector<bool> seen(mesh.nodes.size(), false);
  std::vector<std::size_t> stack{0};
  seen[0] = true;
  std::size_t count = 1;
  while (!stack.empty()) {
    const std::size_t v = stack.back();
    stack.pop_back();
    for (std::size_t w : adj[v]) {
      if (!seen[w]) {
        seen[w] = true;
        ++count;
        stack.push_back(w);
      }
    }
  }
  return count == mesh.nodes.size();
}

}  // namespace eqgnn
