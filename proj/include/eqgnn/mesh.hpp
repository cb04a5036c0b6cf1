#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <utility>
#include <vector>

namespace eqgnn {

struct Point2 {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const Point2&) const = default;
};

/// Closed polyline; the closing edge back to the first point is implicit.
struct BoundaryLoop {
  std::vector<Point2> points;
};

/// One-hot order of the node-type encoding: Interior, Dirichlet, Neumann.
enum class NodeType : int { Interior = 0, Dirichlet = 1, Neumann = 2 };

struct TriMesh {
  std::vector<Point2> nodes;
  std::vector<std::array<std::size_t, 3>> triangles;
  std::vector<NodeType> node_type;
  std::vector<Point2> normals;  // unit outward on the boundary, zero inside

  std::size_t size() const noexcept { return nodes.size(); }
};

enum class BoundaryCurve {
  CatmullRom,  // smooth closed interpolant through the control points
  Polygon,     // control points joined by straight segments
};

struct DomainSpec {
  std::uint64_t seed = 0;
  int n_control = 10;
  double target_h = 0.1;
  std::vector<BoundaryLoop> holes;
  BoundaryCurve curve = BoundaryCurve::CatmullRom;
  /// Explicit control points; when empty they are drawn from `seed`.
  std::vector<Point2> control_points;
  double min_angle_deg = 20.0;
};

// ---- geometry helpers ----------------------------------------------------

double signed_area(const BoundaryLoop& loop);
double orient2d(const Point2& a, const Point2& b, const Point2& c);
bool segments_intersect(const Point2& a, const Point2& b, const Point2& c, const Point2& d);
/// O(k^2) pairwise test over non-adjacent edges.
bool is_simple(const BoundaryLoop& loop);
bool point_in_loop(const Point2& p, const BoundaryLoop& loop);
double triangle_area(const Point2& a, const Point2& b, const Point2& c);
double min_angle_deg(const Point2& a, const Point2& b, const Point2& c);

// ---- operations ------------------------------------------------------------

/// Closed, simple, counter-clockwise loop with consecutive points at most
/// `target_h` apart. Redraws control points on self-intersection (up to 100
/// times) and throws RetryExhausted beyond that.
BoundaryLoop generate_domain(const DomainSpec& spec);

/// Conforming Delaunay refinement of the region bounded by `loop` minus the
/// spec's holes. Node types are left Interior; normals are zero.
TriMesh triangulate(const BoundaryLoop& loop, const DomainSpec& spec);

/// Boundary loops recovered from edge incidence: each loop is ordered with the
/// domain on its left and starts at its smallest node index. The outer loop
/// (positive area) comes first.
std::vector<std::vector<std::size_t>> boundary_loops(const TriMesh& mesh);

enum class TypingMode {
  Quarters,           // four arc-length sectors, opposite pairs D/N
  OuterAllDirichlet,  // every outer boundary node Dirichlet
};

/// Splits the outer boundary into four arc-length sectors starting at a
/// seeded offset; sectors 0 and 2 are Dirichlet, 1 and 3 Neumann. Hole
/// boundaries are always Neumann. `offset_fraction` overrides the seed.
TriMesh assign_node_types(TriMesh mesh, std::uint64_t seed,
                          TypingMode mode = TypingMode::Quarters,
                          std::optional<double> offset_fraction = std::nullopt);

TriMesh compute_normals(TriMesh mesh);

/// generate_domain + triangulate + assign_node_types + compute_normals.
TriMesh make_mesh(const DomainSpec& spec, std::uint64_t typing_seed,
                  TypingMode mode = TypingMode::Quarters);

/// Structured rectangle [0,w]x[0,h] split into nx x ny cells, two triangles each.
TriMesh structured_rectangle(double width, double height, int nx, int ny);

/// Same grid with every cell split into four by both diagonals through an
/// added center node.
TriMesh crisscross_rectangle(double width, double height, int nx, int ny);

/// Red refinement: every triangle split into four through its edge midpoints.
/// Node types and normals are reset; callers re-run typing.
TriMesh refine_uniform(const TriMesh& mesh);

/// Outer blob with two elliptic holes, for out-of-distribution tests.
DomainSpec holed_domain_spec(std::uint64_t seed, double target_h);

// ---- checks ------------------------------------------------------------------

double mesh_area(const TriMesh& mesh);
double mesh_min_angle_deg(const TriMesh& mesh);
bool is_connected(const TriMesh& mesh);
/// Undirected unique edges (i < j), sorted.
std::vector<std::pair<std::size_t, std::size_t>> mesh_edges(const TriMesh& mesh);

// ---- io -------------------------------------------------------------------------

void write_mesh_json(const TriMesh& mesh, const std::filesystem::path& path);
TriMesh read_mesh_json(const std::filesystem::path& path);
/// Gmsh MSH 2.2 ASCII. Line elements with physical tag 1 mark Dirichlet nodes
/// and tag 2 Neumann nodes; without such tags types come from
/// assign_node_types(seed 0).
TriMesh read_msh(const std::filesystem::path& path);
/// Dispatches on extension (.msh or JSON).
TriMesh read_mesh(const std::filesystem::path& path);

}  // namespace eqgnn
