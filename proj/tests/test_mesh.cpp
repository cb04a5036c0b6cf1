#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "doctest.h"
#include "eqgnn/errors.hpp"
#include "eqgnn/mesh.hpp"

using namespace eqgnn;

namespace {

// Independent pairwise crossing test (proper crossings plus collinear overlap).
bool crossing(Point2 a, Point2 b, Point2 c, Point2 d) {
  auto cr = [](Point2 o, Point2 p, Point2 q) { return (p.x - o.x) * (q.y - o.y) - (p.y - o.y) * (q.x - o.x); };
  auto sgn = [](double v) { return (v > 0) - (v < 0); };
  const int s1 = sgn(cr(a, b, c)), s2 = sgn(cr(a, b, d)), s3 = sgn(cr(c, d, a)), s4 = sgn(cr(c, d, b));
  if (s1 * s2 < 0 && s3 * s4 < 0) return true;
  auto within = [](Point2 p, Point2 q, Point2 r) {
    return std::min(p.x, q.x) <= r.x && r.x <= std::max(p.x, q.x) && std::min(p.y, q.y) <= r.y &&
           r.y <= std::max(p.y, q.y);
  };
  return (s1 == 0 && within(a, b, c)) || (s2 == 0 && within(a, b, d)) || (s3 == 0 && within(c, d, a)) ||
         (s4 == 0 && within(c, d, b));
}

bool oracle_simple(const std::vector<Point2>& p) {
  const std::size_t k = p.size();
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = i + 2; j < k; ++j) {
      if (i == 0 && j == k - 1) continue;
      if (crossing(p[i], p[(i + 1) % k], p[j], p[(j + 1) % k])) return false;
    }
  return true;
}

double shoelace(const std::vector<Point2>& p) {
  double s = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const auto& a = p[i];
    const auto& b = p[(i + 1) % p.size()];
    s += a.x * b.y - b.x * a.y;
  }
  return 0.5 * s;
}

DomainSpec unit_square(double h) {
  DomainSpec s;
  s.curve = BoundaryCurve::Polygon;
  s.control_points = {{0, 0}, {1, 0}, {1, 1}, {0, 1}};
  s.n_control = 4;
  s.target_h = h;
  return s;
}

std::set<std::size_t> boundary_nodes_by_incidence(const TriMesh& m) {
  std::map<std::pair<std::size_t, std::size_t>, int> count;
  for (const auto& t : m.triangles)
    for (int k = 0; k < 3; ++k) {
      auto a = t[k], b = t[(k + 1) % 3];
      count[{std::min(a, b), std::max(a, b)}]++;
    }
  std::set<std::size_t> out;
  for (const auto& [e, c] : count)
    if (c == 1) {
      out.insert(e.first);
      out.insert(e.second);
    }
  return out;
}

void check_invariants(const TriMesh& m, double floor_deg = 20.0) {
  for (const auto& t : m.triangles) REQUIRE(triangle_area(m.nodes[t[0]], m.nodes[t[1]], m.nodes[t[2]]) > 0);
  CHECK(mesh_min_angle_deg(m) >= floor_deg - 1e-9);
  CHECK(is_connected(m));
  const auto bnd = boundary_nodes_by_incidence(m);
  for (std::size_t i = 0; i < m.size(); ++i) {
    const bool on = bnd.count(i) > 0;
    CHECK((m.node_type[i] != NodeType::Interior) == on);
    const double len = std::hypot(m.normals[i].x, m.normals[i].y);
    if (on)
      CHECK(std::abs(len - 1.0) <= 1e-12);
    else
      CHECK(len == 0.0);
  }
}

}  // namespace

TEST_CASE("generate_domain is deterministic") {
  DomainSpec s;
  s.seed = 42;
  const auto a = generate_domain(s);
  const auto b = generate_domain(s);
  REQUIRE(a.points.size() == b.points.size());
  for (std::size_t i = 0; i < a.points.size(); ++i) CHECK(a.points[i] == b.points[i]);
}

TEST_CASE("polygon control points at square corners give the square") {
  const auto loop = generate_domain(unit_square(2.0));
  REQUIRE(loop.points.size() == 4);
  CHECK(loop.points[0] == Point2{0, 0});
  CHECK(loop.points[1] == Point2{1, 0});
  CHECK(loop.points[2] == Point2{1, 1});
  CHECK(loop.points[3] == Point2{0, 1});
}

TEST_CASE("random loops are simple, CCW and finely sampled") {
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    DomainSpec s;
    s.seed = seed;
    s.target_h = 0.1;
    const auto loop = generate_domain(s);
    REQUIRE(oracle_simple(loop.points));
    REQUIRE(shoelace(loop.points) > 0);
    for (std::size_t i = 0; i < loop.points.size(); ++i) {
      const auto& a = loop.points[i];
      const auto& b = loop.points[(i + 1) % loop.points.size()];
      REQUIRE(std::hypot(a.x - b.x, a.y - b.y) <= 0.1 + 1e-12);
    }
  }
}

TEST_CASE("domain spec validation") {
  DomainSpec s;
  s.n_control = 2;
  CHECK_THROWS_AS(generate_domain(s), InvalidArgument);
  s.n_control = 10;
  s.target_h = 0;
  CHECK_THROWS_AS(generate_domain(s), InvalidArgument);
}

TEST_CASE("unit square with coarse target needs no refinement") {
  const auto spec = unit_square(1.0);
  const auto m = triangulate(generate_domain(spec), spec);
  CHECK(m.nodes.size() == 4);
  REQUIRE(m.triangles.size() == 2);
  for (const auto& t : m.triangles)
    CHECK(triangle_area(m.nodes[t[0]], m.nodes[t[1]], m.nodes[t[2]]) == doctest::Approx(0.5).epsilon(1e-14));
}

TEST_CASE("unit square at h = 0.1 lands in the expected node band") {
  const auto spec = unit_square(0.1);
  const auto loop = generate_domain(spec);
  const auto m = compute_normals(assign_node_types(triangulate(loop, spec), 1));
  MESSAGE("unit square h=0.1 nodes: " << m.nodes.size());
  CHECK(m.nodes.size() >= 80);
  CHECK(m.nodes.size() <= 300);
  CHECK(std::abs(mesh_area(m) - 1.0) <= 1e-9);
  check_invariants(m);
}

TEST_CASE("triangulation partitions the domain and respects quality") {
  for (std::uint64_t seed : {1u, 2u, 3u, 17u, 99u}) {
    DomainSpec s;
    s.seed = seed;
    s.target_h = 0.08;
    const auto loop = generate_domain(s);
    const auto m = compute_normals(assign_node_types(triangulate(loop, s), seed));
    const double poly = shoelace(loop.points);
    CHECK(std::abs(mesh_area(m) - poly) <= 1e-9 * poly);
    check_invariants(m);
  }
}

TEST_CASE("node count grows as target_h shrinks") {
  DomainSpec s;
  s.seed = 5;
  std::size_t prev = 0;
  for (double h : {0.2, 0.1, 0.05}) {
    s.target_h = h;
    const auto m = triangulate(generate_domain(s), s);
    CHECK(m.nodes.size() > prev);
    prev = m.nodes.size();
  }
}

TEST_CASE("holed domain: holes are Neumann and area excludes them") {
  const auto spec = holed_domain_spec(3, 0.06);
  const auto outer = generate_domain(spec);
  const auto m = compute_normals(assign_node_types(triangulate(outer, spec), 3, TypingMode::OuterAllDirichlet));
  double expect = shoelace(outer.points);
  for (const auto& h : spec.holes) expect -= std::abs(shoelace(h.points));
  CHECK(std::abs(mesh_area(m) - expect) <= 1e-9 * expect);
  const auto loops = boundary_loops(m);
  REQUIRE(loops.size() == 3);
  for (std::size_t v : loops[0]) CHECK(m.node_type[v] == NodeType::Dirichlet);
  for (std::size_t l = 1; l < 3; ++l)
    for (std::size_t v : loops[l]) CHECK(m.node_type[v] == NodeType::Neumann);
  check_invariants(m);
}

TEST_CASE("square with 8 boundary nodes at offset 0 alternates pairs") {
  auto m = structured_rectangle(1, 1, 2, 2);
  m = assign_node_types(m, 0, TypingMode::Quarters, 0.0);
  const auto loops = boundary_loops(m);
  REQUIRE(loops.size() == 1);
  REQUIRE(loops[0].size() == 8);
  const NodeType D = NodeType::Dirichlet, N = NodeType::Neumann;
  const std::vector<NodeType> want{D, D, N, N, D, D, N, N};
  for (std::size_t k = 0; k < 8; ++k) CHECK(m.node_type[loops[0][k]] == want[k]);
  CHECK(m.node_type[4] == NodeType::Interior);
}

TEST_CASE("mesh without interior nodes is fully typed") {
  auto m = structured_rectangle(1, 1, 1, 1);
  m = assign_node_types(m, 3);
  for (auto t : m.node_type) CHECK(t != NodeType::Interior);
}

TEST_CASE("typing over many random meshes") {
  for (std::uint64_t seed = 0; seed < 500; ++seed) {
    DomainSpec s;
    s.seed = seed;
    s.target_h = 0.15;
    const auto m = make_mesh(s, seed + 1000);
    const auto bnd = boundary_nodes_by_incidence(m);
    std::size_t d = 0, n = 0;
    for (auto t : m.node_type) {
      d += t == NodeType::Dirichlet;
      n += t == NodeType::Neumann;
    }
    REQUIRE(d >= 1);
    REQUIRE(d + n == bnd.size());
  }
}

TEST_CASE("normals on the unit square") {
  auto m = compute_normals(assign_node_types(structured_rectangle(1, 1, 2, 2), 0));
  // node 1 is (0.5, 0), node 0 is the corner (0, 0)
  CHECK(m.normals[1].x == doctest::Approx(0.0));
  CHECK(m.normals[1].y == doctest::Approx(-1.0));
  CHECK(m.normals[0].x == doctest::Approx(-std::sqrt(2.0) / 2).epsilon(1e-14));
  CHECK(m.normals[0].y == doctest::Approx(-std::sqrt(2.0) / 2).epsilon(1e-14));
  CHECK(m.normals[4].x == 0.0);
  CHECK(m.normals[4].y == 0.0);
  // Flat edge midpoints are perpendicular to their tangents.
  const std::vector<std::pair<std::size_t, Point2>> mids{{1, {1, 0}}, {5, {0, 1}}, {7, {1, 0}}, {3, {0, 1}}};
  for (const auto& [v, t] : mids) CHECK(std::abs(m.normals[v].x * t.x + m.normals[v].y * t.y) <= 1e-9);
}

TEST_CASE("mesh json round trip is lossless") {
  DomainSpec s;
  s.seed = 11;
  s.target_h = 0.12;
  const auto m = make_mesh(s, 4);
  const auto path = std::filesystem::temp_directory_path() / "eqgnn_mesh_rt.json";
  write_mesh_json(m, path);
  const auto r = read_mesh(path);
  REQUIRE(r.nodes.size() == m.nodes.size());
  for (std::size_t i = 0; i < m.nodes.size(); ++i) {
    CHECK(r.nodes[i] == m.nodes[i]);
    CHECK(r.normals[i] == m.normals[i]);
    CHECK(r.node_type[i] == m.node_type[i]);
  }
  CHECK(r.triangles == m.triangles);
  std::filesystem::remove(path);
}

TEST_CASE("empty mesh file is a parse error") {
  const auto path = std::filesystem::temp_directory_path() / "eqgnn_empty.json";
  { std::ofstream(path).flush(); }
  CHECK_THROWS_AS(read_mesh(path), ParseError);
  const auto msh = std::filesystem::temp_directory_path() / "eqgnn_empty.msh";
  { std::ofstream(msh).flush(); }
  CHECK_THROWS_AS(read_mesh(msh), ParseError);
  std::filesystem::remove(path);
  std::filesystem::remove(msh);
}

TEST_CASE("hand-written MSH 2.2 square") {
  const auto path = std::filesystem::temp_directory_path() / "eqgnn_square.msh";
  {
    std::ofstream f(path);
    f << "$MeshFormat\n2.2 0 8\n$EndMeshFormat\n"
         "$Nodes\n4\n1 0 0 0\n2 1 0 0\n3 1 1 0\n4 0 1 0\n$EndNodes\n"
         "$Elements\n6\n"
         "1 1 2 1 1 1 2\n2 1 2 2 2 2 3\n3 1 2 1 3 3 4\n4 1 2 2 4 4 1\n"
         "5 2 2 0 1 1 2 3\n6 2 2 0 1 1 4 3\n"
         "$EndElements\n";
  }
  const auto m = read_msh(path);
  CHECK(m.nodes.size() == 4);
  REQUIRE(m.triangles.size() == 2);
  CHECK(mesh_area(m) == doctest::Approx(1.0));
  for (const auto& t : m.triangles) CHECK(triangle_area(m.nodes[t[0]], m.nodes[t[1]], m.nodes[t[2]]) > 0);
  for (auto t : m.node_type) CHECK(t == NodeType::Dirichlet);
  std::filesystem::remove(path);
}

TEST_CASE("MSH errors carry line numbers") {
  const auto path = std::filesystem::temp_directory_path() / "eqgnn_bad.msh";
  {
    std::ofstream f(path);
    f << "$MeshFormat\n2.2 0 8\n$EndMeshFormat\n$Nodes\n2\n1 0 0 0\nbogus\n$EndNodes\n";
  }
  try {
    read_msh(path);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.line() == 7);
  }
  std::filesystem::remove(path);
}
