#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <numeric>
#include <random>
#include <set>

#include "doctest.h"
#include "eqgnn/dataset.hpp"
#include "eqgnn/errors.hpp"
#include "eqgnn/json_io.hpp"

using namespace eqgnn;

namespace {

TriMesh single_triangle() {
  TriMesh m;
  m.nodes = {{0, 0}, {1, 0}, {0, 1}};
  m.triangles = {{0, 1, 2}};
  m.node_type = {NodeType::Dirichlet, NodeType::Interior, NodeType::Interior};
  m.normals = {{0, 0}, {0, 0}, {0, 0}};
  return m;
}

DatasetConfig small_config(std::uint64_t seed) {
  DatasetConfig c;
  c.seed = seed;
  c.n_train = 6;
  c.n_val = 2;
  c.n_test = 2;
  return c;
}

}  // namespace

TEST_CASE("single triangle edges follow the Dirichlet rule") {
  const auto m = single_triangle();
  SourceTerm f;
  f.r = {0, 0, 1};
  BoundaryData g;
  g.r = {0, 0, 0, 0, 0, 2};
  const auto p = build_graph(m, assemble(m, f, g), f, g);
  std::set<std::pair<std::size_t, std::size_t>> edges;
  for (std::size_t k = 0; k < p.edge_src.size(); ++k) edges.insert({p.edge_src[k], p.edge_dst[k]});
  const std::set<std::pair<std::size_t, std::size_t>> want{{0, 1}, {0, 2}, {1, 2}, {2, 1}};
  CHECK(edges == want);
  CHECK(p.in_edges[0].empty());
  CHECK(p.u0 == std::vector<double>{2.0, 0.0, 0.0});
}

TEST_CASE("b rows encode f and g by node type") {
  TriMesh m;
  m.nodes = {{0, 0}, {1, 0}, {0, 1}, {1, 1}};
  m.triangles = {{0, 1, 3}, {0, 3, 2}};
  m.node_type = {NodeType::Dirichlet, NodeType::Interior, NodeType::Neumann, NodeType::Neumann};
  m.normals = {{0, 0}, {0, 0}, {0, 1}, {0, 1}};
  SourceTerm f;
  f.r = {0, 0, 7};
  BoundaryData g;
  g.r = {0, 0, 0, 0, 0, -2};
  const auto p = build_graph(m, assemble(m, f, g), f, g);
  auto row = [&](std::size_t i) { return std::vector<double>(p.b.begin() + 3 * i, p.b.begin() + 3 * i + 3); };
  CHECK(row(0) == std::vector<double>{0, -2, 0});
  CHECK(row(1) == std::vector<double>{7, 0, 0});
  CHECK(row(2) == std::vector<double>{0, 0, 7});
  for (std::size_t i = 0; i < 4; ++i) {
    const double sum = p.t[3 * i] + p.t[3 * i + 1] + p.t[3 * i + 2];
    CHECK(sum == 1.0);
    CHECK(p.t[3 * i + static_cast<int>(m.node_type[i])] == 1.0);
  }
}

TEST_CASE("default_init") {
  auto m = single_triangle();
  m.node_type = {NodeType::Interior, NodeType::Interior, NodeType::Dirichlet};
  SourceTerm f;
  BoundaryData g;
  g.r = {0, 0, 0, 0, 0, 3.5};
  const auto p = build_graph(m, assemble(m, f, g), f, g);
  CHECK(p.u0 == std::vector<double>{0, 0, 3.5});
}

TEST_CASE("inconsistent inputs are rejected") {
  const auto m = single_triangle();
  SourceTerm f;
  BoundaryData g;
  auto sys = assemble(m, f, g);
  sys.n = 4;
  CHECK_THROWS_AS(build_graph(m, sys, f, g), InconsistentInputs);
}

TEST_CASE("norm stats use population convention and floor") {
  GraphProblem a, b;
  auto m = single_triangle();
  SourceTerm f;
  BoundaryData g;
  auto p = build_graph(m, assemble(m, f, g), f, g);
  p.dist = {1, 2};
  GraphProblem q = p;
  q.dist = {3};
  const auto s = compute_norm_stats({p, q});
  CHECK(s.dist_mean == doctest::Approx(2.0));
  CHECK(s.dist_std == doctest::Approx(std::sqrt(2.0 / 3.0)));
  // b is zero everywhere (f = g = 0), so every b channel is constant.
  for (double sd : s.b_std) CHECK(sd == 1e-8);
  const auto n = normalize(p, s);
  for (std::size_t k = 0; k < n.b.size(); ++k) CHECK(n.b[k] == 0.0);
  CHECK_THROWS_AS(compute_norm_stats({}), EmptyDataset);
}

TEST_CASE("generated dataset: structure, bands and residuals") {
  auto cfg = small_config(3);
  cfg.jobs = 3;
  const auto data = generate_dataset(cfg);
  CHECK(data.train.size() == 6);
  CHECK(data.val.size() == 2);
  CHECK(data.test.size() == 2);
  for (const auto* split : {&data.train, &data.val, &data.test}) {
    for (const auto& p : *split) {
      CHECK(p.n() >= cfg.min_nodes);
      CHECK(p.n() <= cfg.max_nodes);
      CHECK(residual_loss(p.u_ex, p.system) <= 1e-10);
      CHECK(residual_loss(p.u0, p.system) >= residual_loss(p.u_ex, p.system));
      // In-degree of Dirichlet nodes is zero; skeleton over free nodes equals mesh adjacency.
      std::set<std::pair<std::size_t, std::size_t>> directed;
      for (std::size_t k = 0; k < p.edge_src.size(); ++k) {
        CHECK(p.type(p.edge_dst[k]) != NodeType::Dirichlet);
        CHECK(p.dist[k] > 0);
        directed.insert({p.edge_src[k], p.edge_dst[k]});
      }
      for (const auto& [a, b] : mesh_edges(p.mesh)) {
        const bool da = p.type(a) == NodeType::Dirichlet, db = p.type(b) == NodeType::Dirichlet;
        CHECK(directed.count({a, b}) == (db ? 0u : 1u));
        CHECK(directed.count({b, a}) == (da ? 0u : 1u));
      }
      for (std::size_t i = 0; i < p.n(); ++i)
        if (p.type(i) == NodeType::Dirichlet) CHECK(p.u0[i] == p.system.B[i]);
    }
  }
}

TEST_CASE("generation is deterministic and independent of thread count") {
  auto cfg = small_config(9);
  const auto a = generate_dataset(cfg);
  cfg.jobs = 4;
  const auto b = generate_dataset(cfg);
  for (std::size_t i = 0; i < a.train.size(); ++i) {
    CHECK(record_to_json(a.train[i]) == record_to_json(b.train[i]));
  }
  CHECK(norm_stats_to_json(a.stats) == norm_stats_to_json(b.stats));
}

TEST_CASE("normalized training dist is standardized") {
  const auto data = generate_dataset(small_config(4));
  std::vector<double> all;
  for (const auto& p : data.train) {
    const auto n = normalize(p, data.stats);
    all.insert(all.end(), n.dist.begin(), n.dist.end());
  }
  const double mean = std::accumulate(all.begin(), all.end(), 0.0) / static_cast<double>(all.size());
  double var = 0;
  for (double v : all) var += (v - mean) * (v - mean);
  const double sd = std::sqrt(var / static_cast<double>(all.size()));
  CHECK(std::abs(mean) <= 1e-10);
  CHECK(std::abs(sd - 1.0) <= 1e-6);
}

TEST_CASE("write and read a dataset round trip") {
  const auto data = generate_dataset(small_config(5));
  const auto dir = std::filesystem::temp_directory_path() / "eqgnn_ds_rt";
  std::filesystem::remove_all(dir);
  const auto manifest = write_dataset(data, dir);
  CHECK(manifest.at("counts").at("train") == 6);
  const auto back = read_dataset(dir);
  REQUIRE(back.train.size() == data.train.size());
  for (std::size_t i = 0; i < data.train.size(); ++i) {
    CHECK(record_to_json(back.train[i]) == record_to_json(data.train[i]));
    CHECK(back.train[i].dist == data.train[i].dist);
  }
  CHECK(norm_stats_to_json(back.stats) == norm_stats_to_json(data.stats));
  // Same config written twice gives identical manifests.
  const auto dir2 = std::filesystem::temp_directory_path() / "eqgnn_ds_rt2";
  std::filesystem::remove_all(dir2);
  CHECK(write_dataset(generate_dataset(small_config(5)), dir2) == manifest);
  std::filesystem::remove_all(dir);
  std::filesystem::remove_all(dir2);
}

TEST_CASE("node relabeling gives an isomorphic record") {
  DatasetConfig cfg = small_config(1);
  const GraphProblem p = generate_sample(77, cfg);
  std::vector<std::size_t> perm(p.n());
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 rng(1);
  std::shuffle(perm.begin(), perm.end(), rng);  // new index of old node i is perm[i]
  TriMesh m = p.mesh;
  for (std::size_t i = 0; i < p.n(); ++i) {
    m.nodes[perm[i]] = p.mesh.nodes[i];
    m.node_type[perm[i]] = p.mesh.node_type[i];
    m.normals[perm[i]] = p.mesh.normals[i];
  }
  for (auto& t : m.triangles)
    for (auto& v : t) v = perm[v];
  const GraphProblem q = build_graph(m, assemble(m, p.f, p.g), p.f, p.g);
  // Canonical re-sort: map edges back through the permutation.
  std::map<std::pair<std::size_t, std::size_t>, double> pe, qe;
  for (std::size_t k = 0; k < p.edge_src.size(); ++k) pe[{perm[p.edge_src[k]], perm[p.edge_dst[k]]}] = p.dist[k];
  for (std::size_t k = 0; k < q.edge_src.size(); ++k) qe[{q.edge_src[k], q.edge_dst[k]}] = q.dist[k];
  CHECK(pe == qe);
  for (std::size_t i = 0; i < p.n(); ++i) {
    for (int c = 0; c < 3; ++c) {
      CHECK(q.b[3 * perm[i] + c] == p.b[3 * i + c]);
      CHECK(q.t[3 * perm[i] + c] == p.t[3 * i + c]);
    }
    CHECK(std::abs(q.u_ex[perm[i]] - p.u_ex[i]) <= 1e-9 * (1 + std::abs(p.u_ex[i])));
  }
}

TEST_CASE("invalid node band") {
  DatasetConfig cfg;
  cfg.min_nodes = 200;
  cfg.max_nodes = 100;
  CHECK_THROWS_AS(generate_dataset(cfg), InvalidArgument);
}

TEST_CASE("wide node band is honoured") {
  DatasetConfig cfg;
  cfg.min_nodes = 200;
  cfg.max_nodes = 700;
  for (std::uint64_t s = 0; s < 3; ++s) {
    const auto p = generate_sample(s, cfg);
    CHECK(p.n() >= 200);
    CHECK(p.n() <= 700);
  }
}
