#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "eqgnn/fem.hpp"
#include "eqgnn/mesh.hpp"
#include "json.hpp"

namespace eqgnn {

/// One solver instance. Directed edge i->j exists iff {i,j} is a mesh edge and
/// j is not Dirichlet; edges are sorted by (src, dst).
struct GraphProblem {
  std::string id;
  TriMesh mesh;
  SourceTerm f;
  BoundaryData g;
  LinearSystem system;
  std::vector<double> u_ex;
  std::vector<double> u0;

  std::vector<std::size_t> edge_src;
  std::vector<std::size_t> edge_dst;
  std::vector<std::vector<std::size_t>> out_edges;  // neighbor ids, ascending
  std::vector<std::vector<std::size_t>> in_edges;

  std::vector<double> dist;     // per directed edge
  std::vector<double> t;        // N x 3 one-hot (Interior, Dirichlet, Neumann)
  std::vector<double> b;        // N x 3: [f,0,0] / [0,g,0] / [0,0,f]
  std::vector<double> normals;  // N x 2
  bool normalized = false;

  std::size_t n() const noexcept { return mesh.nodes.size(); }
  NodeType type(std::size_t i) const { return mesh.node_type[i]; }
};

GraphProblem build_graph(const TriMesh& mesh, const LinearSystem& system, const SourceTerm& f,
                         const BoundaryData& g);
/// Same as build_graph but attaches a precomputed ground truth.
GraphProblem build_graph_with_solution(const TriMesh& mesh, const LinearSystem& system,
                                       const SourceTerm& f, const BoundaryData& g,
                                       std::vector<double> u_ex);

/// Zero away from Dirichlet nodes, g_i on them.
std::vector<double> default_init(const GraphProblem& problem);

struct NormStats {
  double dist_mean = 0.0, dist_std = 1.0;
  std::array<double, 3> b_mean{}, b_std{1.0, 1.0, 1.0};
  std::array<double, 2> normal_mean{}, normal_std{1.0, 1.0};
};

/// Population statistics over the given problems, std floored at 1e-8.
NormStats compute_norm_stats(const std::vector<GraphProblem>& split);
GraphProblem normalize(GraphProblem problem, const NormStats& stats);

nlohmann::json norm_stats_to_json(const NormStats& s);
NormStats norm_stats_from_json(const nlohmann::json& j);

struct DatasetConfig {
  std::uint64_t seed = 0;
  std::size_t n_train = 100;
  std::size_t n_val = 30;
  std::size_t n_test = 30;
  std::size_t min_nodes = 50;
  std::size_t max_nodes = 150;
  int n_control = 10;
  int jobs = 1;
  std::size_t max_attempts = 50;
};

/// Splits in manifest order.
inline constexpr std::array<const char*, 3> kSplits{"train", "val", "test"};

struct Dataset {
  DatasetConfig config;
  NormStats stats;
  std::vector<GraphProblem> train, val, test;  // raw (not normalized)

  const std::vector<GraphProblem>& split(const std::string& name) const;
};

/// Deterministic per-sample seed mixing.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

/// One random sample inside the node band; retries with fresh seeds.
GraphProblem generate_sample(std::uint64_t sample_seed, const DatasetConfig& cfg);

/// In-memory generation of all three splits (stats from the train split).
Dataset generate_dataset(const DatasetConfig& cfg);

nlohmann::json record_to_json(const GraphProblem& p);
GraphProblem record_from_json(const nlohmann::json& j);

/// Writes records under dir/<split>/<id>.json plus dir/manifest.json and
/// returns the manifest.
nlohmann::json write_dataset(const Dataset& data, const std::filesystem::path& dir);
Dataset read_dataset(const std::filesystem::path& dir);

}  // namespace eqgnn
