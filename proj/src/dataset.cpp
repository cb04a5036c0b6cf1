#include "eqgnn/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "eqgnn/errors.hpp"
#include "eqgnn/json_io.hpp"
#include "eqgnn/parallel.hpp"

namespace eqgnn {

namespace {

GraphProblem build_common(const TriMesh& mesh, const LinearSystem& system, const SourceTerm& f,
                          const BoundaryData& g) {
  const std::size_t n = mesh.nodes.size();
  if (system.n != n || system.B.size() != n) throw InconsistentInputs("system size differs from mesh");
  if (mesh.node_type.size() != n || mesh.normals.size() != n) {
    throw InconsistentInputs("mesh per-node arrays differ in length");
  }
  GraphProblem p;
  p.mesh = mesh;
  p.f = f;
  p.g = g;
  p.system = system;

  p.out_edges.assign(n, {});
  p.in_edges.assign(n, {});
  std::vector<std::pair<std::size_t, std::size_t>> directed;
  for (const auto& [a, b] : mesh_edges(mesh)) {
    if (mesh.node_type[b] != NodeType::Dirichlet) directed.emplace_back(a, b);
    if (mesh.node_type[a] != NodeType::Dirichlet) directed.emplace_back(b, a);
  }
  std::sort(directed.begin(), directed.end());
  for (const auto& [s, d] : directed) {
    p.edge_src.push_back(s);
    p.edge_dst.push_back(d);
    p.out_edges[s].push_back(d);
    p.in_edges[d].push_back(s);
    const double len = std::hypot(mesh.nodes[s].x - mesh.nodes[d].x, mesh.nodes[s].y - mesh.nodes[d].y);
    if (!(len > 0)) throw InconsistentInputs("coincident nodes on an edge");
    p.dist.push_back(len);
  }
  for (auto& v : p.in_edges) std::sort(v.begin(), v.end());

  p.t.assign(3 * n, 0.0);
  p.b.assign(3 * n, 0.0);
  p.normals.assign(2 * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const int k = static_cast<int>(mesh.node_type[i]);
    p.t[3 * i + k] = 1.0;
    const Point2& x = mesh.nodes[i];
    switch (mesh.node_type[i]) {
      case NodeType::Interior: p.b[3 * i] = f(x); break;
      case NodeType::Dirichlet:
        p.b[3 * i + 1] = g(x);
        if (system.B[i] != g(x)) throw InconsistentInputs("Dirichlet row of B differs from g");
        break;
      case NodeType::Neumann: p.b[3 * i + 2] = f(x); break;
    }
    p.normals[2 * i] = mesh.normals[i].x;
    p.normals[2 * i + 1] = mesh.normals[i].y;
  }
  p.u0 = default_init(p);
  return p;
}

}  // namespace

GraphProblem build_graph(const TriMesh& mesh, const LinearSystem& system, const SourceTerm& f,
                         const BoundaryData& g) {
  GraphProblem p = build_common(mesh, system, f, g);
  p.u_ex = lu_solve(system);
  return p;
}

GraphProblem build_graph_with_solution(const TriMesh& mesh, const LinearSystem& system,
                                       const SourceTerm& f, const BoundaryData& g,
                                       std::vector<double> u_ex) {
  if (u_ex.size() != mesh.nodes.size()) throw InconsistentInputs("u_ex length differs from mesh");
  GraphProblem p = build_common(mesh, system, f, g);
  p.u_ex = std::move(u_ex);
  return p;
}

std::vector<double> default_init(const GraphProblem& problem) {
  const std::size_t n = problem.n();
  std::vector<double> u0(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (problem.type(i) == NodeType::Dirichlet) u0[i] = problem.g(problem.mesh.nodes[i]);
  }
  return u0;
}

// ---- normalization ---------------------------------------------------------------

namespace {

struct Moments {
  double sum = 0.0, sq = 0.0;
  std::size_t count = 0;
  void add(double v) {
    sum += v;
    ++count;
  }
};

constexpr double kStdFloor = 1e-8;

}  // namespace

NormStats compute_norm_stats(const std::vector<GraphProblem>& split) {
  if (split.empty()) throw EmptyDataset("cannot compute statistics of an empty split");
  for (const auto& p : split) {
    if (p.normalized) throw InvalidArgument("statistics must come from raw features");
  }
  // Two passes: mean first, then centered squares.
  auto stats_of = [&](auto&& visit) {
    Moments m;
    visit([&m](double v) { m.add(v); });
    const double mean = m.count ? m.sum / static_cast<double>(m.count) : 0.0;
    double sq = 0.0;
    visit([&](double v) { sq += (v - mean) * (v - mean); });
    const double sd = m.count ? std::sqrt(sq / static_cast<double>(m.count)) : 0.0;
    return std::pair<double, double>{mean, std::max(sd, kStdFloor)};
  };
  NormStats s;
  std::tie(s.dist_mean, s.dist_std) = stats_of([&](auto&& f) {
    for (const auto& p : split)
      for (double d : p.dist) f(d);
  });
  for (std::size_t c = 0; c < 3; ++c) {
    std::tie(s.b_mean[c], s.b_std[c]) = stats_of([&](auto&& f) {
      for (const auto& p : split)
        for (std::size_t i = 0; i < p.n(); ++i) f(p.b[3 * i + c]);
    });
  }
  for (std::size_t c = 0; c < 2; ++c) {
    std::tie(s.normal_mean[c], s.normal_std[c]) = stats_of([&](auto&& f) {
      for (const auto& p : split)
        for (std::size_t i = 0; i < p.n(); ++i) f(p.normals[2 * i + c]);
    });
  }
  return s;
}

GraphProblem normalize(GraphProblem p, const NormStats& s) {
  if (p.normalized) throw InvalidArgument("problem already normalized");
  for (double& d : p.dist) d = (d - s.dist_mean) / s.dist_std;
  for (std::size_t i = 0; i < p.n(); ++i) {
    for (std::size_t c = 0; c < 3; ++c) p.b[3 * i + c] = (p.b[3 * i + c] - s.b_mean[c]) / s.b_std[c];
    for (std::size_t c = 0; c < 2; ++c) {
      p.normals[2 * i + c] = (p.normals[2 * i + c] - s.normal_mean[c]) / s.normal_std[c];
    }
  }
  p.normalized = true;
  return p;
}

nlohmann::json norm_stats_to_json(const NormStats& s) {
  return {{"dist_mean", s.dist_mean}, {"dist_std", s.dist_std},   {"b_mean", s.b_mean},
          {"b_std", s.b_std},         {"normal_mean", s.normal_mean}, {"normal_std", s.normal_std}};
}

NormStats norm_stats_from_json(const nlohmann::json& j) {
  NormStats s;
  try {
    s.dist_mean = j.at("dist_mean").get<double>();
    s.dist_std = j.at("dist_std").get<double>();
    s.b_mean = j.at("b_mean").get<std::array<double, 3>>();
    s.b_std = j.at("b_std").get<std::array<double, 3>>();
    s.normal_mean = j.at("normal_mean").get<std::array<double, 2>>();
    s.normal_std = j.at("normal_std").get<std::array<double, 2>>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("norm_stats: ") + e.what(), 0);
  }
  return s;
}

// ---- generation ----------------------------------------------------------------

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  // splitmix64 finalizer over a combined state
  std::uint64_t z = a * 0x9E3779B97F4A7C15ULL + b + 0x632BE59BD9B4E019ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

GraphProblem generate_sample(std::uint64_t sample_seed, const DatasetConfig& cfg) {
  if (cfg.min_nodes > cfg.max_nodes) throw InvalidArgument("node band min exceeds max");
  if (cfg.min_nodes < 3) throw InvalidArgument("node band must allow at least 3 nodes");
  const double target = 0.5 * static_cast<double>(cfg.min_nodes + cfg.max_nodes);
  for (std::size_t attempt = 0; attempt < cfg.max_attempts; ++attempt) {
    const std::uint64_t s = mix_seed(sample_seed, attempt);
    DomainSpec spec;
    spec.seed = s;
    spec.n_control = cfg.n_control;
    spec.target_h = 0.6 / std::sqrt(target);
    try {
      TriMesh mesh;
      bool in_band = false;
      for (int adjust = 0; adjust < 8 && !in_band; ++adjust) {
        mesh = triangulate(generate_domain(spec), spec);
        const auto n = mesh.nodes.size();
        in_band = n >= cfg.min_nodes && n <= cfg.max_nodes;
        if (!in_band) spec.target_h *= std::sqrt(static_cast<double>(n) / target);
      }
      if (!in_band) continue;
      mesh = compute_normals(assign_node_types(std::move(mesh), mix_seed(s, 1)));

      std::mt19937_64 rng(mix_seed(s, 2));
      std::uniform_real_distribution<double> coeff(-10.0, 10.0);
      SourceTerm f;
      BoundaryData g;
      for (double& r : f.r) r = coeff(rng);
      for (double& r : g.r) r = coeff(rng);
      GraphProblem p = build_graph(mesh, assemble(mesh, f, g), f, g);
      return p;
    } catch (const MeshQualityError&) {
    } catch (const RetryExhausted&) {
    } catch (const NoDirichletError&) {
    }
  }
  throw RetryExhausted("no sample inside the node band after " + std::to_string(cfg.max_attempts) +
                       " attempts");
}

const std::vector<GraphProblem>& Dataset::split(const std::string& name) const {
  if (name == "train") return train;
  if (name == "val") return val;
  if (name == "test") return test;
  throw InvalidArgument("unknown split '" + name + "' (expected train, val or test)");
}

Dataset generate_dataset(const DatasetConfig& cfg) {
  if (cfg.min_nodes > cfg.max_nodes) throw InvalidArgument("node band min exceeds max");
  if (cfg.n_train == 0) throw EmptyDataset("training split must be nonempty");
  struct Job {
    std::vector<GraphProblem>* out;
    std::size_t split, index;
  };
  Dataset data;
  data.config = cfg;
  data.train.resize(cfg.n_train);
  data.val.resize(cfg.n_val);
  data.test.resize(cfg.n_test);
  std::vector<Job> jobs;
  const std::array<std::vector<GraphProblem>*, 3> outs{&data.train, &data.val, &data.test};
  for (std::size_t s = 0; s < 3; ++s)
    for (std::size_t i = 0; i < outs[s]->size(); ++i) jobs.push_back({outs[s], s, i});

  parallel_for(jobs.size(), cfg.jobs, [&](std::size_t k) {
    const Job& job = jobs[k];
    GraphProblem p = generate_sample(mix_seed(mix_seed(cfg.seed, job.split), job.index), cfg);
    p.id = std::string(kSplits[job.split]) + "_" + std::to_string(job.index);
    (*job.out)[job.index] = std::move(p);
  });

  data.stats = compute_norm_stats(data.train);
  return data;
}

// ---- records ---------------------------------------------------------------------

nlohmann::json record_to_json(const GraphProblem& p) {
  if (p.normalized) throw InvalidArgument("records store raw features only");
  return {{"id", p.id},
          {"mesh", mesh_to_json(p.mesh)},
          {"A", {{"vals", p.system.vals}, {"cols", p.system.cols}, {"rowptr", p.system.rowptr}}},
          {"B", p.system.B},
          {"u_ex", p.u_ex},
          {"u0", p.u0},
          {"f_coeffs", p.f.r},
          {"g_coeffs", p.g.r}};
}

GraphProblem record_from_json(const nlohmann::json& j) {
  try {
    const TriMesh mesh = mesh_from_json(j.at("mesh"));
    LinearSystem sys;
    sys.n = mesh.nodes.size();
    sys.vals = j.at("A").at("vals").get<std::vector<double>>();
    sys.cols = j.at("A").at("cols").get<std::vector<std::size_t>>();
    sys.rowptr = j.at("A").at("rowptr").get<std::vector<std::size_t>>();
    sys.B = j.at("B").get<std::vector<double>>();
    if (sys.rowptr.size() != sys.n + 1 || sys.rowptr.back() != sys.vals.size() ||
        sys.cols.size() != sys.vals.size()) {
      throw InconsistentInputs("record: malformed CSR arrays");
    }
    SourceTerm f;
    BoundaryData g;
    f.r = j.at("f_coeffs").get<std::array<double, 3>>();
    g.r = j.at("g_coeffs").get<std::array<double, 6>>();
    GraphProblem p = build_graph_with_solution(mesh, sys, f, g, j.at("u_ex").get<std::vector<double>>());
    p.id = j.value("id", "");
    if (j.at("u0").get<std::vector<double>>() != p.u0) throw InconsistentInputs("record: u0 mismatch");
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("record: ") + e.what(), 0);
  }
}

nlohmann::json write_dataset(const Dataset& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  const auto& c = data.config;
  manifest["seed"] = c.seed;
  manifest["counts"] = {{"train", data.train.size()}, {"val", data.val.size()}, {"test", data.test.size()}};
  manifest["node_band"] = {c.min_nodes, c.max_nodes};
  manifest["n_control"] = c.n_control;
  manifest["norm_stats"] = norm_stats_to_json(data.stats);
  manifest["splits"] = kSplits;
  nlohmann::json paths = nlohmann::json::object();
  nlohmann::json nodes = nlohmann::json::object();
  for (const char* name : kSplits) {
    auto& list = paths[name] = nlohmann::json::array();
    auto& counts = nodes[name] = nlohmann::json::array();
    for (const auto& p : data.split(name)) {
      const std::string rel = std::string(name) + "/" + p.id + ".json";
      write_json_file(record_to_json(p), dir / rel);
      list.push_back(rel);
      counts.push_back(p.n());
    }
  }
  manifest["sample_paths"] = paths;
  manifest["node_counts"] = nodes;
  write_json_file(manifest, dir / "manifest.json");
  return manifest;
}

Dataset read_dataset(const std::filesystem::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  if (!std::filesystem::exists(manifest_path)) {
    throw InvalidArgument("no dataset manifest at " + manifest_path.string());
  }
  const auto m = read_json_file(manifest_path);
  Dataset data;
  try {
    data.config.seed = m.at("seed").get<std::uint64_t>();
    data.config.min_nodes = m.at("node_band").at(0).get<std::size_t>();
    data.config.max_nodes = m.at("node_band").at(1).get<std::size_t>();
    data.config.n_control = m.value("n_control", 10);
    data.stats = norm_stats_from_json(m.at("norm_stats"));
    std::array<std::vector<GraphProblem>*, 3> outs{&data.train, &data.val, &data.test};
    for (std::size_t s = 0; s < 3; ++s) {
      for (const auto& rel : m.at("sample_paths").at(kSplits[s])) {
        outs[s]->push_back(record_from_json(read_json_file(dir / rel.get<std::string>())));
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("manifest: ") + e.what(), 0);
  }
  data.config.n_train = data.train.size();
  data.config.n_val = data.val.size();
  data.config.n_test = data.test.size();
  return data;
}

}  // namespace eqgnn
