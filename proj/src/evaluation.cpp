#include "eqgnn/evaluation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>

#include "eqgnn/csv.hpp"
#include "eqgnn/errors.hpp"
#include "eqgnn/fem.hpp"
#include "eqgnn/parallel.hpp"

namespace eqgnn {

using ad::Tensor;
using ad::Var;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

GraphProblem normalized(const GraphProblem& raw, const NormStats& stats) {
  return raw.normalized ? raw : normalize(raw, stats);
}

template <class Get>
void mean_std(const std::vector<MetricRow>& rows, Get get, double& mean, double& sd) {
  double s = 0;
  std::size_t n = 0;
  for (const auto& r : rows)
    if (const double v = get(r); std::isfinite(v)) s += v, ++n;
  if (n == 0) {
    mean = sd = kNaN;
    return;
  }
  mean = s / static_cast<double>(n);
  double q = 0;
  for (const auto& r : rows)
    if (const double v = get(r); std::isfinite(v)) q += (v - mean) * (v - mean);
  sd = std::sqrt(q / static_cast<double>(n));
}

struct TraceRun {
  IterationTrace trace;
  ForwardResult fwd;
  bool converged = false;
};

TraceRun run_picard_trace(const TrainedModel& m, const GraphProblem& p, const GraphTensors& G, int max_iter,
                          double rel_tol, int snapshot_every,
                          std::vector<std::pair<int, std::vector<double>>>* snapshots) {
  ad::NoGradGuard guard;
  const BoundParams P = bind(m.params, false);
  TraceRun run;
  ForwardResult& f = run.fwd;
  f.H0 = encode(P, ad::constant(Tensor(p.n(), 1, p.u0))).value();
  const FixedPointMap map = processor_map(P, G, f.H0);
  const Var H0 = ad::constant(f.H0);
  auto decode_at = [&](const Tensor& H) {
    return decode(P, assemble_final(H0, ad::constant(H), G)).value().vec();
  };
  const auto t0 = std::chrono::steady_clock::now();
  Tensor x = f.H0;
  for (int k = 1; k <= max_iter; ++k) {
    Tensor next = map(x);
    double dn = 0, xn = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      dn += (next[i] - x[i]) * (next[i] - x[i]);
      xn += x[i] * x[i];
    }
    const double update = std::sqrt(dn) / std::max(std::sqrt(xn), 1e-12);
    x = std::move(next);
    const std::vector<double> U = decode_at(x);
    double se = 0;
    for (std::size_t i = 0; i < p.n(); ++i) se += (U[i] - p.u_ex[i]) * (U[i] - p.u_ex[i]);
    run.trace.update.push_back(update);
    run.trace.residual.push_back(residual_loss(U, p.system));
    run.trace.mse.push_back(se / static_cast<double>(p.n()));
    if (snapshots && snapshot_every > 0 && k % snapshot_every == 0) {
      std::vector<double> err(p.n());
      for (std::size_t i = 0; i < p.n(); ++i) err[i] = (U[i] - p.u_ex[i]) * (U[i] - p.u_ex[i]);
      snapshots->emplace_back(k, std::move(err));
    }
    f.report.iterations = k;
    f.report.residual = update;
    if (!std::isfinite(update)) {
      f.report.status = SolveStatus::Diverged;
      break;
    }
    if (update <= rel_tol) {
      f.report.status = SolveStatus::Converged;
      f.report.converged = true;
      break;
    }
  }
  f.report.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  f.H_star = x;
  f.H_hat = assemble_final(H0, ad::constant(x), G).value();
  f.U_hat = decode(P, ad::constant(f.H_hat)).value().vec();
  run.converged = f.report.converged;
  return run;
}

MetricRow row_of(const TrainedModel& m, const GraphProblem& p, const GraphTensors& G, const ForwardResult& f,
                 bool measure_rho, int rho_iters, std::uint64_t seed) {
  MetricRow r = metrics(f.U_hat, p);
  r.graph_id = p.id;
  r.iters = f.report.iterations;
  r.wall_ms = f.report.wall_ms;
  r.converged = f.report.converged;
  r.rho = measure_rho && r.converged ? spectral_radius_at(m.params, G, f, rho_iters, seed) : kNaN;
  return r;
}

}  // namespace

MetricRow metrics(std::span<const double> U_hat, const GraphProblem& problem) {
  const std::size_t n = problem.n();
  if (U_hat.size() != n) throw DimensionMismatch("metrics: field length differs from problem");
  MetricRow r;
  r.graph_id = problem.id;
  r.residual = residual_loss(U_hat, problem.system);
  double se = 0, de = 0;
  std::size_t nd = 0;
  for (std::size_t i = 0; i < n; ++i) {
    se += (U_hat[i] - problem.u_ex[i]) * (U_hat[i] - problem.u_ex[i]);
    if (problem.type(i) == NodeType::Dirichlet) {
      const double e = U_hat[i] - problem.g(problem.mesh.nodes[i]);
      de += e * e;
      ++nd;
    }
  }
  r.mse_lu = se / static_cast<double>(n);
  r.dirichlet_mse = nd ? de / static_cast<double>(nd) : kNaN;
  r.pearson = pearson(U_hat, problem.u_ex);
  r.rho = kNaN;
  return r;
}

Summary summarize(const std::vector<MetricRow>& rows) {
  Summary s;
  s.count = rows.size();
  for (const auto& r : rows) s.converged += r.converged ? 1 : 0;
  mean_std(rows, [](const MetricRow& r) { return r.residual; }, s.residual_mean, s.residual_std);
  mean_std(rows, [](const MetricRow& r) { return r.mse_lu; }, s.mse_mean, s.mse_std);
  mean_std(rows, [](const MetricRow& r) { return r.pearson; }, s.pearson_mean, s.pearson_std);
  mean_std(rows, [](const MetricRow& r) { return r.dirichlet_mse; }, s.dirichlet_mean, s.dirichlet_std);
  mean_std(rows, [](const MetricRow& r) { return static_cast<double>(r.iters); }, s.iters_mean, s.iters_std);
  mean_std(rows, [](const MetricRow& r) { return r.wall_ms; }, s.wall_ms_mean, s.wall_ms_std);
  mean_std(rows, [](const MetricRow& r) { return r.rho; }, s.rho_mean, s.rho_std);
  return s;
}

TrainedModel model_of(const Checkpoint& ck) { return {ck.params, ck.stats}; }

MetricRow evaluate_problem(const TrainedModel& m, const GraphProblem& raw, const EvalOptions& opt,
                           std::vector<double>* U_hat) {
  const GraphProblem p = normalized(raw, m.stats);
  const GraphTensors G = make_graph_tensors(p);
  const ForwardResult f = forward_pass(m.params, p, G, opt.solver);
  if (U_hat) *U_hat = f.U_hat;
  return row_of(m, p, G, f, opt.measure_rho, opt.rho_iters, opt.seed);
}

EvalTable eval_dataset(const TrainedModel& m, const std::vector<GraphProblem>& split, const EvalOptions& opt) {
  if (split.empty()) throw EmptySplit("eval_dataset: split has no graphs");
  EvalTable t;
  t.rows.resize(split.size());
  parallel_for(split.size(), opt.jobs, [&](std::size_t i) {
    EvalOptions o = opt;
    o.seed = mix_seed(opt.seed, i);
    t.rows[i] = evaluate_problem(m, split[i], o);
  });
  t.summary = summarize(t.rows);
  return t;
}

std::size_t worst_run(const std::vector<EvalTable>& runs) {
  if (runs.empty()) throw InvalidArgument("worst_run: no runs");
  std::size_t worst = 0;
  for (std::size_t k = 1; k < runs.size(); ++k) {
    const double a = runs[k].summary.residual_mean, b = runs[worst].summary.residual_mean;
    if (std::isnan(a) || a > b) worst = k;
    if (std::isnan(a)) break;
  }
  return worst;
}

std::string metrics_csv(const std::vector<MetricRow>& rows) {
  std::string s = "graph_id,residual,mse_lu,pearson,dirichlet_mse,iters,rho,converged\n";
  for (const auto& r : rows) {
    s += r.graph_id + "," + csv_number(r.residual) + "," + csv_number(r.mse_lu) + "," + csv_number(r.pearson) + "," +
         csv_number(r.dirichlet_mse) + "," + std::to_string(r.iters) + "," + csv_number(r.rho) + "," +
         (r.converged ? "1" : "0") + "\n";
  }
  return s;
}

std::string timing_csv(const std::vector<MetricRow>& rows) {
  std::string s = "graph_id,wall_ms\n";
  for (const auto& r : rows) s += r.graph_id + "," + csv_number(r.wall_ms) + "\n";
  return s;
}

std::string summary_csv(const Summary& s) {
  std::string out = "metric,mean,std\n";
  auto line = [&](const char* name, double m, double sd) {
    out += std::string(name) + "," + csv_number(m) + "," + csv_number(sd) + "\n";
  };
  line("residual", s.residual_mean, s.residual_std);
  line("mse_lu", s.mse_mean, s.mse_std);
  line("pearson", s.pearson_mean, s.pearson_std);
  line("dirichlet_mse", s.dirichlet_mean, s.dirichlet_std);
  line("iters", s.iters_mean, s.iters_std);
  line("rho", s.rho_mean, s.rho_std);
  out += "count," + std::to_string(s.count) + ",0\n";
  out += "converged," + std::to_string(s.converged) + ",0\n";
  return out;
}

double relative_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionMismatch("relative_distance: length mismatch");
  double d = 0, n = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d += (a[i] - b[i]) * (a[i] - b[i]);
    n += b[i] * b[i];
  }
  return std::sqrt(d) / std::max(std::sqrt(n), 1e-12);
}

// ---- experiments -----------------------------------------------------------------

IterationTrace picard_trace(const TrainedModel& m, const GraphProblem& raw, int max_iter, double rel_tol,
                            std::vector<double>* U_final, int snapshot_every,
                            std::vector<std::pair<int, std::vector<double>>>* snapshots) {
  const GraphProblem p = normalized(raw, m.stats);
  const GraphTensors G = make_graph_tensors(p);
  TraceRun run = run_picard_trace(m, p, G, max_iter, rel_tol, snapshot_every, snapshots);
  if (U_final) *U_final = run.fwd.U_hat;
  return std::move(run.trace);
}

GraphProblem holed_problem(std::uint64_t seed, std::size_t approx_nodes) {
  if (approx_nodes < 50) throw InvalidArgument("holed_problem: at least 50 nodes");
  double h = std::sqrt(0.45 / static_cast<double>(approx_nodes));
  TriMesh mesh;
  for (int adjust = 0; adjust < 3; ++adjust) {
    const DomainSpec spec = holed_domain_spec(seed, h);
    mesh = triangulate(generate_domain(spec), spec);
    h *= std::sqrt(static_cast<double>(mesh.nodes.size()) / static_cast<double>(approx_nodes));
  }
  mesh = compute_normals(assign_node_types(std::move(mesh), seed, TypingMode::OuterAllDirichlet));
  std::mt19937_64 rng(mix_seed(seed, 2));
  std::uniform_real_distribution<double> coeff(-10.0, 10.0);
  SourceTerm f;
  BoundaryData g;
  for (double& r : f.r) r = coeff(rng);
  for (double& r : g.r) r = coeff(rng);
  GraphProblem p = build_graph(mesh, assemble(mesh, f, g), f, g);
  p.id = "holed";
  return p;
}

OodReport experiment_ood(const TrainedModel& m, const std::vector<GraphProblem>& reference, const OodOptions& opt,
                         const EvalOptions& eval) {
  if (opt.n_large == 0) throw InvalidArgument("experiment_ood: n_large must be positive");
  DatasetConfig dc;
  dc.min_nodes = opt.min_nodes;
  dc.max_nodes = opt.max_nodes;
  std::vector<GraphProblem> large(opt.n_large);
  parallel_for(large.size(), eval.jobs, [&](std::size_t i) {
    large[i] = generate_sample(mix_seed(mix_seed(opt.seed, 0x1a26e), i), dc);
    large[i].id = "large_" + std::to_string(i);
  });

  OodReport r;
  r.large.rows.resize(large.size());
  parallel_for(large.size(), eval.jobs, [&](std::size_t i) {
    const GraphProblem p = normalized(large[i], m.stats);
    const GraphTensors G = make_graph_tensors(p);
    const TraceRun run = run_picard_trace(m, p, G, opt.max_iter, opt.rel_tol, 0, nullptr);
    r.large.rows[i] = row_of(m, p, G, run.fwd, eval.measure_rho, eval.rho_iters, mix_seed(eval.seed, i));
  });
  r.large.summary = summarize(r.large.rows);
  r.large_converged_fraction =
      static_cast<double>(r.large.summary.converged) / static_cast<double>(r.large.summary.count);
  r.reference_residual = kNaN;
  r.residual_ratio = kNaN;
  if (!reference.empty()) {
    r.reference_residual = eval_dataset(m, reference, eval).summary.residual_mean;
    r.residual_ratio = r.large.summary.residual_mean / r.reference_residual;
  }

  r.holed = holed_problem(mix_seed(opt.seed, 0x401ed), opt.holed_nodes);
  const GraphProblem p = normalized(r.holed, m.stats);
  const GraphTensors G = make_graph_tensors(p);
  TraceRun run = run_picard_trace(m, p, G, opt.max_iter, opt.rel_tol, opt.snapshots ? opt.snapshot_every : 0,
                                  opt.snapshots ? &r.snapshots : nullptr);
  r.holed_row = row_of(m, p, G, run.fwd, true, eval.rho_iters, eval.seed);
  r.trace = std::move(run.trace);
  const auto& u = r.trace.update;
  for (std::size_t k = u.size() / 10 + 1; k < u.size(); ++k)
    if (u[k] > u[k - 1]) r.trace_monotone = false;
  return r;
}

std::vector<std::pair<std::string, std::vector<double>>> initial_fields(const GraphProblem& raw,
                                                                        std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> noise(0.0, 1.0), far(50.0, 1000.0);
  const std::size_t n = raw.n();
  std::vector<double> exact(n), close(n), zero(n, 0.0), distant(n);
  for (std::size_t i = 0; i < n; ++i) {
    exact[i] = raw.u_ex[i];
    close[i] = raw.u_ex[i] + noise(rng);
    distant[i] = far(rng);
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (raw.type(i) != NodeType::Dirichlet) continue;
    const double g = raw.g(raw.mesh.nodes[i]);
    exact[i] = close[i] = zero[i] = distant[i] = g;
  }
  return {{"close_exact", exact}, {"close", close}, {"train_like", zero}, {"far", distant}};
}

InitReport experiment_initializers(const TrainedModel& m, const GraphProblem& raw, const EvalOptions& opt) {
  const GraphProblem p = normalized(raw, m.stats);
  const GraphTensors G = make_graph_tensors(p);
  const auto inits = initial_fields(raw, opt.seed);
  std::vector<ForwardResult> fwd(inits.size());
  parallel_for(inits.size(), opt.jobs,
               [&](std::size_t k) { fwd[k] = forward_pass(m.params, p, G, opt.solver, inits[k].second); });
  InitReport r;
  r.graph_id = raw.id;
  std::size_t ref = 0;
  for (std::size_t k = 0; k < inits.size(); ++k)
    if (inits[k].first == "train_like") ref = k;
  for (std::size_t k = 0; k < inits.size(); ++k) {
    InitRun run;
    run.name = inits[k].first;
    run.iters = fwd[k].report.iterations;
    run.converged = fwd[k].report.converged;
    run.residual = residual_loss(fwd[k].U_hat, p.system);
    run.distance = relative_distance(fwd[k].U_hat, fwd[ref].U_hat);
    r.runs.push_back(std::move(run));
  }
  return r;
}

SolverReport experiment_solvers(const TrainedModel& m, const std::vector<GraphProblem>& split,
                                const EvalOptions& opt) {
  if (split.empty()) throw EmptySplit("experiment_solvers: split has no graphs");
  const std::vector<SolverMethod> methods{SolverMethod::Broyden, SolverMethod::Picard, SolverMethod::Anderson};
  SolverReport r;
  for (auto mt : methods) r.methods.push_back(solver_name(mt));
  std::vector<std::vector<MetricRow>> rows(methods.size(), std::vector<MetricRow>(split.size()));
  r.rows.resize(split.size() * methods.size());
  parallel_for(split.size(), opt.jobs, [&](std::size_t i) {
    const GraphProblem p = normalized(split[i], m.stats);
    const GraphTensors G = make_graph_tensors(p);
    std::vector<double> first;
    for (std::size_t k = 0; k < methods.size(); ++k) {
      SolveConfig cfg = opt.solver;
      cfg.method = methods[k];
      const ForwardResult f = forward_pass(m.params, p, G, cfg);
      rows[k][i] = row_of(m, p, G, f, false, 0, 0);
      if (k == 0) first = f.U_hat;
      SolverRow& s = r.rows[i * methods.size() + k];
      s.graph_id = p.id;
      s.method = r.methods[k];
      s.iters = f.report.iterations;
      s.residual = rows[k][i].residual;
      s.converged = f.report.converged;
      s.wall_ms = f.report.wall_ms;
      s.distance = relative_distance(f.U_hat, first);
    }
  });
  for (const auto& per : rows) r.per_method.push_back(summarize(per));
  return r;
}

std::string solvers_csv(const SolverReport& r) {
  std::string s = "graph_id,method,iters,residual,converged,distance\n";
  for (const auto& row : r.rows) {
    s += row.graph_id + "," + row.method + "," + std::to_string(row.iters) + "," + csv_number(row.residual) + "," +
         (row.converged ? "1" : "0") + "," + csv_number(row.distance) + "\n";
  }
  return s;
}

SpectralReport spectral_report(const TrainedModel& m, const std::vector<GraphProblem>& split, const EvalOptions& opt) {
  if (split.empty()) throw EmptySplit("spectral_report: split has no graphs");
  EvalOptions o = opt;
  o.measure_rho = true;
  const EvalTable t = eval_dataset(m, split, o);
  SpectralReport r;
  for (const auto& row : t.rows) {
    r.graph_ids.push_back(row.graph_id);
    r.rho.push_back(row.rho);
  }
  r.mean = t.summary.rho_mean;
  r.std = t.summary.rho_std;
  return r;
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw Error("cannot write " + path.string());
}

}  // namespace eqgnn
