#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "eqgnn/training.hpp"

namespace eqgnn {

/// Per-graph quality and cost of one inference.
struct MetricRow {
  std::string graph_id;
  double residual = 0.0;
  double mse_lu = 0.0;
  double pearson = 0.0;  // NaN when either field is constant
  double dirichlet_mse = 0.0;
  int iters = 0;
  double wall_ms = 0.0;
  double rho = 0.0;  // NaN when not measured
  bool converged = true;
};

/// Field metrics of `U_hat` against the problem's LU solution and boundary data.
MetricRow metrics(std::span<const double> U_hat, const GraphProblem& problem);

struct Summary {
  std::size_t count = 0;
  std::size_t converged = 0;
  // Mean and population std over finite entries of each column.
  double residual_mean = 0, residual_std = 0;
  double mse_mean = 0, mse_std = 0;
  double pearson_mean = 0, pearson_std = 0;
  double dirichlet_mean = 0, dirichlet_std = 0;
  double iters_mean = 0, iters_std = 0;
  double wall_ms_mean = 0, wall_ms_std = 0;
  double rho_mean = 0, rho_std = 0;
};

Summary summarize(const std::vector<MetricRow>& rows);

struct EvalOptions {
  SolveConfig solver;
  bool measure_rho = true;
  int rho_iters = 50;
  std::uint64_t seed = 0;
  int jobs = 1;
};

/// A trained model: weights plus the normalization they were trained with.
struct TrainedModel {
  ModelParams params;
  NormStats stats;
};
TrainedModel model_of(const Checkpoint& ck);

/// Forward pass plus metrics on one raw (unnormalized) problem. The decoded
/// field goes to `U_hat` when given.
MetricRow evaluate_problem(const TrainedModel& m, const GraphProblem& raw, const EvalOptions& opt,
                           std::vector<double>* U_hat = nullptr);

struct EvalTable {
  std::vector<MetricRow> rows;
  Summary summary;
};

/// Every graph of a raw split. Throws EmptySplit on an empty split.
EvalTable eval_dataset(const TrainedModel& m, const std::vector<GraphProblem>& split, const EvalOptions& opt);

/// Index of the run with the largest mean residual (the worst of several
/// independently trained models).
std::size_t worst_run(const std::vector<EvalTable>& runs);

// CSV. The metrics file holds only deterministic columns; wall time lives in
// a separate timing file so reruns compare bit for bit.
std::string metrics_csv(const std::vector<MetricRow>& rows);
std::string timing_csv(const std::vector<MetricRow>& rows);
std::string summary_csv(const Summary& s);

// ---- experiments ---------------------------------------------------------------

struct IterationTrace {
  std::vector<double> update;    // relative latent update per iteration
  std::vector<double> residual;  // residual loss of the decoded field
  std::vector<double> mse;
};

struct OodOptions {
  std::size_t n_large = 30;
  std::size_t min_nodes = 200;
  std::size_t max_nodes = 400;
  std::size_t holed_nodes = 600;  // approximate size of the holed domain
  std::uint64_t seed = 0;
  int max_iter = 2000;
  double rel_tol = 1e-5;
  bool snapshots = false;  // keep the decoded error field every `snapshot_every` iterations
  int snapshot_every = 50;
};

struct OodReport {
  EvalTable large;
  double large_converged_fraction = 0.0;
  double reference_residual = 0.0;  // in-distribution mean, NaN without reference split
  double residual_ratio = 0.0;      // large / reference

  GraphProblem holed;
  MetricRow holed_row;
  IterationTrace trace;
  bool trace_monotone = true;  // after the first 10% of iterations
  std::vector<std::pair<int, std::vector<double>>> snapshots;  // iteration, squared error per node
};

/// Picard iteration on the processor with the decoded field tracked per step.
IterationTrace picard_trace(const TrainedModel& m, const GraphProblem& raw, int max_iter, double rel_tol,
                            std::vector<double>* U_final = nullptr, int snapshot_every = 0,
                            std::vector<std::pair<int, std::vector<double>>>* snapshots = nullptr);

/// Holed blob: outer boundary Dirichlet, hole boundaries Neumann, random f and g.
GraphProblem holed_problem(std::uint64_t seed, std::size_t approx_nodes);

/// Larger-than-training meshes plus one holed domain, all solved by plain
/// Picard iteration. `reference` (may be empty) gives the in-distribution mean.
OodReport experiment_ood(const TrainedModel& m, const std::vector<GraphProblem>& reference, const OodOptions& opt,
                         const EvalOptions& eval);

struct InitRun {
  std::string name;
  int iters = 0;
  bool converged = false;
  double residual = 0.0;
  double distance = 0.0;  // relative L2 distance of U_hat to the train-like result
};

struct InitReport {
  std::string graph_id;
  std::vector<InitRun> runs;  // close_exact, close, train_like, far
};

/// Initial fields: u_ex ("close_exact"), u_ex plus U[0,1] noise ("close"),
/// zeros ("train_like") and U[50,1000] ("far"), Dirichlet nodes set to g.
std::vector<std::pair<std::string, std::vector<double>>> initial_fields(const GraphProblem& raw, std::uint64_t seed);
InitReport experiment_initializers(const TrainedModel& m, const GraphProblem& raw, const EvalOptions& opt);

struct SolverRow {
  std::string graph_id;
  std::string method;
  int iters = 0;
  double residual = 0.0;
  bool converged = false;
  double wall_ms = 0.0;
  double distance = 0.0;  // relative L2 distance of U_hat to the first method's
};

struct SolverReport {
  std::vector<SolverRow> rows;  // graph-major, methods in order broyden, picard, anderson
  std::vector<Summary> per_method;
  std::vector<std::string> methods;
};

SolverReport experiment_solvers(const TrainedModel& m, const std::vector<GraphProblem>& split,
                                const EvalOptions& opt);
std::string solvers_csv(const SolverReport& r);

struct SpectralReport {
  std::vector<std::string> graph_ids;
  std::vector<double> rho;
  double mean = 0.0, std = 0.0;
};

SpectralReport spectral_report(const TrainedModel& m, const std::vector<GraphProblem>& split, const EvalOptions& opt);

/// Relative L2 distance |a - b| / max(|b|, 1e-12).
double relative_distance(std::span<const double> a, std::span<const double> b);

// ---- SVG -----------------------------------------------------------------------

struct Series {
  std::string label;
  std::vector<double> y;  // x is the index
};

/// Line chart; `log_y` plots log10 of positive values.
std::string svg_line_chart(const std::vector<Series>& series, const std::string& title, bool log_y);
/// Per-node values interpolated as flat-colored triangles (mean of corners).
std::string svg_field(const TriMesh& mesh, std::span<const double> values, const std::string& title);

void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace eqgnn
