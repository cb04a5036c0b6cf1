#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <map>
#include <ostream>
#include <random>
#include <sstream>

#include "CLI11.hpp"
#include "cli.hpp"
#include "eqgnn/csv.hpp"
#include "eqgnn/errors.hpp"
#include "eqgnn/evaluation.hpp"
#include "eqgnn/fem.hpp"
#include "eqgnn/json_io.hpp"

namespace eqgnn {

namespace fs = std::filesystem;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

const std::vector<std::string> kExperiments{"ood", "init", "solvers", "spectral"};

struct Settings {
  std::uint64_t seed = 0;
  std::string out = "out";
  int jobs = 1;
  std::string data;
  std::vector<std::string> checkpoints;
  std::string split = "test";

  std::size_t n_train = 100, n_val = 30, n_test = 30;
  std::size_t min_nodes = 50, max_nodes = 150;
  int n_control = 10;

  TrainConfig train;
  bool resume = false;

  std::string solver = "broyden";
  double rel_tol = 1e-5;
  int max_iter = 500;
  int anderson_memory = 5;
  std::string backward_solver = "broyden";
  double backward_rel_tol = 1e-8;
  int backward_max_iter = 500;

  bool measure_rho = true;
  int eval_rho_iters = 200;
  std::size_t ood_count = 30, ood_min_nodes = 200, ood_max_nodes = 400, holed_nodes = 600;
  int picard_max_iter = 2000;
  bool snapshots = false;
  int snapshot_every = 50;
  std::size_t init_graphs = 5;
  bool svg = true;
  std::vector<double> f_coeffs, g_coeffs;

  std::string experiment;
  std::string mesh_file;
};

SolveConfig forward_config(const Settings& s) {
  SolveConfig c;
  c.method = parse_solver(s.solver);
  c.rel_tol = s.rel_tol;
  c.max_iter = s.max_iter;
  c.anderson_memory = s.anderson_memory;
  c.validate();
  return c;
}

EvalOptions eval_options(const Settings& s) {
  EvalOptions o;
  o.solver = forward_config(s);
  o.measure_rho = s.measure_rho;
  o.rho_iters = s.eval_rho_iters;
  o.seed = s.seed;
  o.jobs = s.jobs;
  return o;
}

Dataset load_data(const Settings& s) {
  if (s.data.empty()) throw UsageError("--data DIR is required for this command");
  if (!fs::exists(fs::path(s.data) / "manifest.json")) throw UsageError("no dataset manifest under '" + s.data + "'");
  return read_dataset(s.data);
}

std::vector<Checkpoint> load_checkpoints(const Settings& s) {
  if (s.checkpoints.empty()) throw UsageError("--checkpoint FILE is required for this command");
  std::vector<Checkpoint> out;
  for (const auto& p : s.checkpoints) {
    if (!fs::exists(p)) throw UsageError("checkpoint '" + p + "' not found");
    out.push_back(load_checkpoint(p));
  }
  return out;
}

const std::vector<GraphProblem>& pick_split(const Dataset& d, const std::string& name) {
  try {
    return d.split(name);
  } catch (const InvalidArgument& e) {
    throw UsageError(e.what());
  }
}

std::string fixed(double v, int digits = 4) {
  std::ostringstream ss;
  ss.precision(digits);
  ss << v;
  return ss.str();
}

void write_svg(const Settings& s, const fs::path& path, const std::string& text) {
  if (s.svg) write_text_file(path, text);
}

// ---- commands ------------------------------------------------------------------

int cmd_gen(const Settings& s, std::ostream& out) {
  DatasetConfig c;
  c.seed = s.seed;
  c.n_train = s.n_train;
  c.n_val = s.n_val;
  c.n_test = s.n_test;
  c.min_nodes = s.min_nodes;
  c.max_nodes = s.max_nodes;
  c.n_control = s.n_control;
  c.jobs = s.jobs;
  if (c.min_nodes > c.max_nodes) throw UsageError("invalid node band: min_nodes exceeds max_nodes");
  if (c.n_train == 0) throw UsageError("--train must be positive");
  const Dataset d = generate_dataset(c);
  write_dataset(d, s.out);

  out << "dataset written to " << s.out << "\n";
  out << "counts: train " << d.train.size() << ", val " << d.val.size() << ", test " << d.test.size() << "\n";
  constexpr std::size_t kBin = 25;
  std::map<std::size_t, std::size_t> hist;
  for (const char* name : kSplits)
    for (const auto& p : d.split(name)) ++hist[p.n() / kBin];
  out << "nodes per sample:\n";
  for (auto [bin, n] : hist)
    out << "  " << bin * kBin << "-" << bin * kBin + kBin - 1 << ": " << std::string(n, '#') << " " << n << "\n";
  return kExitOk;
}

int cmd_train(Settings s, std::ostream& out) {
  const Dataset d = load_data(s);
  TrainConfig cfg = s.train;
  cfg.seed = s.seed;
  cfg.jobs = s.jobs;
  cfg.forward = forward_config(s);
  cfg.backward.method = parse_solver(s.backward_solver);
  cfg.backward.rel_tol = s.backward_rel_tol;
  cfg.backward.max_iter = s.backward_max_iter;
  cfg.backward.anderson_memory = s.anderson_memory;
  try {
    cfg.validate();
  } catch (const InvalidArgument& e) {
    throw UsageError(e.what());
  }
  std::optional<Checkpoint> resume;
  const fs::path last = fs::path(s.out) / "last.json";
  if (s.resume) {
    if (!fs::exists(last)) throw UsageError("--resume given but " + last.string() + " does not exist");
    resume = load_checkpoint(last);
    out << "resuming after epoch " << resume->epoch << "\n";
  }
  TrainOutputs o;
  o.dir = s.out;
  o.on_row = [&](const EpochRow& r) {
    if (r.split != "val") return;
    out << "epoch " << r.epoch << ": val residual " << fixed(r.residual) << ", mse " << fixed(r.mse_lu)
        << ", pearson " << fixed(r.pearson) << ", rho " << fixed(r.rho_estimate) << ", lr " << r.lr_main << "\n";
  };
  const TrainResult res = train(d, cfg, o, std::move(resume));
  out << "trained " << res.last.epoch << " epochs; best epoch " << res.best.best_epoch << " with val residual "
      << fixed(res.best.best_val) << "; checkpoints in " << s.out << "\n";
  return kExitOk;
}

int cmd_eval(const Settings& s, std::ostream& out) {
  const Dataset d = load_data(s);
  const auto& split = pick_split(d, s.split);
  const auto cks = load_checkpoints(s);
  const EvalOptions opt = eval_options(s);
  std::vector<EvalTable> runs;
  for (const auto& ck : cks) runs.push_back(eval_dataset(model_of(ck), split, opt));
  const std::size_t w = worst_run(runs);
  const fs::path dir(s.out);
  write_text_file(dir / "eval_metrics.csv", metrics_csv(runs[w].rows));
  write_text_file(dir / "eval_timing.csv", timing_csv(runs[w].rows));
  write_text_file(dir / "eval_summary.csv", summary_csv(runs[w].summary));
  std::string all = "checkpoint,residual_mean,mse_mean,pearson_mean\n";
  for (std::size_t k = 0; k < runs.size(); ++k) {
    all += s.checkpoints[k] + "," + csv_number(runs[k].summary.residual_mean) + "," +
           csv_number(runs[k].summary.mse_mean) + "," + csv_number(runs[k].summary.pearson_mean) + "\n";
  }
  write_text_file(dir / "eval_runs.csv", all);
  const Summary& m = runs[w].summary;
  out << "split " << s.split << " (" << m.count << " graphs, " << m.converged << " converged)";
  if (runs.size() > 1) out << ", worst of " << runs.size() << " checkpoints: " << s.checkpoints[w];
  out << "\n";
  out << "  residual " << fixed(m.residual_mean) << " +- " << fixed(m.residual_std) << "\n";
  out << "  mse      " << fixed(m.mse_mean) << " +- " << fixed(m.mse_std) << "\n";
  out << "  pearson  " << fixed(m.pearson_mean) << " +- " << fixed(m.pearson_std) << "\n";
  out << "  dirichlet mse " << fixed(m.dirichlet_mean) << ", rho " << fixed(m.rho_mean) << " +- "
      << fixed(m.rho_std) << ", iterations " << fixed(m.iters_mean) << ", " << fixed(m.wall_ms_mean)
      << " ms per graph\n";
  return kExitOk;
}

std::string trace_csv(const IterationTrace& t) {
  std::string s = "iteration,update,residual,mse\n";
  for (std::size_t k = 0; k < t.update.size(); ++k) {
    s += std::to_string(k + 1) + "," + csv_number(t.update[k]) + "," + csv_number(t.residual[k]) + "," +
         csv_number(t.mse[k]) + "\n";
  }
  return s;
}

int exp_ood(const Settings& s, const Dataset& d, const TrainedModel& m, std::ostream& out, std::ostream& err) {
  OodOptions o;
  o.n_large = s.ood_count;
  o.min_nodes = s.ood_min_nodes;
  o.max_nodes = s.ood_max_nodes;
  o.holed_nodes = s.holed_nodes;
  o.seed = s.seed;
  o.max_iter = s.picard_max_iter;
  o.rel_tol = s.rel_tol;
  o.snapshots = s.snapshots;
  o.snapshot_every = s.snapshot_every;
  if (o.min_nodes > o.max_nodes) throw UsageError("invalid node band: ood_min_nodes exceeds ood_max_nodes");
  const OodReport r = experiment_ood(m, d.test, o, eval_options(s));
  const fs::path dir(s.out);
  write_text_file(dir / "ood_large.csv", metrics_csv(r.large.rows));
  write_text_file(dir / "ood_large_summary.csv", summary_csv(r.large.summary));
  write_text_file(dir / "ood_holed_trace.csv", trace_csv(r.trace));
  write_text_file(dir / "ood_holed.csv", metrics_csv({r.holed_row}));
  std::string sum = "key,value\n";
  sum += "large_converged_fraction," + csv_number(r.large_converged_fraction) + "\n";
  sum += "large_residual_mean," + csv_number(r.large.summary.residual_mean) + "\n";
  sum += "reference_residual_mean," + csv_number(r.reference_residual) + "\n";
  sum += "residual_ratio," + csv_number(r.residual_ratio) + "\n";
  sum += "holed_nodes," + std::to_string(r.holed.n()) + "\n";
  sum += "holed_converged," + std::string(r.holed_row.converged ? "1" : "0") + "\n";
  sum += "holed_rho," + csv_number(r.holed_row.rho) + "\n";
  sum += "trace_monotone," + std::string(r.trace_monotone ? "1" : "0") + "\n";
  write_text_file(dir / "ood_summary.csv", sum);
  write_svg(s, dir / "ood_holed_trace.svg",
            svg_line_chart({{"residual", r.trace.residual}, {"mse", r.trace.mse}, {"update", r.trace.update}},
                           "Holed domain: Picard iterations", true));
  std::vector<double> U;
  evaluate_problem(m, r.holed, eval_options(s), &U);
  std::vector<double> err2(U.size());
  for (std::size_t i = 0; i < U.size(); ++i) err2[i] = (U[i] - r.holed.u_ex[i]) * (U[i] - r.holed.u_ex[i]);
  write_svg(s, dir / "ood_holed_error.svg", svg_field(r.holed.mesh, err2, "Squared error, holed domain"));
  for (const auto& [k, field] : r.snapshots) {
    write_svg(s, dir / ("ood_snapshot_" + std::to_string(k) + ".svg"),
              svg_field(r.holed.mesh, field, "Squared error after " + std::to_string(k) + " iterations"));
  }
  out << "large meshes (" << o.min_nodes << "-" << o.max_nodes << " nodes): " << r.large.summary.converged << "/"
      << r.large.summary.count << " converged, residual " << fixed(r.large.summary.residual_mean)
      << " vs in-distribution " << fixed(r.reference_residual) << " (ratio " << fixed(r.residual_ratio) << ")\n";
  out << "holed domain (" << r.holed.n() << " nodes): converged " << (r.holed_row.converged ? "yes" : "no")
      << " in " << r.holed_row.iters << " iterations, residual " << fixed(r.holed_row.residual) << ", rho "
      << fixed(r.holed_row.rho) << "\n";
  if (!r.trace_monotone) err << "warning: holed-domain update trace is not monotone after the first 10%\n";
  return kExitOk;
}

int exp_init(const Settings& s, const Dataset& d, const TrainedModel& m, std::ostream& out) {
  const auto& split = pick_split(d, s.split);
  if (split.empty()) throw EmptySplit("split '" + s.split + "' has no graphs");
  const std::size_t n = std::min(s.init_graphs, split.size());
  EvalOptions opt = eval_options(s);
  std::string csv = "graph_id,init,iters,converged,residual,distance\n";
  std::map<std::string, double> iters;
  std::size_t ordered = 0;
  for (std::size_t i = 0; i < n; ++i) {
    opt.seed = mix_seed(s.seed, i);
    const InitReport r = experiment_initializers(m, split[i], opt);
    std::map<std::string, int> it;
    for (const auto& run : r.runs) {
      csv += r.graph_id + "," + run.name + "," + std::to_string(run.iters) + "," + (run.converged ? "1" : "0") + "," +
             csv_number(run.residual) + "," + csv_number(run.distance) + "\n";
      iters[run.name] += run.iters / static_cast<double>(n);
      it[run.name] = run.iters;
    }
    if (it["close"] < it["train_like"] && it["train_like"] < it["far"]) ++ordered;
  }
  write_text_file(fs::path(s.out) / "init.csv", csv);
  out << "mean iterations over " << n << " graphs:";
  for (const char* k : {"close_exact", "close", "train_like", "far"}) out << " " << k << " " << fixed(iters[k]);
  out << "\nordering close < train_like < far holds on " << ordered << "/" << n << " graphs\n";
  return kExitOk;
}

int exp_solvers(const Settings& s, const Dataset& d, const TrainedModel& m, std::ostream& out) {
  const SolverReport r = experiment_solvers(m, pick_split(d, s.split), eval_options(s));
  const fs::path dir(s.out);
  write_text_file(dir / "solvers.csv", solvers_csv(r));
  std::string timing = "graph_id,method,wall_ms\n";
  for (const auto& row : r.rows) timing += row.graph_id + "," + row.method + "," + csv_number(row.wall_ms) + "\n";
  write_text_file(dir / "solvers_timing.csv", timing);
  std::string sum = "method,residual_mean,residual_std,mse_mean,pearson_mean,iters_mean,converged\n";
  for (std::size_t k = 0; k < r.methods.size(); ++k) {
    const Summary& m2 = r.per_method[k];
    sum += r.methods[k] + "," + csv_number(m2.residual_mean) + "," + csv_number(m2.residual_std) + "," +
           csv_number(m2.mse_mean) + "," + csv_number(m2.pearson_mean) + "," + csv_number(m2.iters_mean) + "," +
           std::to_string(m2.converged) + "\n";
    out << r.methods[k] << ": residual " << fixed(m2.residual_mean) << " +- " << fixed(m2.residual_std)
        << ", pearson " << fixed(m2.pearson_mean) << ", iterations " << fixed(m2.iters_mean) << ", converged "
        << m2.converged << "/" << m2.count << "\n";
  }
  write_text_file(dir / "solvers_summary.csv", sum);
  return kExitOk;
}

int exp_spectral(const Settings& s, const Dataset& d, const Checkpoint& ck, std::ostream& out) {
  const SpectralReport r = spectral_report(model_of(ck), pick_split(d, s.split), eval_options(s));
  const fs::path dir(s.out);
  std::string csv = "graph_id,rho\n";
  for (std::size_t i = 0; i < r.rho.size(); ++i) csv += r.graph_ids[i] + "," + csv_number(r.rho[i]) + "\n";
  write_text_file(dir / "spectral.csv", csv);
  std::string hist = "epoch,rho\n";
  std::vector<double> series;
  for (const auto& row : ck.history) {
    if (row.split != "val") continue;
    hist += std::to_string(row.epoch) + "," + csv_number(row.rho_estimate) + "\n";
    series.push_back(row.rho_estimate);
  }
  write_text_file(dir / "spectral_history.csv", hist);
  if (!series.empty()) {
    write_svg(s, dir / "spectral_history.svg",
              svg_line_chart({{"validation rho", series}}, "Spectral radius per epoch", false));
  }
  out << "spectral radius on " << s.split << ": " << fixed(r.mean) << " +- " << fixed(r.std) << " over "
      << r.rho.size() << " graphs\n";
  return kExitOk;
}

int cmd_experiment(const Settings& s, std::ostream& out, std::ostream& err) {
  const Dataset d = load_data(s);
  const auto cks = load_checkpoints(s);
  const Checkpoint& ck = cks.front();
  const TrainedModel m = model_of(ck);
  if (s.experiment == "ood") return exp_ood(s, d, m, out, err);
  if (s.experiment == "init") return exp_init(s, d, m, out);
  if (s.experiment == "solvers") return exp_solvers(s, d, m, out);
  return exp_spectral(s, d, ck, out);
}

int cmd_infer(const Settings& s, std::ostream& out) {
  if (!fs::exists(s.mesh_file)) throw UsageError("mesh file '" + s.mesh_file + "' not found");
  const auto cks = load_checkpoints(s);
  const TrainedModel m = model_of(cks.front());
  const TriMesh mesh = read_mesh(s.mesh_file);

  std::mt19937_64 rng(mix_seed(s.seed, 0x1f));
  std::uniform_real_distribution<double> coeff(-10.0, 10.0);
  SourceTerm f;
  BoundaryData g;
  for (double& r : f.r) r = coeff(rng);
  for (double& r : g.r) r = coeff(rng);
  if (!s.f_coeffs.empty()) {
    if (s.f_coeffs.size() != 3) throw UsageError("--f_coeffs takes 3 values");
    std::copy(s.f_coeffs.begin(), s.f_coeffs.end(), f.r.begin());
  }
  if (!s.g_coeffs.empty()) {
    if (s.g_coeffs.size() != 6) throw UsageError("--g_coeffs takes 6 values");
    std::copy(s.g_coeffs.begin(), s.g_coeffs.end(), g.r.begin());
  }
  validate_coeffs(f, g);
  GraphProblem raw = build_graph(mesh, assemble(mesh, f, g), f, g);
  raw.id = fs::path(s.mesh_file).stem().string();
  EvalOptions opt = eval_options(s);
  std::vector<double> U;
  const MetricRow row = evaluate_problem(m, raw, opt, &U);

  const fs::path dir(s.out);
  std::string csv = "node,x,y,type,u_hat,u_lu\n";
  std::vector<double> err2(raw.n());
  for (std::size_t i = 0; i < raw.n(); ++i) {
    const auto& q = raw.mesh.nodes[i];
    csv += std::to_string(i) + "," + csv_number(q.x) + "," + csv_number(q.y) + "," +
           std::to_string(static_cast<int>(raw.type(i))) + "," + csv_number(U[i]) + "," +
           csv_number(raw.u_ex[i]) + "\n";
    err2[i] = (U[i] - raw.u_ex[i]) * (U[i] - raw.u_ex[i]);
  }
  write_text_file(dir / "infer_field.csv", csv);
  write_text_file(dir / "infer_metrics.csv", metrics_csv({row}));
  write_svg(s, dir / "infer_field.svg", svg_field(raw.mesh, U, "Predicted field"));
  write_svg(s, dir / "infer_error.svg", svg_field(raw.mesh, err2, "Squared error against LU"));
  out << raw.id << ": " << raw.n() << " nodes, " << (row.converged ? "converged" : "NOT converged") << " in "
      << row.iters << " iterations; residual " << fixed(row.residual) << ", mse " << fixed(row.mse_lu)
      << ", pearson " << fixed(row.pearson) << "\n";
  return row.converged ? kExitOk : kExitRuntime;
}

// ---- argument wiring ------------------------------------------------------------

void add_options(CLI::App& app, Settings& s) {
  auto* o = app.add_option("--seed", s.seed, "Seed for every random draw (env PSI_SEED overrides the config file)");
  o->capture_default_str();
  app.add_option("--out", s.out, "Output directory")->capture_default_str();
  app.add_option("--jobs", s.jobs, "Worker threads for per-graph work")->capture_default_str()->check(
      CLI::PositiveNumber);
  app.add_option("--data", s.data, "Dataset directory (as written by gen)");
  app.add_option("--checkpoint", s.checkpoints, "Checkpoint file; repeat to report the worst of several runs");
  app.add_option("--split", s.split, "Split to evaluate")->capture_default_str()->check(
      CLI::IsMember({"train", "val", "test"}));

  app.add_option("--train", s.n_train, "Training samples")->capture_default_str()->group("Dataset");
  app.add_option("--val", s.n_val, "Validation samples")->capture_default_str()->group("Dataset");
  app.add_option("--test", s.n_test, "Test samples")->capture_default_str()->group("Dataset");
  app.add_option("--min_nodes", s.min_nodes, "Smallest mesh")->capture_default_str()->group("Dataset");
  app.add_option("--max_nodes", s.max_nodes, "Largest mesh")->capture_default_str()->group("Dataset");
  app.add_option("--n_control", s.n_control, "Boundary control points")->capture_default_str()->group("Dataset");

  TrainConfig& t = s.train;
  const std::string tg = "Training";
  app.add_option("--epochs", t.epochs)->capture_default_str()->group(tg);
  app.add_option("--batch_size", t.batch_size)->capture_default_str()->group(tg);
  app.add_option("--lambda", t.weights.lambda, "Supervised-loss weight")->capture_default_str()->group(tg);
  app.add_option("--beta_reg", t.weights.beta_reg, "Jacobian-penalty weight")->capture_default_str()->group(tg);
  app.add_option("--hutchinson_samples", t.weights.hutchinson_samples)->capture_default_str()->group(tg);
  app.add_option("--lr_autoencoder", t.lr_autoencoder)->capture_default_str()->group(tg);
  app.add_option("--lr_main", t.lr_main)->capture_default_str()->group(tg);
  app.add_option("--clip_norm", t.clip_norm)->capture_default_str()->group(tg);
  app.add_option("--plateau_factor", t.plateau_factor)->capture_default_str()->group(tg);
  app.add_option("--plateau_patience", t.plateau_patience)->capture_default_str()->group(tg);
  app.add_option("--latent_dim", t.model.latent_dim)->capture_default_str()->group(tg);
  app.add_option("--hidden_dim", t.model.hidden_dim)->capture_default_str()->group(tg);
  app.add_option("--rho_iters", t.rho_iters, "Power iterations for the validation log")
      ->capture_default_str()
      ->group(tg);
  app.add_option("--abort_streak", t.abort_streak)->capture_default_str()->group(tg);
  app.add_flag("--resume", s.resume, "Continue from <out>/last.json")->group(tg);

  const std::string sg = "Solver";
  const auto methods = CLI::IsMember({"picard", "forward", "anderson", "broyden"});
  app.add_option("--solver", s.solver, "Forward fixed-point solver")->capture_default_str()->check(methods)->group(sg);
  app.add_option("--rel_tol", s.rel_tol)->capture_default_str()->group(sg);
  app.add_option("--max_iter", s.max_iter)->capture_default_str()->group(sg);
  app.add_option("--anderson_memory", s.anderson_memory)->capture_default_str()->group(sg);
  app.add_option("--backward_solver", s.backward_solver)->capture_default_str()->check(methods)->group(sg);
  app.add_option("--backward_rel_tol", s.backward_rel_tol)->capture_default_str()->group(sg);
  app.add_option("--backward_max_iter", s.backward_max_iter)->capture_default_str()->group(sg);

  const std::string eg = "Evaluation";
  app.add_flag("--measure_rho,!--no_measure_rho", s.measure_rho, "Estimate the spectral radius per graph")
      ->capture_default_str()
      ->group(eg);
  app.add_option("--eval_rho_iters", s.eval_rho_iters)->capture_default_str()->group(eg);
  app.add_option("--ood_count", s.ood_count, "Large meshes in the ood study")->capture_default_str()->group(eg);
  app.add_option("--ood_min_nodes", s.ood_min_nodes)->capture_default_str()->group(eg);
  app.add_option("--ood_max_nodes", s.ood_max_nodes)->capture_default_str()->group(eg);
  app.add_option("--holed_nodes", s.holed_nodes)->capture_default_str()->group(eg);
  app.add_option("--picard_max_iter", s.picard_max_iter)->capture_default_str()->group(eg);
  app.add_flag("--snapshots", s.snapshots, "Write per-iteration error fields")->group(eg);
  app.add_option("--snapshot_every", s.snapshot_every)->capture_default_str()->group(eg);
  app.add_option("--init_graphs", s.init_graphs, "Graphs in the initializer study")->capture_default_str()->group(eg);
  app.add_flag("--svg,!--no_svg", s.svg, "Write SVG charts")->capture_default_str()->group(eg);
  app.add_option("--f_coeffs", s.f_coeffs, "Source coefficients for infer (3 values)")->delimiter(',')->group(eg);
  app.add_option("--g_coeffs", s.g_coeffs, "Boundary coefficients for infer (6 values)")->delimiter(',')->group(eg);
}

bool seed_on_command_line(const std::vector<std::string>& args) {
  return std::any_of(args.begin(), args.end(),
                     [](const std::string& a) { return a == "--seed" || a.rfind("--seed=", 0) == 0; });
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Settings s;
  CLI::App app{"Equilibrium graph network solver for the Poisson equation"};
  app.name("eqgnn");
  app.set_help_all_flag("--help-all", "Print help including every option group");
  app.set_config("--config", "", "Flat TOML file; keys are the long option names");
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.fallthrough();
  app.require_subcommand(1);
  add_options(app, s);

  app.add_subcommand("gen", "Generate a dataset into --out");
  app.add_subcommand("train", "Train on --data, writing checkpoints and metrics.csv into --out");
  app.add_subcommand("eval", "Evaluate --checkpoint on a split of --data");
  auto* exp = app.add_subcommand("experiment", "Run one study: ood, init, solvers or spectral");
  exp->add_option("name", s.experiment, "Study name")->required()->check(CLI::IsMember(kExperiments));
  auto* infer = app.add_subcommand("infer", "Solve on one mesh file (.msh or JSON) with --checkpoint");
  infer->add_option("mesh", s.mesh_file, "Mesh file")->required();

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    if (!s.experiment.empty() || std::find(args.begin(), args.end(), "experiment") != args.end()) {
      err << "valid experiments: ood, init, solvers, spectral\n";
    }
    err << "run with --help for usage\n";
    return kExitUsage;
  }

  if (const char* env = std::getenv("PSI_SEED"); env && !seed_on_command_line(args)) {
    try {
      std::size_t used = 0;
      s.seed = std::stoull(env, &used);
      if (used != std::string(env).size()) throw std::invalid_argument("trailing characters");
    } catch (const std::exception&) {
      err << "error: PSI_SEED must be a non-negative integer\n";
      return kExitUsage;
    }
  }

  try {
    const std::string cmd = app.get_subcommands().front()->get_name();
    if (cmd == "gen") return cmd_gen(s, out);
    if (cmd == "train") return cmd_train(s, out);
    if (cmd == "eval") return cmd_eval(s, out);
    if (cmd == "experiment") return cmd_experiment(s, out, err);
    return cmd_infer(s, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const InvalidArgument& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace eqgnn
