#include <cmath>
#include <random>
#include <set>

#include "doctest.h"
#include "eqgnn/errors.hpp"
#include "eqgnn/evaluation.hpp"
#include "eqgnn/fem.hpp"

using namespace eqgnn;

namespace {

DatasetConfig tiny_config(std::uint64_t seed) {
  DatasetConfig c;
  c.seed = seed;
  c.n_train = 4;
  c.n_val = 3;
  c.n_test = 3;
  c.min_nodes = 40;
  c.max_nodes = 70;
  return c;
}

// A tiny layer-norm gain makes the untrained processor a global contraction;
// at larger gains layer norm admits several stable fixed points.
TrainedModel tiny_model(const Dataset& d) {
  ModelConfig cfg{4, 6};
  TrainedModel m{init_params(11, cfg), d.stats};
  m.params.values[m.params.ln_gain_index()] = ad::Tensor(1, 4, 0.02);
  return m;
}

EvalOptions tight() {
  EvalOptions o;
  o.solver.rel_tol = 1e-10;
  o.rho_iters = 100;
  return o;
}

std::size_t count(const std::string& text, const std::string& needle) {
  std::size_t n = 0;
  for (auto p = text.find(needle); p != std::string::npos; p = text.find(needle, p + 1)) ++n;
  return n;
}

}  // namespace

TEST_CASE("metrics of the exact solution") {
  const Dataset d = generate_dataset(tiny_config(1));
  const GraphProblem& p = d.test[0];
  const MetricRow r = metrics(p.u_ex, p);
  CHECK(r.mse_lu == 0.0);
  CHECK(r.pearson == doctest::Approx(1.0).epsilon(1e-14));
  CHECK(r.residual <= 1e-10);
  CHECK(r.dirichlet_mse <= 1e-20);
  CHECK(r.graph_id == p.id);

  std::vector<double> neg(p.u_ex);
  for (double& v : neg) v = -v;
  CHECK(metrics(neg, p).pearson == doctest::Approx(-1.0).epsilon(1e-14));
  CHECK_THROWS_AS(metrics(std::vector<double>(3, 0.0), p), DimensionMismatch);
}

TEST_CASE("pearson and mse against a hand computation") {
  const std::vector<double> a{1.5, -2.0, 3.25, 0.5, 4.0, -1.0, 2.5};
  const std::vector<double> b{2.0, -1.5, 2.75, 1.0, 3.0, 0.0, 2.25};
  // Centered sums by hand: Sab = 339/16, Saa = 235/8, Sbb = 895/56; squared differences sum to 49/16.
  const double expected = (339.0 / 16) / std::sqrt((235.0 / 8) * (895.0 / 56));
  CHECK(std::abs(pearson(a, b) - expected) <= 1e-12);
  double se = 0;
  for (std::size_t i = 0; i < a.size(); ++i) se += (a[i] - b[i]) * (a[i] - b[i]);
  CHECK(se / 7 == doctest::Approx(0.4375).epsilon(1e-15));
  CHECK(std::isnan(pearson(std::vector<double>(7, 1.0), b)));
}

TEST_CASE("dirichlet mse sees only Dirichlet nodes") {
  const Dataset d = generate_dataset(tiny_config(2));
  const GraphProblem& p = d.test[1];
  std::vector<double> U(p.u_ex);
  std::size_t nd = 0;
  for (std::size_t i = 0; i < p.n(); ++i) {
    if (p.type(i) == NodeType::Dirichlet) {
      U[i] += 0.5;
      ++nd;
    } else {
      U[i] += 3.0;
    }
  }
  REQUIRE(nd > 0);
  CHECK(metrics(U, p).dirichlet_mse == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("summary means are arithmetic means of finite rows") {
  std::vector<MetricRow> rows(3);
  rows[0].residual = 1, rows[1].residual = 2, rows[2].residual = 6;
  rows[0].pearson = 0.5, rows[1].pearson = std::nan(""), rows[2].pearson = 0.7;
  rows[0].iters = 3, rows[1].iters = 5, rows[2].iters = 10;
  rows[2].converged = false;
  for (auto& r : rows) r.rho = std::nan("");
  const Summary s = summarize(rows);
  CHECK(s.count == 3);
  CHECK(s.converged == 2);
  CHECK(s.residual_mean == doctest::Approx(3.0));
  CHECK(s.residual_std == doctest::Approx(std::sqrt(14.0 / 3)));
  CHECK(s.pearson_mean == doctest::Approx(0.6));
  CHECK(s.iters_mean == doctest::Approx(6.0));
  CHECK(std::isnan(s.rho_mean));
}

TEST_CASE("eval_dataset rows, summary and failure modes") {
  const Dataset d = generate_dataset(tiny_config(3));
  const TrainedModel m = tiny_model(d);
  CHECK_THROWS_AS(eval_dataset(m, {}, tight()), EmptySplit);

  const EvalTable t = eval_dataset(m, d.test, tight());
  REQUIRE(t.rows.size() == d.test.size());
  double sum = 0;
  for (std::size_t i = 0; i < t.rows.size(); ++i) {
    const auto& r = t.rows[i];
    CHECK(r.graph_id == d.test[i].id);
    CHECK(r.converged);
    CHECK(r.rho < 1.0);
    CHECK(r.residual >= 0);
    CHECK(r.pearson >= -1.0);
    CHECK(r.pearson <= 1.0);
    sum += r.residual;
  }
  CHECK(t.summary.residual_mean == doctest::Approx(sum / 3.0).epsilon(1e-14));

  SUBCASE("deterministic CSV") {
    EvalOptions o = tight();
    o.jobs = 2;
    const EvalTable again = eval_dataset(m, d.test, o);
    CHECK(metrics_csv(again.rows) == metrics_csv(t.rows));
    CHECK(summary_csv(again.summary) == summary_csv(t.summary));
  }
  SUBCASE("csv layout") {
    const std::string csv = metrics_csv(t.rows);
    CHECK(csv.rfind("graph_id,residual,mse_lu,pearson,dirichlet_mse,iters,rho,converged\n", 0) == 0);
    CHECK(count(csv, "\n") == 4);
    CHECK(count(timing_csv(t.rows), "\n") == 4);
  }
}

TEST_CASE("the worst of several runs has the largest mean residual") {
  std::vector<EvalTable> runs(3);
  runs[0].summary.residual_mean = 0.2;
  runs[1].summary.residual_mean = 0.5;
  runs[2].summary.residual_mean = 0.3;
  CHECK(worst_run(runs) == 1);
  runs[2].summary.residual_mean = std::nan("");
  CHECK(worst_run(runs) == 2);
  CHECK_THROWS_AS(worst_run({}), InvalidArgument);
}

TEST_CASE("initial fields honour their ranges and keep Dirichlet values") {
  const Dataset d = generate_dataset(tiny_config(4));
  const GraphProblem& p = d.test[0];
  const auto inits = initial_fields(p, 9);
  REQUIRE(inits.size() == 4);
  std::set<std::string> names;
  for (const auto& [name, u] : inits) {
    names.insert(name);
    REQUIRE(u.size() == p.n());
    for (std::size_t i = 0; i < p.n(); ++i) {
      if (p.type(i) == NodeType::Dirichlet) {
        CHECK(u[i] == p.g(p.mesh.nodes[i]));
        continue;
      }
      if (name == "close_exact") CHECK(u[i] == p.u_ex[i]);
      if (name == "close") CHECK((u[i] - p.u_ex[i] >= 0.0 && u[i] - p.u_ex[i] < 1.0));
      if (name == "train_like") CHECK(u[i] == 0.0);
      if (name == "far") CHECK((u[i] >= 50.0 && u[i] < 1000.0));
    }
  }
  CHECK(names == std::set<std::string>{"close_exact", "close", "train_like", "far"});
  CHECK(inits[2].second == p.u0);
}

TEST_CASE("initializer study on a contractive model reaches one solution") {
  const Dataset d = generate_dataset(tiny_config(5));
  const TrainedModel m = tiny_model(d);
  EvalOptions o = tight();
  o.solver.method = SolverMethod::Picard;
  o.solver.max_iter = 5000;
  const InitReport r = experiment_initializers(m, d.test[0], o);
  REQUIRE(r.runs.size() == 4);
  for (const auto& run : r.runs) {
    CHECK(run.converged);
    CHECK(run.distance <= 1e-8);
  }
  CHECK(r.runs[0].iters <= r.runs[1].iters);
}

TEST_CASE("solver study emits one row per method and graph") {
  const Dataset d = generate_dataset(tiny_config(6));
  const TrainedModel m = tiny_model(d);
  EvalOptions o = tight();
  o.solver.max_iter = 5000;
  const SolverReport r = experiment_solvers(m, d.test, o);
  REQUIRE(r.rows.size() == 3 * d.test.size());
  CHECK(r.methods == std::vector<std::string>{"broyden", "picard", "anderson"});
  for (std::size_t i = 0; i < r.rows.size(); ++i) {
    CHECK(r.rows[i].method == r.methods[i % 3]);
    CHECK(r.rows[i].graph_id == d.test[i / 3].id);
    CHECK(r.rows[i].converged);
    CHECK(r.rows[i].distance <= 1e-8);
  }
  for (const auto& s : r.per_method)
    CHECK(s.residual_mean == doctest::Approx(r.per_method[0].residual_mean).epsilon(1e-6));
  const std::string csv = solvers_csv(r);
  CHECK(count(csv, "\n") == 1 + r.rows.size());
  CHECK(csv == solvers_csv(experiment_solvers(m, d.test, o)));
  CHECK_THROWS_AS(experiment_solvers(m, {}, o), EmptySplit);
}

TEST_CASE("spectral report matches per-graph radii") {
  const Dataset d = generate_dataset(tiny_config(7));
  const TrainedModel m = tiny_model(d);
  const EvalOptions o = tight();
  const SpectralReport r = spectral_report(m, d.val, o);
  REQUIRE(r.rho.size() == d.val.size());
  double s = 0;
  for (std::size_t i = 0; i < r.rho.size(); ++i) {
    const GraphProblem p = normalize(d.val[i], d.stats);
    const GraphTensors G = make_graph_tensors(p);
    const ForwardResult f = forward_pass(m.params, p, G, o.solver);
    CHECK(r.rho[i] == spectral_radius_at(m.params, G, f, o.rho_iters, mix_seed(o.seed, i)));
    CHECK(r.graph_ids[i] == d.val[i].id);
    s += r.rho[i];
  }
  CHECK(r.mean == doctest::Approx(s / 3.0).epsilon(1e-14));
}

TEST_CASE("holed domain has Dirichlet outer and Neumann hole boundaries") {
  const GraphProblem p = holed_problem(3, 300);
  CHECK(p.n() > 200);
  CHECK(p.n() < 400);
  const auto loops = boundary_loops(p.mesh);
  REQUIRE(loops.size() == 3);
  for (std::size_t v : loops[0]) CHECK(p.type(v) == NodeType::Dirichlet);
  for (std::size_t k = 1; k < loops.size(); ++k)
    for (std::size_t v : loops[k]) CHECK(p.type(v) == NodeType::Neumann);
  CHECK(residual_loss(p.u_ex, p.system) <= 1e-10);
  CHECK_THROWS_AS(holed_problem(3, 10), InvalidArgument);
}

TEST_CASE("out-of-distribution study on a contractive model") {
  const Dataset d = generate_dataset(tiny_config(8));
  const TrainedModel m = tiny_model(d);
  OodOptions o;
  o.n_large = 2;
  o.min_nodes = 90;
  o.max_nodes = 130;
  o.holed_nodes = 150;
  o.rel_tol = 1e-8;
  o.max_iter = 3000;
  o.snapshots = true;
  o.snapshot_every = 5;
  const OodReport r = experiment_ood(m, d.test, o, tight());
  CHECK(r.large.rows.size() == 2);
  CHECK(r.large_converged_fraction == 1.0);
  for (const auto& row : r.large.rows) {
    CHECK(row.iters > 0);
    CHECK(row.rho < 1.0);
  }
  CHECK(std::isfinite(r.residual_ratio));
  CHECK(r.holed_row.converged);
  CHECK(r.holed_row.rho < 1.0);
  CHECK(r.trace.update.size() == static_cast<std::size_t>(r.holed_row.iters));
  CHECK(r.trace.residual.size() == r.trace.update.size());
  CHECK(r.trace.update.back() <= 1e-8);
  CHECK(r.snapshots.size() == r.trace.update.size() / 5);
  CHECK(r.trace.residual.back() == doctest::Approx(r.holed_row.residual).epsilon(1e-12));
}

TEST_CASE("picard trace stops at the tolerance") {
  const Dataset d = generate_dataset(tiny_config(9));
  const TrainedModel m = tiny_model(d);
  std::vector<double> U;
  const IterationTrace t = picard_trace(m, d.test[0], 4000, 1e-9, &U);
  REQUIRE(!t.update.empty());
  CHECK(t.update.back() <= 1e-9);
  for (std::size_t k = 0; k + 1 < t.update.size(); ++k) CHECK(t.update[k] > 1e-9);
  CHECK(U.size() == d.test[0].n());
}

TEST_CASE("svg artifacts") {
  const std::string chart = svg_line_chart({{"a", {1, 0.1, 0.01}}, {"b<c", {2, 1}}}, "trace", true);
  CHECK(chart.rfind("<svg", 0) == 0);
  CHECK(count(chart, "<polyline") == 2);
  CHECK(count(chart, "b&lt;c") == 1);
  const TriMesh mesh = structured_rectangle(1, 1, 2, 2);
  std::vector<double> v(mesh.nodes.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(i);
  const std::string field = svg_field(mesh, v, "error");
  CHECK(count(field, "<polygon") == mesh.triangles.size());
  CHECK_THROWS_AS(svg_field(mesh, {}, "x"), DimensionMismatch);
}
