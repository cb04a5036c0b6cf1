#include "eqgnn/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>

#include "eqgnn/csv.hpp"
#include "eqgnn/errors.hpp"
#include "eqgnn/json_io.hpp"
#include "eqgnn/parallel.hpp"

namespace eqgnn {

using ad::Tensor;
using nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// JSON has no NaN or infinity; they are stored as null.
json num(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }
double num(const json& j) { return j.is_null() ? kNaN : j.get<double>(); }

json solve_to_json(const SolveConfig& c) {
  return {{"method", solver_name(c.method)},
          {"rel_tol", c.rel_tol},
          {"max_iter", c.max_iter},
          {"anderson_memory", c.anderson_memory}};
}

SolveConfig solve_from_json(const json& j) {
  SolveConfig c;
  c.method = parse_solver(j.at("method").get<std::string>());
  c.rel_tol = j.at("rel_tol").get<double>();
  c.max_iter = j.at("max_iter").get<int>();
  c.anderson_memory = j.at("anderson_memory").get<int>();
  return c;
}

json tensors_to_json(const std::vector<Tensor>& ts) {
  json a = json::array();
  for (const auto& t : ts) a.push_back(t.vec());
  return a;
}

std::vector<Tensor> tensors_from_json(const json& j, const ModelParams& shape) {
  if (j.size() != shape.values.size()) throw ParseError("checkpoint: optimizer state size mismatch", 0);
  std::vector<Tensor> out;
  for (std::size_t k = 0; k < shape.values.size(); ++k) {
    auto data = j.at(k).get<std::vector<double>>();
    if (data.size() != shape.values[k].size()) throw ParseError("checkpoint: optimizer tensor size mismatch", 0);
    out.emplace_back(shape.values[k].rows(), shape.values[k].cols(), std::move(data));
  }
  return out;
}

json row_to_json(const EpochRow& r) {
  return {{"epoch", r.epoch},         {"split", r.split},     {"residual", num(r.residual)},
          {"mse_lu", num(r.mse_lu)},  {"pearson", num(r.pearson)}, {"rho_estimate", num(r.rho_estimate)},
          {"lr_main", r.lr_main},     {"lr_ae", r.lr_ae},     {"skipped_count", r.skipped}};
}

EpochRow row_from_json(const json& j) {
  EpochRow r;
  r.epoch = j.at("epoch").get<int>();
  r.split = j.at("split").get<std::string>();
  r.residual = num(j.at("residual"));
  r.mse_lu = num(j.at("mse_lu"));
  r.pearson = num(j.at("pearson"));
  r.rho_estimate = num(j.at("rho_estimate"));
  r.lr_main = j.at("lr_main").get<double>();
  r.lr_ae = j.at("lr_ae").get<double>();
  r.skipped = j.at("skipped_count").get<std::size_t>();
  return r;
}

double mean_of(const std::vector<double>& v) {
  if (v.empty()) return kNaN;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

// ---- config ----------------------------------------------------------------------

TrainConfig::TrainConfig() { backward.rel_tol = 1e-8; }

void TrainConfig::validate() const {
  if (!(weights.lambda >= 0) || !(weights.beta_reg >= 0)) throw InvalidArgument("loss weights must be >= 0");
  if (weights.hutchinson_samples < 1) throw InvalidArgument("hutchinson_samples must be >= 1");
  if (!(lr_autoencoder > 0) || !(lr_main > 0)) throw InvalidArgument("learning rates must be > 0");
  if (!(clip_norm > 0)) throw InvalidArgument("clip_norm must be > 0");
  if (epochs < 0) throw InvalidArgument("epochs must be >= 0");
  if (batch_size < 1) throw InvalidArgument("batch_size must be >= 1");
  if (!(plateau_factor > 0 && plateau_factor < 1)) throw InvalidArgument("plateau_factor must lie in (0, 1)");
  if (plateau_patience < 0) throw InvalidArgument("plateau_patience must be >= 0");
  if (rho_iters < 1) throw InvalidArgument("rho_iters must be >= 1");
  if (abort_streak < 1) throw InvalidArgument("abort_streak must be >= 1");
  if (model.latent_dim < 2 || model.hidden_dim < 1) throw InvalidArgument("bad model dimensions");
  forward.validate();
  backward.validate();
}

json train_config_to_json(const TrainConfig& c) {
  return {{"lambda", c.weights.lambda},
          {"beta_reg", c.weights.beta_reg},
          {"hutchinson_samples", c.weights.hutchinson_samples},
          {"lr_autoencoder", c.lr_autoencoder},
          {"lr_main", c.lr_main},
          {"clip_norm", c.clip_norm},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"plateau_factor", c.plateau_factor},
          {"plateau_patience", c.plateau_patience},
          {"forward", solve_to_json(c.forward)},
          {"backward", solve_to_json(c.backward)},
          {"latent_dim", c.model.latent_dim},
          {"hidden_dim", c.model.hidden_dim},
          {"seed", c.seed},
          {"rho_iters", c.rho_iters},
          {"abort_streak", c.abort_streak}};
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  c.weights.lambda = j.at("lambda").get<double>();
  c.weights.beta_reg = j.at("beta_reg").get<double>();
  c.weights.hutchinson_samples = j.at("hutchinson_samples").get<int>();
  c.lr_autoencoder = j.at("lr_autoencoder").get<double>();
  c.lr_main = j.at("lr_main").get<double>();
  c.clip_norm = j.at("clip_norm").get<double>();
  c.epochs = j.at("epochs").get<int>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.plateau_factor = j.at("plateau_factor").get<double>();
  c.plateau_patience = j.at("plateau_patience").get<int>();
  c.forward = solve_from_json(j.at("forward"));
  c.backward = solve_from_json(j.at("backward"));
  c.model.latent_dim = j.at("latent_dim").get<std::size_t>();
  c.model.hidden_dim = j.at("hidden_dim").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.rho_iters = j.at("rho_iters").get<int>();
  c.abort_streak = j.at("abort_streak").get<int>();
  return c;
}

// ---- optimizer -------------------------------------------------------------------

AdamState adam_init(const ModelParams& params) {
  AdamState s;
  for (const auto& t : params.values) {
    s.m.emplace_back(t.rows(), t.cols(), 0.0);
    s.v.emplace_back(t.rows(), t.cols(), 0.0);
  }
  return s;
}

void adam_step(ModelParams& params, const std::vector<Tensor>& grads, AdamState& state, double lr_main,
               double lr_ae) {
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  if (grads.size() != params.values.size() || state.m.size() != params.values.size()) {
    throw ShapeMismatch("adam_step: gradient count differs from parameter count");
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.values.size(); ++k) {
    Tensor& p = params.values[k];
    const Tensor& g = grads[k];
    if (!g.same_shape(p)) throw ShapeMismatch("adam_step: gradient shape for " + params.names[k]);
    const double lr = params.is_autoencoder(k) ? lr_ae : lr_main;
    Tensor& m = state.m[k];
    Tensor& v = state.v[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = b1 * m[i] + (1 - b1) * g[i];
      v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i];
      p[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
    }
  }
}

double clip_gradients(std::vector<Tensor>& grads, double clip_norm) {
  double sq = 0;
  for (const auto& g : grads) sq += g.squared_norm();
  const double norm = std::sqrt(sq);
  if (norm > clip_norm) {
    const double s = clip_norm / norm;
    for (auto& g : grads)
      for (double& v : g.data()) v *= s;
  }
  return norm;
}

bool PlateauScheduler::observe(double value) {
  if (!std::isfinite(value)) return false;
  if (!has_best || value < best * (1.0 - 1e-4)) {
    best = value;
    has_best = true;
    bad_epochs = 0;
    return false;
  }
  if (++bad_epochs > patience) {
    bad_epochs = 0;
    return true;
  }
  return false;
}

// ---- logs and checkpoints -------------------------------------------------------

std::string epoch_csv_header() {
  return "epoch,split,residual,mse_lu,pearson,rho_estimate,lr_main,lr_ae,skipped_count";
}

std::string epoch_csv_row(const EpochRow& r) {
  return std::to_string(r.epoch) + "," + r.split + "," + csv_number(r.residual) + "," + csv_number(r.mse_lu) + "," +
         csv_number(r.pearson) + "," + csv_number(r.rho_estimate) + "," + csv_number(r.lr_main) + "," + csv_number(r.lr_ae) + "," +
         std::to_string(r.skipped);
}

json checkpoint_to_json(const Checkpoint& c) {
  json hist = json::array();
  for (const auto& r : c.history) hist.push_back(row_to_json(r));
  return {{"params", params_to_json(c.params)},
          {"norm_stats", norm_stats_to_json(c.stats)},
          {"config", train_config_to_json(c.config)},
          {"epoch", c.epoch},
          {"adam", {{"step", c.adam.step}, {"m", tensors_to_json(c.adam.m)}, {"v", tensors_to_json(c.adam.v)}}},
          {"scheduler",
           {{"factor", c.scheduler.factor},
            {"patience", c.scheduler.patience},
            {"best", num(c.scheduler.best)},
            {"has_best", c.scheduler.has_best},
            {"bad_epochs", c.scheduler.bad_epochs}}},
          {"lr_main", c.lr_main},
          {"lr_ae", c.lr_ae},
          {"best_val", num(c.best_val)},
          {"best_epoch", c.best_epoch},
          {"fail_streak", c.fail_streak},
          {"history", hist}};
}

Checkpoint checkpoint_from_json(const json& j) {
  try {
    Checkpoint c;
    c.params = params_from_json(j.at("params"));
    c.stats = norm_stats_from_json(j.at("norm_stats"));
    c.config = train_config_from_json(j.at("config"));
    c.epoch = j.at("epoch").get<int>();
    const json& a = j.at("adam");
    c.adam.step = a.at("step").get<std::int64_t>();
    c.adam.m = tensors_from_json(a.at("m"), c.params);
    c.adam.v = tensors_from_json(a.at("v"), c.params);
    const json& s = j.at("scheduler");
    c.scheduler.factor = s.at("factor").get<double>();
    c.scheduler.patience = s.at("patience").get<int>();
    c.scheduler.best = num(s.at("best"));
    c.scheduler.has_best = s.at("has_best").get<bool>();
    c.scheduler.bad_epochs = s.at("bad_epochs").get<int>();
    c.lr_main = j.at("lr_main").get<double>();
    c.lr_ae = j.at("lr_ae").get<double>();
    c.best_val = num(j.at("best_val"));
    c.best_epoch = j.at("best_epoch").get<int>();
    c.fail_streak = j.at("fail_streak").get<int>();
    for (const auto& r : j.at("history")) c.history.push_back(row_from_json(r));
    return c;
  } catch (const json::exception& e) {
    throw ParseError(std::string("checkpoint: ") + e.what(), 0);
  }
}

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  write_json_file(checkpoint_to_json(c), path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return checkpoint_from_json(read_json_file(path)); }

// ---- training --------------------------------------------------------------------

double pearson(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionMismatch("pearson: lengths differ");
  const std::size_t n = a.size();
  if (n == 0) return kNaN;
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < n; ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= static_cast<double>(n);
  mb /= static_cast<double>(n);
  double sab = 0, saa = 0, sbb = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sab += (a[i] - ma) * (b[i] - mb);
    saa += (a[i] - ma) * (a[i] - ma);
    sbb += (b[i] - mb) * (b[i] - mb);
  }
  if (saa <= 0 || sbb <= 0) return kNaN;
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

PreparedSplit prepare_split(const std::vector<GraphProblem>& raw, const NormStats& stats) {
  PreparedSplit s;
  s.problems.reserve(raw.size());
  s.tensors.reserve(raw.size());
  for (const auto& p : raw) {
    s.problems.push_back(p.normalized ? p : normalize(p, stats));
    s.tensors.push_back(make_graph_tensors(s.problems.back()));
  }
  return s;
}

EpochRow validate_split(const ModelParams& params, const PreparedSplit& split, const TrainConfig& cfg, int epoch) {
  struct One {
    bool ok = false;
    double residual = 0, mse = 0, pearson = 0, rho = 0;
  };
  std::vector<One> rows(split.problems.size());
  parallel_for(rows.size(), cfg.jobs, [&](std::size_t i) {
    const GraphProblem& p = split.problems[i];
    const ForwardResult f = forward_pass(params, p, split.tensors[i], cfg.forward);
    if (!f.report.converged) return;
    One& r = rows[i];
    r.ok = true;
    r.residual = residual_loss(f.U_hat, p.system);
    double se = 0;
    for (std::size_t k = 0; k < p.n(); ++k) se += (f.U_hat[k] - p.u_ex[k]) * (f.U_hat[k] - p.u_ex[k]);
    r.mse = se / static_cast<double>(p.n());
    r.pearson = pearson(f.U_hat, p.u_ex);
    r.rho = spectral_radius_at(params, split.tensors[i], f, cfg.rho_iters, mix_seed(cfg.seed, 0x5eed + i));
  });
  EpochRow m;
  m.epoch = epoch;
  m.split = "val";
  std::vector<double> res, mse, pr, rho;
  for (const auto& r : rows) {
    if (!r.ok) {
      ++m.skipped;
      continue;
    }
    res.push_back(r.residual);
    mse.push_back(r.mse);
    if (std::isfinite(r.pearson)) pr.push_back(r.pearson);
    rho.push_back(r.rho);
  }
  m.residual = mean_of(res);
  m.mse_lu = mean_of(mse);
  m.pearson = mean_of(pr);
  m.rho_estimate = mean_of(rho);
  return m;
}

Checkpoint fresh_checkpoint(const TrainConfig& cfg) {
  Checkpoint ck;
  ck.params = init_params(cfg.seed, cfg.model);
  ck.adam = adam_init(ck.params);
  ck.scheduler.factor = cfg.plateau_factor;
  ck.scheduler.patience = cfg.plateau_patience;
  ck.lr_main = cfg.lr_main;
  ck.lr_ae = cfg.lr_autoencoder;
  ck.best_val = kNaN;
  return ck;
}

TrainResult train(const Dataset& data, const TrainConfig& cfg, const TrainOutputs& out,
                  std::optional<Checkpoint> resume) {
  cfg.validate();
  if (data.train.empty()) throw EmptySplit("training split is empty");
  const PreparedSplit train_set = prepare_split(data.train, data.stats);
  const PreparedSplit val_set = prepare_split(data.val, data.stats);

  Checkpoint ck;
  if (resume) {
    ck = std::move(*resume);
    if (ck.params.config.latent_dim != cfg.model.latent_dim || ck.params.config.hidden_dim != cfg.model.hidden_dim) {
      throw InvalidArgument("resume: checkpoint model dimensions differ from the configuration");
    }
  } else {
    ck = fresh_checkpoint(cfg);
  }
  ck.stats = data.stats;
  ck.config = cfg;
  TrainResult result;
  result.best = ck;

  std::ofstream csv;
  if (!out.dir.empty()) {
    std::filesystem::create_directories(out.dir);
    csv.open(out.dir / "metrics.csv", std::ios::trunc);
    if (!csv) throw InvalidArgument("cannot write " + (out.dir / "metrics.csv").string());
    csv << epoch_csv_header() << "\n";
    for (const auto& r : ck.history) csv << epoch_csv_row(r) << "\n";
    csv.flush();
    if (resume && std::filesystem::exists(out.dir / "best.json")) result.best = load_checkpoint(out.dir / "best.json");
  }
  auto emit = [&](const EpochRow& r) {
    ck.history.push_back(r);
    if (csv.is_open()) {
      csv << epoch_csv_row(r) << "\n";
      csv.flush();
    }
    if (out.on_row) out.on_row(r);
  };

  const std::size_t n_train = train_set.problems.size();
  for (int epoch = ck.epoch + 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(n_train);
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);

    std::vector<double> tr_res, tr_mse, tr_pr;
    std::size_t skipped = 0;
    for (std::size_t start = 0; start < n_train; start += cfg.batch_size) {
      const std::size_t len = std::min(cfg.batch_size, n_train - start);
      std::vector<GradientResult> results(len);
      parallel_for(len, cfg.jobs, [&](std::size_t b) {
        const std::size_t i = order[start + b];
        const std::uint64_t probe = mix_seed(mix_seed(cfg.seed ^ 0x9e3779b97f4a7c15ULL, static_cast<std::uint64_t>(epoch)), i);
        results[b] = loss_and_gradients(ck.params, train_set.problems[i], train_set.tensors[i], cfg.weights,
                                        cfg.forward, cfg.backward, probe);
      });
      std::vector<Tensor> grads;
      std::size_t ok = 0;
      for (std::size_t b = 0; b < len; ++b) {
        const GradientResult& r = results[b];
        if (!r.ok) continue;
        ++ok;
        const GraphProblem& p = train_set.problems[order[start + b]];
        tr_res.push_back(r.loss.residual);
        tr_mse.push_back(r.loss.supervised);
        const double pc = pearson(r.forward.U_hat, p.u_ex);
        if (std::isfinite(pc)) tr_pr.push_back(pc);
        if (grads.empty()) {
          grads = r.grads;
        } else {
          for (std::size_t k = 0; k < grads.size(); ++k)
            for (std::size_t q = 0; q < grads[k].size(); ++q) grads[k][q] += r.grads[k][q];
        }
      }
      skipped += len - ok;
      ck.fail_streak = 2 * (len - ok) > len ? ck.fail_streak + 1 : 0;
      if (ck.fail_streak >= cfg.abort_streak) {
        throw TrainingAborted("more than half of each of the last " + std::to_string(cfg.abort_streak) +
                              " batches failed to converge (epoch " + std::to_string(epoch) + ")");
      }
      if (ok == 0) continue;
      for (auto& g : grads)
        for (double& v : g.data()) v /= static_cast<double>(ok);
      clip_gradients(grads, cfg.clip_norm);
      adam_step(ck.params, grads, ck.adam, ck.lr_main, ck.lr_ae);
    }

    EpochRow tr;
    tr.epoch = epoch;
    tr.split = "train";
    tr.residual = mean_of(tr_res);
    tr.mse_lu = mean_of(tr_mse);
    tr.pearson = mean_of(tr_pr);
    tr.rho_estimate = kNaN;
    tr.lr_main = ck.lr_main;
    tr.lr_ae = ck.lr_ae;
    tr.skipped = skipped;
    emit(tr);

    EpochRow val = val_set.problems.empty() ? EpochRow{} : validate_split(ck.params, val_set, cfg, epoch);
    val.epoch = epoch;
    val.split = "val";
    if (val_set.problems.empty()) val.residual = val.mse_lu = val.pearson = val.rho_estimate = kNaN;
    val.lr_main = ck.lr_main;
    val.lr_ae = ck.lr_ae;
    emit(val);

    // Without a validation split the training residual drives the schedule.
    const double monitor = val_set.problems.empty() ? tr.residual : val.residual;
    if (ck.scheduler.observe(monitor)) {
      ck.lr_main *= ck.scheduler.factor;
      ck.lr_ae *= ck.scheduler.factor;
    }
    ck.epoch = epoch;
    const bool improved = std::isfinite(monitor) && (!std::isfinite(ck.best_val) || monitor < ck.best_val);
    if (improved) {
      ck.best_val = monitor;
      ck.best_epoch = epoch;
    }
    if (improved) result.best = ck;
    if (!out.dir.empty()) {
      save_checkpoint(ck, out.dir / "last.json");
      if (improved) save_checkpoint(ck, out.dir / "best.json");
    }
  }
  if (!std::isfinite(result.best.best_val)) result.best = ck;
  result.last = std::move(ck);
  return result;
}

}  // namespace eqgnn
