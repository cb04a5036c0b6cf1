#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "eqgnn/model.hpp"
#include "json.hpp"

namespace eqgnn {

struct TrainConfig {
  LossWeights weights;
  double lr_autoencoder = 0.01;
  double lr_main = 0.01;
  double clip_norm = 1e-2;
  int epochs = 60;
  std::size_t batch_size = 10;
  double plateau_factor = 0.5;
  int plateau_patience = 10;
  SolveConfig forward;   // rel_tol 1e-5
  SolveConfig backward;  // rel_tol 1e-8
  ModelConfig model{8, 10};
  std::uint64_t seed = 0;
  int jobs = 1;
  int rho_iters = 50;      // power iterations for the validation log
  int abort_streak = 5;    // consecutive batches with >50% failed solves

  TrainConfig();
  void validate() const;
};

nlohmann::json train_config_to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct AdamState {
  std::vector<ad::Tensor> m, v;
  std::int64_t step = 0;
};

AdamState adam_init(const ModelParams& params);
/// One bias-corrected Adam step (0.9, 0.999, 1e-8). Encoder and decoder
/// tensors use `lr_ae`, the rest `lr_main`.
void adam_step(ModelParams& params, const std::vector<ad::Tensor>& grads, AdamState& state, double lr_main,
               double lr_ae);
/// Rescales to global L2 norm `clip_norm` when larger; returns the norm before clipping.
double clip_gradients(std::vector<ad::Tensor>& grads, double clip_norm);

/// Reduce-on-plateau on a minimized metric (relative threshold 1e-4).
struct PlateauScheduler {
  double factor = 0.5;
  int patience = 10;
  double best = 0.0;
  bool has_best = false;
  int bad_epochs = 0;

  /// Returns true when the learning rates should be scaled by `factor`.
  bool observe(double value);
};

struct EpochRow {
  int epoch = 0;
  std::string split;
  double residual = 0.0;
  double mse_lu = 0.0;
  double pearson = 0.0;
  double rho_estimate = 0.0;  // NaN when not measured
  double lr_main = 0.0;
  double lr_ae = 0.0;
  std::size_t skipped = 0;
};

std::string epoch_csv_header();
std::string epoch_csv_row(const EpochRow& r);

struct Checkpoint {
  ModelParams params;
  NormStats stats;
  TrainConfig config;
  int epoch = 0;  // last completed epoch, 0 before training
  AdamState adam;
  PlateauScheduler scheduler;
  double lr_main = 0.0;
  double lr_ae = 0.0;
  double best_val = 0.0;
  int best_epoch = 0;
  int fail_streak = 0;  // consecutive batches with mostly failed solves
  std::vector<EpochRow> history;
};

nlohmann::json checkpoint_to_json(const Checkpoint& c);
Checkpoint checkpoint_from_json(const nlohmann::json& j);
void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Normalized splits with their graph tensors, built once.
struct PreparedSplit {
  std::vector<GraphProblem> problems;
  std::vector<GraphTensors> tensors;
};
PreparedSplit prepare_split(const std::vector<GraphProblem>& raw, const NormStats& stats);

struct TrainOutputs {
  std::filesystem::path dir;  // empty: keep everything in memory
  std::function<void(const EpochRow&)> on_row;
};

struct TrainResult {
  Checkpoint last;
  Checkpoint best;
};

/// Epoch-0 state: seeded parameters, zero optimizer moments, configured rates.
Checkpoint fresh_checkpoint(const TrainConfig& cfg);

/// Epoch loop over shuffled batches. Writes last.json, best.json and
/// metrics.csv under `out.dir` when set. `resume` continues a run.
TrainResult train(const Dataset& data, const TrainConfig& cfg, const TrainOutputs& out = {},
                  std::optional<Checkpoint> resume = std::nullopt);

/// Validation pass used by the training log: mean residual, MSE, Pearson and
/// spectral radius over converged graphs.
EpochRow validate_split(const ModelParams& params, const PreparedSplit& split, const TrainConfig& cfg, int epoch);

/// Pearson correlation; NaN when either side has zero variance.
double pearson(std::span<const double> a, std::span<const double> b);

}  // namespace eqgnn
