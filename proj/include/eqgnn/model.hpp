#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "eqgnn/blocks.hpp"
#include "eqgnn/dataset.hpp"
#include "eqgnn/equilibrium.hpp"
#include "eqgnn/processor.hpp"

namespace eqgnn {

struct ForwardResult {
  ad::Tensor H0;      // encoded initial field
  ad::Tensor H_star;  // fixed point of the processor
  ad::Tensor H_hat;   // Dirichlet rows from H0, the rest from H_star
  std::vector<double> U_hat;
  SolveReport report;
};

/// encode -> fixed point -> assemble -> decode, without tracing. `u_init`
/// replaces the problem's default initial field when non-empty.
ForwardResult forward_pass(const ModelParams& params, const GraphProblem& problem, const GraphTensors& G,
                           const SolveConfig& cfg, std::span<const double> u_init = {});
ForwardResult forward_pass(const ModelParams& params, const GraphProblem& problem, const SolveConfig& cfg);

/// The fixed-point map H -> h(H) with Dirichlet rows frozen at `frozen`.
FixedPointMap processor_map(const BoundParams& P, const GraphTensors& G, const ad::Tensor& frozen);

/// mean_i (A U - B)_i^2 as a traced scalar; U is N x 1.
ad::Var residual_loss_var(const ad::Var& U, const LinearSystem& system);

struct LossWeights {
  double lambda = 0.1;    // supervised term
  double beta_reg = 1.0;  // Jacobian penalty
  int hutchinson_samples = 1;
};

struct LossComponents {
  double residual = 0.0;
  double supervised = 0.0;  // MSE(U_hat - u_ex), before weighting
  double ae_latent = 0.0;   // MSE(E(U_hat) - H_hat)
  double ae_field = 0.0;    // MSE(D(E(U_hat)) - U_hat)
  double jacobian = 0.0;    // Hutchinson estimate per node, before weighting
  double total = 0.0;
};

/// Total = residual + lambda*supervised + ae_latent + ae_field + beta*jacobian.
double combine(const LossComponents& c, const LossWeights& w);

/// Loss of a finished forward pass, without gradients. The Jacobian term uses
/// `probe_seed` for its Hutchinson probes.
LossComponents evaluate_loss(const ModelParams& params, const GraphProblem& problem, const GraphTensors& G,
                             const ForwardResult& fwd, const LossWeights& w, std::uint64_t probe_seed);

/// The two autoencoder terms with U_hat and H_hat held constant, and their
/// gradients (nonzero only on encoder and decoder tensors).
struct AutoencoderTerms {
  double latent = 0.0;
  double field = 0.0;
  std::vector<ad::Tensor> grads;
};
AutoencoderTerms autoencoder_gradients(const ModelParams& params, const ad::Tensor& U_hat, const ad::Tensor& H_hat);

struct GradientResult {
  bool ok = false;  // false when the forward or adjoint solve did not converge
  LossComponents loss;
  std::vector<ad::Tensor> grads;  // one per parameter tensor
  ForwardResult forward;
  SolveReport adjoint;
};

/// Full per-graph training gradient. The residual and supervised terms reach
/// all blocks (the processor through the implicit adjoint); the autoencoder
/// terms reach only the encoder and decoder; the Jacobian penalty is taken at
/// a fixed H*.
GradientResult loss_and_gradients(const ModelParams& params, const GraphProblem& problem, const GraphTensors& G,
                                  const LossWeights& w, const SolveConfig& forward_cfg,
                                  const SolveConfig& backward_cfg, std::uint64_t probe_seed);

/// Spectral radius of the processor Jacobian at the fixed point of `fwd`.
double spectral_radius_at(const ModelParams& params, const GraphTensors& G, const ForwardResult& fwd, int iters,
                          std::uint64_t seed);

}  // namespace eqgnn
