#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "eqgnn/autodiff.hpp"

namespace eqgnn {

enum class SolverMethod { Picard, Anderson, Broyden };

const char* solver_name(SolverMethod m);
/// Accepts "picard" (alias "forward"), "anderson" or "broyden".
SolverMethod parse_solver(const std::string& name);

struct SolveConfig {
  SolverMethod method = SolverMethod::Broyden;
  double rel_tol = 1e-5;
  int max_iter = 500;
  int anderson_memory = 5;
  bool keep_trace = false;

  void validate() const;
};

enum class SolveStatus { Converged, MaxIterations, Diverged };
const char* status_name(SolveStatus s);

struct SolveReport {
  int iterations = 0;
  double residual = 0.0;  // final relative residual
  bool converged = false;
  SolveStatus status = SolveStatus::MaxIterations;
  double wall_ms = 0.0;
  std::vector<double> trace;  // relative residual per iteration when requested
};

using FixedPointMap = std::function<ad::Tensor(const ad::Tensor&)>;

struct SolveResult {
  ad::Tensor x;
  SolveReport report;
};

/// x <- map(x) until |x_{k+1} - x_k| / max(|x_k|, 1e-12) <= rel_tol.
SolveResult picard_solve(const FixedPointMap& map, const ad::Tensor& x0, const SolveConfig& cfg);
/// Least-squares Anderson mixing over the last `anderson_memory` residual
/// differences (mixing 1, Tikhonov 1e-10 relative). Stops on the same
/// relative update norm |map(x_k) - x_k| / |x_k|.
SolveResult anderson_solve(const FixedPointMap& map, const ad::Tensor& x0, const SolveConfig& cfg);
/// Good Broyden on g(x) = map(x) - x with the inverse Jacobian kept as
/// -I plus rank-one terms. Steps are halved (up to 8 times) while the
/// residual exceeds the largest of the last five accepted residuals; when
/// no halving helps, the full step is taken. Stops on |g(x_k)| / max(|x_k|, 1e-12).
SolveResult broyden_solve(const FixedPointMap& map, const ad::Tensor& x0, const SolveConfig& cfg);
SolveResult fixed_point_solve(const FixedPointMap& map, const ad::Tensor& x0, const SolveConfig& cfg);

/// Throws NotConverged carrying the report summary when the flag is false.
void require_converged(const SolveReport& r, const std::string& what);

/// Adjoint of the equilibrium: solves x = J_h^T x + g_H for the traced map
/// `out = h(Hstar)` (Hstar a trace leaf) using VJPs only.
struct AdjointResult {
  ad::Tensor x;
  SolveReport report;
};
AdjointResult solve_adjoint(const ad::Var& out, const ad::Var& Hstar, const ad::Tensor& g_H, const SolveConfig& cfg);

/// dL/dtheta = x^T dh/dtheta after the adjoint solve. Returns one gradient per
/// entry of `params`.
struct ImplicitGrad {
  std::vector<ad::Tensor> grads;
  AdjointResult adjoint;
};
ImplicitGrad implicit_vjp(const ad::Var& out, const ad::Var& Hstar, const ad::Tensor& g_H,
                          const std::vector<ad::Var>& params, const SolveConfig& cfg);

/// Mean over `n_samples` standard-normal probes of |eps^T J_h(H*)|^2, with
/// the Jacobian taken w.r.t. Hstar. Differentiable w.r.t. parameters.
ad::Var hutchinson_frob(const ad::Var& out, const ad::Var& Hstar, int n_samples, std::uint64_t seed);

/// Spectral radius estimate of J_h at the traced point via power iteration on
/// J^T (VJPs). Returns sqrt(|J^2 v| / |v|) for the final iterate, which is
/// robust to +/- eigenvalue pairs and averages two-step growth for complex
/// pairs. Zero when the Jacobian vanishes.
double power_iteration_radius(const ad::Var& out, const ad::Var& Hstar, int iters = 100, std::uint64_t seed = 0);

}  // namespace eqgnn
