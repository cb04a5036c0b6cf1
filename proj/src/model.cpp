#include "eqgnn/model.hpp"

#include "eqgnn/errors.hpp"
#include "eqgnn/fem.hpp"

namespace eqgnn {

using ad::Tensor;
using ad::Var;

namespace {

Tensor column(const std::vector<double>& v) { return Tensor(v.size(), 1, v); }

Var mse(const Var& a, const Var& b) { return ad::reduce_mean(ad::square(ad::sub(a, b))); }

Var one() { return ad::constant(Tensor::scalar(1.0)); }

// Penalty per node, so its scale does not grow with the graph.
Var jacobian_term(const Var& out, const Var& Hs, int samples, std::uint64_t seed) {
  const double nodes = static_cast<double>(Hs.value().rows());
  return ad::affine(hutchinson_frob(out, Hs, samples, seed), 1.0 / nodes, 0.0);
}

}  // namespace

FixedPointMap processor_map(const BoundParams& P, const GraphTensors& G, const Tensor& frozen) {
  const Var F = ad::constant(frozen);
  return [P, &G, F](const Tensor& x) {
    ad::NoGradGuard guard;
    return h_theta_apply(P, ad::constant(x), G, F).value();
  };
}

ForwardResult forward_pass(const ModelParams& params, const GraphProblem& problem, const GraphTensors& G,
                           const SolveConfig& cfg, std::span<const double> u_init) {
  if (!u_init.empty() && u_init.size() != problem.n()) throw DimensionMismatch("forward_pass: initial field length");
  ad::NoGradGuard guard;
  const BoundParams P = bind(params, false);
  const std::vector<double> u = u_init.empty() ? problem.u0 : std::vector<double>(u_init.begin(), u_init.end());
  ForwardResult r;
  r.H0 = encode(P, ad::constant(column(u))).value();
  SolveResult s = fixed_point_solve(processor_map(P, G, r.H0), r.H0, cfg);
  r.H_star = std::move(s.x);
  r.report = std::move(s.report);
  r.H_hat = assemble_final(ad::constant(r.H0), ad::constant(r.H_star), G).value();
  r.U_hat = decode(P, ad::constant(r.H_hat)).value().vec();
  return r;
}

ForwardResult forward_pass(const ModelParams& params, const GraphProblem& problem, const SolveConfig& cfg) {
  const GraphTensors G = make_graph_tensors(problem);
  return forward_pass(params, problem, G, cfg);
}

Var residual_loss_var(const Var& U, const LinearSystem& system) {
  if (U.rows() != system.n || U.cols() != 1) throw DimensionMismatch("residual_loss_var: U must be N x 1");
  std::vector<std::size_t> rows(system.vals.size());
  for (std::size_t i = 0; i < system.n; ++i)
    for (std::size_t k = system.rowptr[i]; k < system.rowptr[i + 1]; ++k) rows[k] = i;
  const auto row_ids = std::make_shared<const std::vector<std::size_t>>(std::move(rows));
  const auto col_ids = std::make_shared<const std::vector<std::size_t>>(system.cols);
  const Var vals = ad::constant(column(system.vals));
  const Var AU = ad::segment_sum(ad::mul(ad::gather_rows(U, col_ids), vals), row_ids, system.n);
  return mse(AU, ad::constant(column(system.B)));
}

double combine(const LossComponents& c, const LossWeights& w) {
  return c.residual + w.lambda * c.supervised + c.ae_latent + c.ae_field + w.beta_reg * c.jacobian;
}

LossComponents evaluate_loss(const ModelParams& params, const GraphProblem& problem, const GraphTensors& G,
                             const ForwardResult& fwd, const LossWeights& w, std::uint64_t probe_seed) {
  const BoundParams P = bind(params, false);
  LossComponents c;
  {
    ad::NoGradGuard guard;
    const Var U = ad::constant(column(fwd.U_hat));
    c.residual = residual_loss(fwd.U_hat, problem.system);
    c.supervised = mse(U, ad::constant(column(problem.u_ex))).value().item();
    const Var E = encode(P, U);
    c.ae_latent = mse(E, ad::constant(fwd.H_hat)).value().item();
    c.ae_field = mse(decode(P, E), U).value().item();
  }
  const Var Hs = ad::parameter(fwd.H_star);
  const Var out = h_theta_apply(P, Hs, G, ad::constant(fwd.H0));
  c.jacobian = jacobian_term(out, Hs, w.hutchinson_samples, probe_seed).value().item();
  c.total = combine(c, w);
  return c;
}

AutoencoderTerms autoencoder_gradients(const ModelParams& params, const Tensor& U_hat, const Tensor& H_hat) {
  const BoundParams P = bind(params, true);
  const Var U = ad::constant(U_hat);
  const Var E = encode(P, U);
  const Var latent = mse(E, ad::constant(H_hat));
  const Var field = mse(decode(P, E), U);
  const auto g = ad::grad({ad::add(latent, field)}, {one()}, P.vars);
  AutoencoderTerms r;
  r.latent = latent.value().item();
  r.field = field.value().item();
  for (const auto& v : g) r.grads.push_back(v.value());
  return r;
}

GradientResult loss_and_gradients(const ModelParams& params, const GraphProblem& problem, const GraphTensors& G,
                                  const LossWeights& w, const SolveConfig& forward_cfg,
                                  const SolveConfig& backward_cfg, std::uint64_t probe_seed) {
  GradientResult out;
  const BoundParams P = bind(params, true);
  const Var H0 = encode(P, ad::constant(column(problem.u0)));
  out.forward.H0 = H0.value();
  {
    const BoundParams Pc = bind(params, false);
    SolveResult s = fixed_point_solve(processor_map(Pc, G, H0.value()), H0.value(), forward_cfg);
    out.forward.H_star = std::move(s.x);
    out.forward.report = std::move(s.report);
  }
  if (!out.forward.report.converged) return out;

  const Var Hs = ad::parameter(out.forward.H_star);
  const Var step = h_theta_apply(P, Hs, G, H0);
  const Var Hhat = assemble_final(H0, Hs, G);
  const Var U = decode(P, Hhat);
  out.forward.H_hat = Hhat.value();
  out.forward.U_hat = U.value().vec();

  // Terms that see the equilibrium: direct part plus the implicit adjoint.
  const Var res = residual_loss_var(U, problem.system);
  const Var sup = mse(U, ad::constant(column(problem.u_ex)));
  std::vector<Var> wrt = P.vars;
  wrt.push_back(Hs);
  const auto direct = ad::grad({ad::add(res, ad::affine(sup, w.lambda, 0.0))}, {one()}, wrt);
  const ImplicitGrad ig = implicit_vjp(step, Hs, direct.back().value(), P.vars, backward_cfg);
  out.adjoint = ig.adjoint.report;
  if (!out.adjoint.converged) return out;

  const AutoencoderTerms ae = autoencoder_gradients(params, U.value(), Hhat.value());

  const Var jac = jacobian_term(step, Hs, w.hutchinson_samples, probe_seed);
  std::vector<Var> reg;
  if (w.beta_reg > 0) reg = ad::grad({ad::affine(jac, w.beta_reg, 0.0)}, {one()}, P.vars);

  out.grads.resize(P.vars.size());
  for (std::size_t k = 0; k < P.vars.size(); ++k) {
    Tensor g = direct[k].value();
    const Tensor& a = ig.grads[k];
    const Tensor& b = ae.grads[k];
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += a[i] + b[i];
    if (!reg.empty()) {
      const Tensor& r = reg[k].value();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += r[i];
    }
    out.grads[k] = std::move(g);
  }
  out.loss.residual = res.value().item();
  out.loss.supervised = sup.value().item();
  out.loss.ae_latent = ae.latent;
  out.loss.ae_field = ae.field;
  out.loss.jacobian = jac.value().item();
  out.loss.total = combine(out.loss, w);
  out.ok = true;
  return out;
}

double spectral_radius_at(const ModelParams& params, const GraphTensors& G, const ForwardResult& fwd, int iters,
                          std::uint64_t seed) {
  const BoundParams P = bind(params, false);
  const Var Hs = ad::parameter(fwd.H_star);
  const Var out = h_theta_apply(P, Hs, G, ad::constant(fwd.H0));
  return power_iteration_radius(out, Hs, iters, seed);
}

}  // namespace eqgnn
