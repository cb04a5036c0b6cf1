#include "eqgnn/equilibrium.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <chrono>
#include <deque>
#include <cmath>
#include <random>

#include "eqgnn/errors.hpp"

namespace eqgnn {

using ad::Tensor;
using ad::Var;
using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

const char* solver_name(SolverMethod m) {
  switch (m) {
    case SolverMethod::Picard: return "picard";
    case SolverMethod::Anderson: return "anderson";
    case SolverMethod::Broyden: return "broyden";
  }
  return "?";
}

const char* status_name(SolveStatus s) {
  switch (s) {
    case SolveStatus::Converged: return "converged";
    case SolveStatus::MaxIterations: return "max_iterations";
    case SolveStatus::Diverged: return "diverged";
  }
  return "?";
}

SolverMethod parse_solver(const std::string& name) {
  if (name == "picard" || name == "forward") return SolverMethod::Picard;
  if (name == "anderson") return SolverMethod::Anderson;
  if (name == "broyden") return SolverMethod::Broyden;
  throw InvalidArgument("unknown solver '" + name + "' (expected picard, anderson or broyden)");
}

void SolveConfig::validate() const {
  if (!(rel_tol > 0)) throw InvalidArgument("rel_tol must be > 0");
  if (max_iter < 1) throw InvalidArgument("max_iter must be >= 1");
  if (anderson_memory < 1) throw InvalidArgument("anderson_memory must be >= 1");
}

void require_converged(const SolveReport& r, const std::string& what) {
  if (!r.converged) {
    throw NotConverged(what + ": " + status_name(r.status) + " after " + std::to_string(r.iterations) +
                       " iterations, relative residual " + std::to_string(r.residual));
  }
}

namespace {

class Timer {
 public:
  double ms() const {
    return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

// The state keeps its tensor shape; solvers work on the flat data.
struct Shaped {
  std::size_t rows, cols;
  Tensor wrap(const Vec& v) const { return Tensor(rows, cols, std::vector<double>(v.data(), v.data() + v.size())); }
};

Vec flat(const Tensor& t) { return Eigen::Map<const Vec>(t.data().data(), static_cast<Eigen::Index>(t.size())); }

double rel(double num, const Vec& x) { return num / std::max(x.norm(), 1e-12); }

void record(SolveReport& r, const SolveConfig& cfg, double value) {
  r.residual = value;
  if (cfg.keep_trace) r.trace.push_back(value);
}

}  // namespace

SolveResult picard_solve(const FixedPointMap& map, const Tensor& x0, const SolveConfig& cfg) {
  cfg.validate();
  Timer timer;
  const Shaped shape{x0.rows(), x0.cols()};
  SolveResult res;
  Vec x = flat(x0);
  try {
    for (int k = 1; k <= cfg.max_iter; ++k) {
      Vec next = flat(map(shape.wrap(x)));
      const double r = rel((next - x).norm(), x);
      x.swap(next);
      res.report.iterations = k;
      record(res.report, cfg, r);
      if (!std::isfinite(r)) {
        res.report.status = SolveStatus::Diverged;
        break;
      }
      if (r <= cfg.rel_tol) {
        res.report.converged = true;
        res.report.status = SolveStatus::Converged;
        break;
      }
    }
  } catch (const NonFiniteValue&) {
    res.report.status = SolveStatus::Diverged;
  }
  res.x = shape.wrap(x);
  res.report.wall_ms = timer.ms();
  return res;
}

SolveResult anderson_solve(const FixedPointMap& map, const Tensor& x0, const SolveConfig& cfg) {
  cfg.validate();
  Timer timer;
  const Shaped shape{x0.rows(), x0.cols()};
  const auto m = static_cast<std::size_t>(cfg.anderson_memory);
  SolveResult res;
  Vec x = flat(x0), g_prev, f_prev;
  std::vector<Vec> dF, dG;  // most recent last
  Vec out = x;
  try {
    for (int k = 1; k <= cfg.max_iter; ++k) {
      const Vec g = flat(map(shape.wrap(x)));
      const Vec f = g - x;
      const double r = rel(f.norm(), x);
      res.report.iterations = k;
      record(res.report, cfg, r);
      out = g;
      if (!std::isfinite(r)) {
        res.report.status = SolveStatus::Diverged;
        break;
      }
      if (r <= cfg.rel_tol) {
        res.report.converged = true;
        res.report.status = SolveStatus::Converged;
        break;
      }
      if (k > 1) {
        dF.push_back(f - f_prev);
        dG.push_back(g - g_prev);
        if (dF.size() > m) {
          dF.erase(dF.begin());
          dG.erase(dG.begin());
        }
      }
      g_prev = g;
      f_prev = f;
      if (dF.empty()) {
        x = g;
        continue;
      }
      const auto cols = static_cast<Eigen::Index>(dF.size());
      Mat F(f.size(), cols), G(f.size(), cols);
      for (Eigen::Index c = 0; c < cols; ++c) {
        F.col(c) = dF[static_cast<std::size_t>(c)];
        G.col(c) = dG[static_cast<std::size_t>(c)];
      }
      Mat normal = F.transpose() * F;
      const double reg = 1e-10 * std::max(normal.diagonal().maxCoeff(), 1e-300);
      normal.diagonal().array() += reg;
      const Vec gamma = normal.ldlt().solve(F.transpose() * f);
      x = g - G * gamma;
    }
  } catch (const NonFiniteValue&) {
    res.report.status = SolveStatus::Diverged;
  }
  res.x = shape.wrap(out);
  res.report.wall_ms = timer.ms();
  return res;
}

SolveResult broyden_solve(const FixedPointMap& map, const Tensor& x0, const SolveConfig& cfg) {
  cfg.validate();
  Timer timer;
  const Shaped shape{x0.rows(), x0.cols()};
  SolveResult res;
  auto residual = [&](const Vec& v) { return Vec(flat(map(shape.wrap(v))) - v); };
  Vec x = flat(x0);
  std::vector<Vec> U, V;  // inverse Jacobian B = -I + sum u v^T
  auto apply_B = [&](const Vec& y) {
    Vec out = -y;
    for (std::size_t i = 0; i < U.size(); ++i) out += U[i] * V[i].dot(y);
    return out;
  };
  auto apply_Bt = [&](const Vec& y) {
    Vec out = -y;
    for (std::size_t i = 0; i < U.size(); ++i) out += V[i] * U[i].dot(y);
    return out;
  };
  try {
    Vec gx = residual(x);
    double gnorm = gx.norm();
    record(res.report, cfg, rel(gnorm, x));
    if (!std::isfinite(gnorm)) throw NonFiniteValue("broyden: non-finite initial residual");
    std::deque<double> recent{gnorm};
    if (res.report.residual <= cfg.rel_tol) {
      res.report.converged = true;
      res.report.status = SolveStatus::Converged;
    }
    int k = 0;
    while (!res.report.converged && k < cfg.max_iter) {
      ++k;
      const Vec dx = -apply_B(gx);
      double alpha = 1.0;
      Vec x_new, g_new;
      bool accepted = false;
      // Nonmonotone acceptance against the last few accepted residuals.
      const double ref = *std::max_element(recent.begin(), recent.end());
      for (int halving = 0; halving <= 8; ++halving) {
        x_new = x + alpha * dx;
        g_new = residual(x_new);
        if (g_new.norm() <= ref) {
          accepted = true;
          break;
        }
        alpha *= 0.5;
      }
      if (!accepted) {
        // No damped step helped; take the full quasi-Newton step so the
        // secant model still learns from it.
        x_new = x + dx;
        g_new = residual(x_new);
      }
      const Vec s = x_new - x;
      const Vec y = g_new - gx;
      const Vec By = apply_B(y);
      const double denom = s.dot(By);
      if (std::abs(denom) > 1e-300) {
        if (static_cast<int>(U.size()) >= cfg.max_iter) {
          U.clear();
          V.clear();
        }
        Vec v = apply_Bt(s);
        U.push_back((s - By) / denom);
        V.push_back(std::move(v));
      }
      x.swap(x_new);
      gx.swap(g_new);
      gnorm = gx.norm();
      recent.push_back(gnorm);
      if (recent.size() > 5) recent.pop_front();
      res.report.iterations = k;
      record(res.report, cfg, rel(gnorm, x));
      if (res.report.residual <= cfg.rel_tol) {
        res.report.converged = true;
        res.report.status = SolveStatus::Converged;
      }
    }
  } catch (const NonFiniteValue&) {
    res.report.status = SolveStatus::Diverged;
  }
  res.x = shape.wrap(x);
  res.report.wall_ms = timer.ms();
  return res;
}

SolveResult fixed_point_solve(const FixedPointMap& map, const Tensor& x0, const SolveConfig& cfg) {
  switch (cfg.method) {
    case SolverMethod::Picard: return picard_solve(map, x0, cfg);
    case SolverMethod::Anderson: return anderson_solve(map, x0, cfg);
    case SolverMethod::Broyden: return broyden_solve(map, x0, cfg);
  }
  throw InvalidArgument("unknown solver");
}

// ---- implicit backward -----------------------------------------------------------

AdjointResult solve_adjoint(const Var& out, const Var& Hstar, const Tensor& g_H, const SolveConfig& cfg) {
  if (!g_H.same_shape(Hstar.value()) || !out.value().same_shape(Hstar.value())) {
    throw ShapeMismatch("solve_adjoint: shapes of output, state and upstream gradient differ");
  }
  const Var gH = ad::constant(g_H);
  FixedPointMap step = [&](const Tensor& x) {
    const Tensor vj = ad::vjp(out, Hstar, ad::constant(x)).value();
    Tensor r(x.rows(), x.cols());
    for (std::size_t i = 0; i < r.size(); ++i) r[i] = vj[i] + g_H[i];
    return r;
  };
  SolveResult s = fixed_point_solve(step, g_H, cfg);
  return {std::move(s.x), std::move(s.report)};
}

ImplicitGrad implicit_vjp(const Var& out, const Var& Hstar, const Tensor& g_H, const std::vector<Var>& params,
                          const SolveConfig& cfg) {
  ImplicitGrad ig;
  ig.adjoint = solve_adjoint(out, Hstar, g_H, cfg);
  const auto grads = ad::grad({out}, {ad::constant(ig.adjoint.x)}, params);
  ig.grads.reserve(grads.size());
  for (const auto& g : grads) ig.grads.push_back(g.value());
  return ig;
}

Var hutchinson_frob(const Var& out, const Var& Hstar, int n_samples, std::uint64_t seed) {
  if (n_samples < 1) throw InvalidArgument("hutchinson_frob needs at least one sample");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Var total;
  for (int s = 0; s < n_samples; ++s) {
    Tensor eps(out.rows(), out.cols());
    for (double& v : eps.data()) v = normal(rng);
    const Var vj = ad::vjp(out, Hstar, ad::constant(std::move(eps)), ad::grad_enabled());
    const Var sq = ad::reduce_sum(ad::square(vj));
    total = total.valid() ? ad::add(total, sq) : sq;
  }
  return ad::affine(total, 1.0 / n_samples, 0.0);
}

double power_iteration_radius(const Var& out, const Var& Hstar, int iters, std::uint64_t seed) {
  ad::NoGradGuard guard;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Tensor v(out.rows(), out.cols());
  for (double& x : v.data()) x = normal(rng);
  auto step = [&](const Tensor& t) { return ad::vjp(out, Hstar, ad::constant(t)).value(); };
  auto normalized = [](Tensor t) {
    const double n = t.norm();
    if (n == 0.0) return t;
    for (double& x : t.data()) x /= n;
    return t;
  };
  v = normalized(v);
  for (int k = 0; k < iters; ++k) {
    Tensor w = step(v);
    if (w.norm() == 0.0) return 0.0;
    v = normalized(std::move(w));
  }
  const Tensor two = step(step(v));
  return std::sqrt(two.norm());
}

}  // namespace eqgnn
