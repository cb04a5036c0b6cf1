#include "eqgnn/fem.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "eqgnn/errors.hpp"

namespace eqgnn {

void validate_coeffs(const SourceTerm& f, const BoundaryData& g) {
  for (double r : f.r)
    if (!(r >= -10.0 && r <= 10.0)) throw InvalidArgument("source coefficient outside [-10, 10]");
  for (double r : g.r)
    if (!(r >= -10.0 && r <= 10.0)) throw InvalidArgument("boundary coefficient outside [-10, 10]");
}

double LinearSystem::at(std::size_t i, std::size_t j) const {
  for (std::size_t k = rowptr[i]; k < rowptr[i + 1]; ++k)
    if (cols[k] == j) return vals[k];
  return 0.0;
}

std::vector<double> LinearSystem::multiply(std::span<const double> x) const {
  if (x.size() != n) throw DimensionMismatch("multiply: vector length differs from n");
  std::vector<double> y(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t k = rowptr[i]; k < rowptr[i + 1]; ++k) s += vals[k] * x[cols[k]];
    y[i] = s;
  }
  return y;
}

ElementMatrix element_stiffness(const Point2& a, const Point2& b, const Point2& c) {
  const double area = triangle_area(a, b, c);
  if (!(std::abs(area) > 0.0)) throw SingularElementError("zero-area triangle");
  // Gradients of the barycentric basis functions, scaled by 2*area.
  const std::array<double, 3> gx{b.y - c.y, c.y - a.y, a.y - b.y};
  const std::array<double, 3> gy{c.x - b.x, a.x - c.x, b.x - a.x};
  ElementMatrix k{};
  const double scale = 1.0 / (4.0 * std::abs(area));
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) k[i][j] = (gx[i] * gx[j] + gy[i] * gy[j]) * scale;
  return k;
}

std::array<double, 3> element_load(const Point2& a, const Point2& b, const Point2& c,
                                   double f_centroid) {
  const double w = f_centroid * std::abs(triangle_area(a, b, c)) / 3.0;
  return {w, w, w};
}

namespace detail {

LinearSystem assemble_impl(const TriMesh& mesh, const std::vector<double>& f_centroid,
                           const std::vector<double>& g_nodes) {
  const std::size_t n = mesh.nodes.size();
  if (mesh.node_type.size() != n) throw DimensionMismatch("node_type length differs from node count");
  std::vector<std::map<std::size_t, double>> rows(n);
  std::vector<double> B(n, 0.0);
  for (std::size_t e = 0; e < mesh.triangles.size(); ++e) {
    const auto& t = mesh.triangles[e];
    const Point2 &a = mesh.nodes[t[0]], &b = mesh.nodes[t[1]], &c = mesh.nodes[t[2]];
    const ElementMatrix k = element_stiffness(a, b, c);
    const auto load = element_load(a, b, c, f_centroid[e]);
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) rows[t[i]][t[j]] += k[i][j];
      B[t[i]] += load[i];
    }
  }
  bool any_dirichlet = false;
  for (std::size_t i = 0; i < n; ++i) {
    if (mesh.node_type[i] != NodeType::Dirichlet) continue;
    any_dirichlet = true;
    rows[i].clear();
    rows[i][i] = 1.0;
    B[i] = g_nodes[i];
  }
  if (!any_dirichlet) throw NoDirichletError("assemble: no Dirichlet node");

  LinearSystem sys;
  sys.n = n;
  sys.B = std::move(B);
  sys.rowptr.reserve(n + 1);
  sys.rowptr.push_back(0);
  for (const auto& row : rows) {
    for (const auto& [j, v] : row) {
      sys.cols.push_back(j);
      sys.vals.push_back(v);
    }
    sys.rowptr.push_back(sys.cols.size());
  }
  return sys;
}

}  // namespace detail

LinearSystem assemble(const TriMesh& mesh, const SourceTerm& f, const BoundaryData& g) {
  validate_coeffs(f, g);
  return assemble_with(mesh, f, g);
}

std::vector<double> lu_solve(const LinearSystem& system) {
  const std::size_t n = system.n;
  if (system.B.size() != n || system.rowptr.size() != n + 1) {
    throw DimensionMismatch("lu_solve: inconsistent system sizes");
  }
  std::vector<double> a(n * n, 0.0);
  double scale = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = system.rowptr[i]; k < system.rowptr[i + 1]; ++k) {
      a[i * n + system.cols[k]] = system.vals[k];
      scale = std::max(scale, std::abs(system.vals[k]));
    }
  }
  std::vector<double> x = system.B;
  const double tiny = 1e-14 * std::max(scale, 1e-300);
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(a[r * n + col]) > std::abs(a[piv * n + col])) piv = r;
    if (std::abs(a[piv * n + col]) <= tiny) throw SingularMatrixError("pivot underflow at column " + std::to_string(col));
    if (piv != col) {
      std::swap_ranges(a.begin() + static_cast<long>(col * n), a.begin() + static_cast<long>((col + 1) * n),
                       a.begin() + static_cast<long>(piv * n));
      std::swap(x[col], x[piv]);
    }
    const double d = a[col * n + col];
    for (std::size_t r = col + 1; r < n; ++r) {
      const double m = a[r * n + col] / d;
      if (m == 0.0) continue;
      a[r * n + col] = 0.0;
      for (std::size_t c = col + 1; c < n; ++c) a[r * n + c] -= m * a[col * n + c];
      x[r] -= m * x[col];
    }
  }
  for (std::size_t i = n; i-- > 0;) {
    double s = x[i];
    for (std::size_t c = i + 1; c < n; ++c) s -= a[i * n + c] * x[c];
    x[i] = s / a[i * n + i];
  }
  return x;
}

double residual_loss(std::span<const double> U, const LinearSystem& system) {
  if (U.size() != system.n) throw DimensionMismatch("residual_loss: U length differs from N");
  if (system.n == 0) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < system.n; ++i) {
    double r = -system.B[i];
    for (std::size_t k = system.rowptr[i]; k < system.rowptr[i + 1]; ++k) r += system.vals[k] * U[system.cols[k]];
    total += r * r;
  }
  return total / static_cast<double>(system.n);
}

}  // namespace eqgnn
