#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "eqgnn/mesh.hpp"

namespace eqgnn {

/// f(x,y) = r1 (x-1)^2 + r2 y^2 + r3
struct SourceTerm {
  std::array<double, 3> r{};
  double operator()(const Point2& p) const {
    return r[0] * (p.x - 1.0) * (p.x - 1.0) + r[1] * p.y * p.y + r[2];
  }
};

/// g(x,y) = r4 x^2 + r5 y^2 + r6 xy + r7 x + r8 y + r9
struct BoundaryData {
  std::array<double, 6> r{};
  double operator()(const Point2& p) const {
    return r[0] * p.x * p.x + r[1] * p.y * p.y + r[2] * p.x * p.y + r[3] * p.x + r[4] * p.y + r[5];
  }
};

/// Throws InvalidArgument unless every coefficient lies in [-10, 10].
void validate_coeffs(const SourceTerm& f, const BoundaryData& g);

/// Square sparse matrix in compressed-row layout plus right-hand side.
struct LinearSystem {
  std::size_t n = 0;
  std::vector<double> vals;
  std::vector<std::size_t> cols;
  std::vector<std::size_t> rowptr;  // n + 1 entries
  std::vector<double> B;

  double at(std::size_t i, std::size_t j) const;
  /// y = A x
  std::vector<double> multiply(std::span<const double> x) const;
};

using ElementMatrix = std::array<std::array<double, 3>, 3>;

/// P1 stiffness of one triangle; throws SingularElementError on zero area.
ElementMatrix element_stiffness(const Point2& a, const Point2& b, const Point2& c);
/// Centroid-rule load: f(centroid) * area / 3 at each vertex.
std::array<double, 3> element_load(const Point2& a, const Point2& b, const Point2& c,
                                   double f_centroid);

/// Assembles -lap u = f with homogeneous Neumann as the natural condition and
/// Dirichlet rows replaced by identity rows with B_i = g(x_i).
LinearSystem assemble(const TriMesh& mesh, const SourceTerm& f, const BoundaryData& g);

/// Generic variant used for manufactured solutions with arbitrary data.
template <class F, class G>
LinearSystem assemble_with(const TriMesh& mesh, const F& f, const G& g);

/// Dense LU with partial pivoting. Throws SingularMatrixError.
std::vector<double> lu_solve(const LinearSystem& system);

/// (1/N) sum_i (-b_i + sum_j a_ij u_j)^2
double residual_loss(std::span<const double> U, const LinearSystem& system);

// ---- implementation of the template -------------------------------------

namespace detail {
LinearSystem assemble_impl(const TriMesh& mesh, const std::vector<double>& f_centroid,
                           const std::vector<double>& g_nodes);
}

template <class F, class G>
LinearSystem assemble_with(const TriMesh& mesh, const F& f, const G& g) {
  std::vector<double> fc;
  fc.reserve(mesh.triangles.size());
  for (const auto& t : mesh.triangles) {
    const Point2 &a = mesh.nodes[t[0]], &b = mesh.nodes[t[1]], &c = mesh.nodes[t[2]];
    fc.push_back(f(Point2{(a.x + b.x + c.x) / 3.0, (a.y + b.y + c.y) / 3.0}));
  }
  std::vector<double> gn;
  gn.reserve(mesh.nodes.size());
  for (const auto& p : mesh.nodes) gn.push_back(g(p));
  return detail::assemble_impl(mesh, fc, gn);
}

}  // namespace eqgnn
