#pragma once

#include <memory>
#include <vector>

#include "eqgnn/blocks.hpp"
#include "eqgnn/dataset.hpp"

namespace eqgnn {

using Index = std::shared_ptr<const std::vector<std::size_t>>;

/// Model-side view of a (normalized) GraphProblem: index sets and constant
/// feature tensors, built once per problem.
struct GraphTensors {
  std::size_t n = 0;
  Index interior, neumann, dirichlet;  // node ids by type, ascending
  // Edge subsets (sorted by (src, dst)) with the endpoint lists.
  Index out_src, out_dst;      // edges leaving an Interior node
  Index in_src, in_dst;        // edges entering an Interior node
  Index nin_src, nin_dst;      // edges entering a Neumann node
  ad::Var out_dist, in_dist, nin_dist;  // E x 1
  ad::Var t_interior, b_interior;       // rows of t and b at interior nodes
  ad::Var t_neumann, b_neumann, n_neumann;
};

GraphTensors make_graph_tensors(const GraphProblem& problem);

struct InteriorMessages {
  ad::Var phi_out, phi_in, phi_loop;  // one row per interior node
};
struct NeumannMessages {
  ad::Var phi_in, phi_loop;  // one row per Neumann node
};

/// Sums run over directed neighbor sets in ascending node order.
InteriorMessages interior_messages(const BoundParams& P, const ad::Var& H, const GraphTensors& G);
NeumannMessages neumann_messages(const BoundParams& P, const ad::Var& H, const GraphTensors& G);

/// One processor step. Interior rows: LN(gated update); Neumann rows:
/// LN(Neumann update); Dirichlet rows are copied from `frozen`, so the map
/// has zero Jacobian rows there.
ad::Var h_theta_apply(const BoundParams& P, const ad::Var& H, const GraphTensors& G, const ad::Var& frozen);
/// Convenience form with frozen rows taken from H's value.
ad::Var h_theta_apply(const BoundParams& P, const ad::Var& H, const GraphTensors& G);

/// Dirichlet rows from H0, all other rows from Hstar.
ad::Var assemble_final(const ad::Var& H0, const ad::Var& Hstar, const GraphTensors& G);

/// Rows of `rows` (one per id in `ids`) scattered into an n-row zero matrix.
ad::Var scatter_rows(const ad::Var& rows, const Index& ids, std::size_t n);

}  // namespace eqgnn
