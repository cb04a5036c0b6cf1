#include "eqgnn/processor.hpp"

#include "eqgnn/errors.hpp"

namespace eqgnn {

using ad::Tensor;
using ad::Var;

namespace {

Index make_index(std::vector<std::size_t> v) { return std::make_shared<const std::vector<std::size_t>>(std::move(v)); }

Var rows_of(const std::vector<double>& data, std::size_t width, const std::vector<std::size_t>& ids) {
  Tensor t(ids.size(), width);
  for (std::size_t r = 0; r < ids.size(); ++r)
    for (std::size_t c = 0; c < width; ++c) t(r, c) = data[ids[r] * width + c];
  return ad::constant(std::move(t));
}

Var zeros(std::size_t rows, std::size_t cols) { return ad::constant(Tensor(rows, cols, 0.0)); }

}  // namespace

GraphTensors make_graph_tensors(const GraphProblem& p) {
  if (!p.normalized) throw InvalidArgument("model input must be a normalized problem");
  GraphTensors G;
  G.n = p.n();
  std::vector<std::size_t> in, ne, di;
  for (std::size_t i = 0; i < G.n; ++i) {
    switch (p.type(i)) {
      case NodeType::Interior: in.push_back(i); break;
      case NodeType::Neumann: ne.push_back(i); break;
      case NodeType::Dirichlet: di.push_back(i); break;
    }
  }
  std::vector<std::size_t> os, od, is, id, ns, nd;
  std::vector<double> odist, idist, ndist;
  for (std::size_t k = 0; k < p.edge_src.size(); ++k) {
    const std::size_t s = p.edge_src[k], d = p.edge_dst[k];
    if (p.type(s) == NodeType::Interior) {
      os.push_back(s);
      od.push_back(d);
      odist.push_back(p.dist[k]);
    }
    if (p.type(d) == NodeType::Interior) {
      is.push_back(s);
      id.push_back(d);
      idist.push_back(p.dist[k]);
    } else if (p.type(d) == NodeType::Neumann) {
      ns.push_back(s);
      nd.push_back(d);
      ndist.push_back(p.dist[k]);
    }
  }
  G.out_dist = ad::constant(Tensor(odist.size(), 1, odist));
  G.in_dist = ad::constant(Tensor(idist.size(), 1, idist));
  G.nin_dist = ad::constant(Tensor(ndist.size(), 1, ndist));
  G.t_interior = rows_of(p.t, 3, in);
  G.b_interior = rows_of(p.b, 3, in);
  G.t_neumann = rows_of(p.t, 3, ne);
  G.b_neumann = rows_of(p.b, 3, ne);
  G.n_neumann = rows_of(p.normals, 2, ne);
  G.interior = make_index(std::move(in));
  G.neumann = make_index(std::move(ne));
  G.dirichlet = make_index(std::move(di));
  G.out_src = make_index(std::move(os));
  G.out_dst = make_index(std::move(od));
  G.in_src = make_index(std::move(is));
  G.in_dst = make_index(std::move(id));
  G.nin_src = make_index(std::move(ns));
  G.nin_dst = make_index(std::move(nd));
  return G;
}

Var scatter_rows(const Var& rows, const Index& ids, std::size_t n) { return ad::segment_sum(rows, ids, n); }

namespace {

// Sum over edges of Phi([H_center, H_other, dist]) grouped by center node,
// returned for the nodes listed in `centers`.
Var edge_sum(const BoundParams& P, Block block, const Var& H, const Index& center, const Index& other,
             const Var& dist, const Index& centers, std::size_t n) {
  const std::size_t d = P.latent_dim();
  if (center->empty()) return zeros(centers->size(), d);
  const Var x = ad::concat_cols({ad::gather_rows(H, center), ad::gather_rows(H, other), dist});
  const Var msg = mlp_apply(P.spec(block), P.mlp(block), x);
  return ad::gather_rows(ad::segment_sum(msg, center, n), centers);
}

}  // namespace

InteriorMessages interior_messages(const BoundParams& P, const Var& H, const GraphTensors& G) {
  if (H.rows() != G.n || H.cols() != P.latent_dim()) throw ShapeMismatch("interior_messages: H shape");
  InteriorMessages m;
  m.phi_out = edge_sum(P, Block::MsgOut, H, G.out_src, G.out_dst, G.out_dist, G.interior, G.n);
  m.phi_in = edge_sum(P, Block::MsgIn, H, G.in_dst, G.in_src, G.in_dist, G.interior, G.n);
  const Var self = ad::concat_cols({ad::gather_rows(H, G.interior), G.t_interior});
  m.phi_loop = mlp_apply(P.spec(Block::MsgLoop), P.mlp(Block::MsgLoop), self);
  return m;
}

NeumannMessages neumann_messages(const BoundParams& P, const Var& H, const GraphTensors& G) {
  if (H.rows() != G.n || H.cols() != P.latent_dim()) throw ShapeMismatch("neumann_messages: H shape");
  NeumannMessages m;
  m.phi_in = edge_sum(P, Block::MsgInNeumann, H, G.nin_dst, G.nin_src, G.nin_dist, G.neumann, G.n);
  const Var self = ad::concat_cols({ad::gather_rows(H, G.neumann), G.t_neumann});
  m.phi_loop = mlp_apply(P.spec(Block::MsgLoop), P.mlp(Block::MsgLoop), self);
  return m;
}

Var h_theta_apply(const BoundParams& P, const Var& H, const GraphTensors& G, const Var& frozen) {
  const std::size_t n = G.n, d = P.latent_dim();
  if (H.rows() != n || H.cols() != d) throw ShapeMismatch("h_theta_apply: H shape");
  if (frozen.rows() != n || frozen.cols() != d) throw ShapeMismatch("h_theta_apply: frozen shape");
  std::vector<Var> parts;
  if (!G.interior->empty()) {
    const auto m = interior_messages(P, H, G);
    const Var z = grumod_update(P, ad::gather_rows(H, G.interior), G.b_interior, m.phi_out, m.phi_in, m.phi_loop);
    parts.push_back(scatter_rows(layer_norm(z, P.ln_gain(), P.ln_bias()), G.interior, n));
  }
  if (!G.neumann->empty()) {
    const auto m = neumann_messages(P, H, G);
    const Var x = ad::concat_cols({ad::gather_rows(H, G.neumann), G.b_neumann, G.n_neumann, m.phi_in, m.phi_loop});
    const Var z = mlp_apply(P.spec(Block::NeumannUpdate), P.mlp(Block::NeumannUpdate), x);
    parts.push_back(scatter_rows(layer_norm(z, P.ln_gain(), P.ln_bias()), G.neumann, n));
  }
  if (!G.dirichlet->empty()) parts.push_back(scatter_rows(ad::gather_rows(frozen, G.dirichlet), G.dirichlet, n));
  Var out = parts.front();
  for (std::size_t k = 1; k < parts.size(); ++k) out = ad::add(out, parts[k]);
  return out;
}

Var h_theta_apply(const BoundParams& P, const Var& H, const GraphTensors& G) {
  return h_theta_apply(P, H, G, ad::detach(H));
}

Var assemble_final(const Var& H0, const Var& Hstar, const GraphTensors& G) {
  if (!H0.value().same_shape(Hstar.value()) || H0.rows() != G.n) throw ShapeMismatch("assemble_final shapes");
  std::vector<std::size_t> free_ids;
  free_ids.reserve(G.n);
  for (std::size_t i = 0, k = 0; i < G.n; ++i) {
    if (k < G.dirichlet->size() && (*G.dirichlet)[k] == i) {
      ++k;
      continue;
    }
    free_ids.push_back(i);
  }
  const Index free = make_index(std::move(free_ids));
  Var out = zeros(G.n, H0.cols());
  if (!free->empty()) out = scatter_rows(ad::gather_rows(Hstar, free), free, G.n);
  if (!G.dirichlet->empty()) out = ad::add(out, scatter_rows(ad::gather_rows(H0, G.dirichlet), G.dirichlet, G.n));
  return out;
}

}  // namespace eqgnn
