#include "eqgnn/blocks.hpp"

#include <cmath>
#include <random>

#include "eqgnn/errors.hpp"

namespace eqgnn {

using ad::Tensor;
using ad::Var;

Var activate(const Var& x, Activation a) {
  switch (a) {
    case Activation::Relu: return ad::relu(x);
    case Activation::Sigmoid: return ad::sigmoid(x);
    case Activation::Tanh: return ad::tanh(x);
    case Activation::None: break;
  }
  return x;
}

Var mlp_apply(const MLPSpec& spec, const MLPVars& p, const Var& x) {
  if (x.cols() != spec.in_dim) {
    throw ShapeMismatch("mlp input has " + std::to_string(x.cols()) + " columns, expected " +
                        std::to_string(spec.in_dim));
  }
  Var h = activate(ad::add_bias(ad::matmul(x, p.W1), p.c1), spec.hidden_act);
  return activate(ad::add_bias(ad::matmul(h, p.W2), p.c2), spec.out_act);
}

const char* block_name(Block b) {
  switch (b) {
    case Block::Encoder: return "encoder";
    case Block::Decoder: return "decoder";
    case Block::MsgOut: return "msg_out";
    case Block::MsgIn: return "msg_in";
    case Block::MsgLoop: return "msg_loop";
    case Block::MsgInNeumann: return "msg_in_neumann";
    case Block::GateUpdate: return "gate_update";
    case Block::GateReset: return "gate_reset";
    case Block::Candidate: return "candidate";
    case Block::NeumannUpdate: return "neumann_update";
    case Block::kCount: break;
  }
  return "?";
}

MLPSpec block_spec(Block b, const ModelConfig& cfg) {
  const std::size_t d = cfg.latent_dim, h = cfg.hidden_dim;
  MLPSpec s;
  s.hidden_dim = h;
  s.out_dim = d;
  switch (b) {
    case Block::Encoder: s.in_dim = 1; break;
    case Block::Decoder:
      s.in_dim = d;
      s.out_dim = 1;
      break;
    case Block::MsgOut:
    case Block::MsgIn:
    case Block::MsgInNeumann: s.in_dim = 2 * d + 1; break;
    case Block::MsgLoop: s.in_dim = d + 3; break;
    case Block::GateUpdate:
    case Block::GateReset:
      s.in_dim = 4 * d + 3;
      s.out_act = Activation::Sigmoid;
      break;
    case Block::Candidate:
      s.in_dim = 4 * d + 3;
      s.out_act = Activation::Tanh;
      break;
    case Block::NeumannUpdate: s.in_dim = 3 * d + 5; break;
    case Block::kCount: throw InvalidArgument("block_spec: bad block");
  }
  return s;
}

ModelParams init_params(std::uint64_t seed, const ModelConfig& cfg, InitScheme scheme) {
  if (cfg.latent_dim < 2) throw InvalidArgument("latent dimension must be at least 2");
  if (cfg.hidden_dim < 1) throw InvalidArgument("hidden dimension must be positive");
  ModelParams p;
  p.config = cfg;
  std::mt19937_64 rng(seed);
  auto layer = [&](std::size_t fan_in, std::size_t fan_out) {
    Tensor w(fan_in, fan_out, 0.0);
    if (scheme == InitScheme::GlorotUniform) {
      const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
      std::uniform_real_distribution<double> u(-a, a);
      for (double& v : w.data()) v = u(rng);
    }
    return w;
  };
  for (std::size_t k = 0; k < kNumBlocks; ++k) {
    const auto b = static_cast<Block>(k);
    const MLPSpec s = block_spec(b, cfg);
    const std::string name = block_name(b);
    p.names.push_back(name + ".W1");
    p.values.push_back(layer(s.in_dim, s.hidden_dim));
    p.names.push_back(name + ".c1");
    p.values.emplace_back(1, s.hidden_dim, 0.0);
    p.names.push_back(name + ".W2");
    p.values.push_back(layer(s.hidden_dim, s.out_dim));
    p.names.push_back(name + ".c2");
    p.values.emplace_back(1, s.out_dim, 0.0);
  }
  p.names.push_back("ln.gain");
  p.values.emplace_back(1, cfg.latent_dim, 1.0);
  p.names.push_back("ln.bias");
  p.values.emplace_back(1, cfg.latent_dim, 0.0);
  return p;
}

std::size_t param_count(const ModelParams& params) {
  std::size_t n = 0;
  for (const auto& t : params.values) n += t.size();
  return n;
}

MLPVars BoundParams::mlp(Block b) const {
  const std::size_t o = params->mlp_offset(b);
  return {vars[o], vars[o + 1], vars[o + 2], vars[o + 3]};
}

BoundParams bind(const ModelParams& params, bool trainable) {
  BoundParams bp;
  bp.params = &params;
  bp.vars.reserve(params.values.size());
  for (const auto& t : params.values) bp.vars.push_back(trainable ? ad::parameter(t) : ad::constant(t));
  return bp;
}

Var grumod_update(const BoundParams& P, const Var& H, const Var& b, const Var& phi_out, const Var& phi_in,
                  const Var& phi_loop) {
  const Var x = ad::concat_cols({H, b, phi_out, phi_in, phi_loop});
  const Var alpha = mlp_apply(P.spec(Block::GateUpdate), P.mlp(Block::GateUpdate), x);
  const Var beta = mlp_apply(P.spec(Block::GateReset), P.mlp(Block::GateReset), x);
  const Var xc = ad::concat_cols({ad::mul(beta, H), b, phi_out, phi_in, phi_loop});
  const Var zeta = mlp_apply(P.spec(Block::Candidate), P.mlp(Block::Candidate), xc);
  return ad::add(H, ad::mul(alpha, zeta));
}

Var layer_norm(const Var& x, const Var& gain, const Var& bias) {
  const Var core = ad::layer_norm_core(x, 1e-5);
  return ad::add_bias(ad::mul(core, ad::broadcast_to(gain, x.rows(), x.cols())), bias);
}

Var encode(const BoundParams& P, const Var& U) {
  if (U.cols() != 1) throw ShapeMismatch("encode expects an N x 1 field");
  return mlp_apply(P.spec(Block::Encoder), P.mlp(Block::Encoder), U);
}

Var decode(const BoundParams& P, const Var& H) {
  if (H.cols() != P.latent_dim()) throw ShapeMismatch("decode expects N x d latents");
  return mlp_apply(P.spec(Block::Decoder), P.mlp(Block::Decoder), H);
}

nlohmann::json params_to_json(const ModelParams& p) {
  nlohmann::json j;
  j["latent_dim"] = p.config.latent_dim;
  j["hidden_dim"] = p.config.hidden_dim;
  auto& tensors = j["tensors"] = nlohmann::json::array();
  for (std::size_t k = 0; k < p.values.size(); ++k) {
    tensors.push_back({{"name", p.names[k]},
                       {"shape", {p.values[k].rows(), p.values[k].cols()}},
                       {"data", p.values[k].vec()}});
  }
  return j;
}

ModelParams params_from_json(const nlohmann::json& j) {
  try {
    ModelConfig cfg;
    cfg.latent_dim = j.at("latent_dim").get<std::size_t>();
    cfg.hidden_dim = j.at("hidden_dim").get<std::size_t>();
    ModelParams p = init_params(0, cfg, InitScheme::Zero);
    const auto& tensors = j.at("tensors");
    if (tensors.size() != p.values.size()) throw ParseError("checkpoint tensor count mismatch", 0);
    for (std::size_t k = 0; k < p.values.size(); ++k) {
      const auto& t = tensors.at(k);
      if (t.at("name").get<std::string>() != p.names[k]) {
        throw ParseError("checkpoint tensor order mismatch at " + p.names[k], 0);
      }
      const auto r = t.at("shape").at(0).get<std::size_t>();
      const auto c = t.at("shape").at(1).get<std::size_t>();
      if (r != p.values[k].rows() || c != p.values[k].cols()) {
        throw ParseError("checkpoint shape mismatch for " + p.names[k], 0);
      }
      p.values[k] = Tensor(r, c, t.at("data").get<std::vector<double>>());
    }
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint: ") + e.what(), 0);
  }
}

}  // namespace eqgnn
