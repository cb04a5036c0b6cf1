#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "eqgnn/autodiff.hpp"
#include "json.hpp"

namespace eqgnn {

enum class Activation { None, Relu, Sigmoid, Tanh };

/// One-hidden-layer perceptron: out_act(hidden_act(x W1 + c1) W2 + c2).
struct MLPSpec {
  std::size_t in_dim = 1;
  std::size_t hidden_dim = 10;
  std::size_t out_dim = 1;
  Activation hidden_act = Activation::Relu;
  Activation out_act = Activation::None;

  std::size_t param_count() const { return in_dim * hidden_dim + hidden_dim + hidden_dim * out_dim + out_dim; }
};

struct MLPVars {
  ad::Var W1, c1, W2, c2;
};

ad::Var activate(const ad::Var& x, Activation a);
ad::Var mlp_apply(const MLPSpec& spec, const MLPVars& p, const ad::Var& x);

/// Trainable blocks, in parameter-storage order.
enum class Block : std::size_t {
  Encoder,
  Decoder,
  MsgOut,          // interior outgoing messages
  MsgIn,           // interior incoming messages
  MsgLoop,         // self message, shared by interior and Neumann nodes
  MsgInNeumann,    // Neumann incoming messages
  GateUpdate,      // alpha head (sigmoid)
  GateReset,       // beta head (sigmoid)
  Candidate,       // zeta head (tanh)
  NeumannUpdate,   // Neumann update
  kCount
};

inline constexpr std::size_t kNumBlocks = static_cast<std::size_t>(Block::kCount);
const char* block_name(Block b);

struct ModelConfig {
  std::size_t latent_dim = 10;
  std::size_t hidden_dim = 10;
};

MLPSpec block_spec(Block b, const ModelConfig& cfg);

enum class InitScheme { GlorotUniform, Zero };

/// Flat named parameter storage. Every MLP contributes W1, c1, W2, c2 (in
/// that order); the layer-norm gain and bias come last.
struct ModelParams {
  ModelConfig config;
  std::vector<std::string> names;
  std::vector<ad::Tensor> values;

  std::size_t mlp_offset(Block b) const { return 4 * static_cast<std::size_t>(b); }
  std::size_t ln_gain_index() const { return 4 * kNumBlocks; }
  std::size_t ln_bias_index() const { return 4 * kNumBlocks + 1; }
  /// Encoder and decoder tensors train at the autoencoder learning rate.
  bool is_autoencoder(std::size_t index) const { return index < 8; }
  ad::Tensor& at(Block b, std::size_t k) { return values[mlp_offset(b) + k]; }
  const ad::Tensor& at(Block b, std::size_t k) const { return values[mlp_offset(b) + k]; }
};

ModelParams init_params(std::uint64_t seed, const ModelConfig& cfg = {},
                        InitScheme scheme = InitScheme::GlorotUniform);
std::size_t param_count(const ModelParams& params);

/// Parameters wrapped as trace leaves for one evaluation.
struct BoundParams {
  const ModelParams* params = nullptr;
  std::vector<ad::Var> vars;

  MLPVars mlp(Block b) const;
  const ad::Var& ln_gain() const { return vars[params->ln_gain_index()]; }
  const ad::Var& ln_bias() const { return vars[params->ln_bias_index()]; }
  std::size_t latent_dim() const { return params->config.latent_dim; }
  MLPSpec spec(Block b) const { return block_spec(b, params->config); }
};

/// Trainable leaves when `trainable`, constants otherwise.
BoundParams bind(const ModelParams& params, bool trainable);

/// Gated residual update for interior nodes:
///   x = [H, b, phi_out, phi_in, phi_loop]; alpha = Psi1(x); beta = Psi2(x)
///   zeta = Psi3([beta*H, b, phi_out, phi_in, phi_loop]); z = H + alpha*zeta
ad::Var grumod_update(const BoundParams& P, const ad::Var& H, const ad::Var& b, const ad::Var& phi_out,
                      const ad::Var& phi_in, const ad::Var& phi_loop);

/// Row-wise normalization over latent channels with shared gain and bias.
ad::Var layer_norm(const ad::Var& x, const ad::Var& gain, const ad::Var& bias);

/// Node-wise maps between the scalar field (N x 1) and latents (N x d).
ad::Var encode(const BoundParams& P, const ad::Var& U);
ad::Var decode(const BoundParams& P, const ad::Var& H);

nlohmann::json params_to_json(const ModelParams& p);
ModelParams params_from_json(const nlohmann::json& j);

}  // namespace eqgnn
