#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "hpm/diffmath/tape.hpp"

namespace hpm::model {

using diff::Parameter;
using diff::Tape;
using diff::Tensor;
using diff::Var;

struct EncoderConfig {
  std::size_t depth = 4;
  std::size_t width = 64;
  std::size_t heads = 4;
  std::size_t mlp_ratio = 4;
  std::size_t token_dim = 192;
  /// Pixels enter the embedding as (x - input_mean) / input_std.
  double input_mean = 0.5;
  double input_std = 0.25;

  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

struct DecoderConfig {
  std::size_t depth = 2;
  std::size_t width = 64;
  std::size_t heads = 4;
  std::size_t mlp_ratio = 4;
  std::size_t output_dim = 1;

  friend bool operator==(const DecoderConfig&, const DecoderConfig&) = default;
};

/// Encoder f_theta plus the reconstructor d_phi and the loss predictor d_psi.
/// The predictor always has output_dim 1.
struct ModelConfig {
  EncoderConfig encoder;
  DecoderConfig reconstructor;
  DecoderConfig predictor;

  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Weight is [in x out], applied as x . W + b.
struct Linear {
  Parameter weight;
  Parameter bias;
};

struct Norm {
  Parameter gain;
  Parameter bias;
};

/// Pre-norm transformer block: x + Attn(LN(x)), then x + MLP(LN(x)).
struct Block {
  Norm norm1;
  Linear query, key, value, proj;
  Norm norm2;
  Linear fc1, fc2;
};

struct Encoder {
  EncoderConfig config;
  Linear embed;
  std::vector<Block> blocks;
  Norm norm;
};

struct Decoder {
  DecoderConfig config;
  std::size_t input_width = 0;
  Linear embed;
  Parameter mask_token;  // [1 x width]
  std::vector<Block> blocks;
  Norm norm;
  Linear head;
};

enum class Role { encoder, reconstructor, predictor };

/// theta, phi and psi of one network. Parameter names are dotted paths
/// prefixed by their role ("encoder.", "reconstructor.", "predictor.").
struct ModelParams {
  ModelConfig config;
  Encoder encoder;
  Decoder reconstructor;
  Decoder predictor;

  /// Visits every parameter in a fixed order.
  void for_each(const std::function<void(const std::string&, Parameter&)>& fn);
  void for_each(const std::function<void(const std::string&, const Parameter&)>& fn) const;

  std::vector<Parameter*> parameters();
  std::vector<std::string> names() const;
  std::size_t count() const;
  void zero_grad();
};

Role role_of(const std::string& name);

/// Truncated-normal(0.02) weights and mask tokens, zero biases, unit norm gains.
ModelParams init_params(const ModelConfig& config, std::uint64_t seed);

/// Weight decay applies to matrices only (not biases, norm gains or mask tokens).
std::vector<bool> decay_mask(const ModelParams& params);

/// Encoder over explicit rows: tokens [R x token_dim] in pixel units, pos [R x width], with
/// attention confined to consecutive groups of seg_len rows.
Var encode_rows(Tape& tape, Encoder& enc, const Tensor& tokens, const Tensor& pos,
                std::size_t seg_len);

/// f_theta over the kept patches of each sample. keep[b] must be sorted,
/// non-empty, within [0, N), and of equal length across the batch. Returns
/// [B*|keep| x width], sample-major.
Var encode(Tape& tape, Encoder& enc, std::span<const Tensor* const> tokens,
           std::span<const std::vector<std::size_t>> keep, const Tensor& pos);

/// Decoder over the full sequence: projects latents, fills every non-kept
/// position with the mask token, adds pos [N x width] and runs the blocks.
/// Returns [B*N x output_dim], sample-major.
Var decode(Tape& tape, Decoder& dec, Var latents, std::span<const std::vector<std::size_t>> keep,
           std::size_t num_patches, const Tensor& pos);

}  // namespace hpm::model
