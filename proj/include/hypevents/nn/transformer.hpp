#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "hypevents/core/ops.hpp"
#include "hypevents/core/rng.hpp"
#include "hypevents/core/tape.hpp"

namespace hypevents::nn {

struct StackConfig {
  std::size_t vocab_size = 0;
  std::size_t d_model = 64;
  std::size_t n_layers = 2;
  std::size_t n_heads = 2;
  std::size_t max_seq_len = 128;
  double dropout = 0.1;
  bool causal = true;

  /// Human-readable list of violated constraints; empty when valid.
  std::vector<std::string> violations() const;
  void validate() const;
};

struct BlockParams {
  Parameter ln1_gamma, ln1_beta;
  Parameter w_qkv, b_qkv;
  Parameter w_out, b_out;
  Parameter ln2_gamma, ln2_beta;
  Parameter w_fc, b_fc;
  Parameter w_proj, b_proj;
};

/// Forward-pass options. Dropout is active only when `rng` is set.
struct ForwardMode {
  RngStream* rng = nullptr;

  static ForwardMode inference() { return {}; }
  static ForwardMode training(RngStream& stream) { return {&stream}; }
  bool training() const { return rng != nullptr; }
};

/// Pre-LN transformer: token + learned position embeddings, self-attention
/// blocks, final layer norm. Causal or bidirectional per config.
class TransformerStack {
 public:
  TransformerStack() = default;
  TransformerStack(const StackConfig& config, RngStream init);

  struct BoundBlock {
    Var ln1_gamma, ln1_beta, w_qkv, b_qkv, w_out, b_out;
    Var ln2_gamma, ln2_beta, w_fc, b_fc, w_proj, b_proj;
  };
  struct Bound {
    Var token_embedding, position_embedding;
    std::vector<BoundBlock> blocks;
    Var final_gamma, final_beta;
  };

  /// Binds parameters as trainable leaves.
  Bound bind(Tape& tape);
  /// Binds parameter values as constants; safe on a shared immutable model.
  Bound bind_frozen(Tape& tape) const;

  /// Hidden states [ids.size(), d_model] after the final layer norm.
  Var forward(const Bound& bound, std::span<const int> ids, ForwardMode mode) const;

  const StackConfig& config() const { return config_; }

  /// Parameters in a fixed order.
  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;

  Parameter token_embedding;
  Parameter position_embedding;
  std::vector<BlockParams> blocks;
  Parameter final_gamma;
  Parameter final_beta;

 private:
  Var attention(const BoundBlock& b, Var x, ForwardMode mode) const;

  StackConfig config_;
};

/// Normal(0, stddev) matrix drawn from `rng`.
Tensor normal_tensor(Shape shape, double stddev, RngStream& rng);

}  // namespace hypevents::nn
