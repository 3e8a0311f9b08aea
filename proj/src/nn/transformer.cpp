#include "hypevents/nn/transformer.hpp"

#include <cmath>
#include <limits>

#include "hypevents/core/error.hpp"

namespace hypevents::nn {

std::vector<std::string> StackConfig::violations() const {
  std::vector<std::string> out;
  if (vocab_size == 0) out.push_back("vocab_size must be positive");
  if (d_model == 0) out.push_back("d_model must be positive");
  if (n_layers == 0) out.push_back("n_layers must be positive");
  if (n_heads == 0) out.push_back("n_heads must be positive");
  if (n_heads != 0 && d_model % n_heads != 0) {
    out.push_back("d_model (" + std::to_string(d_model) + ") must be divisible by n_heads (" +
                  std::to_string(n_heads) + ")");
  }
  if (max_seq_len == 0) out.push_back("max_seq_len must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) out.push_back("dropout must be in [0, 1)");
  return out;
}

void StackConfig::validate() const {
  const auto problems = violations();
  if (problems.empty()) return;
  std::string msg = "invalid transformer config:";
  for (const auto& p : problems) msg += " " + p + ";";
  throw Error(ErrorCode::validation, msg);
}

Tensor normal_tensor(Shape shape, double stddev, RngStream& rng) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = stddev * rng.normal();
  return t;
}

TransformerStack::TransformerStack(const StackConfig& config, RngStream init) : config_(config) {
  config_.validate();
  const std::size_t d = config_.d_model;
  constexpr double kStd = 0.02;
  // Residual projections are scaled down with depth (GPT-2 initialisation).
  const double proj_std = kStd / std::sqrt(2.0 * static_cast<double>(config_.n_layers));

  token_embedding = Parameter("token_embedding", normal_tensor({config_.vocab_size, d}, kStd, init));
  position_embedding =
      Parameter("position_embedding", normal_tensor({config_.max_seq_len, d}, kStd, init));
  for (std::size_t l = 0; l < config_.n_layers; ++l) {
    const std::string p = "block" + std::to_string(l) + ".";
    BlockParams b;
    b.ln1_gamma = Parameter(p + "ln1.gamma", Tensor({d}, 1.0));
    b.ln1_beta = Parameter(p + "ln1.beta", Tensor({d}));
    b.w_qkv = Parameter(p + "attn.w_qkv", normal_tensor({d, 3 * d}, kStd, init));
    b.b_qkv = Parameter(p + "attn.b_qkv", Tensor({3 * d}));
    b.w_out = Parameter(p + "attn.w_out", normal_tensor({d, d}, proj_std, init));
    b.b_out = Parameter(p + "attn.b_out", Tensor({d}));
    b.ln2_gamma = Parameter(p + "ln2.gamma", Tensor({d}, 1.0));
    b.ln2_beta = Parameter(p + "ln2.beta", Tensor({d}));
    b.w_fc = Parameter(p + "mlp.w_fc", normal_tensor({d, 4 * d}, kStd, init));
    b.b_fc = Parameter(p + "mlp.b_fc", Tensor({4 * d}));
    b.w_proj = Parameter(p + "mlp.w_proj", normal_tensor({4 * d, d}, proj_std, init));
    b.b_proj = Parameter(p + "mlp.b_proj", Tensor({d}));
    blocks.push_back(std::move(b));
  }
  final_gamma = Parameter("final_ln.gamma", Tensor({d}, 1.0));
  final_beta = Parameter("final_ln.beta", Tensor({d}));
}

TransformerStack::Bound TransformerStack::bind(Tape& tape) {
  Bound b;
  b.token_embedding = tape.param(token_embedding);
  b.position_embedding = tape.param(position_embedding);
  for (BlockParams& p : blocks) {
    b.blocks.push_back({tape.param(p.ln1_gamma), tape.param(p.ln1_beta), tape.param(p.w_qkv),
                        tape.param(p.b_qkv), tape.param(p.w_out), tape.param(p.b_out),
                        tape.param(p.ln2_gamma), tape.param(p.ln2_beta), tape.param(p.w_fc),
                        tape.param(p.b_fc), tape.param(p.w_proj), tape.param(p.b_proj)});
  }
  b.final_gamma = tape.param(final_gamma);
  b.final_beta = tape.param(final_beta);
  return b;
}

TransformerStack::Bound TransformerStack::bind_frozen(Tape& tape) const {
  auto c = [&tape](const Parameter& p) { return tape.constant(p.value); };
  Bound b;
  b.token_embedding = c(token_embedding);
  b.position_embedding = c(position_embedding);
  for (const BlockParams& p : blocks) {
    b.blocks.push_back({c(p.ln1_gamma), c(p.ln1_beta), c(p.w_qkv), c(p.b_qkv), c(p.w_out),
                        c(p.b_out), c(p.ln2_gamma), c(p.ln2_beta), c(p.w_fc), c(p.b_fc),
                        c(p.w_proj), c(p.b_proj)});
  }
  b.final_gamma = c(final_gamma);
  b.final_beta = c(final_beta);
  return b;
}

Var TransformerStack::attention(const BoundBlock& b, Var x, ForwardMode mode) const {
  Tape& tape = *x.tape();
  const std::size_t t = x.value().dim(0);
  const std::size_t d = config_.d_model;
  const std::size_t dh = d / config_.n_heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));

  Var qkv = ops::add_bias(ops::matmul(x, b.w_qkv), b.b_qkv);
  Var mask;
  if (config_.causal) {
    Tensor m({t, t});
    for (std::size_t i = 0; i < t; ++i)
      for (std::size_t j = i + 1; j < t; ++j) m.at(i, j) = -std::numeric_limits<double>::infinity();
    mask = tape.constant(std::move(m));
  }
  std::vector<Var> heads;
  heads.reserve(config_.n_heads);
  for (std::size_t h = 0; h < config_.n_heads; ++h) {
    Var q = ops::slice_cols(qkv, h * dh, dh);
    Var k = ops::slice_cols(qkv, d + h * dh, dh);
    Var v = ops::slice_cols(qkv, 2 * d + h * dh, dh);
    Var scores = ops::scale(ops::matmul(q, ops::transpose(k)), inv_sqrt);
    if (config_.causal) scores = ops::add(scores, mask);
    Var weights = ops::softmax(scores, -1);
    if (mode.training()) weights = ops::dropout(weights, config_.dropout, *mode.rng);
    heads.push_back(ops::matmul(weights, v));
  }
  Var merged = heads.size() == 1 ? heads.front() : ops::concat_cols(heads);
  return ops::add_bias(ops::matmul(merged, b.w_out), b.b_out);
}

Var TransformerStack::forward(const Bound& bound, std::span<const int> ids, ForwardMode mode) const {
  const std::size_t t = ids.size();
  if (t == 0) throw Error(ErrorCode::contract, "transformer forward on an empty sequence");
  if (t > config_.max_seq_len) {
    throw Error(ErrorCode::contract, "sequence of " + std::to_string(t) +
                                         " tokens exceeds max_seq_len " +
                                         std::to_string(config_.max_seq_len));
  }
  std::vector<int> positions(t);
  for (std::size_t i = 0; i < t; ++i) positions[i] = static_cast<int>(i);

  Var x = ops::add(ops::embedding(bound.token_embedding, ids),
                   ops::embedding(bound.position_embedding, positions));
  if (mode.training()) x = ops::dropout(x, config_.dropout, *mode.rng);

  for (const BoundBlock& b : bound.blocks) {
    Var a = attention(b, ops::layer_norm(x, b.ln1_gamma, b.ln1_beta), mode);
    if (mode.training()) a = ops::dropout(a, config_.dropout, *mode.rng);
    x = ops::add(x, a);

    Var h = ops::layer_norm(x, b.ln2_gamma, b.ln2_beta);
    h = ops::gelu(ops::add_bias(ops::matmul(h, b.w_fc), b.b_fc));
    h = ops::add_bias(ops::matmul(h, b.w_proj), b.b_proj);
    if (mode.training()) h = ops::dropout(h, config_.dropout, *mode.rng);
    x = ops::add(x, h);
  }
  return ops::layer_norm(x, bound.final_gamma, bound.final_beta);
}

std::vector<Parameter*> TransformerStack::parameters() {
  std::vector<Parameter*> out{&token_embedding, &position_embedding};
  for (BlockParams& b : blocks) {
    for (Parameter* p : {&b.ln1_gamma, &b.ln1_beta, &b.w_qkv, &b.b_qkv, &b.w_out, &b.b_out,
                         &b.ln2_gamma, &b.ln2_beta, &b.w_fc, &b.b_fc, &b.w_proj, &b.b_proj}) {
      out.push_back(p);
    }
  }
  out.push_back(&final_gamma);
  out.push_back(&final_beta);
  return out;
}

std::vector<const Parameter*> TransformerStack::parameters() const {
  auto mutable_params = const_cast<TransformerStack*>(this)->parameters();
  return {mutable_params.begin(), mutable_params.end()};
}

}  // namespace hypevents::nn
