#include "hypevents/lm/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "hypevents/core/adam.hpp"
#include "hypevents/core/error.hpp"

namespace hypevents::lm {

std::vector<std::string> LmConfig::violations() const {
  std::vector<std::string> out;
  for (auto& v : stack(1).violations()) out.push_back("lm." + v);
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) out.emplace_back("lm.lr must be positive");
  if (batch_size == 0) out.emplace_back("lm.batch must be positive");
  return out;
}

nn::StackConfig LmConfig::stack(std::size_t vocab_size) const {
  nn::StackConfig c;
  c.vocab_size = vocab_size;
  c.d_model = d_model;
  c.n_layers = n_layers;
  c.n_heads = n_heads;
  c.max_seq_len = max_seq_len;
  c.dropout = dropout;
  c.causal = true;
  return c;
}

LmModel::LmModel(const LmConfig& config, std::size_t vocab_size)
    : config_(config),
      vocab_size_(vocab_size),
      stack_(config.stack(vocab_size), RngStream(config.seed).split("lm-init")) {}

Var LmModel::logits(Tape&, const nn::TransformerStack::Bound& bound, std::span<const int> ids,
                    nn::ForwardMode mode) const {
  const Var h = stack_.forward(bound, ids, mode);
  return ops::matmul(h, ops::transpose(bound.token_embedding));
}

Tensor LmModel::next_token_logits(std::span<const int> ids) const {
  Tape tape;
  const auto bound = stack_.bind_frozen(tape);
  const Var h = stack_.forward(bound, ids, nn::ForwardMode::inference());
  const Var last = ops::row(h, ids.size() - 1);
  return ops::matmul(last, ops::transpose(bound.token_embedding)).value();
}

Tensor LmModel::hidden_states(std::span<const int> ids) const {
  Tape tape;
  const auto bound = stack_.bind_frozen(tape);
  return stack_.forward(bound, ids, nn::ForwardMode::inference()).value();
}

PackedSequence pack(const InfillExample& example) {
  std::vector<int> seq = example.condition;
  seq.insert(seq.end(), example.target.begin(), example.target.end());
  PackedSequence p;
  if (seq.size() < 2) return p;
  const std::size_t n = seq.size() - 1;
  p.tokens.assign(seq.begin(), seq.begin() + static_cast<std::ptrdiff_t>(n));
  p.labels.assign(seq.begin() + 1, seq.end());
  p.loss_mask.resize(n);
  for (std::size_t t = 0; t < n; ++t) p.loss_mask[t] = t + 1 >= example.condition.size();
  return p;
}

SequenceLoss sequence_loss(const LmModel& model, Tape& tape, const nn::TransformerStack::Bound& bound,
                           std::span<const int> tokens, std::span<const int> labels,
                           std::span<const std::uint8_t> mask, nn::ForwardMode mode) {
  const std::size_t count = static_cast<std::size_t>(std::count(mask.begin(), mask.end(), 1));
  const Var logits = model.logits(tape, bound, tokens, mode);
  const Var mean = ops::cross_entropy(logits, labels, mask);
  return {ops::scale(mean, static_cast<double>(count)), count};
}

Var lm_loss(const LmModel& model, Tape& tape, const nn::TransformerStack::Bound& bound,
            std::span<const InfillExample> batch, nn::ForwardMode mode, LossReport& report) {
  Var total;
  std::size_t count = 0;
  for (const InfillExample& ex : batch) {
    const PackedSequence p = pack(ex);
    if (p.tokens.empty() || p.tokens.size() > model.config().max_seq_len) {
      ++report.skipped;
      continue;
    }
    const SequenceLoss s = sequence_loss(model, tape, bound, p.tokens, p.labels, p.loss_mask, mode);
    total = total.valid() ? ops::add(total, s.total) : s.total;
    count += s.count;
  }
  if (count == 0) throw Error(ErrorCode::degenerate, "lm_loss: no example fits max_seq_len");
  report.target_tokens += count;
  const Var loss = ops::scale(total, 1.0 / static_cast<double>(count));
  report.loss = loss.value().item();
  return loss;
}

LossReport evaluate_lm(const LmModel& model, std::span<const InfillExample> examples) {
  LossReport report;
  double total = 0.0;
  for (const InfillExample& ex : examples) {
    Tape tape;
    const auto bound = model.stack().bind_frozen(tape);
    LossReport one;
    try {
      lm_loss(model, tape, bound, std::span(&ex, 1), nn::ForwardMode::inference(), one);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::degenerate) throw;
    }
    report.skipped += one.skipped;
    report.target_tokens += one.target_tokens;
    total += one.loss * static_cast<double>(one.target_tokens);
  }
  report.loss = report.target_tokens ? total / static_cast<double>(report.target_tokens) : 0.0;
  return report;
}

namespace {

bool all_finite(std::span<Parameter* const> params) {
  for (const Parameter* p : params) {
    for (double v : p->value.data()) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

}  // namespace

LmTrainResult train_lm(LmModel& model, std::span<const InfillExample> examples, const LmConfig& config,
                       const EpochCallback& on_epoch) {
  if (examples.empty()) throw Error(ErrorCode::contract, "train_lm: empty corpus");
  LmTrainResult result;
  if (config.epochs == 0) return result;

  // Overlong examples are dropped once, up front.
  std::vector<InfillExample> usable;
  for (const InfillExample& ex : examples) {
    if (pack(ex).tokens.size() <= model.config().max_seq_len) {
      usable.push_back(ex);
    } else {
      ++result.skipped;
    }
  }
  if (usable.empty()) throw Error(ErrorCode::degenerate, "train_lm: every example exceeds max_seq_len");

  const std::vector<Parameter*> params = model.parameters();
  AdamState adam = AdamState::for_parameters(params, {.learning_rate = config.learning_rate});
  const std::size_t batches = (usable.size() + config.batch_size - 1) / config.batch_size;
  const std::size_t total_steps = batches * config.epochs;
  const RngStream root = RngStream(config.seed).split("lm-train");

  std::vector<std::size_t> order(usable.size());
  std::vector<InfillExample> batch;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    RngStream shuffle = root.split("shuffle").split(epoch);
    shuffle.shuffle(std::span<std::size_t>(order));

    double epoch_total = 0.0;
    std::size_t epoch_tokens = 0;
    for (std::size_t b = 0; b < batches; ++b) {
      batch.clear();
      for (std::size_t k = b * config.batch_size; k < std::min(order.size(), (b + 1) * config.batch_size); ++k) {
        batch.push_back(usable[order[k]]);
      }
      zero_grads(params);
      RngStream dropout = root.split("dropout").split(result.steps);
      Tape tape;
      const auto bound = model.stack().bind(tape);
      LossReport report;
      const Var loss = lm_loss(model, tape, bound, batch, nn::ForwardMode::training(dropout), report);
      if (!std::isfinite(report.loss)) {
        throw Error(ErrorCode::divergence, "train_lm: non-finite loss at epoch " + std::to_string(epoch + 1) +
                                               ", step " + std::to_string(result.steps + 1) +
                                               " (lr " + std::to_string(config.learning_rate) + ")");
      }
      tape.backward(loss);
      const double lr = config.learning_rate *
                        (1.0 - static_cast<double>(result.steps) / static_cast<double>(total_steps));
      adam_step(params, adam, lr);
      ++result.steps;
      if (!all_finite(params)) {
        throw Error(ErrorCode::divergence,
                    "train_lm: non-finite parameters after step " + std::to_string(result.steps));
      }
      epoch_total += report.loss * static_cast<double>(report.target_tokens);
      epoch_tokens += report.target_tokens;
    }
    const double mean = epoch_total / static_cast<double>(epoch_tokens);
    result.epoch_losses.push_back(mean);
    if (on_epoch) on_epoch(epoch + 1, mean);
  }
  return result;
}

}  // namespace hypevents::lm
