#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "hypevents/lm/infill.hpp"
#include "hypevents/nn/transformer.hpp"

namespace hypevents::lm {

struct LmConfig {
  std::size_t d_model = 64;
  std::size_t n_layers = 2;
  std::size_t n_heads = 2;
  std::size_t max_seq_len = 128;
  double dropout = 0.1;
  double learning_rate = 5e-4;
  std::size_t batch_size = 12;
  std::size_t epochs = 10;
  std::uint64_t seed = 1;

  std::vector<std::string> violations() const;
  nn::StackConfig stack(std::size_t vocab_size) const;
};

/// Causal transformer whose output projection is the transposed token
/// embedding.
class LmModel {
 public:
  LmModel() = default;
  LmModel(const LmConfig& config, std::size_t vocab_size);

  /// Logits [ids.size(), vocab] for next-token prediction at every position.
  Var logits(Tape& tape, const nn::TransformerStack::Bound& bound, std::span<const int> ids,
             nn::ForwardMode mode) const;

  /// Inference-only logits for the token after `ids`.
  Tensor next_token_logits(std::span<const int> ids) const;
  /// Inference-only final-layer hidden states [ids.size(), d_model].
  Tensor hidden_states(std::span<const int> ids) const;

  const LmConfig& config() const { return config_; }
  std::size_t vocab_size() const { return vocab_size_; }
  nn::TransformerStack& stack() { return stack_; }
  const nn::TransformerStack& stack() const { return stack_; }
  std::vector<Parameter*> parameters() { return stack_.parameters(); }
  std::vector<const Parameter*> parameters() const { return stack_.parameters(); }

 private:
  LmConfig config_;
  std::size_t vocab_size_ = 0;
  nn::TransformerStack stack_;
};

/// Model input for one example: condition followed by the target without its
/// last token; labels are the next tokens and only target labels count.
struct PackedSequence {
  std::vector<int> tokens;
  std::vector<int> labels;
  std::vector<std::uint8_t> loss_mask;
};
PackedSequence pack(const InfillExample& example);

/// Summed cross-entropy over masked positions and the number of positions.
struct SequenceLoss {
  Var total;
  std::size_t count = 0;
};
SequenceLoss sequence_loss(const LmModel& model, Tape& tape, const nn::TransformerStack::Bound& bound,
                           std::span<const int> tokens, std::span<const int> labels,
                           std::span<const std::uint8_t> mask, nn::ForwardMode mode);

struct LossReport {
  double loss = 0.0;
  std::size_t target_tokens = 0;
  std::size_t skipped = 0;  // examples longer than max_seq_len
};

/// Token-level mean cross-entropy over the target spans of `batch` (condition
/// tokens carry no loss). Overlong examples are skipped and counted.
Var lm_loss(const LmModel& model, Tape& tape, const nn::TransformerStack::Bound& bound,
            std::span<const InfillExample> batch, nn::ForwardMode mode, LossReport& report);

/// Inference evaluation of lm_loss without recording gradients.
LossReport evaluate_lm(const LmModel& model, std::span<const InfillExample> examples);

struct LmTrainResult {
  std::vector<double> epoch_losses;
  std::size_t steps = 0;
  std::size_t skipped = 0;
};

using EpochCallback = std::function<void(std::size_t epoch, double mean_loss)>;

/// Adam with a learning rate decaying linearly to zero over all steps;
/// examples are reshuffled every epoch from the config seed.
LmTrainResult train_lm(LmModel& model, std::span<const InfillExample> examples, const LmConfig& config,
                       const EpochCallback& on_epoch = {});

}  // namespace hypevents::lm
