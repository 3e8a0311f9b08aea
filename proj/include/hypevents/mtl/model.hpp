#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hypevents/nn/transformer.hpp"
#include "hypevents/simscore/bertscore.hpp"
#include "hypevents/text/dataset.hpp"

namespace hypevents::mtl {

/// Where the auxiliary task's gold label comes from: the main gold label, or
/// the hypothesis whose generated next event scores the higher F1 against O2.
enum class AuxLabel { gold, bertscore };
std::string to_string(AuxLabel mode);
AuxLabel parse_aux_label(const std::string& name);

struct MtlConfig {
  std::size_t d_model = 32;
  std::size_t n_layers = 2;
  std::size_t n_heads = 2;
  std::size_t max_seq_len = 64;
  double dropout = 0.1;
  double learning_rate = 1e-3;
  std::size_t batch_size = 8;
  std::size_t epochs = 40;
  std::uint64_t seed = 1;
  AuxLabel aux_label = AuxLabel::gold;

  std::vector<std::string> violations() const;
  nn::StackConfig stack(std::size_t vocab_size) const;
};

/// Token sequences for one instance, j = 1, 2:
///   main_j = [CLS] O1 [SEP] H_j [SEP] O2 [SEP]
///   aux_j  = [CLS] H_j [SEP] O2^{H_j} [SEP] O2 [SEP]
struct MtlInput {
  std::array<std::vector<text::TokenId>, 2> main;
  std::array<std::vector<text::TokenId>, 2> aux;
};

/// Builds the four sequences. Over-long sequences lose tokens from the end
/// of their currently longest segment, so every [CLS]/[SEP] survives.
/// Instances without generations are a pipeline-order error.
MtlInput build_mtl_input(const text::AbductiveInstance& instance, const text::Vocab& vocab,
                         std::size_t max_seq_len);

/// [CLS] segment_1 [SEP] ... segment_k [SEP], trimmed to max_len as above.
std::vector<text::TokenId> pack_segments(std::vector<std::vector<text::TokenId>> segments,
                                         std::size_t max_len);

class MtlModel {
 public:
  MtlModel() = default;
  MtlModel(const MtlConfig& config, std::size_t vocab_size);

  struct Bound {
    nn::TransformerStack::Bound encoder;
    Var main_w, main_b, aux_w, aux_b, loss_weight;
  };
  Bound bind(Tape& tape);
  Bound bind_frozen(Tape& tape) const;

  struct Outputs {
    Var main_logits;       // [1, 2]
    Var aux_logits;        // [1, 2]
    std::array<Var, 4> cls;  // main_1, main_2, aux_1, aux_2 (each [1, d])
  };
  Outputs forward(const Bound& bound, const MtlInput& input, nn::ForwardMode mode) const;

  /// Encoder states [ids.size(), d] for an already delimited sequence.
  Tensor encode(std::span<const text::TokenId> ids) const;

  const MtlConfig& config() const { return config_; }
  std::size_t vocab_size() const { return vocab_size_; }
  nn::TransformerStack& encoder() { return encoder_; }
  const nn::TransformerStack& encoder() const { return encoder_; }

  std::vector<Parameter*> parameters();
  std::vector<const Parameter*> parameters() const;

  Parameter head_main_w, head_main_b;
  Parameter head_aux_w, head_aux_b;
  Parameter loss_weight;  // w, a scalar initialised to 1

 private:
  MtlConfig config_;
  std::size_t vocab_size_ = 0;
  nn::TransformerStack encoder_;
};

struct JointLoss {
  Var total;
  Var l_anli;
  Var l_sim;
};

/// Batch-mean cross-entropies of the main and auxiliary logit pairs ([B, 2])
/// and total = L_anli + w * L_sim. Labels are 1 or 2.
JointLoss joint_loss(Var main_logits, Var aux_logits, std::span<const int> gold, std::span<const int> aux,
                     Var w);

struct LossBreakdown {
  double l_anli = 0.0;
  double l_sim = 0.0;
  double w = 0.0;
  double total = 0.0;
};
LossBreakdown breakdown(const JointLoss& loss, Var w);

struct Prediction {
  int hypothesis = 1;
  int aux = 1;
  bool tie = false;
  bool aux_tie = false;
  std::array<double, 2> main_logits{};
  std::array<double, 2> aux_logits{};
};

Prediction predict(const MtlModel& model, const MtlInput& input);
Prediction predict(const MtlModel& model, const text::AbductiveInstance& instance, const text::Vocab& vocab);

struct EpochMetrics {
  std::size_t epoch = 0;
  double l_anli = 0.0;
  double l_sim = 0.0;
  double w = 0.0;
  double train_accuracy = 0.0;
  std::optional<double> dev_accuracy;
};
std::string epoch_record(const EpochMetrics& m);

struct MtlTrainResult {
  std::vector<EpochMetrics> epochs;
  std::vector<double> w_trajectory;  // after every optimiser step
};

using MtlEpochCallback = std::function<void(const EpochMetrics&)>;

/// Adam with linear decay to zero. `aux_labels` supplies the auxiliary gold
/// label per training instance; when empty the main gold label is used.
MtlTrainResult train_mtl(MtlModel& model, std::span<const text::AbductiveInstance> train,
                         std::span<const text::AbductiveInstance> dev, const text::Vocab& vocab,
                         const MtlConfig& config, std::span<const int> aux_labels = {},
                         const MtlEpochCallback& on_epoch = {});

/// Auxiliary labels from the unsupervised selector's F1 comparison.
std::vector<int> similarity_aux_labels(std::span<const text::AbductiveInstance> instances,
                                       const text::Vocab& vocab, const sim::EmbeddingProvider& provider);

double accuracy_on(const MtlModel& model, std::span<const text::AbductiveInstance> instances,
                   const text::Vocab& vocab);

/// Last-layer encoder states of the sentence wrapped as [CLS] ... [SEP];
/// one row per sentence token.
class EncoderEmbeddingProvider final : public sim::EmbeddingProvider {
 public:
  explicit EncoderEmbeddingProvider(const MtlModel& model) : model_(&model) {}
  Tensor embed(std::span<const text::TokenId> ids) const override;
  std::size_t dimension() const override { return model_->config().d_model; }
  std::string name() const override { return "encoder"; }

 private:
  const MtlModel* model_;
};

}  // namespace hypevents::mtl
