#pragma once

#include <cstddef>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hypevents/core/tensor.hpp"
#include "hypevents/lm/model.hpp"
#include "hypevents/text/dataset.hpp"
#include "hypevents/text/vocab.hpp"

namespace hypevents::sim {

/// Greedy-match similarity between a candidate and a reference sentence.
/// recall averages, over reference tokens, the best cosine to any candidate
/// token; precision swaps the roles.
struct SimilarityReport {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  Tensor match;  // [candidate, reference] cosines
};

/// Rows are token embeddings. A zero vector has cosine 0 with everything.
/// Either side empty is an error. No idf weighting or baseline rescaling.
SimilarityReport bertscore(const Tensor& candidate, const Tensor& reference);

/// One d-vector per token, deterministic for a fixed model and input.
class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual Tensor embed(std::span<const text::TokenId> ids) const = 0;
  virtual std::size_t dimension() const = 0;
  virtual std::string name() const = 0;
};

/// Context-free lookup in a [vocab, d] table.
class StaticEmbeddingProvider final : public EmbeddingProvider {
 public:
  explicit StaticEmbeddingProvider(Tensor table);
  Tensor embed(std::span<const text::TokenId> ids) const override;
  std::size_t dimension() const override { return table_.cols(); }
  std::string name() const override { return "static"; }

 private:
  Tensor table_;
};

/// Final hidden states of the language model run over [S] followed by the
/// sentence; one row per sentence token.
class LmEmbeddingProvider final : public EmbeddingProvider {
 public:
  explicit LmEmbeddingProvider(const lm::LmModel& model) : model_(&model) {}
  Tensor embed(std::span<const text::TokenId> ids) const override;
  std::size_t dimension() const override { return model_->config().d_model; }
  std::string name() const override { return "lm"; }

 private:
  const lm::LmModel* model_;
};

/// Outcome of choosing between the two generated next events of an instance.
struct Selection {
  std::string id;
  int prediction = 0;  // 1 or 2; 0 when abstaining
  std::optional<int> gold;
  double f1[2] = {0.0, 0.0};
  bool tie = false;
  bool degenerate[2] = {false, false};
  bool abstain = false;

  bool correct() const { return !abstain && gold && *gold == prediction; }
};

/// Picks the hypothesis whose generated next event has the higher F1 against
/// O2. Exact ties pick 1; a degenerate (empty) generation loses to the other;
/// two degenerate generations abstain.
Selection select_unsupervised(const text::AbductiveInstance& instance, const text::Vocab& vocab,
                              const EmbeddingProvider& provider);

struct SelectorEvaluation {
  double accuracy = 0.0;
  std::size_t correct = 0;
  std::size_t ties = 0;
  std::size_t degenerate = 0;  // instances with at least one empty generation
  std::size_t abstained = 0;
  std::vector<Selection> records;
};

/// Accuracy over labelled instances that carry generations; abstentions count
/// as wrong.
SelectorEvaluation evaluate_selector(std::span<const text::AbductiveInstance> instances,
                                     const text::Vocab& vocab, const EmbeddingProvider& provider,
                                     std::size_t jobs = 1);

/// One line-delimited record: id, f1_1, f1_2, prediction, gold and flags.
std::string selection_record(const Selection& s);

}  // namespace hypevents::sim
