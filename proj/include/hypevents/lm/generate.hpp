#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hypevents/lm/model.hpp"
#include "hypevents/text/dataset.hpp"

namespace hypevents::lm {

enum class Strategy { greedy, topk };

struct DecodeSpec {
  Strategy strategy = Strategy::greedy;
  std::size_t k = 5;
  std::size_t max_new_tokens = 32;
  /// Decoding also stops once this many sentence-final marks were emitted.
  std::size_t max_sentences = 1;
  std::uint64_t seed = 1;
};

std::string to_string(Strategy s);
Strategy parse_strategy(const std::string& name);

struct Generation {
  std::vector<text::TokenId> ids;
  std::string text;
  bool degenerate = false;  // nothing was produced before stopping
};

/// Decodes after `condition` until [E], max_new_tokens, max_sentences
/// sentence-final marks, or the context limit. Special tokens other than [E]
/// are never emitted. `sample_key` decorrelates top-k draws between calls.
Generation decode(const LmModel& model, const text::Vocab& vocab, std::vector<text::TokenId> condition,
                  const DecodeSpec& spec, std::uint64_t sample_key = 0);

/// Possible next event for hypothesis H given observations O1 and O2.
Generation generate_next_event(const LmModel& model, const text::Vocab& vocab, const std::string& obs1,
                               const std::string& hypothesis, const std::string& obs2,
                               const DecodeSpec& spec, std::uint64_t sample_key = 0);

struct GenerationStats {
  std::size_t degenerate = 0;
};

/// Fills `generated` for every instance; a degenerate generation is stored as
/// the empty string. Instances are split across `jobs` threads.
std::vector<text::AbductiveInstance> generate_for_instances(const LmModel& model, const text::Vocab& vocab,
                                                            std::span<const text::AbductiveInstance> instances,
                                                            const DecodeSpec& spec, std::size_t jobs,
                                                            GenerationStats* stats = nullptr);

}  // namespace hypevents::lm
