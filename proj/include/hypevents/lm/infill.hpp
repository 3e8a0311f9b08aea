#pragma once

#include <string>
#include <vector>

#include "hypevents/text/dataset.hpp"
#include "hypevents/text/vocab.hpp"

namespace hypevents::lm {

enum class Branch { factual, counterfactual };

/// One infilling training pair. For split point i the model sees
///   [S] s1 [M] s_{i+1..5} [E] [S] s1 s2
/// and must produce s_3..s_i followed by [E].
struct InfillExample {
  std::string story_id;
  Branch branch = Branch::factual;
  int split = 3;  // i in {3, 4}
  std::vector<text::TokenId> condition;
  std::vector<text::TokenId> target;
};

/// Both split points for the factual branch and, when present, the
/// counterfactual branch (s2', s3'..s5' replace their factual counterparts).
std::vector<InfillExample> build_infill_examples(const text::Story& story, const text::Vocab& vocab);

std::vector<InfillExample> build_infill_examples(std::span<const text::Story> stories,
                                                 const text::Vocab& vocab);

/// Condition used at generation time: [S] O1 [M] O2 [E] [S] O1 H.
std::vector<text::TokenId> next_event_condition(const std::string& obs1, const std::string& hypothesis,
                                                const std::string& obs2, const text::Vocab& vocab);

}  // namespace hypevents::lm
