#include "hypevents/lm/infill.hpp"

#include "hypevents/text/tokenizer.hpp"

namespace hypevents::lm {

namespace {

using text::TokenId;
namespace special = text::special;

void append(std::vector<TokenId>& out, const std::string& sentence, const text::Vocab& vocab) {
  const auto ids = text::tokenize(sentence, vocab);
  out.insert(out.end(), ids.begin(), ids.end());
}

InfillExample make_example(const std::string& id, Branch branch, int split,
                           const std::array<std::string, 5>& s, const text::Vocab& vocab) {
  InfillExample ex;
  ex.story_id = id;
  ex.branch = branch;
  ex.split = split;
  ex.condition.push_back(special::start);
  append(ex.condition, s[0], vocab);
  ex.condition.push_back(special::mask);
  for (int k = split; k < 5; ++k) append(ex.condition, s[k], vocab);
  ex.condition.push_back(special::end);
  ex.condition.push_back(special::start);
  append(ex.condition, s[0], vocab);
  append(ex.condition, s[1], vocab);
  for (int k = 2; k < split; ++k) append(ex.target, s[k], vocab);
  ex.target.push_back(special::end);
  return ex;
}

}  // namespace

std::vector<InfillExample> build_infill_examples(const text::Story& story, const text::Vocab& vocab) {
  std::vector<InfillExample> out;
  for (int split : {3, 4}) out.push_back(make_example(story.id, Branch::factual, split, story.sentences, vocab));
  if (story.counterfactual) {
    const auto cf = story.counterfactual_story();
    for (int split : {3, 4}) out.push_back(make_example(story.id, Branch::counterfactual, split, cf, vocab));
  }
  return out;
}

std::vector<InfillExample> build_infill_examples(std::span<const text::Story> stories,
                                                 const text::Vocab& vocab) {
  std::vector<InfillExample> out;
  for (const auto& s : stories) {
    for (auto& ex : build_infill_examples(s, vocab)) out.push_back(std::move(ex));
  }
  return out;
}

std::vector<TokenId> next_event_condition(const std::string& obs1, const std::string& hypothesis,
                                          const std::string& obs2, const text::Vocab& vocab) {
  std::vector<TokenId> ids{special::start};
  append(ids, obs1, vocab);
  ids.push_back(special::mask);
  append(ids, obs2, vocab);
  ids.push_back(special::end);
  ids.push_back(special::start);
  append(ids, obs1, vocab);
  append(ids, hypothesis, vocab);
  return ids;
}

}  // namespace hypevents::lm
