#include "hypevents/text/synthetic.hpp"

#include <cmath>
#include <numeric>
#include <set>
#include <string_view>

#include "hypevents/core/error.hpp"
#include "hypevents/core/rng.hpp"
#include "hypevents/text/tokenizer.hpp"

namespace hypevents::text {

namespace {

struct Event {
  std::string_view hypothesis;  // follows the name
  std::string_view continuation;
  std::string_view category;
};

constexpr std::array<std::string_view, 8> kNames = {"dotty", "sam", "maria", "tom",
                                                    "lena", "omar", "june", "ravi"};
constexpr std::array<std::string_view, 8> kPlaces = {"market", "park", "library", "station",
                                                     "museum", "harbor", "school", "garden"};

constexpr std::array<Event, 12> kEvents = {{
    {"wanted to buy a new bike .", "they saved money for the bike .", "motivation"},
    {"decided to learn the piano .", "they practiced the piano every day .", "motivation"},
    {"drove to the beach at dawn .", "the beach was empty and calm .", "spatial-temporal"},
    {"stayed at the office until midnight .", "the office lights were still on .",
     "spatial-temporal"},
    {"felt sad about the lost dog .", "friends helped them find the dog .", "emotional"},
    {"was nervous before the big exam .", "the exam turned out to be easy .", "emotional"},
    {"did not bring an umbrella .", "the rain soaked their coat .", "negation"},
    {"never locked the front door .", "a thief walked through the door .", "negation"},
    {"laughed at a silly joke .", "everyone enjoyed the joke too .", "reaction"},
    {"shouted at the noisy neighbor .", "the neighbor turned the music down .", "reaction"},
    {"ate some spoiled fish .", "the fish made them very sick .", "situational-fact"},
    {"found a wallet on the street .", "they returned the wallet to its owner .",
     "situational-fact"},
}};

constexpr std::array<std::string_view, 8> kFillers = {
    "it was a long day .",       "the weather was nice .",   "they went home later .",
    "the evening was quiet .",   "they called a friend .",   "nothing else happened .",
    "they slept well that night .", "the next day was busy .",
};

constexpr std::array<std::string_view, 8> kNoise = {"green", "yellow", "paper", "window",
                                                    "river", "table",  "cloud", "pencil"};

template <std::size_t N>
std::string_view pick(const std::array<std::string_view, N>& pool, RngStream& rng) {
  return pool[rng.below(N)];
}

std::string premise(std::string_view name, std::string_view place) {
  return std::string(name) + " went to the " + std::string(place) + " .";
}

std::string hypothesis(std::string_view name, const Event& e) {
  return std::string(name) + " " + std::string(e.hypothesis);
}

std::size_t other_event(std::size_t event, RngStream& rng) {
  const std::size_t k = rng.below(kEvents.size() - 1);
  return k >= event ? k + 1 : k;
}

std::string_view other_filler(std::string_view not_this, RngStream& rng) {
  std::string_view f = pick(kFillers, rng);
  while (f == not_this) f = pick(kFillers, rng);
  return f;
}

std::string join(const std::vector<std::string>& words) {
  std::string out;
  for (const auto& w : words) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

// O2: keep round(rho * L) positions of the correct continuation.
std::string second_observation(const std::string& correct, const std::string& distractor,
                               double rho, double distractor_overlap, RngStream& rng) {
  std::vector<std::string> words = split_words(correct);
  const std::vector<std::string> other = split_words(distractor);
  const std::size_t n = words.size();
  const auto keep = static_cast<std::size_t>(std::lround(rho * static_cast<double>(n)));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(std::span<std::size_t>(order));
  for (std::size_t k = keep; k < n; ++k) {
    const std::size_t pos = order[k];
    if (pos < other.size() && rng.bernoulli(distractor_overlap)) {
      words[pos] = other[pos];
    } else {
      words[pos] = std::string(pick(kNoise, rng));
    }
  }
  return join(words);
}

Story make_story(std::size_t index, double rho, RngStream rng) {
  const std::string_view name = pick(kNames, rng);
  const std::string_view place = pick(kPlaces, rng);
  const std::size_t event = rng.below(kEvents.size());
  const std::size_t cf_event = other_event(event, rng);
  const std::string_view f4 = pick(kFillers, rng);
  const std::string_view f5 = other_filler(f4, rng);

  Story s;
  s.id = "story-" + std::to_string(index + 1);
  s.sentences = {premise(name, place), hypothesis(name, kEvents[event]),
                 std::string(kEvents[event].continuation), std::string(f4), std::string(f5)};
  const std::string_view cf4 = rng.bernoulli(rho) ? f4 : other_filler(f4, rng);
  const std::string_view cf5 = rng.bernoulli(rho) ? f5 : other_filler(f5, rng);
  s.counterfactual = std::array<std::string, 4>{hypothesis(name, kEvents[cf_event]),
                                                std::string(kEvents[cf_event].continuation),
                                                std::string(cf4), std::string(cf5)};
  return s;
}

}  // namespace

std::vector<std::string> SyntheticSpec::violations() const {
  std::vector<std::string> out;
  if (n_stories == 0 && n_instances == 0) out.emplace_back("corpus.n_stories must be positive");
  if (!(rho >= 0.0 && rho <= 1.0)) out.emplace_back("corpus.rho must lie in [0, 1]");
  if (!(distractor_overlap >= 0.0 && distractor_overlap <= 1.0)) {
    out.emplace_back("corpus.distractor_overlap must lie in [0, 1]");
  }
  if (template_set != 0) {
    out.emplace_back("corpus.template_set " + std::to_string(template_set) + " is unknown (only 0)");
  } else if (vocab_budget < synthetic_vocabulary_need(0) + special::count) {
    out.emplace_back("corpus.vocab_budget " + std::to_string(vocab_budget) + " is below the " +
                     std::to_string(synthetic_vocabulary_need(0) + special::count) +
                     " tokens the templates need");
  }
  return out;
}

void SyntheticSpec::validate() const {
  const auto v = violations();
  if (v.empty()) return;
  std::string msg = "invalid synthetic spec:";
  for (const auto& s : v) msg += "\n  " + s;
  throw Error(ErrorCode::validation, msg);
}

std::size_t synthetic_vocabulary_need(int template_set) {
  if (template_set != 0) throw Error(ErrorCode::validation, "unknown template set");
  std::set<std::string> words;
  auto add = [&words](std::string_view text) {
    for (auto& w : split_words(text)) words.insert(std::move(w));
  };
  for (auto n : kNames) add(n);
  for (auto p : kPlaces) add(premise("x", p));
  for (const auto& e : kEvents) {
    add(e.hypothesis);
    add(e.continuation);
  }
  for (auto f : kFillers) add(f);
  for (auto w : kNoise) add(w);
  words.erase("x");
  return words.size();
}

const std::vector<std::string>& synthetic_categories() {
  static const std::vector<std::string> categories = {
      "motivation", "spatial-temporal", "emotional", "negation", "reaction", "situational-fact"};
  return categories;
}

SyntheticCorpus gen_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const RngStream root = RngStream(spec.seed).split("synthetic");
  const RngStream story_root = root.split("story");
  const RngStream instance_root = root.split("instance");

  SyntheticCorpus corpus;
  corpus.stories.reserve(spec.n_stories);
  for (std::size_t i = 0; i < spec.n_stories; ++i) {
    corpus.stories.push_back(make_story(i, spec.rho, story_root.split(i)));
  }

  const std::size_t n_instances = spec.n_instances ? spec.n_instances : spec.n_stories;
  for (std::size_t i = 0; i < n_instances; ++i) {
    RngStream rng = instance_root.split(i);
    const std::string_view name = pick(kNames, rng);
    const std::string_view place = pick(kPlaces, rng);
    const std::size_t good = rng.below(kEvents.size());
    const std::size_t bad = other_event(good, rng);
    // Paired coin flips: instances 2k and 2k+1 take opposite labels, so each
    // label is a fair coin yet the two classes never differ by more than one.
    const bool heads = instance_root.split("label").split(i / 2).bernoulli(0.5);
    const int label = (heads != (i % 2 == 1)) ? 1 : 2;
    const std::string good_next(kEvents[good].continuation);
    const std::string bad_next(kEvents[bad].continuation);

    AbductiveInstance inst;
    inst.id = "syn-" + std::to_string(i + 1);
    inst.obs1 = premise(name, place);
    inst.obs2 = second_observation(good_next, bad_next, spec.rho, spec.distractor_overlap, rng);
    std::string h_good = hypothesis(name, kEvents[good]);
    std::string h_bad = hypothesis(name, kEvents[bad]);
    inst.label = label;
    inst.category = std::string(kEvents[good].category);
    if (label == 1) {
      inst.hyp1 = std::move(h_good);
      inst.hyp2 = std::move(h_bad);
      corpus.continuations.push_back({good_next, bad_next});
    } else {
      inst.hyp1 = std::move(h_bad);
      inst.hyp2 = std::move(h_good);
      corpus.continuations.push_back({bad_next, good_next});
    }
    corpus.instances.push_back(std::move(inst));
  }
  return corpus;
}

std::vector<AbductiveInstance> with_reference_generations(const SyntheticCorpus& corpus) {
  std::vector<AbductiveInstance> out = corpus.instances;
  for (std::size_t i = 0; i < out.size(); ++i) out[i].generated = corpus.continuations[i];
  return out;
}

}  // namespace hypevents::text
