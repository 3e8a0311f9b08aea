#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "hypevents/text/dataset.hpp"

namespace hypevents::text {

// Templated micro-narratives. Every story is
//   s1 "NAME went to the PLACE ."      s2 NAME + event hypothesis
//   s3 the event's own continuation     s4, s5 filler
// and each event's continuation repeats a topic word of the hypothesis, so the
// next event is predictable from the hypothesis alone.
//
// Abductive instances pair a correct event H+ with a distractor H-; O2 is the
// continuation of H+ with a fraction rho of its positions kept and the rest
// replaced, with probability `distractor_overlap`, by the distractor
// continuation's token at that position, else by a noise word.

struct SyntheticSpec {
  std::size_t n_stories = 200;
  std::size_t n_instances = 0;  // 0: same as n_stories
  std::size_t vocab_budget = 512;
  int template_set = 0;
  std::uint64_t seed = 1;
  double rho = 1.0;
  double distractor_overlap = 0.25;

  std::vector<std::string> violations() const;
  void validate() const;
};

struct SyntheticCorpus {
  std::vector<Story> stories;
  std::vector<AbductiveInstance> instances;
  /// Reference continuation of hyp1 and hyp2 for each instance.
  std::vector<std::array<std::string, 2>> continuations;
};

/// Words (excluding specials) the template set can emit.
std::size_t synthetic_vocabulary_need(int template_set);

/// Pure function of the spec. Throws a validation error when the vocabulary
/// budget cannot hold the template words plus the special tokens.
SyntheticCorpus gen_synthetic(const SyntheticSpec& spec);

/// Instances whose generated next events are the reference continuations.
std::vector<AbductiveInstance> with_reference_generations(const SyntheticCorpus& corpus);

/// Reasoning categories the synthetic events are tagged with.
const std::vector<std::string>& synthetic_categories();

}  // namespace hypevents::text
