#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hypevents/text/vocab.hpp"

namespace hypevents::text {

/// Five-sentence narrative with an optional counterfactual branch s2'..s5'.
struct Story {
  std::string id;
  std::array<std::string, 5> sentences;
  std::optional<std::array<std::string, 4>> counterfactual;

  /// (s1, s2', s3', s4', s5'); requires a counterfactual branch.
  std::array<std::string, 5> counterfactual_story() const;
};

/// One abductive instance: observations O1/O2, hypotheses H1/H2, an optional
/// gold label in {1, 2}, and optionally the next event generated under each
/// hypothesis.
struct AbductiveInstance {
  std::string id;
  std::string obs1;
  std::string obs2;
  std::string hyp1;
  std::string hyp2;
  std::optional<int> label;
  std::optional<std::array<std::string, 2>> generated;
  std::string category;

  const std::string& hypothesis(int j) const { return j == 1 ? hyp1 : hyp2; }

  /// Throws a schema error when a sentence field normalises to nothing or the
  /// label is outside {1, 2}.
  void validate() const;
};

// Line-delimited JSON datasets. Time-travel records carry premise, initial,
// original_ending, counterfactual, edited_ending; abductive records carry
// obs1, obs2, hyp1, hyp2 and optional label / gen1 / gen2 / category.

Story parse_timetravel_record(std::string_view line, std::size_t line_no);
AbductiveInstance parse_anli_record(std::string_view line, std::size_t line_no);

std::vector<Story> load_timetravel(const std::filesystem::path& path);
std::vector<AbductiveInstance> load_anli(const std::filesystem::path& path);

std::string timetravel_record(const Story& story);
std::string anli_record(const AbductiveInstance& instance);

void save_timetravel(const std::filesystem::path& path, std::span<const Story> stories);
void save_anli(const std::filesystem::path& path, std::span<const AbductiveInstance> instances);

/// Splits a multi-sentence string at sentence-final punctuation.
std::vector<std::string> split_sentences(std::string_view text);

/// Vocabulary over every sentence of the corpus. Specials come first, then
/// words by descending frequency with ties broken lexicographically; words
/// seen fewer than `min_count` times are left to [UNK].
Vocab build_vocab(std::span<const Story> stories, std::span<const AbductiveInstance> instances,
                  std::size_t min_count = 1);

}  // namespace hypevents::text
