#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hypevents/lm/generate.hpp"
#include "hypevents/lm/model.hpp"
#include "hypevents/mtl/model.hpp"
#include "hypevents/text/synthetic.hpp"

namespace hypevents::pipeline {

struct CorpusConfig {
  std::string source = "synthetic";  // synthetic | files
  // files
  std::string stories;
  std::string train;
  std::string dev;
  // synthetic
  std::size_t n_stories = 200;
  std::size_t n_train = 200;
  std::size_t n_dev = 50;
  double rho = 1.0;
  double distractor_overlap = 0.25;
  std::size_t vocab_budget = 512;
  int template_set = 0;
  std::optional<std::uint64_t> seed;  // unset: follow the run seed
  std::size_t min_count = 1;
};

/// Everything a run needs. The text form is a flat `key = value` list with
/// `#` comments; to_text() writes every key in a fixed order.
struct RunConfig {
  std::uint64_t seed = 1;
  std::vector<std::uint64_t> seeds{1};
  CorpusConfig corpus;
  lm::LmConfig lm;
  lm::DecodeSpec decode;
  mtl::MtlConfig mtl;
  std::string provider = "lm";  // static | lm | encoder
  std::size_t jobs = 1;
  std::string out;
  std::map<std::string, std::string> agreement_scales;  // aspect -> scale text

  /// Sets one key from its text form; unknown keys and bad values throw a
  /// validation error.
  void set(const std::string& key, const std::string& value);

  std::vector<std::string> violations() const;
  /// Throws one validation error listing every violation.
  void validate() const;

  std::string to_text() const;
  static RunConfig parse(const std::string& text);
  static RunConfig load(const std::filesystem::path& path);

  /// Copy whose run, model, decode and (unless pinned) corpus seeds are `s`.
  RunConfig for_seed(std::uint64_t s) const;
  std::uint64_t corpus_seed() const { return corpus.seed.value_or(seed); }
  // Model and decode settings carrying the run seed.
  lm::LmConfig lm_config() const;
  mtl::MtlConfig mtl_config() const;
  lm::DecodeSpec decode_spec() const;
  text::SyntheticSpec synthetic_spec() const;
};

/// Output root: explicit value, else $HYPEVENTS_OUT, else "runs".
std::filesystem::path output_root(const std::string& configured);

inline constexpr const char* kOutputEnv = "HYPEVENTS_OUT";

}  // namespace hypevents::pipeline
