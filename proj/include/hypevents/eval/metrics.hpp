#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace hypevents::eval {

/// correct / total. Empty input or unequal lengths are errors.
double accuracy(std::span<const int> predictions, std::span<const int> golds);

struct Scale {
  enum class Kind { nominal, ordinal };
  Kind kind = Kind::nominal;
  std::vector<std::string> order;  // ordinal only, lowest first

  static Scale nominal() { return {}; }
  static Scale ordinal(std::vector<std::string> order);
  /// "nominal" or "ordinal:low,mid,high".
  static Scale parse(const std::string& text);
  std::string to_string() const;
};

/// Items x annotators; a missing value is std::nullopt.
struct AnnotationTable {
  std::vector<std::string> items;
  std::vector<std::string> annotators;
  std::vector<std::vector<std::optional<std::string>>> values;  // [item][annotator]
  Scale scale;

  /// At least two annotators, rectangular values, ordinal values on the scale.
  void validate() const;
  std::vector<std::optional<std::string>> column(std::size_t annotator) const;
};

struct AgreementReport {
  std::string statistic;
  double value = 0.0;
  std::size_t n_items = 0;
  std::size_t n_annotators = 0;
  std::string scale;
  bool degenerate = false;  // value fixed by convention (0/0 formula)
};

/// Cohen's kappa for two complete label vectors. When both annotators use one
/// identical constant label the formula is 0/0; the value is then 1.0 with the
/// degenerate flag set.
AgreementReport cohen_kappa(std::span<const std::string> a, std::span<const std::string> b);

struct PairwiseKappa {
  std::vector<AgreementReport> pairs;  // (0,1), (0,2), ..., (n-2,n-1)
  double mean = 0.0;
};
/// Kappa for every annotator pair of a complete table, and their mean.
PairwiseKappa pairwise_kappa(const AnnotationTable& table);

/// Krippendorff's alpha with the ordinal metric over the coincidence matrix.
/// Units with fewer than two values are not pairable and are ignored. If all
/// pairable values share one category the expected disagreement is zero and
/// the value is 1.0 with the degenerate flag set.
AgreementReport krippendorff_alpha_ordinal(const AnnotationTable& table);

/// Ordinal squared distance between scale positions c and k given the
/// marginal count of each position.
double ordinal_delta2(std::size_t c, std::size_t k, std::span<const double> counts);

struct MajorityResult {
  struct Entry {
    std::string item;
    std::string label;
  };
  std::vector<Entry> labels;
  std::vector<std::string> excluded;  // items without a strict majority
};

/// Strict majority among the values present for each item.
MajorityResult majority_vote(const AnnotationTable& table);

struct BreakdownRecord {
  std::string category;
  int prediction = 0;
  int gold = 0;
  bool contradiction = false;
};

struct BreakdownRow {
  std::string category;
  std::size_t n = 0;
  std::size_t correct = 0;
  std::size_t contradictions = 0;
  double accuracy = 0.0;
  double contradiction_rate = 0.0;
};

/// One row per category in first-seen order. Categories outside `known` (when
/// given) and empty ones are grouped under "other".
std::vector<BreakdownRow> breakdown_report(std::span<const BreakdownRecord> records,
                                           std::span<const std::string> known = {});
std::string breakdown_record(const BreakdownRow& row);

struct Annotation {
  std::string item;
  std::string annotator;
  std::string aspect;
  std::string value;
};

/// Line-delimited records with fields item, annotator, aspect, value.
std::vector<Annotation> load_annotations(const std::filesystem::path& path);

/// Table of one aspect; items and annotators in first-seen order. A repeated
/// (item, annotator) pair is a schema error.
AnnotationTable table_for(std::span<const Annotation> annotations, const std::string& aspect, Scale scale);

std::vector<std::string> aspects_of(std::span<const Annotation> annotations);

std::string agreement_record(const AgreementReport& r);

}  // namespace hypevents::eval
