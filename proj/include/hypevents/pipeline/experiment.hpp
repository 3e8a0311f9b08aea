#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hypevents/pipeline/config.hpp"
#include "hypevents/pipeline/stages.hpp"

namespace hypevents::pipeline {

struct SeedReport {
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;  // failing stage and message when !ok
  double mtl_accuracy = 0.0;
  double unsupervised_accuracy = 0.0;
  std::size_t mtl_ties = 0;
  std::size_t unsupervised_ties = 0;
  std::size_t unsupervised_degenerate = 0;
  std::size_t unsupervised_abstained = 0;
  double w_final = 1.0;
  std::vector<double> w_trajectory;
  std::vector<std::string> epochs;  // per-epoch loss breakdown records
};

/// Mean and sample variance (n - 1 denominator); no variance for n < 2.
struct Aggregate {
  std::size_t n = 0;
  double mean = 0.0;
  std::optional<double> variance;
};
Aggregate aggregate(std::span<const double> values);

struct ExperimentReport {
  std::vector<SeedReport> seeds;
  Aggregate mtl;
  Aggregate unsupervised;
  bool partial = false;
};

/// Runs every stage for each configured seed under out/seed-<n>/, skipping
/// stages whose outputs already match the config. A failing seed is reported
/// and the others continue. Seeds run on up to config.jobs threads.
/// Writes experiment_report.jsonl and summary.txt; timestamps go only to
/// experiment.log.
ExperimentReport run_experiment(const RunConfig& config, const std::filesystem::path& out);

/// Per-seed records followed by one aggregate record.
std::string report_lines(const ExperimentReport& report);
/// Human-readable table with reference numbers from the original full-scale
/// study alongside.
std::string summary_table(const ExperimentReport& report, const RunConfig& config);

// Full-scale reference accuracies (percent); not reproducible here.
namespace reference {
inline constexpr double unsupervised = 60.08;
inline constexpr double mtl_mean = 72.2;
inline constexpr double mtl_spread = 0.6;
inline constexpr double bert_large = 68.9;
inline constexpr double majority = 50.8;
}  // namespace reference

}  // namespace hypevents::pipeline
