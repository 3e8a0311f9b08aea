#pragma once

#include <array>
#include <filesystem>
#include <functional>
#include <string>

#include "hypevents/pipeline/config.hpp"

namespace hypevents::pipeline {

// Each stage reads the files of earlier stages under one run root and writes
// its own subdirectory, finishing with a copy of the RunConfig that produced
// it. A missing input is a pipeline-order error naming the stage to run.
enum class Stage { gen_corpus, train_lm, generate, train_mtl, predict, select, evaluate };

inline constexpr std::array<Stage, 7> kAllStages{Stage::gen_corpus, Stage::train_lm, Stage::generate,
                                                 Stage::train_mtl,  Stage::predict,  Stage::select,
                                                 Stage::evaluate};

/// CLI name, e.g. "train-lm".
std::string stage_name(Stage s);
/// Subdirectory name, e.g. "lm".
std::string stage_dir(Stage s);

namespace files {
inline constexpr const char* run_config = "run_config.txt";
inline constexpr const char* stories = "corpus/stories.jsonl";
inline constexpr const char* train = "corpus/anli_train.jsonl";
inline constexpr const char* dev = "corpus/anli_dev.jsonl";
inline constexpr const char* vocab = "corpus/vocab.txt";
inline constexpr const char* lm_checkpoint = "lm/lm.ckpt";
inline constexpr const char* lm_losses = "lm/lm_losses.jsonl";
inline constexpr const char* train_generations = "generations/anli_train.gen.jsonl";
inline constexpr const char* dev_generations = "generations/anli_dev.gen.jsonl";
inline constexpr const char* generation_stats = "generations/generation_stats.json";
inline constexpr const char* mtl_checkpoint = "mtl/mtl.ckpt";
inline constexpr const char* mtl_metrics = "mtl/mtl_metrics.jsonl";
inline constexpr const char* mtl_summary = "mtl/mtl_summary.json";
inline constexpr const char* predictions = "predict/predictions.jsonl";
inline constexpr const char* selections = "select/selections.jsonl";
inline constexpr const char* select_summary = "select/select_summary.json";
inline constexpr const char* metrics = "eval/metrics.json";
inline constexpr const char* breakdown = "eval/breakdown.jsonl";
}  // namespace files

using Log = std::function<void(const std::string&)>;

/// Runs one stage under `root`. Stages run single-threaded except generation
/// and selection, which use config.jobs threads.
void run_stage(Stage s, const RunConfig& config, const std::filesystem::path& root, const Log& log = {});

/// True when the stage's outputs exist and were produced by an identical
/// config, so a resumed run may skip it.
bool stage_complete(Stage s, const RunConfig& config, const std::filesystem::path& root);

/// Writes text to a file, creating parent directories.
void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace hypevents::pipeline
