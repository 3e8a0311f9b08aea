#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "hypevents/core/tensor.hpp"
#include "hypevents/lm/model.hpp"
#include "hypevents/mtl/model.hpp"
#include "hypevents/pipeline/config.hpp"
#include "hypevents/text/vocab.hpp"

namespace hypevents::pipeline {

// Layout, all integers little-endian:
//   "HYPEVCKPT" | u32 version | u8 kind
//   u64 length + config text | u64 length + vocab text
//   u32 tensor count, then per tensor:
//     u32 name length + name | u32 rank | u64 dims[rank] | f64 values
inline constexpr std::string_view kCheckpointMagic = "HYPEVCKPT";
inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class ModelKind : std::uint8_t { lm = 0, mtl = 1 };
std::string to_string(ModelKind kind);

struct NamedTensor {
  std::string name;
  Tensor value;
};

struct Checkpoint {
  ModelKind kind = ModelKind::lm;
  std::string config;  // RunConfig text
  std::string vocab;   // Vocab::serialize()
  std::vector<NamedTensor> tensors;
};

std::string encode_checkpoint(const Checkpoint& c);
/// Errors: bad_magic, version_mismatch, truncated (also for trailing bytes).
Checkpoint decode_checkpoint(std::string_view bytes, const std::string& source = "checkpoint");

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c);
Checkpoint load_checkpoint(const std::filesystem::path& path);
/// As above, plus a kind_mismatch error when the file holds another model.
Checkpoint load_checkpoint(const std::filesystem::path& path, ModelKind expected);

Checkpoint make_checkpoint(const lm::LmModel& model, const RunConfig& config, const text::Vocab& vocab);
Checkpoint make_checkpoint(const mtl::MtlModel& model, const RunConfig& config, const text::Vocab& vocab);

/// A model rebuilt from a checkpoint together with its config and vocab.
template <typename Model>
struct Restored {
  Model model;
  RunConfig config;
  text::Vocab vocab;
};

Restored<lm::LmModel> restore_lm(const Checkpoint& c);
Restored<mtl::MtlModel> restore_mtl(const Checkpoint& c);

}  // namespace hypevents::pipeline
