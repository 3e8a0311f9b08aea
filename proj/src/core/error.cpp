#include "hypevents/core/error.hpp"

namespace hypevents {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::dimension: return "dimension";
    case ErrorCode::contract: return "contract";
    case ErrorCode::degenerate: return "degenerate";
    case ErrorCode::schema: return "schema";
    case ErrorCode::parse: return "parse";
    case ErrorCode::io: return "io";
    case ErrorCode::validation: return "validation";
    case ErrorCode::usage: return "usage";
    case ErrorCode::pipeline_order: return "pipeline_order";
    case ErrorCode::bad_magic: return "bad_magic";
    case ErrorCode::version_mismatch: return "version_mismatch";
    case ErrorCode::truncated: return "truncated";
    case ErrorCode::kind_mismatch: return "kind_mismatch";
    case ErrorCode::divergence: return "divergence";
  }
  return "unknown";
}

}  // namespace hypevents
