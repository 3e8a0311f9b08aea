#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace hypevents {

enum class ErrorCode {
  dimension,
  contract,
  degenerate,
  schema,
  parse,
  io,
  validation,
  usage,
  pipeline_order,
  bad_magic,
  version_mismatch,
  truncated,
  kind_mismatch,
  divergence,
};

std::string_view to_string(ErrorCode code) noexcept;

// Every failure raised by the library carries a machine-readable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace hypevents
