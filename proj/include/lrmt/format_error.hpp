#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace lrmt {

/// Raised when a binary artifact (checkpoint, activation dump) cannot be read.
class FormatError : public std::runtime_error {
public:
  enum class Kind { io, bad_magic, version, truncated, checksum, malformed };

  FormatError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

private:
  Kind kind_;
};

std::string_view format_error_name(FormatError::Kind kind);

}  // namespace lrmt
