#pragma once

#include <stdexcept>
#include <string>

namespace disenhcn {

/// Bad input data: missing files, malformed records, unknown ids, corrupt
/// checkpoints. Maps to CLI exit code 2.
struct DataError : std::runtime_error {
  explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Bad configuration: unknown keys, invalid values, usage mistakes. Maps to
/// CLI exit code 1.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// A verification command found a defect. Maps to CLI exit code 3.
struct VerificationError : std::runtime_error {
  explicit VerificationError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace disenhcn
