#pragma once

#include <stdexcept>
#include <string>

namespace dmgin {

// Error taxonomy mirrored by the CLI exit codes: config 2, dependency 3,
// invariant 4. Everything else (bad arguments, shape mismatches) throws
// std::invalid_argument / std::runtime_error.

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DependencyError : std::runtime_error {
  explicit DependencyError(const std::string& msg) : std::runtime_error(msg) {}
};

struct InvariantViolation : std::runtime_error {
  explicit InvariantViolation(const std::string& msg) : std::runtime_error(msg) {}
};

inline void check_arg(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

inline void check_invariant(bool ok, const std::string& msg) {
  if (!ok) throw InvariantViolation(msg);
}

}  // namespace dmgin
