#pragma once

#include <stdexcept>
#include <string>

namespace rws {

/// Bad experiment / CLI configuration. Mapped to exit code 2 by the CLI.
class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Malformed or unusable input data (CSV rows, non-finite values, ...).
/// Mapped to exit code 1 by the CLI.
class DataError : public std::runtime_error {
 public:
  DataError(const std::string& msg, long line = 0)
      : std::runtime_error(line > 0 ? msg + " (line " + std::to_string(line) + ")" : msg),
        line_(line) {}
  long line() const { return line_; }

 private:
  long line_;
};

/// Snapshot failed its checksum.
class SnapshotCorruptionError : public DataError {
 public:
  explicit SnapshotCorruptionError(const std::string& msg) : DataError(msg) {}
};

/// Snapshot written by an unknown (newer) format version.
class SnapshotVersionError : public DataError {
 public:
  explicit SnapshotVersionError(const std::string& msg) : DataError(msg) {}
};

/// Normal-equation system not invertible even after regularization.
class SingularSystemError : public std::runtime_error {
 public:
  SingularSystemError(const std::string& msg, double smallest_eigenvalue)
      : std::runtime_error(msg), smallest_eigenvalue_(smallest_eigenvalue) {}
  double smallest_eigenvalue() const { return smallest_eigenvalue_; }

 private:
  double smallest_eigenvalue_;
};

}  // namespace rws
