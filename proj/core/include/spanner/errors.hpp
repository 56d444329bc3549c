#pragma once

#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace spanner {

// Invalid configuration: bad hyperparameters, width mismatches, missing
// class descriptions.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input data violates a contract: ids out of range, spans out of bounds,
// unknown class names.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed text input (BIO files, description JSON, config files).
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Data that cannot be represented in the requested output format.
class SerializationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Checkpoint could not be loaded (bad magic, version, checksum, shapes).
class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using WarningSink = std::function<void(std::string_view)>;

// Replaces the process-wide warning sink and returns the previous one.
// The default sink writes "warning: <msg>" lines to stderr. Not thread-safe;
// install sinks before starting worker threads.
WarningSink set_warning_sink(WarningSink sink);

void warn(std::string_view message);

}  // namespace spanner
