#pragma once

#include <stdexcept>
#include <string>

namespace st {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CorruptCheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct VersionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct OracleError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ProbeInvalidError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct DegenerateGradientError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace st
