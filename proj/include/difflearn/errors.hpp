#pragma once

#include <stdexcept>
#include <string>

namespace difflearn {

/// Raised for malformed inputs: bad shapes, out-of-range indices, invalid
/// probabilities, unknown configuration keys.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Configuration document rejected. `path` names the offending field
/// (e.g. "simulation.blocks").
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string path, const std::string& what)
      : std::runtime_error(path + ": " + what), path_(std::move(path)) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

/// Divergence, non-convergence, or a linear system outside the stability range.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace difflearn
