#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace trojanforge {

/// Argument or shape contract violated by the caller.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Malformed IDX input. `offset` is the byte position where parsing failed.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}

  std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

/// floor(alpha * N) == 0: no sample would carry the trigger.
class DegenerateAlpha : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// NaN/Inf appeared during training. `step` is the round or iteration index.
class NumericError : public std::runtime_error {
 public:
  NumericError(const std::string& what, std::size_t step)
      : std::runtime_error(what + " (step " + std::to_string(step) + ")"), step_(step) {}

  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

/// Bad experiment configuration; message names the key and line.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace trojanforge
