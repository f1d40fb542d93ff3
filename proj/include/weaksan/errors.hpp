#pragma once

#include <stdexcept>
#include <string>

namespace weaksan {

// Bad input: malformed files, invalid parameters, violated preconditions.
// The CLI maps this to exit code 1.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A pipeline stage could not complete on otherwise valid input
// (e.g. a class vanished from the reliable subset). Exit code 2.
class StageError : public std::runtime_error {
 public:
  StageError(std::string stage, const std::string& what)
      : std::runtime_error(stage + ": " + what), stage_(std::move(stage)) {}

  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

}  // namespace weaksan
