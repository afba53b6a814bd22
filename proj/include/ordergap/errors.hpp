#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace ordergap {

// Base for every error raised by the harness.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed input, violated precondition or invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

class ParseError : public ValidationError {
 public:
  ParseError(std::size_t line, const std::string& what)
      : ValidationError("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class VersionError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class ChecksumError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Unknown run id, experiment or core.
class NotFoundError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// A metric was requested over runs that still await a human grade.
class IncompleteGradingError : public Error {
 public:
  explicit IncompleteGradingError(std::vector<std::string> pending)
      : Error(describe(pending)), pending_(std::move(pending)) {}
  const std::vector<std::string>& pending() const noexcept { return pending_; }

 private:
  static std::string describe(const std::vector<std::string>& ids) {
    std::string msg = std::to_string(ids.size()) + " run(s) pending grading:";
    for (const auto& id : ids) msg += " " + id;
    return msg;
  }
  std::vector<std::string> pending_;
};

class BackendError : public Error {
 public:
  using Error::Error;
};

// Backend could not be constructed or reached.
class LoadError : public BackendError {
 public:
  using BackendError::BackendError;
};

// Prompt plus generation budget exceeds the backend context window.
class LengthError : public BackendError {
 public:
  using BackendError::BackendError;
};

}  // namespace ordergap
