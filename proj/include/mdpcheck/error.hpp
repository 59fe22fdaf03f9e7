#ifndef MDPCHECK_ERROR_HPP_
#define MDPCHECK_ERROR_HPP_

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mdpcheck {

/// Root of every error the library throws.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid parameters: unknown env id, bad sizes, batch/episode misalignment.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// API misuse, e.g. stepping a finished episode.
class UsageError : public Error {
 public:
  using Error::Error;
};

/// Malformed input file. Carries the 1-based line number (0 when unknown).
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(line ? "line " + std::to_string(line) + ": " + what : what),
        line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Well-formed input that violates a data invariant (dimension mismatch...).
class ValidationError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

class TrainingError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

class AnalysisError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

}  // namespace mdpcheck

#endif  // MDPCHECK_ERROR_HPP_
