#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace dwrec {

// Base of every error thrown by the library. `is_data_error()` separates bad
// input data (exit code 2 in the CLI) from misuse of the API or bad flags.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what, bool data_error = true)
      : std::runtime_error(what), data_error_(data_error) {}
  bool is_data_error() const noexcept { return data_error_; }

 private:
  bool data_error_;
};

class ParseError : public Error {
 public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class ValidationError : public Error {
 public:
  using Error::Error;
};

class EmptyCorpusError : public Error {
 public:
  explicit EmptyCorpusError(const std::string& what = "corpus has no usable interactions")
      : Error(what) {}
};

class SplitError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(what, false) {}
};

class StatsError : public Error {
 public:
  using Error::Error;
};

class ScheduleError : public Error {
 public:
  using Error::Error;
};

class LossConfigError : public Error {
 public:
  using Error::Error;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

// Violated call contract (wrong batch size, stale cache, ...).
class ContractError : public Error {
 public:
  explicit ContractError(const std::string& what) : Error(what, false) {}
};

class DegenerateBatchError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

class MetricError : public Error {
 public:
  using Error::Error;
};

}  // namespace dwrec
