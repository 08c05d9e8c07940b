#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace pseudoloop {

enum class ErrorKind {
  kMalformedJson,
  kSchemaViolation,
  kReferenceError,
  kDuplicateId,
  kInsufficientInstances,
  kUnresolvableReference,
  kCategoryConflict,
  kNoGroundTruth,
  kMalformedPredictions,
  kMissingPredictionFile,
  kBackendFailure,
  kTimeout,
  kInvalidConfig,
  kIo,
  kPrecondition,
};

std::string_view ErrorKindName(ErrorKind kind);

// Base for every error raised by the library. The kind is what callers
// switch on; the message is for humans.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

// Bad input data: malformed files, broken references, duplicate ids.
class DataError : public Error {
 public:
  using Error::Error;
};

class InsufficientInstances : public DataError {
 public:
  InsufficientInstances(long long category_id, std::size_t available,
                        std::size_t k);

  long long category_id() const noexcept { return category_id_; }
  std::size_t available() const noexcept { return available_; }
  std::size_t requested() const noexcept { return requested_; }

 private:
  long long category_id_;
  std::size_t available_;
  std::size_t requested_;
};

class MissingPredictionFile : public DataError {
 public:
  MissingPredictionFile(int round, const std::string& path);
  int round() const noexcept { return round_; }

 private:
  int round_;
};

// The detector behind the protocol failed (non-zero exit, timeout).
class BackendError : public Error {
 public:
  BackendError(ErrorKind kind, int exit_code, const std::string& message,
               std::string stderr_excerpt = {})
      : Error(kind, message),
        exit_code_(exit_code),
        stderr_excerpt_(std::move(stderr_excerpt)) {}

  int exit_code() const noexcept { return exit_code_; }
  const std::string& stderr_excerpt() const noexcept { return stderr_excerpt_; }

 private:
  int exit_code_;
  std::string stderr_excerpt_;
};

// A caller broke an operation's precondition (for example predicting on an
// image the backend has never been told about).
class PreconditionError : public Error {
 public:
  explicit PreconditionError(const std::string& message)
      : Error(ErrorKind::kPrecondition, message) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& message)
      : Error(ErrorKind::kInvalidConfig, message) {}
};

}  // namespace pseudoloop
