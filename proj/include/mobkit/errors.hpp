#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace mobkit {

/// Base of every error the toolkit raises. The CLI maps subclasses onto exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Errors caused by bad configuration or ill-formed input (exit code 1).
class ValidationError : public Error {
 public:
  using Error::Error;
};

class EmptyDataset : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class OutOfOrderInput : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class ConfigError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class ShapeError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class TemplateError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

class DegenerateBase : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// No usable variant could be recovered from a teacher reply.
class StyleParseError : public Error {
 public:
  StyleParseError(const std::string& what, std::string raw_reply)
      : Error(what), raw_reply_(std::move(raw_reply)) {}

  const std::string& raw_reply() const noexcept { return raw_reply_; }

 private:
  std::string raw_reply_;
};

/// Endpoint failures (exit code 3).
class EndpointError : public Error {
 public:
  using Error::Error;
};

/// Connection failures or retry budget exhausted.
class TransportError : public EndpointError {
 public:
  using EndpointError::EndpointError;
};

/// Non-retryable HTTP status from the endpoint.
class ApiError : public EndpointError {
 public:
  ApiError(int status, const std::string& what) : EndpointError(what), status_(status) {}

  int status() const noexcept { return status_; }

 private:
  int status_;
};

}  // namespace mobkit
