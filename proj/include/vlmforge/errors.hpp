#pragma once

#include <stdexcept>
#include <string>

namespace vlmforge {

// Base for every failure raised by the toolkit. The CLI maps UsageError to
// exit code 2 and everything else to exit code 1.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// A caller broke a documented precondition.
class ContractError : public Error {
 public:
  using Error::Error;
};

class IngestError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class CompositionError : public Error {
 public:
  using Error::Error;
};

class UsageError : public Error {
 public:
  using Error::Error;
};

// Remote endpoint returned an error or an unusable body.
class ServiceError : public Error {
 public:
  using Error::Error;
};

// Remote endpoint could not be reached at all (connection refused, timeout).
class EndpointUnavailable : public ServiceError {
 public:
  using ServiceError::ServiceError;
};

class ConflictError : public Error {
 public:
  using Error::Error;
};

class AuthError : public Error {
 public:
  using Error::Error;
};

// Authenticated, but the resource belongs to someone else.
class ForbiddenError : public Error {
 public:
  using Error::Error;
};

class NotFoundError : public Error {
 public:
  using Error::Error;
};

}  // namespace vlmforge
