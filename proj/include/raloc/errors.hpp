#pragma once

#include <stdexcept>
#include <string>

namespace raloc {

// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Timestamps out of order (non-monotone stream, dt <= 0, ...).
class OrderingError : public Error {
 public:
  using Error::Error;
};

// Two preintegrated intervals that do not share an endpoint.
class DiscontinuityError : public Error {
 public:
  using Error::Error;
};

// Range factor evaluated with the antenna sitting on the anchor.
class SingularGeometryError : public Error {
 public:
  using Error::Error;
};

class DegenerateFactorError : public Error {
 public:
  using Error::Error;
};

// Information matrix is rank deficient; `directions()` is the null-space dimension.
class UnconstrainedError : public Error {
 public:
  UnconstrainedError(const std::string& what, int directions)
      : Error(what), directions_(directions) {}
  int directions() const { return directions_; }

 private:
  int directions_;
};

class StaleOffsetError : public Error {
 public:
  using Error::Error;
};

class NoEstimateError : public Error {
 public:
  using Error::Error;
};

class AssociationError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ParseError : public IoError {
 public:
  ParseError(const std::string& what, std::size_t line) : IoError(what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, std::string dump)
      : Error(what), dump_(std::move(dump)) {}
  const std::string& dump() const { return dump_; }

 private:
  std::string dump_;
};

}  // namespace raloc
