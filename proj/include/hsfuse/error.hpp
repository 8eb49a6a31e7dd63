#ifndef HSFUSE_ERROR_HPP
#define HSFUSE_ERROR_HPP

#include <stdexcept>
#include <string>

namespace hsfuse {

enum class ErrorKind { parameter, dimension, io, solver, precondition };

inline const char* to_string(ErrorKind kind)
{
  switch (kind) {
    case ErrorKind::parameter: return "parameter";
    case ErrorKind::dimension: return "dimension";
    case ErrorKind::io: return "io";
    case ErrorKind::solver: return "solver";
    case ErrorKind::precondition: return "precondition";
  }
  return "unknown";
}

/// Base of every error thrown by the library. The kind drives CLI exit codes.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class ParameterError : public Error {
 public:
  explicit ParameterError(const std::string& what) : Error(ErrorKind::parameter, what) {}
};

class DimensionError : public Error {
 public:
  explicit DimensionError(const std::string& what) : Error(ErrorKind::dimension, what) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& what) : Error(ErrorKind::io, what) {}
};

class SolverError : public Error {
 public:
  explicit SolverError(const std::string& what) : Error(ErrorKind::solver, what) {}
};

class PreconditionError : public Error {
 public:
  explicit PreconditionError(const std::string& what) : Error(ErrorKind::precondition, what) {}
};

}  // namespace hsfuse

#endif  // HSFUSE_ERROR_HPP
