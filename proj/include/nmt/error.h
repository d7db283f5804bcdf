#pragma once

#include <stdexcept>
#include <string>

namespace nmt {

// Bad data: malformed records, inconsistent inputs, numerical failures.
class DomainError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public DomainError {
 public:
  ParseError(const std::string& source, std::size_t line, const std::string& what)
      : DomainError(source + ":" + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

class DuplicateKeyError : public DomainError {
 public:
  using DomainError::DomainError;
};

class ConfigError : public DomainError {
 public:
  using DomainError::DomainError;
};

class ShapeError : public DomainError {
 public:
  using DomainError::DomainError;
};

// Raised by the optimizer when a gradient contains NaN or Inf.
class NonFiniteError : public DomainError {
 public:
  using DomainError::DomainError;
};

// File system failures. Always carries the offending path.
class IoError : public std::runtime_error {
 public:
  IoError(const std::string& path, const std::string& what)
      : std::runtime_error(path + ": " + what), path_(path) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

}  // namespace nmt
