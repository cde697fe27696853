#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace iclmol {

/// Base class for every error the library raises.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor shapes do not fit the operation.
class DimensionError : public Error {
 public:
  using Error::Error;
};

/// Non-finite values, failed factorizations, diverging losses.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed input data, missing records, bad file contents.
class DataError : public Error {
 public:
  using Error::Error;
};

class ParseError : public DataError {
 public:
  ParseError(std::string source, std::size_t line, const std::string& what)
      : DataError(source + ":" + std::to_string(line) + ": " + what),
        source_(std::move(source)),
        line_(line) {}

  const std::string& source() const noexcept { return source_; }
  std::size_t line() const noexcept { return line_; }

 private:
  std::string source_;
  std::size_t line_;
};

class ValidationError : public DataError {
 public:
  ValidationError(std::string molecule_id, const std::string& what)
      : DataError("molecule '" + molecule_id + "': " + what),
        molecule_id_(std::move(molecule_id)) {}

  const std::string& molecule_id() const noexcept { return molecule_id_; }

 private:
  std::string molecule_id_;
};

}  // namespace iclmol
