#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace picirc {

/// Invalid caller-supplied argument (bad rule size, missing latent in an order, ...).
class ArgumentError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Graph-level problem: cycles, non-tree inputs, dangling children.
class StructuralError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite value produced where a finite one is required.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed serialized input. `offset()` is the byte position reported by the parser.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& what, std::size_t offset)
      : std::runtime_error(what), offset_(offset) {}
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

/// Well-formed document that does not follow the expected schema.
class SchemaError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Requested construction would exceed the configured size guard.
class SizeError : public std::runtime_error {
 public:
  SizeError(const std::string& what, std::size_t projected)
      : std::runtime_error(what), projected_(projected) {}
  std::size_t projected_units() const { return projected_; }

 private:
  std::size_t projected_;
};

/// Data file problems: ragged rows, out-of-support values.
class LoadError : public std::runtime_error {
 public:
  LoadError(const std::string& what, std::size_t row, std::size_t column)
      : std::runtime_error(what), row_(row), column_(column) {}
  std::size_t row() const { return row_; }
  std::size_t column() const { return column_; }

 private:
  std::size_t row_;
  std::size_t column_;
};

}  // namespace picirc
