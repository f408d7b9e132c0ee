#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace softqe {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// A configuration value violates a documented bound.
class ConfigError : public Error {
  public:
    using Error::Error;
};

/// Caller-supplied data is malformed (empty token list, dimension mismatch, ...).
class InputError : public Error {
  public:
    using Error::Error;
};

class LookupError : public Error {
  public:
    using Error::Error;
};

/// Cross-references between corpus parts, teachers and caches do not line up.
class IntegrityError : public Error {
  public:
    using Error::Error;
};

class SerializationError : public Error {
  public:
    using Error::Error;
};

/// A text file could not be parsed; carries the 1-based line number.
class ParseError : public Error {
  public:
    ParseError(const std::string& file, std::size_t line, const std::string& what)
        : Error(file + ":" + std::to_string(line) + ": " + what), m_line(line)
    {}
    std::size_t line() const { return m_line; }

  private:
    std::size_t m_line;
};

/// Training produced a non-finite loss or gradient.
class NumericalError : public Error {
  public:
    using Error::Error;
};

}  // namespace softqe
