#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>

namespace memodetector {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed input record; carries the 1-based line number.
class ParseError : public Error {
public:
    ParseError(std::size_t line, const std::string& what)
        : Error("line " + std::to_string(line) + ": " + what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// Well-formed input that violates a data invariant (duplicate id, unknown label, ...).
class ValidationError : public Error {
public:
    explicit ValidationError(const std::string& what) : Error(what) {}
    ValidationError(std::size_t line, const std::string& what)
        : Error("line " + std::to_string(line) + ": " + what), line_(line) {}

    std::optional<std::size_t> line() const noexcept { return line_; }

private:
    std::optional<std::size_t> line_;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

/// Transport or authentication failure talking to the MLLM endpoint.
class EndpointError : public Error {
public:
    using Error::Error;
};

/// The endpoint answered, but with nothing usable.
class GenerationError : public Error {
public:
    using Error::Error;
};

class PreprocessingError : public Error {
public:
    using Error::Error;
};

/// Undecodable image or otherwise unusable encoder input.
class InputError : public Error {
public:
    using Error::Error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

/// Empty sequence or fully masked side reaching attention / pooling.
class DegenerateInputError : public Error {
public:
    using Error::Error;
};

class NumericError : public Error {
public:
    using Error::Error;
};

}  // namespace memodetector
