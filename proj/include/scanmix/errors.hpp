#pragma once

#include <stdexcept>
#include <string>

namespace scanmix {

/// Invalid argument, shape or configuration value.
class ParameterError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Malformed text input. Carries the 1-based line number when known.
class ParseError : public std::runtime_error {
public:
    ParseError(const std::string& what, std::size_t line)
        : std::runtime_error(what + " (line " + std::to_string(line) + ")"), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// Non-finite value produced during a numeric computation.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Input has no spread to fit (e.g. all losses identical).
class DegeneracyError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// File missing, unreadable or unwritable.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Structurally valid file with missing or unexpected columns.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Config key unknown or out of range. key() names the offending field.
class ValidationError : public std::runtime_error {
public:
    ValidationError(std::string key, const std::string& what)
        : std::runtime_error(key + ": " + what), key_(std::move(key)) {}

    const std::string& key() const noexcept { return key_; }

private:
    std::string key_;
};

}  // namespace scanmix
