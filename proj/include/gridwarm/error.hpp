#pragma once

#include <stdexcept>
#include <string>

namespace gridwarm {

/// Base for every error the library throws.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ParseError : public Error {
public:
    ParseError(const std::string& what, int line)
        : Error(line > 0 ? "line " + std::to_string(line) + ": " + what : what), line_(line) {}
    int line() const noexcept { return line_; }

private:
    int line_;
};

class ValidationError : public Error {
public:
    using Error::Error;
};

/// JSON document does not match the expected layout; message names the path.
class SchemaError : public Error {
public:
    using Error::Error;
};

/// Solver or factorization failure that cannot be reported as data.
class NumericalError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

} // namespace gridwarm
