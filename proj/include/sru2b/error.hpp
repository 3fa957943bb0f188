#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace sru2b {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Operand dimensions disagree.
class ShapeError : public Error {
public:
    using Error::Error;
};

// A documented precondition was violated by the caller.
class PreconditionError : public Error {
public:
    using Error::Error;
};

// An id (item, user, feature value) did not resolve.
class LookupError : public Error {
public:
    using Error::Error;
};

// Malformed line-delimited input. line() is 1-based.
class ParseError : public Error {
public:
    ParseError(std::size_t line, const std::string& what)
        : Error("line " + std::to_string(line) + ": " + what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

// Checkpoint bytes do not match the expected layout. offset() is the byte
// position where reading failed.
class FormatError : public Error {
public:
    FormatError(std::size_t offset, const std::string& what)
        : Error("offset " + std::to_string(offset) + ": " + what), offset_(offset) {}

    std::size_t offset() const noexcept { return offset_; }

private:
    std::size_t offset_;
};

// A NaN or infinity showed up where a finite number was required.
class NumericError : public Error {
public:
    using Error::Error;
};

// Model/checkpoint/config dimensions are incompatible.
class MismatchError : public Error {
public:
    using Error::Error;
};

}  // namespace sru2b
