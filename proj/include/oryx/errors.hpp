#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace oryx {

// Bad argument values (dimensions, ranges, flags).
struct InvalidInput : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Input smaller than the operation can handle (e.g. side < patch size).
struct TooSmall : InvalidInput {
    using InvalidInput::InvalidInput;
};

// Incompatible array shapes.
struct ShapeError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Corrupted or inconsistent data (offsets, file contents).
struct IntegrityError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Non-finite values where finite ones are required.
struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed tensor file; byte_offset points at the first violating byte.
struct TensorFormatError : IntegrityError {
    std::size_t byte_offset;
    TensorFormatError(const std::string& msg, std::size_t offset)
        : IntegrityError(msg + " (byte offset " + std::to_string(offset) + ")"),
          byte_offset(offset) {}
};

} // namespace oryx
