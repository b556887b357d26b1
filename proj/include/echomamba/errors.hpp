#pragma once

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace echomamba {

// Base class for everything this library throws on purpose.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Incompatible tensor shapes (the message carries both shapes).
struct ShapeError : Error {
    explicit ShapeError(const std::string& msg) : Error(msg) {}
};

// A caller violated an operation's precondition.
struct ContractError : Error {
    explicit ContractError(const std::string& msg) : Error(msg) {}
};

// An index (item id, axis, position) is out of range.
struct IndexError : Error {
    explicit IndexError(const std::string& msg) : Error(msg) {}
};

// A forward op produced NaN/Inf while finite checking is enabled.
struct NumericError : Error {
    explicit NumericError(const std::string& msg) : Error(msg) {}
};

// Malformed input file.
struct ParseError : Error {
    explicit ParseError(const std::string& msg) : Error(msg) {}
};

// Unreadable/unwritable data file, or a dataset condition that cannot be
// worked with (e.g. fully filtered away).
struct DataError : Error {
    explicit DataError(const std::string& msg) : Error(msg) {}
};

// Invalid run configuration.
struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error(msg) {}
};

inline std::string shape_str(const std::vector<std::int64_t>& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

}  // namespace echomamba
