#pragma once

#include <stdexcept>
#include <string>

namespace pointseg {

// Domain error taxonomy. The CLI maps any of these to exit code 1; usage
// errors are handled by the argument parser and exit with 2.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ParseError : std::runtime_error {
    explicit ParseError(const std::string& msg) : std::runtime_error(msg) {}
};

struct AnnotationError : std::runtime_error {
    explicit AnnotationError(const std::string& msg) : std::runtime_error(msg) {}
};

struct InputError : std::runtime_error {
    explicit InputError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace pointseg
