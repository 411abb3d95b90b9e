#pragma once

#include <stdexcept>
#include <string>

namespace ccdnet {

/// Tensor geometry violation (channel mismatch, indivisible spatial dims, ...).
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& what) : std::runtime_error(what) {}
};

/// Batch-norm statistics out of range (sigma <= eps).
struct InvalidBnError : std::runtime_error {
    explicit InvalidBnError(const std::string& what) : std::runtime_error(what) {}
};

/// Non-finite or structurally invalid parameter value.
struct InvalidParamError : std::runtime_error {
    explicit InvalidParamError(const std::string& what) : std::runtime_error(what) {}
};

/// Config / dataset level problem surfaced to the CLI as exit code 2.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// File parse failure with location info.
struct ParseError : std::runtime_error {
    explicit ParseError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace ccdnet
