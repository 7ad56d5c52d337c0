#pragma once

#include <cstdarg>
#include <cstdio>
#include <stdexcept>
#include <string>

namespace uspose {

inline std::string strf(const char* fmt, ...) {
    va_list args;
    va_start(args, fmt);
    va_list copy;
    va_copy(copy, args);
    int n = std::vsnprintf(nullptr, 0, fmt, copy);
    va_end(copy);
    std::string out(n > 0 ? static_cast<size_t>(n) : 0, '\0');
    if (n > 0) std::vsnprintf(out.data(), out.size() + 1, fmt, args);
    va_end(args);
    return out;
}

// Base for everything this library throws on purpose.
class Error : public std::runtime_error {
public:
    explicit Error(std::string msg) : std::runtime_error(std::move(msg)) {}
};

// Invalid configuration values (bad cutoffs, length mismatches, illegal specs).
class ConfigError : public Error {
public:
    using Error::Error;
};

// Invalid runtime inputs (labels out of range, degenerate vectors, modality mixes).
class InputError : public Error {
public:
    using Error::Error;
};

// Tensor-level shape incompatibilities, named by operation.
class ShapeError : public InputError {
public:
    using InputError::InputError;
};

// Dataset files that fail validation.
class DataError : public Error {
public:
    using Error::Error;
};

// Nonfinite losses/gradients and other failures inside a training run.
class TrainError : public Error {
public:
    using Error::Error;
};

// API misuse (backward on a non-scalar, splitting fewer than two trials).
class UsageError : public Error {
public:
    using Error::Error;
};

}  // namespace uspose
