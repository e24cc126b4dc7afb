#pragma once

#include <stdexcept>
#include <string>

namespace sml {

// Base of everything thrown by this library.
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad arguments or configuration, detected before any work starts.
class InvalidArgument : public Error {
public:
    explicit InvalidArgument(const std::string& msg) : Error(msg) {}
};

// Malformed or unreadable input (stack files, manifests, model files).
enum class DataErrorKind {
    io,
    bad_magic,
    bad_header,
    truncated,
    trailing_bytes,
    too_few_slices,
    non_finite,
    out_of_range,
    bad_manifest,
    bad_model,
};

class DataError : public Error {
public:
    DataError(DataErrorKind kind, const std::string& msg) : Error(msg), kind_(kind) {}
    DataErrorKind kind() const noexcept { return kind_; }

private:
    DataErrorKind kind_;
};

// Eigensolver missed the residual contract within its iteration cap.
class EigenError : public Error {
public:
    EigenError(const std::string& msg, double achieved_residual)
        : Error(msg), residual_(achieved_residual) {}
    double achieved_residual() const noexcept { return residual_; }

private:
    double residual_;
};

// Constant vector fed to the sign-normalization rule.
class DegenerateVector : public Error {
public:
    explicit DegenerateVector(const std::string& msg) : Error(msg) {}
};

}  // namespace sml
