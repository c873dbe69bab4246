#pragma once

#include <stdexcept>
#include <string>

namespace sinkflow {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct DimensionMismatch : Error {
    using Error::Error;
};

struct NonPositiveEpsilon : Error {
    using Error::Error;
};

// Raised when a kernel factorization reports a condition number beyond the
// configured threshold; carries the estimate.
struct IllConditioned : Error {
    IllConditioned(const std::string& what, double cond_estimate)
        : Error(what), condition_estimate(cond_estimate) {}
    double condition_estimate;
};

struct EmptySupport : Error {
    using Error::Error;
};

struct NotInCone : Error {
    using Error::Error;
};

struct NotMassZero : Error {
    using Error::Error;
};

struct NotTangent : Error {
    using Error::Error;
};

struct EmbeddingInvariantViolated : Error {
    EmbeddingInvariantViolated(const std::string& what, double res)
        : Error(what), residual(res) {}
    double residual;
};

struct LcpNotConverged : Error {
    LcpNotConverged(const std::string& what, double res)
        : Error(what), residual(res) {}
    double residual;
};

struct ConfigError : Error {
    using Error::Error;
};

struct IoError : Error {
    using Error::Error;
};

}  // namespace sinkflow
