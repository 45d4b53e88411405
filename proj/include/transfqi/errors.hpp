#pragma once

#include <stdexcept>
#include <string>

namespace transfqi {

// Bad inputs: shape mismatches, invalid distributions, malformed files.
class ValidationError : public std::runtime_error {
public:
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Numerical failures: singular systems, iteration limits.
class SolverError : public std::runtime_error {
public:
    SolverError(const std::string& msg, double diagnostic = 0.0)
        : std::runtime_error(msg), diagnostic_(diagnostic) {}

    // Context-dependent: condition estimate for factorizations,
    // KKT violation for lasso, last residual for value iteration.
    double diagnostic() const { return diagnostic_; }

private:
    double diagnostic_;
};

} // namespace transfqi
