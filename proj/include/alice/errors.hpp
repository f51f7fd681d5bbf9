#pragma once

#include <stdexcept>
#include <string>

namespace alice {

// Invalid arguments, shapes, configuration or parse failures. CLI exit code 2.
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ShapeError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

// Non-finite values or failed numeric convergence. CLI exit code 3.
class DivergenceError : public std::runtime_error {
public:
    explicit DivergenceError(const std::string& what, long iteration = -1)
        : std::runtime_error(what), iteration_(iteration) {}

    // Iteration at which the divergence was detected, -1 if not applicable.
    long iteration() const noexcept { return iteration_; }

private:
    long iteration_;
};

// Filesystem failures. CLI exit code 4.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace alice
