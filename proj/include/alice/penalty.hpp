#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "alice/errors.hpp"

namespace alice {

// Closed family of penalty functions for inequality constraints h(x) <= 0.
enum class PenaltyKind { Phr, P1, P2, P3 };

PenaltyKind parse_penalty_kind(std::string_view name);
std::string to_string(PenaltyKind kind);

struct PenaltyParams {
    double rho = 1.0;    // penalty parameter, > 0
    double mu = 1.0;     // multiplier estimate, > 0
    double growth = 1.1; // rho growth factor, > 1

    void validate() const;
};

// P(y, rho, mu). Piecewise definitions; at a breakpoint the branch whose
// closure contains the point from the left is used (values coincide there).
double penalty_value(double y, const PenaltyParams& p, PenaltyKind kind);

// dP/dy. Equals mu exactly at y = 0 for every kind.
double penalty_derivative(double y, const PenaltyParams& p, PenaltyKind kind);

// Multiplier update: mu' = P'(h_val, rho, mu).
double update_multiplier(double h_val, const PenaltyParams& p, PenaltyKind kind);

// Scalar-constrained problem min g(x) s.t. h(x) <= 0 over a real vector x.
struct ConstrainedProblem {
    std::function<double(const std::vector<double>&)> objective;
    std::function<std::vector<double>(const std::vector<double>&)> objective_gradient;
    std::function<double(const std::vector<double>&)> constraint;
    std::function<std::vector<double>(const std::vector<double>&)> constraint_gradient;
};

struct InnerMinimizerConfig {
    double armijo = 1e-4;      // sufficient-decrease constant
    double gradient_tol = 1e-8;
    std::size_t max_steps = 10000;
    double initial_step = 1.0; // backtracking starts here, halves on failure
};

// State after one outer iteration: x, the updated multiplier and penalty
// parameter, and the objective/constraint values at x.
struct AlmIterationRecord {
    std::vector<double> x;
    double mu;
    double rho;
    double objective;
    double constraint;
};

struct AlmResult {
    std::vector<double> x;
    std::vector<AlmIterationRecord> trace;
};

// Outer loop: minimize g(x) + P(h(x), rho, mu) by gradient descent with
// Armijo backtracking, then mu <- P'(h(x), rho, mu). rho is multiplied by
// growth whenever the constraint is still violated or |h| failed to shrink
// by a factor of 0.9 versus the previous outer iteration.
AlmResult minimize_augmented_lagrangian(const ConstrainedProblem& prob,
                                        PenaltyKind kind,
                                        PenaltyParams params,
                                        std::vector<double> x0,
                                        std::size_t outer_iters,
                                        const InnerMinimizerConfig& inner = {});

} // namespace alice
