#pragma once

#include <cstddef>
#include <utility>
#include <vector>

#include "alice/matrix.hpp"

namespace alice {

struct SolverConfig {
    double alpha1 = 0.5;  // nuclear-norm weight
    double alpha2 = 1.0;  // entrywise l1 weight
    double mu_init = 10.0; // broadcast to every entry of both dual matrices
    double rho_init = 1.0;
    double growth = 1.1;
    std::size_t max_iters = 100;
    double y_step = 1e-2;
    std::size_t y_inner_steps = 1;
    double residual_tol = 1e-3;
    // Default grows rho every iteration. The conditional variant grows only
    // when the worst residual failed to shrink by a factor of 0.9.
    bool conditional_rho_growth = false;

    void validate() const;
};

struct SolverState {
    Matrix y;
    Matrix j1;
    Matrix j2;
    Matrix mu1;
    Matrix mu2;
    double rho1 = 1.0;
    double rho2 = 1.0;
    std::size_t iter = 0;
};

struct SolverIterationRecord {
    std::size_t iter;
    double objective;
    double residual_j1;
    double residual_j2;
    std::size_t rank;     // numerical rank of the low-rank block J1
    double sparsity;      // near-zero fraction of the sparse block J2
    bool y_stalled;
};

struct SolveResult {
    Matrix y;
    std::vector<SolverIterationRecord> trace;
    bool converged = false;
};

struct DualUpdate {
    Matrix mu1;
    Matrix mu2;
    double rho1;
    double rho2;
};

struct YUpdateResult {
    Matrix y;
    bool stalled = false;
    // Accepted step size per inner descent step, in order, with the Y value
    // the step was taken from.
    std::vector<double> steps;
    std::vector<Matrix> step_origins;
};

// Y0 = newton_schulz_sqrt(A, 5); J1 = J2 = Y0; duals filled with mu_init.
SolverState init_state(const SymmetricMatrix& a, const SolverConfig& cfg);

// argmin over J1 of alpha1 ||J1||_* + <mu1, J1 - Y> + rho1/2 ||J1 - Y||_F^2.
Matrix update_j1(const SolverState& s, const SolverConfig& cfg);

// Same with the entrywise l1 term: soft threshold of Y - mu2/rho2.
Matrix update_j2(const SolverState& s, const SolverConfig& cfg);

// Gradient of the smooth part of the splitting at s.y, symmetrized:
// 2(Y(Y^2-A) + (Y^2-A)Y) - mu1 + rho1(Y-J1) - mu2 + rho2(Y-J2).
Matrix y_gradient(const SolverState& s, const Matrix& a);

// y_inner_steps descent steps with symmetrization after each; the step is
// halved up to 20 times whenever the smooth objective would increase. A step
// that cannot decrease even after 20 halvings leaves Y unchanged and flags
// the stall.
YUpdateResult update_y(const SolverState& s, const Matrix& a, const SolverConfig& cfg);

// mu_i += rho_i (J_i - Y); then rho_i *= growth (unconditionally by default).
DualUpdate update_duals(const SolverState& s, const SolverConfig& cfg,
                        double prev_worst_residual = -1.0);

// ||Y^2 - A||_F^2 + alpha1 ||Y||_* + alpha2 ||Y||_1.
double objective(const Matrix& a, const Matrix& y, double alpha1, double alpha2);

// Smooth part of the augmented objective at state s (used by update_y).
double smooth_objective(const SolverState& s, const Matrix& a);

// Records the inputs of every accepted Y descent step so gradients can be
// pushed back through the unrolled updates. J and mu are constants per
// iteration by design; the init is treated as constant as well.
struct SolveTape {
    struct YStep {
        Matrix y_before; // symmetric
        double step;
        double rho1;
        double rho2;
    };
    std::vector<YStep> steps;
    Matrix y_final;
};

SolveResult solve(const SymmetricMatrix& a, const SolverConfig& cfg,
                  SolveTape* tape = nullptr);

// Given dL/dY*, accumulate dL/dA through the recorded descent steps.
// J/mu are held constant; the Newton-Schulz warm start contributes nothing.
Matrix solve_backward(const SolveTape& tape, const Matrix& a, const Matrix& grad_y_final);

} // namespace alice
