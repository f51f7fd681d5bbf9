#include "alice/solver.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace alice {

void SolverConfig::validate() const {
    if (!(alpha1 >= 0.0)) throw ValidationError("solver config: alpha1 must be nonnegative");
    if (!(alpha2 >= 0.0)) throw ValidationError("solver config: alpha2 must be nonnegative");
    if (!(rho_init > 0.0)) throw ValidationError("solver config: rho_init must be positive");
    if (!(growth > 1.0)) throw ValidationError("solver config: growth must exceed 1");
    if (!(mu_init >= 0.0)) throw ValidationError("solver config: mu_init must be nonnegative");
    if (max_iters == 0) throw ValidationError("solver config: max_iters must be positive");
    if (!(y_step > 0.0)) throw ValidationError("solver config: y_step must be positive");
    if (!(residual_tol >= 0.0))
        throw ValidationError("solver config: residual_tol must be nonnegative");
}

SolverState init_state(const SymmetricMatrix& a, const SolverConfig& cfg) {
    cfg.validate();
    const std::size_t n = a.order();
    SolverState s;
    s.y = newton_schulz_sqrt(a, 5).matrix();
    s.j1 = s.y;
    s.j2 = s.y;
    s.mu1 = Matrix(n, n, cfg.mu_init);
    s.mu2 = Matrix(n, n, cfg.mu_init);
    s.rho1 = cfg.rho_init;
    s.rho2 = cfg.rho_init;
    s.iter = 0;
    return s;
}

Matrix update_j1(const SolverState& s, const SolverConfig& cfg) {
    // Complete the square: prox of (alpha1/rho1) ||.||_* at Y - mu1/rho1.
    Matrix target = s.y - (1.0 / s.rho1) * s.mu1;
    return singular_value_threshold(SymmetricMatrix::from(target.symmetrized()),
                                    cfg.alpha1 / s.rho1)
        .matrix();
}

Matrix update_j2(const SolverState& s, const SolverConfig& cfg) {
    Matrix target = s.y - (1.0 / s.rho2) * s.mu2;
    return soft_threshold(target, cfg.alpha2 / s.rho2);
}

namespace {

Matrix y_gradient_at(const Matrix& y, const Matrix& a, const Matrix& j1, const Matrix& j2,
                     const Matrix& mu1, const Matrix& mu2, double rho1, double rho2) {
    Matrix e = matmul(y, y) - a;
    Matrix g = 2.0 * (matmul(y, e) + matmul(e, y));
    g -= mu1;
    g += rho1 * (y - j1);
    g -= mu2;
    g += rho2 * (y - j2);
    return g.symmetrized();
}

double smooth_objective_at(const Matrix& y, const Matrix& a, const Matrix& j1,
                           const Matrix& j2, const Matrix& mu1, const Matrix& mu2,
                           double rho1, double rho2) {
    Matrix e = matmul(y, y) - a;
    const double fit = e.frobenius_norm();
    Matrix d1 = j1 - y;
    Matrix d2 = j2 - y;
    const double r1 = d1.frobenius_norm();
    const double r2 = d2.frobenius_norm();
    return fit * fit + dot(mu1, d1) + 0.5 * rho1 * r1 * r1 + dot(mu2, d2) +
           0.5 * rho2 * r2 * r2;
}

} // namespace

Matrix y_gradient(const SolverState& s, const Matrix& a) {
    return y_gradient_at(s.y, a, s.j1, s.j2, s.mu1, s.mu2, s.rho1, s.rho2);
}

double smooth_objective(const SolverState& s, const Matrix& a) {
    return smooth_objective_at(s.y, a, s.j1, s.j2, s.mu1, s.mu2, s.rho1, s.rho2);
}

YUpdateResult update_y(const SolverState& s, const Matrix& a, const SolverConfig& cfg) {
    YUpdateResult out;
    out.y = s.y;
    double f_cur = smooth_objective_at(out.y, a, s.j1, s.j2, s.mu1, s.mu2, s.rho1, s.rho2);

    for (std::size_t inner = 0; inner < cfg.y_inner_steps; ++inner) {
        Matrix g = y_gradient_at(out.y, a, s.j1, s.j2, s.mu1, s.mu2, s.rho1, s.rho2);
        double t = cfg.y_step;
        bool accepted = false;
        for (int halving = 0; halving <= 20; ++halving) {
            Matrix cand = (out.y - t * g).symmetrized();
            const double fc =
                smooth_objective_at(cand, a, s.j1, s.j2, s.mu1, s.mu2, s.rho1, s.rho2);
            if (std::isfinite(fc) && fc <= f_cur) {
                out.step_origins.push_back(out.y);
                out.y = std::move(cand);
                f_cur = fc;
                out.steps.push_back(t);
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if (!accepted) {
            out.stalled = true; // recorded in the trace; state left unchanged
            break;
        }
    }
    return out;
}

DualUpdate update_duals(const SolverState& s, const SolverConfig& cfg,
                        double prev_worst_residual) {
    DualUpdate d;
    d.mu1 = s.mu1 + s.rho1 * (s.j1 - s.y);
    d.mu2 = s.mu2 + s.rho2 * (s.j2 - s.y);
    bool grow = true;
    if (cfg.conditional_rho_growth && prev_worst_residual >= 0.0) {
        const double worst = std::max((s.j1 - s.y).frobenius_norm(),
                                      (s.j2 - s.y).frobenius_norm());
        grow = worst > 0.9 * prev_worst_residual;
    }
    d.rho1 = grow ? s.rho1 * cfg.growth : s.rho1;
    d.rho2 = grow ? s.rho2 * cfg.growth : s.rho2;
    return d;
}

double objective(const Matrix& a, const Matrix& y, double alpha1, double alpha2) {
    Matrix e = matmul(y, y) - a;
    const double fit = e.frobenius_norm();
    double obj = fit * fit;
    if (alpha1 != 0.0) obj += alpha1 * norms(y).nuclear;
    if (alpha2 != 0.0) obj += alpha2 * y.sum_abs();
    return obj;
}

SolveResult solve(const SymmetricMatrix& a, const SolverConfig& cfg, SolveTape* tape) {
    cfg.validate();
    const Matrix& am = a.matrix();

    // same slack the covariance kernel guarantees, so pooled inputs always pass
    const SymmetricEigen ae = eigendecompose_symmetric(a);
    double min_eig = 0.0;
    for (double v : ae.values) min_eig = std::min(min_eig, v);
    if (min_eig < -1e-9 * std::max(1.0, am.frobenius_norm()))
        throw ValidationError("solve: input must be positive semidefinite");

    SolverState s = init_state(a, cfg);
    SolveResult result;
    result.trace.reserve(cfg.max_iters);

    double prev_worst = -1.0;
    for (std::size_t iter = 0; iter < cfg.max_iters; ++iter) {
        try {
            s.j1 = update_j1(s, cfg);
            s.j2 = update_j2(s, cfg);

            YUpdateResult yu = update_y(s, am, cfg);
            if (tape) {
                for (std::size_t k = 0; k < yu.steps.size(); ++k)
                    tape->steps.push_back(
                        {std::move(yu.step_origins[k]), yu.steps[k], s.rho1, s.rho2});
            }
            s.y = yu.y;

            DualUpdate d = update_duals(s, cfg, prev_worst);
            s.mu1 = std::move(d.mu1);
            s.mu2 = std::move(d.mu2);
            s.rho1 = d.rho1;
            s.rho2 = d.rho2;
            s.iter = iter + 1;

            if (!s.y.all_finite() || !s.j1.all_finite() || !s.j2.all_finite() ||
                !s.mu1.all_finite() || !s.mu2.all_finite())
                throw DivergenceError("non-finite solver state");

            const double r1 = (s.j1 - s.y).frobenius_norm();
            const double r2 = (s.j2 - s.y).frobenius_norm();
            prev_worst = std::max(r1, r2);

            SolverIterationRecord rec;
            rec.iter = iter;
            rec.objective = objective(am, s.y, cfg.alpha1, cfg.alpha2);
            rec.residual_j1 = r1;
            rec.residual_j2 = r2;
            rec.rank = numerical_rank(s.j1, 1e-6);
            rec.sparsity = near_zero_fraction(s.j2, 1e-9);
            rec.y_stalled = yu.stalled;
            result.trace.push_back(rec);

            const double scale = std::max(1.0, s.y.frobenius_norm());
            if (r1 <= cfg.residual_tol * scale && r2 <= cfg.residual_tol * scale) {
                result.converged = true;
                break;
            }
        } catch (const DivergenceError& e) {
            throw DivergenceError("solve diverged at iteration " + std::to_string(iter) +
                                      ": " + e.what(),
                                  static_cast<long>(iter));
        }
    }

    if (tape) tape->y_final = s.y;
    result.y = std::move(s.y);
    return result;
}

Matrix solve_backward(const SolveTape& tape, const Matrix& a, const Matrix& grad_y_final) {
    if (grad_y_final.rows() != a.rows() || grad_y_final.cols() != a.cols())
        throw ShapeError("solve_backward: gradient shape mismatch");

    const std::size_t n = a.rows();
    Matrix g = grad_y_final.symmetrized(); // VJP of the trailing symmetrization
    Matrix grad_a(n, n, 0.0);

    for (std::size_t idx = tape.steps.size(); idx-- > 0;) {
        const SolveTape::YStep& st = tape.steps[idx];
        const Matrix& y = st.y_before;
        const double t = st.step;

        // dL/dA from this step: Y_{k+1} depends on A through -t * (-2)(Y A + A Y).
        grad_a += (2.0 * t) * (matmul(y, g) + matmul(g, y));

        // Hessian-vector product of the smooth objective at y applied to g:
        // H(g) = 2(gE + Eg) + 2(2 Y g Y + Y^2 g + g Y^2) + (rho1 + rho2) g.
        Matrix y2 = matmul(y, y);
        Matrix e = y2 - a;
        Matrix hg = 2.0 * (matmul(g, e) + matmul(e, g));
        hg += 2.0 * (2.0 * matmul(matmul(y, g), y) + matmul(y2, g) + matmul(g, y2));
        hg += (st.rho1 + st.rho2) * g;

        g -= t * hg;
        g = g.symmetrized(); // VJP of the per-step symmetrization
    }

    return grad_a.symmetrized();
}

} // namespace alice
