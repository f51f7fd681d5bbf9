#include "alice/penalty.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

namespace alice {

PenaltyKind parse_penalty_kind(std::string_view name) {
    std::string up(name);
    std::transform(up.begin(), up.end(), up.begin(),
                   [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
    if (up == "PHR") return PenaltyKind::Phr;
    if (up == "P1") return PenaltyKind::P1;
    if (up == "P2") return PenaltyKind::P2;
    if (up == "P3") return PenaltyKind::P3;
    throw ValidationError("unknown penalty kind: \"" + std::string(name) +
                          "\" (expected PHR, P1, P2 or P3)");
}

std::string to_string(PenaltyKind kind) {
    switch (kind) {
        case PenaltyKind::Phr: return "PHR";
        case PenaltyKind::P1: return "P1";
        case PenaltyKind::P2: return "P2";
        case PenaltyKind::P3: return "P3";
    }
    throw ValidationError("invalid penalty kind value");
}

void PenaltyParams::validate() const {
    if (!(rho > 0.0)) throw ValidationError("penalty params: rho must be positive");
    if (!(mu > 0.0)) throw ValidationError("penalty params: mu must be positive");
    if (!(growth > 1.0)) throw ValidationError("penalty params: growth must exceed 1");
}

double penalty_value(double y, const PenaltyParams& p, PenaltyKind kind) {
    const double rho = p.rho, mu = p.mu;
    switch (kind) {
        case PenaltyKind::Phr: {
            const double a = std::max(0.0, mu + rho * y);
            return (a * a - mu * mu) / (2.0 * rho);
        }
        case PenaltyKind::P1: {
            if (y > 0.0) return mu * y + 0.5 * rho * y * y + rho * rho * y * y * y;
            if (y > -mu / rho) return mu * y + 0.5 * rho * y * y;
            return -mu * mu / (2.0 * rho);
        }
        case PenaltyKind::P2: {
            if (y > 0.0) return mu * y + mu * rho * y * y + rho * rho * y * y * y / 6.0;
            return mu * y / (1.0 - rho * y);
        }
        case PenaltyKind::P3: {
            if (y > 0.0) return mu * y + mu * rho * y * y;
            return mu * y / (1.0 - rho * y);
        }
    }
    throw ValidationError("invalid penalty kind value");
}

double penalty_derivative(double y, const PenaltyParams& p, PenaltyKind kind) {
    const double rho = p.rho, mu = p.mu;
    switch (kind) {
        case PenaltyKind::Phr:
            return std::max(0.0, mu + rho * y);
        case PenaltyKind::P1: {
            if (y > 0.0) return mu + rho * y + 3.0 * rho * rho * y * y;
            if (y > -mu / rho) return mu + rho * y;
            return 0.0;
        }
        case PenaltyKind::P2: {
            if (y > 0.0) return mu + 2.0 * mu * rho * y + 0.5 * rho * rho * y * y;
            const double d = 1.0 - rho * y;
            return mu / (d * d);
        }
        case PenaltyKind::P3: {
            if (y > 0.0) return mu + 2.0 * mu * rho * y;
            const double d = 1.0 - rho * y;
            return mu / (d * d);
        }
    }
    throw ValidationError("invalid penalty kind value");
}

double update_multiplier(double h_val, const PenaltyParams& p, PenaltyKind kind) {
    return penalty_derivative(h_val, p, kind);
}

namespace {

double norm2(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

bool all_finite(const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}

} // namespace

AlmResult minimize_augmented_lagrangian(const ConstrainedProblem& prob,
                                        PenaltyKind kind,
                                        PenaltyParams params,
                                        std::vector<double> x0,
                                        std::size_t outer_iters,
                                        const InnerMinimizerConfig& inner) {
    params.validate();
    if (x0.empty()) throw ValidationError("alm: empty initial point");
    if (!prob.objective || !prob.objective_gradient || !prob.constraint ||
        !prob.constraint_gradient)
        throw ValidationError("alm: problem callbacks must all be set");

    std::vector<double> x = std::move(x0);
    AlmResult result;
    result.trace.reserve(outer_iters);

    double h_prev_abs = std::abs(prob.constraint(x));

    for (std::size_t outer = 0; outer < outer_iters; ++outer) {
        auto aug_value = [&](const std::vector<double>& pt) {
            return prob.objective(pt) + penalty_value(prob.constraint(pt), params, kind);
        };
        auto aug_gradient = [&](const std::vector<double>& pt) {
            std::vector<double> g = prob.objective_gradient(pt);
            const double dpen = penalty_derivative(prob.constraint(pt), params, kind);
            const std::vector<double> hg = prob.constraint_gradient(pt);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] += dpen * hg[i];
            return g;
        };

        for (std::size_t step = 0; step < inner.max_steps; ++step) {
            const double f0 = aug_value(x);
            if (!std::isfinite(f0) || !all_finite(x))
                throw DivergenceError("alm: non-finite objective during inner loop at outer iteration " +
                                          std::to_string(outer),
                                      static_cast<long>(outer));

            const std::vector<double> g = aug_gradient(x);
            const double gn = norm2(g);
            if (gn <= inner.gradient_tol) break;

            double t = inner.initial_step;
            bool accepted = false;
            while (t > 1e-20) {
                std::vector<double> cand(x.size());
                for (std::size_t i = 0; i < x.size(); ++i) cand[i] = x[i] - t * g[i];
                const double fc = aug_value(cand);
                if (std::isfinite(fc) && fc <= f0 - inner.armijo * t * gn * gn) {
                    x = std::move(cand);
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if (!accepted) break; // no descent at machine-level steps
        }

        const double h_val = prob.constraint(x);
        const double g_val = prob.objective(x);
        if (!std::isfinite(h_val) || !std::isfinite(g_val) || !all_finite(x))
            throw DivergenceError("alm: non-finite state after inner minimization at outer iteration " +
                                      std::to_string(outer),
                                  static_cast<long>(outer));

        params.mu = update_multiplier(h_val, params, kind);
        // mu must stay positive for the P-family branch structure; clamp away
        // from exact zero when the constraint is deeply satisfied.
        params.mu = std::max(params.mu, 1e-12);

        const bool violated = h_val > 0.0;
        const bool stalled = std::abs(h_val) > 0.9 * h_prev_abs;
        if (violated || stalled) params.rho *= params.growth;
        h_prev_abs = std::abs(h_val);

        result.trace.push_back({x, params.mu, params.rho, g_val, h_val});
    }

    result.x = std::move(x);
    return result;
}

} // namespace alice
