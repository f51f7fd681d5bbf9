#include "alice/adversarial.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace alice {

AttackNorm parse_attack_norm(const std::string& s) {
    std::string t;
    for (char ch : s) t.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    if (t == "l2") return AttackNorm::L2;
    if (t == "linf") return AttackNorm::Linf;
    throw ValidationError("unknown attack norm '" + s + "' (expected l2 or linf)");
}

std::string to_string(AttackNorm n) {
    return n == AttackNorm::L2 ? "l2" : "linf";
}

void AttackConfig::validate() const {
    if (!(epsilon >= 0.0) || !std::isfinite(epsilon))
        throw ValidationError("attack config: epsilon must be finite and nonnegative");
    if (steps < 1) throw ValidationError("attack config: at least one step required");
    if (!(step_size >= 0.0) || !std::isfinite(step_size))
        throw ValidationError("attack config: step size must be finite and nonnegative");
    if (!(range_min <= range_max))
        throw ValidationError("attack config: empty valid range");
}

double AttackConfig::resolved_step_size() const {
    if (step_size > 0.0) return step_size;
    return 2.5 * epsilon / static_cast<double>(steps);
}

namespace {

void project_ball(Matrix& delta, const AttackConfig& cfg) {
    if (cfg.norm == AttackNorm::Linf) {
        for (double& v : delta.data()) v = std::clamp(v, -cfg.epsilon, cfg.epsilon);
        return;
    }
    for (std::size_t i = 0; i < delta.rows(); ++i) {
        double n2 = 0.0;
        for (std::size_t j = 0; j < delta.cols(); ++j) n2 += delta(i, j) * delta(i, j);
        const double n = std::sqrt(n2);
        if (n > cfg.epsilon) {
            const double scale = cfg.epsilon / n;
            for (std::size_t j = 0; j < delta.cols(); ++j) delta(i, j) *= scale;
        }
    }
}

// Clamp x + delta into the valid range, folding the cut back into delta.
// For in-range x this can only shrink each coordinate of delta, so ball
// membership survives.
void clamp_range(Matrix& delta, const Matrix& x, const AttackConfig& cfg) {
    if (!std::isfinite(cfg.range_min) && !std::isfinite(cfg.range_max)) return;
    for (std::size_t i = 0; i < delta.size(); ++i) {
        const double moved =
            std::clamp(x.data()[i] + delta.data()[i], cfg.range_min, cfg.range_max);
        delta.data()[i] = moved - x.data()[i];
    }
}

} // namespace

AttackResult pgd_attack(Network& net, const Matrix& x, const std::vector<int>& labels,
                        const AttackConfig& cfg) {
    cfg.validate();
    if (x.rows() != labels.size())
        throw ShapeError("attack: label count does not match batch size");
    if (x.rows() == 0) throw ValidationError("attack: empty batch");
    if (net.mode() == PipelineMode::Bilinear)
        throw ValidationError("attack: second-order checkpoints are not supported; "
                              "attack the first-order classifier");

    if (cfg.epsilon == 0.0) return {x, {}};

    const double step = cfg.resolved_step_size();
    const std::size_t b = x.rows(), d = x.cols();

    Matrix delta(b, d, 0.0);
    if (cfg.random_init) {
        std::mt19937_64 rng(cfg.seed);
        std::uniform_real_distribution<double> u(-cfg.epsilon, cfg.epsilon);
        for (double& v : delta.data()) v = u(rng);
        project_ball(delta, cfg);
    }
    clamp_range(delta, x, cfg);

    AttackResult out;
    out.x_adv = x + delta;
    std::vector<double> best(b, -std::numeric_limits<double>::infinity());

    for (std::size_t t = 0;; ++t) {
        const Matrix cur = x + delta;
        Matrix logits = net.forward(cur, Head::Classifier, false);
        const CrossEntropyResult ce = softmax_cross_entropy(logits, labels);
        if (!std::isfinite(ce.loss))
            throw DivergenceError("attack: loss became non-finite during ascent",
                                  static_cast<long>(t));
        out.loss_trace.push_back(ce.loss);
        for (std::size_t i = 0; i < b; ++i)
            if (ce.per_sample[i] > best[i]) {
                best[i] = ce.per_sample[i];
                for (std::size_t j = 0; j < d; ++j) out.x_adv(i, j) = cur(i, j);
            }
        if (t == cfg.steps) break;

        const Matrix gx = net.backward(ce.dlogits);
        if (cfg.norm == AttackNorm::Linf) {
            for (std::size_t i = 0; i < delta.size(); ++i) {
                const double g = gx.data()[i];
                if (g > 0.0)
                    delta.data()[i] += step;
                else if (g < 0.0)
                    delta.data()[i] -= step;
            }
        } else {
            for (std::size_t i = 0; i < b; ++i) {
                double n2 = 0.0;
                for (std::size_t j = 0; j < d; ++j) n2 += gx(i, j) * gx(i, j);
                const double n = std::sqrt(n2);
                if (n == 0.0) continue;
                for (std::size_t j = 0; j < d; ++j) delta(i, j) += step * gx(i, j) / n;
            }
        }
        project_ball(delta, cfg);
        clamp_range(delta, x, cfg);
    }

    net.zero_grads();
    return out;
}

std::vector<std::uint8_t> is_adversarial(Network& net, const Matrix& x,
                                         const Matrix& x_adv) {
    if (!x.same_shape(x_adv))
        throw ShapeError("is_adversarial: shapes of clean and attacked batches differ");
    const Matrix clean = net.forward(x, Head::Classifier, false);
    const Matrix attacked = net.forward(x_adv, Head::Classifier, false);
    std::vector<std::uint8_t> out(x.rows(), 0);
    for (std::size_t i = 0; i < x.rows(); ++i)
        out[i] = argmax_row(clean, i) != argmax_row(attacked, i) ? 1 : 0;
    return out;
}

double adversarial_fraction(Network& net, const Matrix& x, const Matrix& x_adv) {
    const auto flags = is_adversarial(net, x, x_adv);
    if (flags.empty()) return 0.0;
    double s = 0.0;
    for (std::uint8_t f : flags) s += f;
    return s / static_cast<double>(flags.size());
}

double clean_train_step(Network& net, const Matrix& batch,
                        const std::vector<int>& labels, SgdOptimizer& opt) {
    if (batch.rows() == 0) throw ValidationError("train step: empty batch");
    Matrix logits = net.forward(batch, Head::Classifier, true);
    const CrossEntropyResult ce = softmax_cross_entropy(logits, labels);
    net.backward(ce.dlogits);
    opt.step(net);
    return ce.loss;
}

double minmax_train_step(Network& net, const Matrix& batch,
                         const std::vector<int>& labels, const AttackConfig& cfg,
                         SgdOptimizer& opt) {
    cfg.validate();
    if (cfg.epsilon == 0.0) return clean_train_step(net, batch, labels, opt);
    const AttackResult atk = pgd_attack(net, batch, labels, cfg);
    return clean_train_step(net, atk.x_adv, labels, opt);
}

double minmax_train_step(Network& net, const Matrix& batch,
                         const std::vector<int>& labels, const AttackConfig& cfg,
                         const SgdConfig& opt) {
    SgdOptimizer one_shot(net, opt);
    return minmax_train_step(net, batch, labels, cfg, one_shot);
}

} // namespace alice
