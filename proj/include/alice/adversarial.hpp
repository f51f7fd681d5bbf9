#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "alice/nn.hpp"

namespace alice {

enum class AttackNorm { L2, Linf };

AttackNorm parse_attack_norm(const std::string& s);
std::string to_string(AttackNorm n);

struct AttackConfig {
    double epsilon = 3.0;
    std::size_t steps = 20;
    double step_size = 0.0; // 0 picks the 2.5 * epsilon / steps heuristic
    AttackNorm norm = AttackNorm::L2;
    bool random_init = false; // uniform in the ball instead of zero
    std::uint64_t seed = 0;   // draws the random start
    // Valid feature range, clamped after ball projection.
    double range_min = -std::numeric_limits<double>::infinity();
    double range_max = std::numeric_limits<double>::infinity();

    void validate() const;
    double resolved_step_size() const;
};

struct AttackResult {
    Matrix x_adv;
    // Mean cross-entropy at the start point and after each ascent step.
    std::vector<double> loss_trace;
};

// Projected gradient ascent on the classification loss around x. The model is
// run in eval mode and its parameter gradients are cleared afterwards; each
// returned row is the iterate that scored the highest loss for that sample.
AttackResult pgd_attack(Network& net, const Matrix& x, const std::vector<int>& labels,
                        const AttackConfig& cfg);

// Per sample: does the predicted class change between x and x_adv?
std::vector<std::uint8_t> is_adversarial(Network& net, const Matrix& x,
                                         const Matrix& x_adv);
double adversarial_fraction(Network& net, const Matrix& x, const Matrix& x_adv);

// Inner maximization (attack) followed by one SGD step on the adversarial
// batch. Returns the loss the step was taken against. A zero budget skips the
// attack entirely, leaving a plain cross-entropy step.
double minmax_train_step(Network& net, const Matrix& batch,
                         const std::vector<int>& labels, const AttackConfig& cfg,
                         SgdOptimizer& opt);
// One-shot variant; momentum state does not persist across calls.
double minmax_train_step(Network& net, const Matrix& batch,
                         const std::vector<int>& labels, const AttackConfig& cfg,
                         const SgdConfig& opt);

// One SGD step on the clean batch. Shares the code path the zero-budget
// min-max step reduces to.
double clean_train_step(Network& net, const Matrix& batch,
                        const std::vector<int>& labels, SgdOptimizer& opt);

} // namespace alice
