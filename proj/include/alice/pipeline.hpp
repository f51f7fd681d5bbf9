#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "alice/adversarial.hpp"
#include "alice/contrastive.hpp"
#include "alice/dataset.hpp"
#include "alice/metrics.hpp"
#include "alice/nn.hpp"
#include "alice/serialize.hpp"
#include "alice/solver.hpp"

namespace alice {

// Flat bag of every knob the training CLI accepts. JSON config files mirror
// these field names one-to-one.
struct TrainConfig {
    std::size_t adversarial_epochs = 40;
    std::size_t contrastive_epochs = 30;
    std::size_t lagrangian_epochs = 10;
    double learning_rate1 = 0.01;  // stages 1-2
    double learning_rate2 = 0.001; // stage 3
    std::size_t batch_size = 128;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    double tau = 0.1;
    double attack_epsilon = 0.5; // budget in feature units
    std::size_t attack_steps = 20;
    double attack_step_size = 0.0; // 0 = heuristic
    std::string attack_norm = "l2";
    double augment_noise_sigma = 0.05;
    double augment_dropout_p = 0.1;
    double augment_scale_s = 0.1;
    double mixup_alpha = 0.0; // 0 turns mixup off
    double solver_alpha1 = 0.5;
    double solver_alpha2 = 1.0;
    double solver_mu_init = 10.0;
    double solver_rho_init = 1.0;
    double solver_growth = 1.1;
    std::size_t solver_max_iters = 30;
    double solver_y_step = 1e-2;
    std::size_t solver_y_inner_steps = 1;
    double solver_residual_tol = 1e-3;
    std::size_t hidden_dim = 128;
    std::size_t embedding_dim = 128;
    std::size_t spatial_positions = 8;
    std::size_t channels = 16;
    std::size_t reduced_channels = 8;
    std::size_t proj_hidden = 64;
    std::size_t proj_dim = 32;
    std::uint64_t seed = 0;
    bool record_timing = true; // false writes wall_clock_s as 0 for exact diffs

    // Throws on hard violations; returns soft warnings (e.g. the stage-3
    // learning rate not being the smaller one).
    std::vector<std::string> validate() const;

    AttackConfig attack_config() const;
    AugmentConfig augment_config() const;
    SolverConfig solver_config() const;
    NetConfig net_config(std::size_t input_dim, std::size_t class_count) const;

    static TrainConfig from_json(const ordered_json& j); // unknown keys rejected
    static TrainConfig from_json_file(const std::string& path);
    ordered_json to_json() const;
};

struct EvalResult {
    double accuracy = 0.0;
    std::vector<double> per_class; // accuracy per label
    std::size_t sample_count = 0;
    std::size_t solver_skips = 0; // second-order path only
};

// Each stage mutates the network in place and appends one record per epoch.
void stage_adversarial_pretrain(Network& net, const Dataset& d, const TrainConfig& cfg,
                                std::vector<MetricsRecord>& metrics);
void stage_contrastive(Network& net, const Dataset& d, const TrainConfig& cfg,
                       std::vector<MetricsRecord>& metrics);
void stage_lagrangian_finetune(Network& net, const Dataset& d, const TrainConfig& cfg,
                               std::vector<MetricsRecord>& metrics);

// Top-1 accuracy, ties to the lowest class index. Dispatches on the network
// mode: first-order checkpoints use the classifier head directly, second-order
// ones run reduction + pooling + the normalizing solver per sample. Samples
// whose solve diverges count as wrong and are tallied in solver_skips.
EvalResult evaluate(Network& net, const DataSplit& split, const SolverConfig& solver);

struct PipelineResult {
    EvalResult final_eval;
    std::vector<MetricsRecord> metrics;
};

// The full three-stage run. When out_dir is nonempty, writes
// checkpoint_{adversarial,contrastive,final}.json and metrics.jsonl there.
PipelineResult train_pipeline(const Dataset& d, const TrainConfig& cfg,
                              const std::string& out_dir);

// Plain cross-entropy training with the same total epoch budget and learning
// rate schedule; the comparison line for the pipeline.
PipelineResult train_baseline(const Dataset& d, const TrainConfig& cfg,
                              const std::string& out_dir);

} // namespace alice
