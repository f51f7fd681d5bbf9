#include "alice/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>

namespace alice {

namespace fs = std::filesystem;

std::vector<std::string> TrainConfig::validate() const {
    if (batch_size < 1) throw ValidationError("config: batch_size must be positive");
    if (!(learning_rate1 >= 0.0) || !(learning_rate2 >= 0.0))
        throw ValidationError("config: learning rates must be nonnegative");
    if (!(momentum >= 0.0 && momentum < 1.0))
        throw ValidationError("config: momentum must lie in [0, 1)");
    if (!(weight_decay >= 0.0))
        throw ValidationError("config: weight_decay must be nonnegative");
    if (!(tau > 0.0)) throw ValidationError("config: tau must be positive");
    if (!(mixup_alpha >= 0.0))
        throw ValidationError("config: mixup_alpha must be nonnegative");
    attack_config().validate();
    augment_config().validate();
    solver_config().validate();
    if (spatial_positions * channels != embedding_dim)
        throw ValidationError("config: embedding_dim must equal "
                              "spatial_positions * channels");
    std::vector<std::string> warnings;
    if (!(learning_rate2 < learning_rate1))
        warnings.push_back("learning_rate2 >= learning_rate1: the fine-tuning stage "
                           "usually runs at the smaller rate");
    return warnings;
}

AttackConfig TrainConfig::attack_config() const {
    AttackConfig a;
    a.epsilon = attack_epsilon;
    a.steps = attack_steps;
    a.step_size = attack_step_size;
    a.norm = parse_attack_norm(attack_norm);
    return a;
}

AugmentConfig TrainConfig::augment_config() const {
    AugmentConfig a;
    a.noise_sigma = augment_noise_sigma;
    a.dropout_p = augment_dropout_p;
    a.scale_s = augment_scale_s;
    return a;
}

SolverConfig TrainConfig::solver_config() const {
    SolverConfig s;
    s.alpha1 = solver_alpha1;
    s.alpha2 = solver_alpha2;
    s.mu_init = solver_mu_init;
    s.rho_init = solver_rho_init;
    s.growth = solver_growth;
    s.max_iters = solver_max_iters;
    s.y_step = solver_y_step;
    s.y_inner_steps = solver_y_inner_steps;
    s.residual_tol = solver_residual_tol;
    return s;
}

NetConfig TrainConfig::net_config(std::size_t input_dim, std::size_t class_count) const {
    NetConfig n;
    n.input_dim = input_dim;
    n.class_count = class_count;
    n.hidden_dim = hidden_dim;
    n.embedding_dim = embedding_dim;
    n.proj_hidden = proj_hidden;
    n.proj_dim = proj_dim;
    n.spatial_positions = spatial_positions;
    n.channels = channels;
    n.reduced_channels = reduced_channels;
    n.validate();
    return n;
}

namespace {

template <typename T>
void pick(const ordered_json& j, const char* key, T& slot) {
    if (j.contains(key)) slot = j.at(key).get<T>();
}

} // namespace

TrainConfig TrainConfig::from_json(const ordered_json& j) {
    static const char* known[] = {
        "adversarial_epochs", "contrastive_epochs", "lagrangian_epochs",
        "learning_rate1", "learning_rate2", "batch_size", "momentum", "weight_decay",
        "tau", "attack_epsilon", "attack_steps", "attack_step_size", "attack_norm",
        "augment_noise_sigma", "augment_dropout_p", "augment_scale_s", "mixup_alpha",
        "solver_alpha1", "solver_alpha2", "solver_mu_init", "solver_rho_init",
        "solver_growth", "solver_max_iters", "solver_y_step", "solver_y_inner_steps",
        "solver_residual_tol", "hidden_dim", "embedding_dim", "spatial_positions",
        "channels", "reduced_channels", "proj_hidden", "proj_dim", "seed",
        "record_timing"};
    if (!j.is_object()) throw ValidationError("config: expected a JSON object");
    for (const auto& item : j.items()) {
        const std::string& key = item.key();
        if (std::find_if(std::begin(known), std::end(known),
                         [&](const char* k) { return key == k; }) == std::end(known))
            throw ValidationError("config: unknown key '" + key + "'");
    }
    TrainConfig c;
    try {
        pick(j, "adversarial_epochs", c.adversarial_epochs);
        pick(j, "contrastive_epochs", c.contrastive_epochs);
        pick(j, "lagrangian_epochs", c.lagrangian_epochs);
        pick(j, "learning_rate1", c.learning_rate1);
        pick(j, "learning_rate2", c.learning_rate2);
        pick(j, "batch_size", c.batch_size);
        pick(j, "momentum", c.momentum);
        pick(j, "weight_decay", c.weight_decay);
        pick(j, "tau", c.tau);
        pick(j, "attack_epsilon", c.attack_epsilon);
        pick(j, "attack_steps", c.attack_steps);
        pick(j, "attack_step_size", c.attack_step_size);
        pick(j, "attack_norm", c.attack_norm);
        pick(j, "augment_noise_sigma", c.augment_noise_sigma);
        pick(j, "augment_dropout_p", c.augment_dropout_p);
        pick(j, "augment_scale_s", c.augment_scale_s);
        pick(j, "mixup_alpha", c.mixup_alpha);
        pick(j, "solver_alpha1", c.solver_alpha1);
        pick(j, "solver_alpha2", c.solver_alpha2);
        pick(j, "solver_mu_init", c.solver_mu_init);
        pick(j, "solver_rho_init", c.solver_rho_init);
        pick(j, "solver_growth", c.solver_growth);
        pick(j, "solver_max_iters", c.solver_max_iters);
        pick(j, "solver_y_step", c.solver_y_step);
        pick(j, "solver_y_inner_steps", c.solver_y_inner_steps);
        pick(j, "solver_residual_tol", c.solver_residual_tol);
        pick(j, "hidden_dim", c.hidden_dim);
        pick(j, "embedding_dim", c.embedding_dim);
        pick(j, "spatial_positions", c.spatial_positions);
        pick(j, "channels", c.channels);
        pick(j, "reduced_channels", c.reduced_channels);
        pick(j, "proj_hidden", c.proj_hidden);
        pick(j, "proj_dim", c.proj_dim);
        pick(j, "seed", c.seed);
        pick(j, "record_timing", c.record_timing);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError(std::string("config: ") + e.what());
    }
    return c;
}

TrainConfig TrainConfig::from_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "' for reading");
    ordered_json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("config '" + path + "': " + e.what());
    }
    return from_json(j);
}

ordered_json TrainConfig::to_json() const {
    ordered_json j;
    j["adversarial_epochs"] = adversarial_epochs;
    j["contrastive_epochs"] = contrastive_epochs;
    j["lagrangian_epochs"] = lagrangian_epochs;
    j["learning_rate1"] = learning_rate1;
    j["learning_rate2"] = learning_rate2;
    j["batch_size"] = batch_size;
    j["momentum"] = momentum;
    j["weight_decay"] = weight_decay;
    j["tau"] = tau;
    j["attack_epsilon"] = attack_epsilon;
    j["attack_steps"] = attack_steps;
    j["attack_step_size"] = attack_step_size;
    j["attack_norm"] = attack_norm;
    j["augment_noise_sigma"] = augment_noise_sigma;
    j["augment_dropout_p"] = augment_dropout_p;
    j["augment_scale_s"] = augment_scale_s;
    j["mixup_alpha"] = mixup_alpha;
    j["solver_alpha1"] = solver_alpha1;
    j["solver_alpha2"] = solver_alpha2;
    j["solver_mu_init"] = solver_mu_init;
    j["solver_rho_init"] = solver_rho_init;
    j["solver_growth"] = solver_growth;
    j["solver_max_iters"] = solver_max_iters;
    j["solver_y_step"] = solver_y_step;
    j["solver_y_inner_steps"] = solver_y_inner_steps;
    j["solver_residual_tol"] = solver_residual_tol;
    j["hidden_dim"] = hidden_dim;
    j["embedding_dim"] = embedding_dim;
    j["spatial_positions"] = spatial_positions;
    j["channels"] = channels;
    j["reduced_channels"] = reduced_channels;
    j["proj_hidden"] = proj_hidden;
    j["proj_dim"] = proj_dim;
    j["seed"] = seed;
    j["record_timing"] = record_timing;
    return j;
}

namespace {

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    // splitmix64 step keyed by the stream index
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch,
                                                   std::mt19937_64& rng,
                                                   std::size_t min_tail) {
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng);
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t at = 0; at < n; at += batch) {
        const std::size_t end = std::min(n, at + batch);
        out.emplace_back(idx.begin() + at, idx.begin() + end);
    }
    if (out.size() >= 2 && out.back().size() < min_tail) {
        auto tail = std::move(out.back());
        out.pop_back();
        out.back().insert(out.back().end(), tail.begin(), tail.end());
    }
    return out;
}

Matrix gather_rows(const Matrix& x, const std::vector<std::size_t>& idx) {
    Matrix out(idx.size(), x.cols());
    for (std::size_t r = 0; r < idx.size(); ++r)
        for (std::size_t j = 0; j < x.cols(); ++j) out(r, j) = x(idx[r], j);
    return out;
}

std::vector<int> gather_labels(const std::vector<int>& labels,
                               const std::vector<std::size_t>& idx) {
    std::vector<int> out(idx.size());
    for (std::size_t r = 0; r < idx.size(); ++r) out[r] = labels[idx[r]];
    return out;
}

double elapsed_s(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double plain_train_accuracy(Network& net, const DataSplit& split) {
    const Matrix logits = net.forward(split.x, Head::Classifier, false);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < split.size(); ++i)
        if (argmax_row(logits, i) == static_cast<std::size_t>(split.labels[i])) ++hits;
    return split.size() ? static_cast<double>(hits) / static_cast<double>(split.size())
                        : 0.0;
}

// One mixup-enabled CE step: attack on hard labels, convex-combine the
// adversarial rows pairwise, step on the soft targets.
double mixup_ce_step(Network& net, const Matrix& xb, const std::vector<int>& yb,
                     std::size_t class_count, const AttackConfig& atk, double alpha,
                     SgdOptimizer& opt, std::mt19937_64& rng) {
    Matrix base = xb;
    if (atk.epsilon > 0.0) base = pgd_attack(net, xb, yb, atk).x_adv;

    const std::size_t b = base.rows(), d = base.cols();
    std::vector<std::size_t> partner(b);
    std::iota(partner.begin(), partner.end(), 0);
    std::shuffle(partner.begin(), partner.end(), rng);

    std::gamma_distribution<double> gamma(alpha, 1.0);
    Matrix mixed(b, d);
    Matrix targets(b, class_count, 0.0);
    for (std::size_t i = 0; i < b; ++i) {
        const double g1 = gamma(rng), g2 = gamma(rng);
        const double lam = g1 + g2 > 0.0 ? g1 / (g1 + g2) : 0.5;
        const std::size_t p = partner[i];
        for (std::size_t j = 0; j < d; ++j)
            mixed(i, j) = lam * base(i, j) + (1.0 - lam) * base(p, j);
        targets(i, static_cast<std::size_t>(yb[i])) += lam;
        targets(i, static_cast<std::size_t>(yb[p])) += 1.0 - lam;
    }

    const Matrix logits = net.forward(mixed, Head::Classifier, true);
    const CrossEntropyResult ce = softmax_cross_entropy_soft(logits, targets);
    net.backward(ce.dlogits);
    opt.step(net);
    return ce.loss;
}

// Shared min-max / clean CE epoch driver used by stage 1 and the baseline.
void run_ce_epochs(Network& net, const DataSplit& train, std::size_t class_count,
                   const TrainConfig& cfg, const AttackConfig& atk, double lr,
                   std::size_t epochs, long epoch_offset, const std::string& stage_name,
                   std::uint64_t stream, std::vector<MetricsRecord>& metrics) {
    TrainScope scope;
    scope.projection = false;
    scope.reduction = false;
    SgdOptimizer opt(net, {lr, cfg.momentum, cfg.weight_decay}, scope);
    std::mt19937_64 rng(derive_seed(cfg.seed, stream));

    for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        const auto batches = make_batches(train.size(), cfg.batch_size, rng, 1);
        double loss_sum = 0.0;
        std::size_t seen = 0;
        for (const auto& idx : batches) {
            const Matrix xb = gather_rows(train.x, idx);
            const std::vector<int> yb = gather_labels(train.labels, idx);
            double loss;
            try {
                loss = cfg.mixup_alpha > 0.0
                           ? mixup_ce_step(net, xb, yb, class_count, atk,
                                           cfg.mixup_alpha, opt, rng)
                           : minmax_train_step(net, xb, yb, atk, opt);
            } catch (const DivergenceError& e) {
                throw DivergenceError(stage_name + " stage, epoch " +
                                          std::to_string(epoch_offset +
                                                         static_cast<long>(epoch)) +
                                          ": " + e.what(),
                                      e.iteration());
            }
            loss_sum += loss * static_cast<double>(idx.size());
            seen += idx.size();
        }
        MetricsRecord r;
        r.stage = stage_name;
        r.epoch = epoch_offset + static_cast<long>(epoch);
        r.loss = seen ? loss_sum / static_cast<double>(seen) : 0.0;
        r.accuracy = plain_train_accuracy(net, train);
        r.wall_clock_s = cfg.record_timing ? elapsed_s(t0) : 0.0;
        metrics.push_back(std::move(r));
    }
}

} // namespace

void stage_adversarial_pretrain(Network& net, const Dataset& d, const TrainConfig& cfg,
                                std::vector<MetricsRecord>& metrics) {
    if (d.train.size() == 0) throw ValidationError("pretrain stage: empty train split");
    run_ce_epochs(net, d.train, d.class_count, cfg, cfg.attack_config(),
                  cfg.learning_rate1, cfg.adversarial_epochs, 0, "adversarial",
                  /*stream=*/1, metrics);
}

void stage_contrastive(Network& net, const Dataset& d, const TrainConfig& cfg,
                       std::vector<MetricsRecord>& metrics) {
    if (d.train.size() == 0)
        throw ValidationError("contrastive stage: empty train split");
    if (!net.has_projection())
        throw ValidationError("contrastive stage: the checkpoint has no projection head");

    TrainScope scope;
    scope.classifier = false;
    scope.reduction = false;
    SgdOptimizer opt(net, {cfg.learning_rate1, cfg.momentum, cfg.weight_decay}, scope);
    std::mt19937_64 rng(derive_seed(cfg.seed, 2));
    const AugmentConfig aug = cfg.augment_config();
    const Temperature temp{cfg.tau};

    for (std::size_t epoch = 0; epoch < cfg.contrastive_epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        const auto batches = make_batches(d.train.size(), cfg.batch_size, rng, 2);
        double loss_sum = 0.0;
        std::size_t anchors = 0;
        for (const auto& idx : batches) {
            const Matrix xb = gather_rows(d.train.x, idx);
            const std::vector<int> yb = gather_labels(d.train.labels, idx);
            const ViewBatch vb = make_views(xb, yb, aug, rng());

            ContrastiveBatch cb;
            cb.z = net.forward(vb.views, Head::Projection, true);
            cb.labels = vb.labels;
            cb.view_origin = vb.view_origin;

            ContrastiveLossResult res = supervised_contrastive_loss(cb, temp);
            // Anchor-mean step keeps the update scale independent of batch size.
            const double scale = 1.0 / static_cast<double>(cb.size());
            res.dz *= scale;
            net.backward(res.dz);
            opt.step(net);

            loss_sum += res.loss;
            anchors += cb.size();
        }
        MetricsRecord r;
        r.stage = "contrastive";
        r.epoch = static_cast<long>(epoch);
        r.loss = anchors ? loss_sum / static_cast<double>(anchors) : 0.0;
        r.accuracy = plain_train_accuracy(net, d.train);
        r.wall_clock_s = cfg.record_timing ? elapsed_s(t0) : 0.0;
        metrics.push_back(std::move(r));
    }
}

namespace {

struct SampleChain {
    std::size_t row;          // position in the batch
    StackCache red_cache;     // reduction pass
    Matrix reduced;           // m x c'
    Matrix a;                 // pooled covariance
    SolveTape tape;
    SolverIterationRecord last;
};

// dL/dX for A = X^T Ibar X given symmetric dL/dA: 2 (Ibar X) G.
Matrix covariance_pool_backward(const Matrix& x, const Matrix& grad_a) {
    const std::size_t m = x.rows(), c = x.cols();
    Matrix centered(m, c);
    for (std::size_t j = 0; j < c; ++j) {
        double mean = 0.0;
        for (std::size_t i = 0; i < m; ++i) mean += x(i, j);
        mean /= static_cast<double>(m);
        for (std::size_t i = 0; i < m; ++i) centered(i, j) = x(i, j) - mean;
    }
    Matrix g = matmul(centered, grad_a.symmetrized());
    g *= 2.0 / static_cast<double>(m);
    return g;
}

} // namespace

void stage_lagrangian_finetune(Network& net, const Dataset& d, const TrainConfig& cfg,
                               std::vector<MetricsRecord>& metrics) {
    if (d.train.size() == 0)
        throw ValidationError("fine-tune stage: empty train split");
    const NetConfig& nc = net.config();
    const std::size_t m = nc.spatial_positions, c = nc.channels;
    if (m * c != nc.embedding_dim)
        throw ValidationError("fine-tune stage: embedding does not factor into "
                              "positions x channels");

    net.rebuild_bilinear_classifier(derive_seed(cfg.seed, 5));

    TrainScope scope;
    scope.projection = false;
    SgdOptimizer opt(net, {cfg.learning_rate2, cfg.momentum, cfg.weight_decay}, scope);
    std::mt19937_64 rng(derive_seed(cfg.seed, 3));
    const SolverConfig solver_cfg = cfg.solver_config();
    const std::size_t cr = nc.reduced_channels;

    std::size_t skipped_total = 0, seen_total = 0;

    for (std::size_t epoch = 0; epoch < cfg.lagrangian_epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        const auto batches = make_batches(d.train.size(), cfg.batch_size, rng, 1);
        double loss_sum = 0.0, residual_sum = 0.0, rank_sum = 0.0, sparsity_sum = 0.0;
        std::size_t kept_total = 0;

        for (const auto& idx : batches) {
            const Matrix xb = gather_rows(d.train.x, idx);
            const std::vector<int> yb = gather_labels(d.train.labels, idx);
            const Matrix emb = net.forward(xb, Head::Embedding, true);
            seen_total += idx.size();

            std::vector<SampleChain> chains;
            std::vector<int> kept_labels;
            for (std::size_t i = 0; i < idx.size(); ++i) {
                std::vector<double> row(emb.cols());
                for (std::size_t j = 0; j < emb.cols(); ++j) row[j] = emb(i, j);
                const FeatureMap fm = reshape_to_feature_map(row, m, c);

                SampleChain ch;
                ch.row = i;
                ch.reduced = stack_forward(net.reduction(), fm.values, ch.red_cache, true);
                const SymmetricMatrix pooled = covariance_pool(FeatureMap::from(ch.reduced));
                if (pooled.matrix().trace() <= 1e-12) {
                    ++skipped_total;
                    continue;
                }
                ch.a = pooled.matrix();
                try {
                    SolveResult sr = solve(pooled, solver_cfg, &ch.tape);
                    ch.last = sr.trace.back();
                } catch (const DivergenceError&) {
                    ++skipped_total;
                    continue;
                }
                kept_labels.push_back(yb[i]);
                chains.push_back(std::move(ch));
            }
            if (chains.empty()) continue;

            Matrix feats(chains.size(), cr * (cr + 1) / 2);
            for (std::size_t k = 0; k < chains.size(); ++k) {
                const auto ut = upper_triangle(chains[k].tape.y_final);
                for (std::size_t j = 0; j < ut.size(); ++j) feats(k, j) = ut[j];
            }

            StackCache cls_cache;
            const Matrix logits =
                stack_forward(net.classifier(), feats, cls_cache, true);
            const CrossEntropyResult ce = softmax_cross_entropy(logits, kept_labels);
            const Matrix gfeats = stack_backward(net.classifier(), ce.dlogits, cls_cache);

            Matrix demb(idx.size(), emb.cols(), 0.0);
            for (std::size_t k = 0; k < chains.size(); ++k) {
                SampleChain& ch = chains[k];
                std::vector<double> gut(gfeats.cols());
                for (std::size_t j = 0; j < gfeats.cols(); ++j) gut[j] = gfeats(k, j);
                const Matrix gy = upper_triangle_grad(gut, cr);
                const Matrix ga = solve_backward(ch.tape, ch.a, gy);
                const Matrix gx = covariance_pool_backward(ch.reduced, ga);
                const Matrix gfm = stack_backward(net.reduction(), gx, ch.red_cache);
                for (std::size_t j = 0; j < emb.cols(); ++j)
                    demb(ch.row, j) = gfm.data()[j];

                residual_sum += std::max(ch.last.residual_j1, ch.last.residual_j2);
                rank_sum += static_cast<double>(ch.last.rank);
                sparsity_sum += ch.last.sparsity;
            }
            net.backward(demb);
            opt.step(net);

            loss_sum += ce.loss * static_cast<double>(chains.size());
            kept_total += chains.size();
        }

        if (skipped_total * 10 > seen_total)
            throw DivergenceError("fine-tune stage: over 10% of samples skipped after "
                                  "solver failures (epoch " +
                                      std::to_string(epoch) + ")",
                                  static_cast<long>(epoch));

        const EvalResult train_eval = evaluate(net, d.train, solver_cfg);
        MetricsRecord r;
        r.stage = "lagrangian";
        r.epoch = static_cast<long>(epoch);
        r.loss = kept_total ? loss_sum / static_cast<double>(kept_total) : 0.0;
        r.accuracy = train_eval.accuracy;
        r.mean_residual = kept_total ? residual_sum / static_cast<double>(kept_total) : 0.0;
        r.mean_rank = kept_total ? rank_sum / static_cast<double>(kept_total) : 0.0;
        r.mean_sparsity = kept_total ? sparsity_sum / static_cast<double>(kept_total) : 0.0;
        r.wall_clock_s = cfg.record_timing ? elapsed_s(t0) : 0.0;
        metrics.push_back(std::move(r));
    }
}

EvalResult evaluate(Network& net, const DataSplit& split, const SolverConfig& solver) {
    if (split.size() == 0) throw ValidationError("evaluate: empty split");
    if (split.dim() != net.config().input_dim)
        throw ValidationError("evaluate: data width " + std::to_string(split.dim()) +
                              " does not match checkpoint input_dim " +
                              std::to_string(net.config().input_dim));

    EvalResult out;
    out.sample_count = split.size();
    const std::size_t classes = net.config().class_count;
    std::vector<std::size_t> per_class_hits(classes, 0), per_class_total(classes, 0);

    std::vector<std::size_t> predictions(split.size(), classes); // `classes` = no answer
    if (net.mode() == PipelineMode::Plain) {
        const Matrix logits = net.forward(split.x, Head::Classifier, false);
        for (std::size_t i = 0; i < split.size(); ++i)
            predictions[i] = argmax_row(logits, i);
    } else {
        const NetConfig& nc = net.config();
        const std::size_t m = nc.spatial_positions, c = nc.channels;
        const Matrix emb = net.forward(split.x, Head::Embedding, false);
        Matrix feats(split.size(), nc.reduced_channels * (nc.reduced_channels + 1) / 2);
        std::vector<bool> usable(split.size(), false);
        for (std::size_t i = 0; i < split.size(); ++i) {
            std::vector<double> row(emb.cols());
            for (std::size_t j = 0; j < emb.cols(); ++j) row[j] = emb(i, j);
            const FeatureMap fm = reshape_to_feature_map(row, m, c);
            StackCache cache;
            const Matrix reduced = stack_forward(net.reduction(), fm.values, cache, false);
            const SymmetricMatrix pooled = covariance_pool(FeatureMap::from(reduced));
            if (pooled.matrix().trace() <= 1e-12) {
                ++out.solver_skips;
                continue;
            }
            try {
                const SolveResult sr = solve(pooled, solver);
                const auto ut = upper_triangle(sr.y);
                for (std::size_t j = 0; j < ut.size(); ++j) feats(i, j) = ut[j];
                usable[i] = true;
            } catch (const DivergenceError&) {
                ++out.solver_skips;
            }
        }
        StackCache cls_cache;
        const Matrix logits = stack_forward(net.classifier(), feats, cls_cache, false);
        for (std::size_t i = 0; i < split.size(); ++i)
            if (usable[i]) predictions[i] = argmax_row(logits, i);
    }

    std::size_t hits = 0;
    for (std::size_t i = 0; i < split.size(); ++i) {
        const auto label = static_cast<std::size_t>(split.labels[i]);
        if (label >= classes)
            throw ValidationError("evaluate: label " + std::to_string(split.labels[i]) +
                                  " outside the checkpoint's class range");
        ++per_class_total[label];
        if (predictions[i] == label) {
            ++hits;
            ++per_class_hits[label];
        }
    }
    out.accuracy = static_cast<double>(hits) / static_cast<double>(split.size());
    out.per_class.resize(classes, 0.0);
    for (std::size_t k = 0; k < classes; ++k)
        if (per_class_total[k])
            out.per_class[k] = static_cast<double>(per_class_hits[k]) /
                               static_cast<double>(per_class_total[k]);
    return out;
}

namespace {

void write_stage_artifacts(const std::string& out_dir, const std::string& name,
                           const Network& net, const TrainConfig& cfg) {
    if (out_dir.empty()) return;
    Checkpoint c;
    c.stage = name;
    c.seed = cfg.seed;
    c.net = net;
    c.solver = cfg.solver_config();
    save_checkpoint(c, (fs::path(out_dir) / ("checkpoint_" + name + ".json")).string());
}

} // namespace

PipelineResult train_pipeline(const Dataset& d, const TrainConfig& cfg,
                              const std::string& out_dir) {
    cfg.validate();
    d.validate();
    if (d.class_count < 2)
        throw ValidationError("train: need at least two classes");
    if (!out_dir.empty()) {
        std::error_code ec;
        fs::create_directories(out_dir, ec);
        if (ec) throw IoError("cannot create output directory '" + out_dir + "'");
    }

    Network net = Network::build(cfg.net_config(d.train.dim(), d.class_count), cfg.seed);
    PipelineResult result;

    stage_adversarial_pretrain(net, d, cfg, result.metrics);
    write_stage_artifacts(out_dir, "adversarial", net, cfg);

    stage_contrastive(net, d, cfg, result.metrics);
    write_stage_artifacts(out_dir, "contrastive", net, cfg);

    stage_lagrangian_finetune(net, d, cfg, result.metrics);
    write_stage_artifacts(out_dir, "final", net, cfg);

    if (d.test.size() > 0)
        result.final_eval = evaluate(net, d.test, cfg.solver_config());

    if (!out_dir.empty())
        emit_metrics(result.metrics, (fs::path(out_dir) / "metrics.jsonl").string());
    return result;
}

PipelineResult train_baseline(const Dataset& d, const TrainConfig& cfg,
                              const std::string& out_dir) {
    cfg.validate();
    d.validate();
    if (d.class_count < 2)
        throw ValidationError("train: need at least two classes");
    if (!out_dir.empty()) {
        std::error_code ec;
        fs::create_directories(out_dir, ec);
        if (ec) throw IoError("cannot create output directory '" + out_dir + "'");
    }

    Network net = Network::build(cfg.net_config(d.train.dim(), d.class_count), cfg.seed);
    PipelineResult result;

    AttackConfig clean = cfg.attack_config();
    clean.epsilon = 0.0;
    // Same budget, same schedule: the first two stage allocations run at the
    // pretraining rate, the last at the fine-tuning rate.
    const std::size_t phase1 = cfg.adversarial_epochs + cfg.contrastive_epochs;
    run_ce_epochs(net, d.train, d.class_count, cfg, clean, cfg.learning_rate1, phase1, 0,
                  "baseline", /*stream=*/1, result.metrics);
    run_ce_epochs(net, d.train, d.class_count, cfg, clean, cfg.learning_rate2,
                  cfg.lagrangian_epochs, static_cast<long>(phase1), "baseline",
                  /*stream=*/4, result.metrics);

    write_stage_artifacts(out_dir, "baseline", net, cfg);
    if (d.test.size() > 0)
        result.final_eval = evaluate(net, d.test, cfg.solver_config());
    if (!out_dir.empty())
        emit_metrics(result.metrics, (fs::path(out_dir) / "metrics.jsonl").string());
    return result;
}

} // namespace alice
