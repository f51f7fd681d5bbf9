#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "alice/pipeline.hpp"

namespace {

using alice::ordered_json;

int cmd_train(const std::string& config_path, const std::string& data_path,
              const std::string& out_dir, double subset, bool subset_given,
              std::uint64_t seed, bool seed_given, bool baseline) {
    alice::TrainConfig cfg = alice::TrainConfig::from_json_file(config_path);
    if (seed_given) cfg.seed = seed;
    for (const std::string& w : cfg.validate()) std::cerr << "warning: " << w << "\n";

    alice::Dataset d = alice::load_dataset(data_path);
    if (subset_given) d = alice::stratified_subset(d, subset, cfg.seed);

    const alice::PipelineResult result =
        baseline ? alice::train_baseline(d, cfg, out_dir)
                 : alice::train_pipeline(d, cfg, out_dir);

    ordered_json summary;
    summary["mode"] = baseline ? "baseline" : "pipeline";
    summary["train_samples"] = d.train.size();
    summary["test_samples"] = d.test.size();
    summary["test_accuracy"] = result.final_eval.accuracy;
    summary["solver_skips"] = result.final_eval.solver_skips;
    summary["epochs_recorded"] = result.metrics.size();
    summary["out_dir"] = out_dir;
    std::cout << summary.dump(2) << "\n";
    return 0;
}

int cmd_solve(const std::string& input, const std::string& out,
              const std::string& trace_path, const alice::SolverConfig& cfg) {
    const alice::SymmetricMatrix a =
        alice::SymmetricMatrix::from(alice::read_matrix_file(input));
    const alice::SolveResult res = alice::solve(a, cfg);
    if (!out.empty()) alice::write_matrix_file(out, res.y);
    if (!trace_path.empty()) {
        std::ofstream tf(trace_path, std::ios::app);
        if (!tf) throw alice::IoError("cannot open '" + trace_path + "' for appending");
        for (const auto& rec : res.trace) {
            ordered_json j;
            j["iter"] = rec.iter;
            j["objective"] = rec.objective;
            j["residual_j1"] = rec.residual_j1;
            j["residual_j2"] = rec.residual_j2;
            j["rank"] = rec.rank;
            j["sparsity"] = rec.sparsity;
            j["y_stalled"] = rec.y_stalled;
            tf << j.dump() << "\n";
        }
    }
    ordered_json summary;
    summary["converged"] = res.converged;
    summary["iterations"] = res.trace.size();
    summary["objective"] =
        res.trace.empty() ? 0.0 : res.trace.back().objective;
    std::cout << summary.dump(2) << "\n";
    return 0;
}

int cmd_sqrt(const std::string& input, const std::string& out, std::size_t iters) {
    const alice::SymmetricMatrix a =
        alice::SymmetricMatrix::from(alice::read_matrix_file(input));
    const alice::SymmetricMatrix y = alice::newton_schulz_sqrt(a, iters);
    if (!out.empty()) alice::write_matrix_file(out, y.matrix());
    const alice::Matrix residual =
        alice::matmul(y.matrix(), y.matrix()) - a.matrix();
    ordered_json summary;
    summary["relative_residual"] =
        residual.frobenius_norm() / std::max(1e-300, a.matrix().frobenius_norm());
    std::cout << summary.dump(2) << "\n";
    return 0;
}

int cmd_attack(const std::string& checkpoint, const std::string& data, double eps,
               std::size_t steps, const std::string& norm, double step_size,
               const std::string& report) {
    alice::Checkpoint ckpt = alice::load_checkpoint(checkpoint);
    const alice::DataSplit split = alice::read_split(data);
    for (int l : split.labels)
        if (static_cast<std::size_t>(l) >= ckpt.net.config().class_count)
            throw alice::ValidationError("attack: label " + std::to_string(l) +
                                         " outside the checkpoint's class range");

    alice::AttackConfig cfg;
    cfg.epsilon = eps;
    cfg.steps = steps;
    cfg.step_size = step_size;
    cfg.norm = alice::parse_attack_norm(norm);

    const alice::AttackResult atk =
        alice::pgd_attack(ckpt.net, split.x, split.labels, cfg);

    const alice::Matrix clean_logits =
        ckpt.net.forward(split.x, alice::Head::Classifier, false);
    const double clean_loss =
        alice::softmax_cross_entropy(clean_logits, split.labels).loss;
    const alice::Matrix adv_logits =
        ckpt.net.forward(atk.x_adv, alice::Head::Classifier, false);
    const double adv_loss =
        alice::softmax_cross_entropy(adv_logits, split.labels).loss;
    const double frac = alice::adversarial_fraction(ckpt.net, split.x, atk.x_adv);

    double worst = 0.0;
    for (std::size_t i = 0; i < split.size(); ++i) {
        double n = 0.0;
        for (std::size_t j = 0; j < split.dim(); ++j) {
            const double d = atk.x_adv(i, j) - split.x(i, j);
            if (cfg.norm == alice::AttackNorm::L2)
                n += d * d;
            else
                n = std::max(n, std::abs(d));
        }
        if (cfg.norm == alice::AttackNorm::L2) n = std::sqrt(n);
        worst = std::max(worst, n);
    }

    ordered_json j;
    j["samples"] = split.size();
    j["epsilon"] = eps;
    j["steps"] = steps;
    j["norm"] = norm;
    j["clean_loss"] = clean_loss;
    j["adversarial_loss"] = adv_loss;
    j["adversarial_fraction"] = frac;
    j["max_perturbation"] = worst;
    if (!report.empty()) {
        std::ofstream rf(report, std::ios::app);
        if (!rf) throw alice::IoError("cannot open '" + report + "' for appending");
        rf << j.dump() << "\n";
    }
    std::cout << j.dump(2) << "\n";
    return 0;
}

int cmd_eval(const std::string& checkpoint, const std::string& data) {
    alice::Checkpoint ckpt = alice::load_checkpoint(checkpoint);
    const alice::Dataset d = alice::load_dataset(data);
    const alice::DataSplit& split = d.test.size() > 0 ? d.test : d.train;
    const alice::EvalResult res = alice::evaluate(ckpt.net, split, ckpt.solver);
    ordered_json j;
    j["accuracy"] = res.accuracy;
    j["samples"] = res.sample_count;
    j["solver_skips"] = res.solver_skips;
    j["per_class"] = res.per_class;
    std::cout << j.dump(2) << "\n";
    return 0;
}

int cmd_gen_blobs(const std::string& out_dir, std::size_t classes, std::size_t train_n,
                  std::size_t test_n, std::size_t dim, double center_spread,
                  double cluster_std, std::uint64_t seed) {
    const alice::Dataset d = alice::make_blobs(train_n, test_n, classes, dim,
                                               center_spread, cluster_std, seed);
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw alice::IoError("cannot create directory '" + out_dir + "'");
    alice::write_split_csv(d.train, (std::filesystem::path(out_dir) / "train.csv").string());
    alice::write_split_csv(d.test, (std::filesystem::path(out_dir) / "test.csv").string());
    ordered_json j;
    j["out_dir"] = out_dir;
    j["classes"] = classes;
    j["train_samples"] = d.train.size();
    j["test_samples"] = d.test.size();
    std::cout << j.dump(2) << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Adversarial-contrastive training with second-order feature "
                 "normalization"};
    app.require_subcommand(1);
    std::function<int()> run;

    // train
    {
        auto* sub = app.add_subcommand("train", "Run the three-stage pipeline");
        auto config_path = std::make_shared<std::string>();
        auto data_path = std::make_shared<std::string>();
        auto out_dir = std::make_shared<std::string>();
        auto subset = std::make_shared<double>(1.0);
        auto seed = std::make_shared<std::uint64_t>(0);
        auto baseline = std::make_shared<bool>(false);
        sub->add_option("--config", *config_path, "JSON config file")->required();
        sub->add_option("--data", *data_path, "dataset file or directory")->required();
        sub->add_option("--out", *out_dir, "artifact directory")->required();
        auto* subset_opt =
            sub->add_option("--subset", *subset, "stratified train fraction in (0,1]");
        auto* seed_opt = sub->add_option("--seed", *seed, "overrides the config seed");
        sub->add_flag("--baseline", *baseline,
                      "train the plain cross-entropy comparison instead");
        sub->callback([=]() {});
        sub->parse_complete_callback([&run, config_path, data_path, out_dir, subset,
                                      seed, baseline, subset_opt, seed_opt]() {
            const bool subset_given = subset_opt->count() > 0;
            const bool seed_given = seed_opt->count() > 0;
            run = [=]() {
                return cmd_train(*config_path, *data_path, *out_dir, *subset,
                                 subset_given, *seed, seed_given, *baseline);
            };
        });
    }

    // solve
    {
        auto* sub = app.add_subcommand("solve", "Normalize a symmetric PSD matrix");
        auto input = std::make_shared<std::string>();
        auto out = std::make_shared<std::string>();
        auto trace = std::make_shared<std::string>();
        auto cfg = std::make_shared<alice::SolverConfig>();
        sub->add_option("--input", *input, "matrix file")->required();
        sub->add_option("--out", *out, "output matrix file");
        sub->add_option("--trace", *trace, "per-iteration JSONL file");
        sub->add_option("--alpha1", cfg->alpha1, "nuclear-norm weight");
        sub->add_option("--alpha2", cfg->alpha2, "entrywise l1 weight");
        sub->add_option("--mu-init", cfg->mu_init, "dual initialization");
        sub->add_option("--rho-init", cfg->rho_init, "penalty initialization");
        sub->add_option("--growth", cfg->growth, "penalty growth factor");
        sub->add_option("--max-iters", cfg->max_iters, "iteration cap");
        sub->add_option("--y-step", cfg->y_step, "descent step size");
        sub->add_option("--y-inner-steps", cfg->y_inner_steps, "descent steps per iteration");
        sub->add_option("--tol", cfg->residual_tol, "relative residual tolerance");
        sub->add_flag("--conditional-growth", cfg->conditional_rho_growth,
                      "grow rho only while residuals stall");
        sub->parse_complete_callback([&run, input, out, trace, cfg]() {
            run = [=]() { return cmd_solve(*input, *out, *trace, *cfg); };
        });
    }

    // sqrt
    {
        auto* sub = app.add_subcommand("sqrt", "Matrix square root via coupled iteration");
        auto input = std::make_shared<std::string>();
        auto out = std::make_shared<std::string>();
        auto iters = std::make_shared<std::size_t>(20);
        sub->add_option("--input", *input, "matrix file")->required();
        sub->add_option("--out", *out, "output matrix file");
        sub->add_option("--iters", *iters, "iteration count");
        sub->parse_complete_callback([&run, input, out, iters]() {
            run = [=]() { return cmd_sqrt(*input, *out, *iters); };
        });
    }

    // attack
    {
        auto* sub = app.add_subcommand("attack", "Projected gradient attack on a checkpoint");
        auto checkpoint = std::make_shared<std::string>();
        auto data = std::make_shared<std::string>();
        auto eps = std::make_shared<double>(0.5);
        auto steps = std::make_shared<std::size_t>(20);
        auto norm = std::make_shared<std::string>("l2");
        auto step_size = std::make_shared<double>(0.0);
        auto report = std::make_shared<std::string>();
        sub->add_option("--checkpoint", *checkpoint, "checkpoint file")->required();
        sub->add_option("--data", *data, "sample file (csv or binary)")->required();
        sub->add_option("--eps", *eps, "perturbation budget");
        sub->add_option("--steps", *steps, "ascent steps");
        sub->add_option("--norm", *norm, "l2 or linf");
        sub->add_option("--step-size", *step_size, "ascent step size (0 = heuristic)");
        sub->add_option("--report", *report, "JSONL report file");
        sub->parse_complete_callback([&run, checkpoint, data, eps, steps, norm,
                                      step_size, report]() {
            run = [=]() {
                return cmd_attack(*checkpoint, *data, *eps, *steps, *norm, *step_size,
                                  *report);
            };
        });
    }

    // eval
    {
        auto* sub = app.add_subcommand("eval", "Score a checkpoint on a dataset");
        auto checkpoint = std::make_shared<std::string>();
        auto data = std::make_shared<std::string>();
        sub->add_option("--checkpoint", *checkpoint, "checkpoint file")->required();
        sub->add_option("--data", *data, "dataset file or directory")->required();
        sub->parse_complete_callback([&run, checkpoint, data]() {
            run = [=]() { return cmd_eval(*checkpoint, *data); };
        });
    }

    // export-curves
    {
        auto* sub = app.add_subcommand("export-curves", "Flatten metrics to CSV");
        auto metrics = std::make_shared<std::string>();
        auto out = std::make_shared<std::string>();
        sub->add_option("--metrics", *metrics, "JSONL metrics file")->required();
        sub->add_option("--out", *out, "CSV output file")->required();
        sub->parse_complete_callback([&run, metrics, out]() {
            run = [=]() {
                alice::export_curves_csv(*metrics, *out);
                return 0;
            };
        });
    }

    // gen-blobs
    {
        auto* sub = app.add_subcommand("gen-blobs", "Write a Gaussian-cluster dataset");
        auto out = std::make_shared<std::string>();
        auto classes = std::make_shared<std::size_t>(10);
        auto train_n = std::make_shared<std::size_t>(50);
        auto test_n = std::make_shared<std::size_t>(20);
        auto dim = std::make_shared<std::size_t>(16);
        auto center_spread = std::make_shared<double>(1.0);
        auto cluster_std = std::make_shared<double>(0.9);
        auto seed = std::make_shared<std::uint64_t>(0);
        sub->add_option("--out", *out, "output directory")->required();
        sub->add_option("--classes", *classes, "class count");
        sub->add_option("--train-per-class", *train_n, "train samples per class");
        sub->add_option("--test-per-class", *test_n, "test samples per class");
        sub->add_option("--dim", *dim, "feature width");
        sub->add_option("--center-spread", *center_spread, "center scale");
        sub->add_option("--cluster-std", *cluster_std, "within-class deviation");
        sub->add_option("--seed", *seed, "generator seed");
        sub->parse_complete_callback([&run, out, classes, train_n, test_n, dim,
                                      center_spread, cluster_std, seed]() {
            run = [=]() {
                return cmd_gen_blobs(*out, *classes, *train_n, *test_n, *dim,
                                     *center_spread, *cluster_std, *seed);
            };
        });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        return run ? run() : 2;
    } catch (const alice::DivergenceError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const alice::IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 4;
    } catch (const alice::ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
